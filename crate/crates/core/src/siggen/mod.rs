//! Synthetic power-quality disturbance waveforms.
//!
//! Every signal is one 200 ms frame of a 50 Hz voltage sampled at 12.8 kHz
//! (2560 samples, 256 per cycle), in per-unit of the nominal peak. Fifteen
//! classes are modelled: ten individual disturbances and five compositions of
//! two of them. Parameters are drawn from the frozen table in
//! `config/disturbances.toml`.

mod dataset;
mod params;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use dataset::{derive_seed, generate_dataset, read_dataset, write_dataset, DatasetSpec, SeedPurpose};
pub use params::{DisturbanceParams, Range, RangeTable};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: f64 = 12_800.0;
pub const FUNDAMENTAL_HZ: f64 = 50.0;
pub const SIGNAL_LEN: usize = 2560;
pub const SAMPLES_PER_CYCLE: usize = 256;
pub const CYCLES: usize = SIGNAL_LEN / SAMPLES_PER_CYCLE;
/// Duration of one fundamental cycle in seconds.
pub const CYCLE_S: f64 = 1.0 / FUNDAMENTAL_HZ;
/// Duration of one frame in seconds.
pub const WINDOW_S: f64 = SIGNAL_LEN as f64 / SAMPLE_RATE_HZ;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceClass {
    Normal,
    Sag,
    Swell,
    Interruption,
    Flicker,
    OscillatoryTransient,
    ImpulsiveTransient,
    Harmonics,
    Notch,
    Spike,
    SagHarmonics,
    SwellHarmonics,
    InterruptionHarmonics,
    FlickerSag,
    FlickerSwell,
}

impl DisturbanceClass {
    pub const COUNT: usize = 15;

    pub const ALL: [DisturbanceClass; Self::COUNT] = [
        Self::Normal,
        Self::Sag,
        Self::Swell,
        Self::Interruption,
        Self::Flicker,
        Self::OscillatoryTransient,
        Self::ImpulsiveTransient,
        Self::Harmonics,
        Self::Notch,
        Self::Spike,
        Self::SagHarmonics,
        Self::SwellHarmonics,
        Self::InterruptionHarmonics,
        Self::FlickerSag,
        Self::FlickerSwell,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        use DisturbanceClass::*;
        match self {
            Normal => "normal",
            Sag => "sag",
            Swell => "swell",
            Interruption => "interruption",
            Flicker => "flicker",
            OscillatoryTransient => "oscillatory_transient",
            ImpulsiveTransient => "impulsive_transient",
            Harmonics => "harmonics",
            Notch => "notch",
            Spike => "spike",
            SagHarmonics => "sag_harmonics",
            SwellHarmonics => "swell_harmonics",
            InterruptionHarmonics => "interruption_harmonics",
            FlickerSag => "flicker_sag",
            FlickerSwell => "flicker_swell",
        }
    }

    /// The two individual disturbances a combined class is built from.
    pub fn components(self) -> Option<(Self, Self)> {
        use DisturbanceClass::*;
        match self {
            SagHarmonics => Some((Sag, Harmonics)),
            SwellHarmonics => Some((Swell, Harmonics)),
            InterruptionHarmonics => Some((Interruption, Harmonics)),
            FlickerSag => Some((Flicker, Sag)),
            FlickerSwell => Some((Flicker, Swell)),
            _ => None,
        }
    }

    pub fn is_combined(self) -> bool {
        self.components().is_some()
    }

    fn has_component(self, part: Self) -> bool {
        self == part || self.components().is_some_and(|(a, b)| a == part || b == part)
    }

    pub fn has_harmonics(self) -> bool {
        self.has_component(Self::Harmonics)
    }

    pub fn has_flicker(self) -> bool {
        self.has_component(Self::Flicker)
    }

    /// Sag, flicker sag and sag with harmonics.
    pub fn is_sag_family(self) -> bool {
        self.has_component(Self::Sag)
    }
}

impl fmt::Display for DisturbanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisturbanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown disturbance class {s:?}")))
    }
}

/// One 200 ms waveform frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub label: DisturbanceClass,
    /// SNR of the added white noise, `None` for a noiseless signal.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Signal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        SAMPLE_RATE_HZ
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE_HZ
    }

    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Trapezoidal window: 0 outside `[start, start + duration)`, 1 on the plateau,
/// linear over the ramps.
fn trapezoid(t: f64, start: f64, duration: f64, ramp_up: f64, ramp_down: f64) -> f64 {
    let end = start + duration;
    if t < start || t >= end {
        return 0.0;
    }
    let mut w: f64 = 1.0;
    if ramp_up > 0.0 {
        w = w.min((t - start) / ramp_up);
    }
    if ramp_down > 0.0 {
        w = w.min((end - t) / ramp_down);
    }
    w
}

fn waveform(class: DisturbanceClass, p: &DisturbanceParams, orders: &[u32], t: f64) -> f64 {
    use DisturbanceClass::*;
    let theta = 2.0 * PI * FUNDAMENTAL_HZ * t + p.phase;
    let fundamental = theta.sin();

    let mut carrier = fundamental;
    if class.has_harmonics() {
        for (&order, &w) in orders.iter().zip(&p.harmonic_weights) {
            carrier += w * (f64::from(order) * theta).sin();
        }
    }
    if class.has_flicker() {
        carrier *= 1.0 + p.flicker_depth * (2.0 * PI * p.flicker_freq * t).sin();
    }

    match class {
        Sag | Swell | Interruption | SagHarmonics | SwellHarmonics | InterruptionHarmonics
        | FlickerSag | FlickerSwell => {
            let w = trapezoid(t, p.start_time, p.duration, p.ramp_up, p.ramp_down);
            (1.0 + (p.amplitude - 1.0) * w) * carrier
        }
        OscillatoryTransient => {
            let end = p.start_time + p.duration;
            if t >= p.start_time && t < end {
                let dt = t - p.start_time;
                carrier
                    + p.amplitude * (-dt / p.decay_time).exp() * (2.0 * PI * p.transient_freq * dt).sin()
            } else {
                carrier
            }
        }
        ImpulsiveTransient => {
            let end = p.start_time + p.duration;
            if t >= p.start_time && t < end {
                carrier + p.amplitude * (-(t - p.start_time) / p.decay_time).exp()
            } else {
                carrier
            }
        }
        Notch | Spike => {
            // Position relative to the most recent zero crossing of the fundamental.
            let half = CYCLE_S / 2.0;
            let since_crossing = (theta.rem_euclid(PI)) / (2.0 * PI * FUNDAMENTAL_HZ);
            let inside = since_crossing >= p.start_time && since_crossing < p.start_time + p.duration;
            debug_assert!(since_crossing < half + 1e-12);
            if inside {
                let sign = if class == Notch { -1.0 } else { 1.0 };
                carrier + sign * p.amplitude * fundamental.signum()
            } else {
                carrier
            }
        }
        Normal | Flicker | Harmonics => carrier,
    }
}

/// Render one disturbance frame.
///
/// The output is a pure function of `(class, params)`; `seed` is recorded in
/// the returned signal so datasets can be regenerated.
pub fn generate_signal(class: DisturbanceClass, params: &DisturbanceParams, seed: u64) -> Result<Signal> {
    generate_signal_with(RangeTable::builtin(), class, params, seed)
}

pub fn generate_signal_with(
    table: &RangeTable,
    class: DisturbanceClass,
    params: &DisturbanceParams,
    seed: u64,
) -> Result<Signal> {
    params.validate(class, table)?;
    let samples = (0..SIGNAL_LEN)
        .map(|k| waveform(class, params, &table.harmonic_orders, k as f64 / SAMPLE_RATE_HZ))
        .collect();
    Ok(Signal {
        samples,
        label: class,
        snr_db: None,
        seed,
    })
}

/// Add white Gaussian noise at `snr_db` relative to the signal's own power.
///
/// `f64::INFINITY` means "no noise" and returns the signal unchanged.
pub fn add_awgn(signal: &Signal, snr_db: f64, seed: u64) -> Signal {
    if snr_db == f64::INFINITY {
        return signal.clone();
    }
    let noise_power = signal.power() / 10f64.powf(snr_db / 10.0);
    let mut out = signal.clone();
    out.snr_db = Some(snr_db);
    if noise_power == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, noise_power.sqrt()).expect("finite noise deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.samples {
        *v += normal.sample(&mut rng);
    }
    out
}
