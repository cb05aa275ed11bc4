//! Frozen parameter range table and per-class random parameter sampling.

use std::sync::OnceLock;

use rand::Rng;
use serde::Deserialize;

use super::{DisturbanceClass, CYCLE_S, WINDOW_S};
use crate::error::{Error, Result};

const BUILTIN_TABLE: &str = include_str!("../../config/disturbances.toml");

/// Closed interval `[lo, hi]`.
pub type Range = [f64; 2];

/// Per-class parameter ranges. Loaded from `config/disturbances.toml`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeTable {
    pub version: u32,
    pub phase: Range,
    pub event_cycles: Range,
    pub ramp_cycles: Range,
    pub sag_level: Range,
    pub swell_level: Range,
    pub interruption_level: Range,
    pub flicker_depth: Range,
    pub flicker_hz: Range,
    pub harmonic_orders: Vec<u32>,
    pub harmonic_weight: Range,
    pub oscillatory_magnitude: Range,
    pub oscillatory_hz: Range,
    pub oscillatory_decay_ms: Range,
    pub oscillatory_cycles: Range,
    pub impulse_magnitude: Range,
    pub impulse_decay_ms: Range,
    pub notch_depth: Range,
    pub spike_height: Range,
    pub pulse_width_cycles: Range,
}

impl RangeTable {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Self = toml::from_str(text)?;
        Ok(table)
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static RangeTable {
        static TABLE: OnceLock<RangeTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            RangeTable::from_toml(BUILTIN_TABLE).expect("built-in range table parses")
        })
    }

    /// Level range for envelope classes (remaining voltage during the event).
    fn event_level(&self, class: DisturbanceClass) -> Option<Range> {
        use DisturbanceClass::*;
        match class {
            Sag | SagHarmonics | FlickerSag => Some(self.sag_level),
            Swell | SwellHarmonics | FlickerSwell => Some(self.swell_level),
            Interruption | InterruptionHarmonics => Some(self.interruption_level),
            _ => None,
        }
    }
}

/// Parameters of one disturbance instance.
///
/// Field meaning depends on the class:
/// - envelope events (sag, swell, interruption and combinations): `amplitude` is
///   the remaining voltage level during the event, `start_time`/`duration` the
///   event window, with linear `ramp_up`/`ramp_down` at its edges;
/// - oscillatory transient: `amplitude` is the initial oscillation magnitude at
///   `transient_freq`, decaying with `decay_time` inside the event window;
/// - impulsive transient: `amplitude` is the pulse peak, decaying with
///   `decay_time`; `duration` bounds the active window;
/// - notch and spike: `amplitude` is the pulse depth/height, `start_time` the
///   offset of each pulse after a zero crossing of the fundamental and
///   `duration` the pulse width.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceParams {
    pub amplitude: f64,
    pub start_time: f64,
    pub duration: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Weights of the odd harmonics listed in the range table (3rd, 5th, 7th).
    pub harmonic_weights: Vec<f64>,
    pub transient_freq: f64,
    pub phase: f64,
    pub flicker_depth: f64,
    pub flicker_freq: f64,
    pub decay_time: f64,
}

impl Default for DisturbanceParams {
    /// Undisturbed nominal waveform with zero phase.
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            start_time: 0.0,
            duration: 0.0,
            ramp_up: 0.0,
            ramp_down: 0.0,
            harmonic_weights: Vec::new(),
            transient_freq: 0.0,
            phase: 0.0,
            flicker_depth: 0.0,
            flicker_freq: 0.0,
            decay_time: 0.0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: Range) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

const EPS: f64 = 1e-12;

fn check(class: DisturbanceClass, what: &str, value: f64, [lo, hi]: Range) -> Result<()> {
    if !value.is_finite() || value < lo - EPS || value > hi + EPS {
        return Err(Error::InvalidParams {
            class,
            reason: format!("{what} = {value} outside [{lo}, {hi}]"),
        });
    }
    Ok(())
}

fn invalid(class: DisturbanceClass, reason: impl Into<String>) -> Error {
    Error::InvalidParams {
        class,
        reason: reason.into(),
    }
}

fn scaled(range: Range, factor: f64) -> Range {
    [range[0] * factor, range[1] * factor]
}

impl DisturbanceParams {
    /// Draw a random parameter set for `class` from `table`.
    pub fn sample<R: Rng + ?Sized>(class: DisturbanceClass, table: &RangeTable, rng: &mut R) -> Self {
        use DisturbanceClass::*;
        let mut p = DisturbanceParams {
            phase: uniform(rng, table.phase),
            ..Default::default()
        };
        if let Some(level) = table.event_level(class) {
            p.amplitude = uniform(rng, level);
            let cycles = uniform(rng, table.event_cycles);
            p.duration = cycles * CYCLE_S;
            p.start_time = uniform(rng, [0.0, WINDOW_S - p.duration]);
            let max_ramp = table.ramp_cycles[1].min(cycles / 2.0);
            p.ramp_up = uniform(rng, [table.ramp_cycles[0], max_ramp]) * CYCLE_S;
            p.ramp_down = uniform(rng, [table.ramp_cycles[0], max_ramp]) * CYCLE_S;
        }
        if class.has_flicker() {
            p.flicker_depth = uniform(rng, table.flicker_depth);
            p.flicker_freq = uniform(rng, table.flicker_hz);
        }
        if class.has_harmonics() {
            p.harmonic_weights = table
                .harmonic_orders
                .iter()
                .map(|_| uniform(rng, table.harmonic_weight))
                .collect();
        }
        match class {
            OscillatoryTransient => {
                p.amplitude = uniform(rng, table.oscillatory_magnitude);
                p.transient_freq = uniform(rng, table.oscillatory_hz);
                p.decay_time = uniform(rng, table.oscillatory_decay_ms) * 1e-3;
                p.duration = uniform(rng, table.oscillatory_cycles) * CYCLE_S;
                p.start_time = uniform(rng, [0.0, WINDOW_S - p.duration]);
            }
            ImpulsiveTransient => {
                p.amplitude = uniform(rng, table.impulse_magnitude);
                p.decay_time = uniform(rng, table.impulse_decay_ms) * 1e-3;
                p.duration = 5.0 * p.decay_time;
                p.start_time = uniform(rng, [0.0, WINDOW_S - p.duration]);
            }
            Notch | Spike => {
                let range = if class == Notch { table.notch_depth } else { table.spike_height };
                p.amplitude = uniform(rng, range);
                p.duration = uniform(rng, table.pulse_width_cycles) * CYCLE_S;
                p.start_time = uniform(rng, [0.0, CYCLE_S / 2.0 - p.duration]);
            }
            _ => {}
        }
        p
    }

    /// Check the parameters against `table` for `class`.
    pub fn validate(&self, class: DisturbanceClass, table: &RangeTable) -> Result<()> {
        use DisturbanceClass::*;
        check(class, "phase", self.phase, [-1e3, 1e3])?;
        if let Some(level) = table.event_level(class) {
            check(class, "amplitude", self.amplitude, level)?;
            check(class, "duration", self.duration, scaled(table.event_cycles, CYCLE_S))?;
            self.check_window(class)?;
            let ramp = scaled(table.ramp_cycles, CYCLE_S);
            check(class, "ramp_up", self.ramp_up, ramp)?;
            check(class, "ramp_down", self.ramp_down, ramp)?;
            if self.ramp_up + self.ramp_down > self.duration + EPS {
                return Err(invalid(class, "ramps longer than the event"));
            }
        }
        if class.has_flicker() {
            check(class, "flicker_depth", self.flicker_depth, table.flicker_depth)?;
            check(class, "flicker_freq", self.flicker_freq, table.flicker_hz)?;
        }
        if class.has_harmonics() {
            if self.harmonic_weights.len() != table.harmonic_orders.len() {
                return Err(invalid(
                    class,
                    format!(
                        "expected {} harmonic weights, got {}",
                        table.harmonic_orders.len(),
                        self.harmonic_weights.len()
                    ),
                ));
            }
            // A single weight may be zero so that pure single-order harmonics can be built.
            for &w in &self.harmonic_weights {
                check(class, "harmonic weight", w, [0.0, table.harmonic_weight[1]])?;
            }
        }
        match class {
            OscillatoryTransient => {
                check(class, "amplitude", self.amplitude, table.oscillatory_magnitude)?;
                check(class, "transient_freq", self.transient_freq, table.oscillatory_hz)?;
                check(class, "decay_time", self.decay_time, scaled(table.oscillatory_decay_ms, 1e-3))?;
                check(class, "duration", self.duration, scaled(table.oscillatory_cycles, CYCLE_S))?;
                self.check_window(class)?;
            }
            ImpulsiveTransient => {
                check(class, "amplitude", self.amplitude, table.impulse_magnitude)?;
                check(class, "decay_time", self.decay_time, scaled(table.impulse_decay_ms, 1e-3))?;
                check(class, "duration", self.duration, [0.0, WINDOW_S])?;
                self.check_window(class)?;
            }
            Notch | Spike => {
                let range = if class == Notch { table.notch_depth } else { table.spike_height };
                check(class, "amplitude", self.amplitude, range)?;
                check(class, "duration", self.duration, scaled(table.pulse_width_cycles, CYCLE_S))?;
                check(class, "start_time", self.start_time, [0.0, CYCLE_S / 2.0 - self.duration])?;
            }
            _ => {}
        }
        Ok(())
    }

    fn check_window(&self, class: DisturbanceClass) -> Result<()> {
        if self.start_time < -EPS || self.start_time + self.duration > WINDOW_S + EPS {
            return Err(invalid(
                class,
                format!(
                    "event [{}, {}] s leaves the 0.2 s window",
                    self.start_time,
                    self.start_time + self.duration
                ),
            ));
        }
        Ok(())
    }
}
