//! Downstream classification as a probe of reconstruction quality.
//!
//! A nearest-centroid classifier over sixteen hand-made features stands in
//! for a learned model. The impact study keeps only signals it classifies
//! correctly, balances the classes, pushes them through each codec
//! configuration and counts what the reconstruction error broke.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{compress, decompress, ModelStore, PipelineConfig};
use crate::siggen::{DisturbanceClass, Signal, CYCLES, SAMPLES_PER_CYCLE, SIGNAL_LEN};

pub const FEATURES: usize = 16;
const CLASSES: usize = DisturbanceClass::COUNT;
/// DFT bin of the fundamental: 10 cycles per frame.
const FUNDAMENTAL_BIN: usize = CYCLES;
/// Harmonics 2..=13 enter the THD.
const THD_ORDERS: std::ops::RangeInclusive<usize> = 2..=13;
/// Modulation sidebands 25-45 Hz and 55-75 Hz around the 50 Hz carrier.
const FLICKER_BINS: [usize; 10] = [5, 6, 7, 8, 9, 11, 12, 13, 14, 15];
/// Non-harmonic energy from 250 Hz up counts as transient energy.
const HF_FIRST_BIN: usize = 50;
/// Zero crossings are located on the band up to 1 kHz.
const SMOOTH_LAST_BIN: usize = 20 * FUNDAMENTAL_BIN;

/// `[rms of cycles 0..10, thd, min envelope, max envelope, flicker energy,
/// high-frequency burst energy, zero-crossing irregularity]`.
///
/// The envelopes are the smallest and largest per-cycle peak. Zero crossings
/// are taken on the band below 1 kHz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURES]);

impl FeatureVector {
    pub fn cycle_rms(&self) -> &[f64] {
        &self.0[..CYCLES]
    }

    pub fn thd(&self) -> f64 {
        self.0[10]
    }

    pub fn min_envelope(&self) -> f64 {
        self.0[11]
    }

    pub fn max_envelope(&self) -> f64 {
        self.0[12]
    }

    pub fn flicker_energy(&self) -> f64 {
        self.0[13]
    }

    pub fn hf_energy(&self) -> f64 {
        self.0[14]
    }

    pub fn zero_crossing_irregularity(&self) -> f64 {
        self.0[15]
    }
}

fn fft_plans() -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    thread_local! {
        static PLANS: (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) = {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(SIGNAL_LEN), planner.plan_fft_inverse(SIGNAL_LEN))
        };
    }
    PLANS.with(|(f, i)| (Arc::clone(f), Arc::clone(i)))
}

/// Keep bins `k` (and their mirrors) where `keep(k)` holds, then transform back.
fn band(spectrum: &[Complex<f64>], inverse: &dyn Fft<f64>, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let n = spectrum.len();
    let mut buf: Vec<Complex<f64>> = spectrum
        .iter()
        .enumerate()
        .map(|(k, &c)| if keep(k.min(n - k)) { c } else { Complex::default() })
        .collect();
    inverse.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Ratios are relative to the fundamental, so amplitude scaling changes only
/// the RMS and envelope entries.
pub fn extract_features(x: &[f64]) -> Result<FeatureVector> {
    if x.len() != SIGNAL_LEN {
        return Err(Error::LengthMismatch {
            expected: SIGNAL_LEN,
            got: x.len(),
        });
    }
    let mut f = [0.0; FEATURES];
    let mut peaks = [0.0f64; CYCLES];
    for (c, cycle) in x.chunks_exact(SAMPLES_PER_CYCLE).enumerate() {
        f[c] = (cycle.iter().map(|v| v * v).sum::<f64>() / SAMPLES_PER_CYCLE as f64).sqrt();
        peaks[c] = cycle.iter().fold(0.0, |m, v| m.max(v.abs()));
    }

    let (forward, inverse) = fft_plans();
    let mut spectrum: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward.process(&mut spectrum);
    let power: Vec<f64> = spectrum[..=SIGNAL_LEN / 2].iter().map(|c| c.norm_sqr()).collect();
    // Tiny floor keeps ratios finite for an all-zero frame.
    let fundamental = power[FUNDAMENTAL_BIN].max(1e-30);
    let harmonics: f64 = THD_ORDERS.map(|h| power[h * FUNDAMENTAL_BIN]).sum();
    let flicker: f64 = FLICKER_BINS.iter().map(|&k| power[k]).sum();
    // Burst energy: the loudest cycle of the non-harmonic high band over the
    // typical one, so steady broadband noise cancels.
    let high = band(&spectrum, inverse.as_ref(), |k| k >= HF_FIRST_BIN && k % FUNDAMENTAL_BIN != 0);
    let mut cycle_energy: Vec<f64> = high
        .chunks_exact(SAMPLES_PER_CYCLE)
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    cycle_energy.sort_by(f64::total_cmp);
    let burst = cycle_energy[CYCLES - 1] - (cycle_energy[CYCLES / 2 - 1] + cycle_energy[CYCLES / 2]) / 2.0;
    let hf = burst * (SIGNAL_LEN * SIGNAL_LEN / SAMPLES_PER_CYCLE) as f64;
    let smooth = band(&spectrum, inverse.as_ref(), |k| k <= SMOOTH_LAST_BIN);

    f[10] = (harmonics / fundamental).sqrt();
    f[11] = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    f[12] = peaks.iter().copied().fold(0.0, f64::max);
    f[13] = (flicker / fundamental).sqrt();
    f[14] = (hf / fundamental).sqrt();
    f[15] = zero_crossing_irregularity(&smooth);
    Ok(FeatureVector(f))
}

/// Spread of the intervals between sign changes relative to a half cycle.
fn zero_crossing_irregularity(x: &[f64]) -> f64 {
    let crossings: Vec<f64> = x
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0] < 0.0) != (w[1] < 0.0))
        .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
        .collect();
    if crossings.len() < 3 {
        return 1.0;
    }
    let half = SAMPLES_PER_CYCLE as f64 / 2.0;
    let gaps: Vec<f64> = crossings.windows(2).map(|w| (w[1] - w[0]) / half).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt()
}

/// Signed square root: stretches small deviations, such as flicker or a
/// shallow sag, relative to deep ones.
fn ssqrt(v: f64) -> f64 {
    v.signum() * v.abs().sqrt()
}

/// Coordinates used for distances. Cycle RMS enters position-invariant: the
/// lowest, highest and median deviation from nominal, the depth on a log
/// scale, and how much the RMS track moves beyond a single excursion (which
/// separates modulation from a step). Ratio features enter as logs with
/// floors well above the noise of a 0.001 p.u. reconstruction error.
fn embed(f: &FeatureVector) -> [f64; FEATURES] {
    let nominal_rms = std::f64::consts::FRAC_1_SQRT_2;
    let mut dev = [0.0; CYCLES];
    for (o, r) in dev.iter_mut().zip(f.cycle_rms()) {
        *o = r / nominal_rms - 1.0;
    }
    // A single step up and back down travels twice the range; modulation travels more.
    let travel: f64 = dev.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    dev.sort_by(f64::total_cmp);
    let excess = (travel - 2.0 * (dev[CYCLES - 1] - dev[0])).max(0.0);
    let mut out = [0.0; FEATURES];
    out[0] = ssqrt(dev[0]);
    out[1] = ssqrt(dev[CYCLES - 1]);
    out[2] = ssqrt((dev[CYCLES / 2 - 1] + dev[CYCLES / 2]) / 2.0);
    out[3] = (dev[0] + 1.0 + 0.05).ln();
    out[4] = excess.sqrt();
    out[10] = (f.thd() + 0.01).ln();
    out[11] = ssqrt(f.min_envelope() - 1.0);
    out[12] = ssqrt(f.max_envelope() - 1.0);
    out[13] = (f.flicker_energy() + 0.01).ln();
    out[14] = (f.hf_energy() + 0.003).ln();
    out[15] = (f.zero_crossing_irregularity() + 0.01).ln();
    out
}

/// Nearest centroid after dividing each coordinate by its pooled within-class
/// standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    centroids: [[f64; FEATURES]; CLASSES],
    scale: [f64; FEATURES],
}

impl Classifier {
    pub const MIN_PER_CLASS: usize = 10;

    pub fn train(train: &[Signal]) -> Result<Self> {
        let features = train
            .par_iter()
            .map(|s| Ok((s.label, extract_features(&s.samples)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_features(&features)
    }

    pub fn from_features(labelled: &[(DisturbanceClass, FeatureVector)]) -> Result<Self> {
        let mut sums = [[0.0; FEATURES]; CLASSES];
        let mut counts = [0usize; CLASSES];
        let embedded: Vec<(usize, [f64; FEATURES])> = labelled.iter().map(|(c, f)| (c.index(), embed(f))).collect();
        for (c, v) in &embedded {
            counts[*c] += 1;
            for (s, x) in sums[*c].iter_mut().zip(v) {
                *s += x;
            }
        }
        for class in DisturbanceClass::ALL {
            let n = counts[class.index()];
            if n == 0 {
                return Err(Error::MissingClass(class));
            }
            if n < Self::MIN_PER_CLASS {
                return Err(Error::Training(format!(
                    "class {class} has {n} signals, need {}",
                    Self::MIN_PER_CLASS
                )));
            }
        }
        let mut centroids = sums;
        for (row, &n) in centroids.iter_mut().zip(&counts) {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut var = [0.0; FEATURES];
        for (c, v) in &embedded {
            for j in 0..FEATURES {
                var[j] += (v[j] - centroids[*c][j]).powi(2);
            }
        }
        let dof = (embedded.len() - CLASSES).max(1) as f64;
        let scale = var.map(|s| (s / dof).sqrt().max(1e-6));
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite centroid".into()));
        }
        Ok(Self { centroids, scale })
    }

    pub fn centroids(&self) -> &[[f64; FEATURES]; CLASSES] {
        &self.centroids
    }

    pub fn scale(&self) -> &[f64; FEATURES] {
        &self.scale
    }

    pub fn classify_features(&self, f: &FeatureVector) -> DisturbanceClass {
        let v = embed(f);
        let distance = |c: &[f64; FEATURES]| -> f64 {
            (0..FEATURES).map(|j| ((v[j] - c[j]) / self.scale[j]).powi(2)).sum()
        };
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = distance(c);
            if d < best.1 {
                best = (i, d);
            }
        }
        DisturbanceClass::from_index(best.0).expect("centroid index is a class")
    }

    pub fn classify(&self, x: &[f64]) -> Result<DisturbanceClass> {
        Ok(self.classify_features(&extract_features(x)?))
    }

    /// One line per class centroid, then a `scale` line, all in embedded coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend((0..FEATURES).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        let rows = DisturbanceClass::ALL
            .iter()
            .map(|c| (c.name(), &self.centroids[c.index()]))
            .chain(std::iter::once(("scale", &self.scale)));
        for (name, values) in rows {
            let mut record = vec![name.to_string()];
            record.extend(values.iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut centroids = [[f64::NAN; FEATURES]; CLASSES];
        let mut scale = None;
        for record in csv::Reader::from_reader(input).records() {
            let record = record?;
            let name = record.get(0).unwrap_or_default();
            if record.len() != FEATURES + 1 {
                return Err(Error::Corrupt(format!("classifier row {name:?} has {} fields", record.len())));
            }
            let mut values = [0.0f64; FEATURES];
            for (v, field) in values.iter_mut().zip(record.iter().skip(1)) {
                *v = field
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("classifier row {name:?}: bad number {field:?}")))?;
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corrupt(format!("classifier row {name:?} is not finite")));
            }
            if name == "scale" {
                if values.iter().any(|v| *v <= 0.0) {
                    return Err(Error::Corrupt("classifier scale must be positive".into()));
                }
                scale = Some(values);
            } else {
                centroids[name.parse::<DisturbanceClass>()?.index()] = values;
            }
        }
        if let Some(missing) = DisturbanceClass::ALL.iter().find(|c| centroids[c.index()][0].is_nan()) {
            return Err(Error::MissingClass(*missing));
        }
        let scale = scale.ok_or_else(|| Error::Corrupt("classifier file has no scale row".into()))?;
        Ok(Self { centroids, scale })
    }

    /// Fraction of `signals` assigned their own label.
    pub fn accuracy(&self, signals: &[Signal]) -> Result<f64> {
        let hits = signals
            .par_iter()
            .map(|s| Ok(usize::from(self.classify(&s.samples)? == s.label)))
            .collect::<Result<Vec<_>>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / signals.len().max(1) as f64)
    }
}

/// 15 x 15 counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix(pub [[usize; CLASSES]; CLASSES]);

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self([[0; CLASSES]; CLASSES])
    }
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: DisturbanceClass, predicted: DisturbanceClass) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..CLASSES).map(|i| self.0[i][i]).sum()
    }

    /// Off-diagonal count in the row of `truth`.
    pub fn errors_in_row(&self, truth: DisturbanceClass) -> usize {
        let i = truth.index();
        self.0[i].iter().sum::<usize>() - self.0[i][i]
    }

    /// Each non-empty row divided by its sum.
    pub fn normalized(&self) -> [[f64; CLASSES]; CLASSES] {
        self.0.map(|row| {
            let n = row.iter().sum::<usize>();
            row.map(|v| if n == 0 { 0.0 } else { v as f64 / n as f64 })
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    /// Signals kept per class after filtering.
    pub per_class_cap: usize,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            per_class_cap: 450,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigImpact {
    pub config: PipelineConfig,
    pub accuracy: f64,
    /// Accuracy lost relative to the filtered pool, where every signal was correct.
    pub drop: f64,
    pub confusion: ConfusionMatrix,
    /// Signals whose compression failed; counted as misclassified.
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub per_class: usize,
    pub pool: Vec<Signal>,
    pub impacts: Vec<ConfigImpact>,
}

/// Signals the classifier gets right, down-sampled to the same count per class.
pub fn balanced_pool(classifier: &Classifier, eval: &[Signal], opts: &StudyOptions) -> Result<Vec<Signal>> {
    let mut by_class: BTreeMap<DisturbanceClass, Vec<&Signal>> = BTreeMap::new();
    for s in eval {
        if classifier.classify(&s.samples)? == s.label {
            by_class.entry(s.label).or_default().push(s);
        }
    }
    let available = DisturbanceClass::ALL
        .iter()
        .map(|c| by_class.get(c).map_or(0, Vec::len))
        .min()
        .unwrap_or(0);
    let per_class = available.min(opts.per_class_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pool = Vec::with_capacity(per_class * CLASSES);
    for class in DisturbanceClass::ALL {
        let mut members = by_class.remove(&class).unwrap_or_default();
        members.shuffle(&mut rng);
        pool.extend(members.into_iter().take(per_class).cloned());
    }
    Ok(pool)
}

/// Filter, balance, then compress, reconstruct and re-classify under each config.
pub fn impact_study(
    classifier: &Classifier,
    eval: &[Signal],
    configs: &[PipelineConfig],
    store: &ModelStore,
    opts: &StudyOptions,
) -> Result<StudyResult> {
    let pool = balanced_pool(classifier, eval, opts)?;
    let per_class = pool.len() / CLASSES;
    let impacts = configs
        .iter()
        .map(|cfg| {
            store.codec(cfg.stage1)?;
            let outcomes: Vec<Option<DisturbanceClass>> = pool
                .par_iter()
                .map(|s| {
                    let block = compress(&s.samples, cfg, store).ok()?;
                    let x_hat = decompress(&block, store).ok()?;
                    classifier.classify(&x_hat).ok()
                })
                .collect();
            let mut confusion = ConfusionMatrix::default();
            let mut failures = 0;
            for (s, predicted) in pool.iter().zip(outcomes) {
                match predicted {
                    Some(p) => confusion.record(s.label, p),
                    None => failures += 1,
                }
            }
            let accuracy = confusion.correct() as f64 / pool.len().max(1) as f64;
            Ok(ConfigImpact {
                config: cfg.clone(),
                accuracy,
                drop: 1.0 - accuracy,
                confusion,
                failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        per_class,
        pool,
        impacts,
    })
}

#[derive(Serialize)]
struct StudyRow<'a> {
    config: String,
    stage1: &'a str,
    stage2: &'a str,
    e_bound: f64,
    per_class: usize,
    accuracy: f64,
    drop: f64,
    failures: usize,
}

#[derive(Serialize)]
struct ConfusionRow<'a> {
    config: String,
    e_bound: f64,
    truth: &'a str,
    predicted: &'a str,
    count: usize,
    fraction: f64,
}

impl StudyResult {
    /// One accuracy line per configuration.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for imp in &self.impacts {
            w.serialize(StudyRow {
                config: imp.config.name(),
                stage1: imp.config.stage1.name(),
                stage2: imp.config.stage2.name(),
                e_bound: imp.config.e_bound,
                per_class: self.per_class,
                accuracy: imp.accuracy,
                drop: imp.drop,
                failures: imp.failures,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format: one line per (config, true class, predicted class).
    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for imp in &self.impacts {
            let norm = imp.confusion.normalized();
            for truth in DisturbanceClass::ALL {
                for predicted in DisturbanceClass::ALL {
                    w.serialize(ConfusionRow {
                        config: imp.config.name(),
                        e_bound: imp.config.e_bound,
                        truth: truth.name(),
                        predicted: predicted.name(),
                        count: imp.confusion.0[truth.index()][predicted.index()],
                        fraction: norm[truth.index()][predicted.index()],
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
