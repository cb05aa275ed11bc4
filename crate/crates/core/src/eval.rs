//! Evaluation harness: compression rates, error metrics, residual overhead
//! and noise sensitivity over a configuration grid.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{
    compress_with_stats, decompress, lossy_reconstruction, CompressedBlock, ModelStore, PipelineConfig, Stage1Scheme,
    Stage2Scheme, UNCOMPRESSED_BYTES,
};
use crate::siggen::{add_awgn, derive_seed, DisturbanceClass, SeedPurpose, Signal};

/// Bumped whenever the CSV columns change.
pub const REPORT_VERSION: u32 = 1;

/// `original_bytes / serialized size`.
pub fn compression_rate(original_bytes: usize, block: &CompressedBlock) -> f64 {
    original_bytes as f64 / block.serialized_len() as f64
}

/// `||x - x_hat||^2 / ||x||^2`
pub fn nmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_lengths(x, x_hat)?;
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let err: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

pub fn max_error(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_lengths(x, x_hat)?;
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// A lossy front end without the residual stage. `stage2: None` stops after stage 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossyScheme {
    pub stage1: Stage1Scheme,
    pub stage2: Option<Stage2Scheme>,
    pub e_bound: f64,
}

/// Fraction of samples whose residual exceeds `threshold` under each scheme.
pub fn count_added_residuals(
    x: &[f64],
    scheme_a: &LossyScheme,
    scheme_b: &LossyScheme,
    threshold: f64,
    store: &ModelStore,
) -> Result<(f64, f64)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must be positive")));
    }
    let fraction = |s: &LossyScheme| -> Result<f64> {
        let x_bar = lossy_reconstruction(x, s.stage1, s.stage2, s.e_bound, store)?;
        let over = x.iter().zip(&x_bar).filter(|(a, b)| (*a - *b).abs() > threshold).count();
        Ok(over as f64 / x.len() as f64)
    };
    Ok((fraction(scheme_a)?, fraction(scheme_b)?))
}

/// Axes of an experiment. Invalid (stage 1, stage 2) pairs are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub stage1: Vec<Stage1Scheme>,
    pub stage2: Vec<Stage2Scheme>,
    pub e_bound: Vec<f64>,
    /// SNR levels of added noise; `inf` means noiseless.
    #[serde(default = "noiseless")]
    pub snr_db: Vec<f64>,
}

fn noiseless() -> Vec<f64> {
    vec![f64::INFINITY]
}

impl Grid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text)?;
        grid.configs()?;
        Ok(grid)
    }

    /// Every stage-1 scheme, every stage-2 coder, bounds 0.001/0.01/0.1, noiseless/50 dB/40 dB.
    pub fn full() -> Self {
        Self {
            stage1: Stage1Scheme::ALL.to_vec(),
            stage2: Stage2Scheme::ALL.to_vec(),
            e_bound: vec![0.001, 0.01, 0.1],
            snr_db: vec![f64::INFINITY, 50.0, 40.0],
        }
    }

    pub fn configs(&self) -> Result<Vec<PipelineConfig>> {
        let mut out = Vec::new();
        for &e in &self.e_bound {
            for &s1 in &self.stage1 {
                for &s2 in &self.stage2 {
                    if s2 == Stage2Scheme::None && s1 != Stage1Scheme::Identity {
                        continue;
                    }
                    out.push(PipelineConfig::new(s1, s2, e)?);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("grid has no valid configuration".into()));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidConfig("SNR must be a number or inf".into()));
        }
        Ok(out)
    }
}

/// The signal as it enters the codec at a given noise level.
pub fn noisy_input(signal: &Signal, snr_db: f64) -> Signal {
    if snr_db == f64::INFINITY {
        return signal.clone();
    }
    let seed = derive_seed(signal.seed, 0, snr_db.to_bits(), SeedPurpose::Noise);
    add_awgn(signal, snr_db, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Signal,
    Aggregate,
}

/// One CSV line. Aggregate rows hold means over the signal rows of one
/// configuration and noise level, either per class or (`class` empty) overall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub report_version: u32,
    pub kind: RowKind,
    /// Position of the signal in the corpus; empty for aggregates.
    pub signal: Option<usize>,
    pub class: Option<DisturbanceClass>,
    pub stage1: Stage1Scheme,
    pub stage2: Stage2Scheme,
    /// Residual layout used, `none` when nothing was retained, `mixed` in aggregates.
    pub residual_strategy: String,
    pub e_bound: f64,
    /// Empty for noiseless input.
    pub snr_db: Option<f64>,
    pub compressed_bytes: f64,
    pub compression_rate: f64,
    /// Rate when the stage-1 model size is spread over the corpus.
    pub amortized_rate: f64,
    pub nmse: f64,
    pub max_error: f64,
    pub retained: f64,
    pub retained_residual_fraction: f64,
    /// Residual section over signal plus residual sections.
    pub overhead_fraction: f64,
    /// `gzip`/`bzip2` for the signal and residual sections.
    pub lossless_backend_chosen: String,
    pub bound_ok: bool,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn config_name(&self) -> String {
        format!("{}+{}", self.stage1, self.stage2)
    }
}

pub struct Report {
    /// Signal rows followed by aggregate rows, in a deterministic order.
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn signal_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Signal)
    }

    pub fn aggregate_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Aggregate)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn evaluate_one(
    index: usize,
    signal: &Signal,
    snr: f64,
    cfg: &PipelineConfig,
    store: &ModelStore,
    corpus_len: usize,
) -> ReportRow {
    let x = noisy_input(signal, snr).samples;
    let mut row = ReportRow {
        report_version: REPORT_VERSION,
        kind: RowKind::Signal,
        signal: Some(index),
        class: Some(signal.label),
        stage1: cfg.stage1,
        stage2: cfg.stage2,
        residual_strategy: String::new(),
        e_bound: cfg.e_bound,
        snr_db: (snr != f64::INFINITY).then_some(snr),
        compressed_bytes: f64::NAN,
        compression_rate: f64::NAN,
        amortized_rate: f64::NAN,
        nmse: f64::NAN,
        max_error: f64::NAN,
        retained: f64::NAN,
        retained_residual_fraction: f64::NAN,
        overhead_fraction: f64::NAN,
        lossless_backend_chosen: String::new(),
        bound_ok: false,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let (block, stats) = compress_with_stats(&x, cfg, store)?;
        let x_hat = decompress(&CompressedBlock::deserialize(&block.serialize())?, store)?;
        let size = block.serialized_len();
        let model = store.model_bytes(cfg.stage1) as f64 / corpus_len.max(1) as f64;
        row.residual_strategy = block.residual_strategy.map_or("none", |s| s.name()).to_string();
        row.compressed_bytes = size as f64;
        row.compression_rate = compression_rate(UNCOMPRESSED_BYTES, &block);
        row.amortized_rate = UNCOMPRESSED_BYTES as f64 / (size as f64 + model);
        row.max_error = max_error(&x, &x_hat)?;
        row.nmse = nmse(&x, &x_hat).unwrap_or(f64::NAN);
        row.retained = stats.retained as f64;
        row.retained_residual_fraction = stats.retained as f64 / x.len() as f64;
        let payload = block.signal_payload.len() + block.residual_payload.len();
        row.overhead_fraction = block.residual_payload.len() as f64 / payload as f64;
        row.lossless_backend_chosen = format!("{}/{}", block.signal_backend().name(), block.residual_backend().name());
        row.bound_ok = row.max_error <= cfg.e_bound;
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

type GroupKey = (u64, Option<u64>, Stage1Scheme, Stage2Scheme, Option<DisturbanceClass>);

fn group_key(row: &ReportRow, by_class: bool) -> GroupKey {
    (
        row.e_bound.to_bits(),
        row.snr_db.map(f64::to_bits),
        row.stage1,
        row.stage2,
        if by_class { row.class } else { None },
    )
}

/// Mean of every numeric column over successful signal rows, per
/// configuration and noise level, and per class when `by_class`.
pub fn aggregate(rows: &[ReportRow], by_class: bool) -> Vec<ReportRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&ReportRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.kind == RowKind::Signal && r.error.is_none()) {
        groups.entry(group_key(row, by_class)).or_default().push(row);
    }
    groups
        .into_values()
        .map(|members| {
            let first = members[0];
            let mean = |f: fn(&ReportRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / members.len() as f64;
            let same = |f: fn(&ReportRow) -> &str| {
                let v = f(first);
                if members.iter().all(|r| f(r) == v) {
                    v.to_string()
                } else {
                    "mixed".to_string()
                }
            };
            ReportRow {
                report_version: REPORT_VERSION,
                kind: RowKind::Aggregate,
                signal: None,
                class: if by_class { first.class } else { None },
                stage1: first.stage1,
                stage2: first.stage2,
                residual_strategy: same(|r| &r.residual_strategy),
                e_bound: first.e_bound,
                snr_db: first.snr_db,
                compressed_bytes: mean(|r| r.compressed_bytes),
                compression_rate: mean(|r| r.compression_rate),
                amortized_rate: mean(|r| r.amortized_rate),
                nmse: mean(|r| r.nmse),
                max_error: members.iter().map(|r| r.max_error).fold(0.0, f64::max),
                retained: mean(|r| r.retained),
                retained_residual_fraction: mean(|r| r.retained_residual_fraction),
                overhead_fraction: mean(|r| r.overhead_fraction),
                lossless_backend_chosen: same(|r| &r.lossless_backend_chosen),
                bound_ok: members.iter().all(|r| r.bound_ok),
                error: None,
            }
        })
        .collect()
}

fn sort_key(row: &ReportRow) -> (u64, Option<u64>, Stage1Scheme, Stage2Scheme, Option<usize>) {
    (
        row.e_bound.to_bits(),
        row.snr_db.map(|s| (-s).to_bits()),
        row.stage1,
        row.stage2,
        row.signal,
    )
}

/// Compress and decompress every corpus signal under every grid point.
///
/// Per-signal failures become rows with `error` set; the sweep continues.
/// Output holds the signal rows, then overall aggregates per configuration.
pub fn run_experiment(grid: &Grid, corpus: &[Signal], store: &ModelStore) -> Result<Report> {
    let configs = grid.configs()?;
    for cfg in &configs {
        store.codec(cfg.stage1)?;
    }
    let jobs: Vec<(usize, f64, &PipelineConfig)> = grid
        .snr_db
        .iter()
        .flat_map(|&snr| configs.iter().flat_map(move |cfg| (0..corpus.len()).map(move |i| (i, snr, cfg))))
        .collect();
    let mut rows: Vec<ReportRow> = jobs
        .into_par_iter()
        .map(|(i, snr, cfg)| evaluate_one(i, &corpus[i], snr, cfg, store, corpus.len()))
        .collect();
    rows.sort_by_key(sort_key);
    let mut totals = aggregate(&rows, false);
    totals.sort_by_key(sort_key);
    rows.extend(totals);
    Ok(Report { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{generate_signal, DisturbanceParams};

    fn sine() -> Vec<f64> {
        generate_signal(DisturbanceClass::Normal, &DisturbanceParams::default(), 1)
            .unwrap()
            .samples
    }

    #[test]
    fn rate_examples() {
        let block = CompressedBlock {
            version: 1,
            stage1: Stage1Scheme::Identity,
            stage2: Stage2Scheme::None,
            residual_strategy: None,
            lossless_flags: 0,
            e_bound: 0.1,
            n: 2560,
            m: 2560,
            signal_payload: vec![0; 2048 - 34],
            residual_payload: vec![],
        };
        assert_eq!(compression_rate(20480, &block), 10.0);
        let big = CompressedBlock {
            signal_payload: vec![0; 30000],
            ..block
        };
        assert!(compression_rate(20480, &big) < 1.0);
    }

    #[test]
    fn metric_examples() {
        let x = sine();
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(max_error(&x, &x).unwrap(), 0.0);
        assert!((nmse(&x, &vec![0.0; x.len()]).unwrap() - 1.0).abs() < 1e-15);

        let e = 0.01;
        let mut y = x.clone();
        y[100] += e;
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((max_error(&x, &y).unwrap() - e).abs() < 1e-15);
        assert!((nmse(&x, &y).unwrap() - e * e / energy).abs() < 1e-15);

        assert!(matches!(nmse(&[0.0; 4], &[1.0; 4]), Err(Error::ZeroNorm)));
        assert!(max_error(&[0.0; 4], &[1.0; 3]).is_err());
    }

    #[test]
    fn identical_schemes_give_equal_fractions() {
        let store = ModelStore::new();
        let s = LossyScheme {
            stage1: Stage1Scheme::Cs8,
            stage2: Some(Stage2Scheme::UniformQ),
            e_bound: 0.001,
        };
        let (a, b) = count_added_residuals(&sine(), &s, &s, 0.001, &store).unwrap();
        assert_eq!(a, b);
        assert!(count_added_residuals(&sine(), &s, &s, 0.0, &store).is_err());
    }

    #[test]
    fn one_config_ten_signals() {
        let corpus: Vec<Signal> = (0..10)
            .map(|i| generate_signal(DisturbanceClass::Normal, &DisturbanceParams::default(), i).unwrap())
            .collect();
        let grid = Grid {
            stage1: vec![Stage1Scheme::Identity],
            stage2: vec![Stage2Scheme::None],
            e_bound: vec![0.01],
            snr_db: vec![f64::INFINITY],
        };
        let report = run_experiment(&grid, &corpus, &ModelStore::new()).unwrap();
        assert_eq!(report.signal_rows().count(), 10);
        assert_eq!(report.aggregate_rows().count(), 1);
        assert!(report.rows.iter().all(|r| r.bound_ok && r.compression_rate > 0.0));

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let back = read_rows(csv.as_slice()).unwrap();
        assert_eq!(back.len(), 11);
        assert_eq!(back[3].compression_rate, report.rows[3].compression_rate);
    }

    #[test]
    fn missing_models_fail_before_the_sweep() {
        let grid = Grid {
            stage1: vec![Stage1Scheme::LinearAe8],
            stage2: vec![Stage2Scheme::Predictive],
            e_bound: vec![0.01],
            snr_db: vec![f64::INFINITY],
        };
        assert!(matches!(
            run_experiment(&grid, &[], &ModelStore::new()),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn grid_from_toml() {
        let grid = Grid::from_toml(
            "stage1 = [\"cs8\", \"identity\"]\nstage2 = [\"uniform_q\", \"none\"]\ne_bound = [0.01, 0.1]\nsnr_db = [inf, 50.0]\n",
        )
        .unwrap();
        // cs8+none is skipped
        assert_eq!(grid.configs().unwrap().len(), 6);
        assert_eq!(Grid::full().configs().unwrap().len(), 33);
        assert!(Grid::from_toml("stage1 = [\"cs8\"]\nstage2 = [\"none\"]\ne_bound = [0.1]\n").is_err());
    }

    #[test]
    fn noise_is_deterministic_and_level_specific() {
        let s = generate_signal(DisturbanceClass::Normal, &DisturbanceParams::default(), 5).unwrap();
        assert_eq!(noisy_input(&s, f64::INFINITY), s);
        assert_eq!(noisy_input(&s, 50.0), noisy_input(&s, 50.0));
        let a = noisy_input(&s, 50.0).samples;
        let b = noisy_input(&s, 40.0).samples;
        let da: Vec<f64> = a.iter().zip(&s.samples).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = b.iter().zip(&s.samples).map(|(x, y)| (x - y) / 10f64.sqrt()).collect();
        assert_ne!(da, db);
    }
}
