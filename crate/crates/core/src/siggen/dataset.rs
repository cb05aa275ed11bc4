use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{add_awgn, generate_signal_with, DisturbanceClass, DisturbanceParams, RangeTable, Signal, SIGNAL_LEN};
use crate::error::{Error, Result};
use crate::wire::Reader;

const MAGIC: &[u8; 4] = b"PQDS";
const VERSION: u16 = 1;

/// Which stream a per-signal seed feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPurpose {
    Train = 1,
    Eval = 2,
    Noise = 3,
}

/// Corpus layout: how many signals per class, the train/eval split, noise level and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub signals_per_class: usize,
    /// `(train_fraction, eval_fraction)`, summing to one.
    pub split: (f64, f64),
    pub snr_db: Option<f64>,
    pub master_seed: u64,
    pub classes: Vec<DisturbanceClass>,
}

impl DatasetSpec {
    /// All 15 classes with a 90/10 split and no noise.
    pub fn new(signals_per_class: usize, master_seed: u64) -> Self {
        Self {
            signals_per_class,
            split: (0.9, 0.1),
            snr_db: None,
            master_seed,
            classes: DisturbanceClass::ALL.to_vec(),
        }
    }

    pub fn with_snr(mut self, snr_db: Option<f64>) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn train_per_class(&self) -> usize {
        (self.signals_per_class as f64 * self.split.0).round() as usize
    }

    pub fn eval_per_class(&self) -> usize {
        self.signals_per_class - self.train_per_class()
    }

    fn validate(&self) -> Result<()> {
        if self.signals_per_class == 0 {
            return Err(Error::InvalidConfig("signals_per_class must be at least 1".into()));
        }
        let (train, eval) = self.split;
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&eval) || (train + eval - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split {train}/{eval} does not sum to 1")));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("no classes selected".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed for one signal: a mix of the master seed, class, index and purpose.
pub fn derive_seed(master: u64, class_index: u64, signal_index: u64, purpose: SeedPurpose) -> u64 {
    let mut h = splitmix64(master);
    for word in [class_index, signal_index, purpose as u64] {
        h = splitmix64(h ^ word);
    }
    h
}

fn noisy(signal: Signal, snr_db: Option<f64>) -> Signal {
    match snr_db {
        Some(snr) => {
            let seed = derive_seed(signal.seed, 0, 0, SeedPurpose::Noise);
            add_awgn(&signal, snr, seed)
        }
        None => signal,
    }
}

fn render(table: &RangeTable, class: DisturbanceClass, seed: u64, snr_db: Option<f64>) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DisturbanceParams::sample(class, table, &mut rng);
    let signal = generate_signal_with(table, class, &params, seed).expect("sampled parameters are in range");
    noisy(signal, snr_db)
}

fn split_part(spec: &DatasetSpec, table: &RangeTable, count: usize, purpose: SeedPurpose) -> Vec<Signal> {
    let jobs: Vec<(DisturbanceClass, u64)> = spec
        .classes
        .iter()
        .flat_map(|&class| {
            (0..count as u64).map(move |i| {
                (class, derive_seed(spec.master_seed, class.index() as u64, i, purpose))
            })
        })
        .collect();
    jobs.into_par_iter()
        .map(|(class, seed)| render(table, class, seed, spec.snr_db))
        .collect()
}

/// Generate `(train, eval)` for `spec`. Signals are ordered class-major.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(Vec<Signal>, Vec<Signal>)> {
    spec.validate()?;
    let table = RangeTable::builtin();
    let train = split_part(spec, table, spec.train_per_class(), SeedPurpose::Train);
    let eval = split_part(spec, table, spec.eval_per_class(), SeedPurpose::Eval);
    Ok((train, eval))
}

/// Write signals in the `PQDS` dataset format.
pub fn write_dataset<W: Write>(mut out: W, signals: &[Signal]) -> Result<()> {
    let mut header = Vec::with_capacity(14);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(signals.len() as u32).to_le_bytes());
    header.extend_from_slice(&(SIGNAL_LEN as u32).to_le_bytes());
    out.write_all(&header)?;
    let mut record = Vec::with_capacity(14 + 8 * SIGNAL_LEN);
    for s in signals {
        if s.len() != SIGNAL_LEN {
            return Err(Error::LengthMismatch {
                expected: SIGNAL_LEN,
                got: s.len(),
            });
        }
        record.clear();
        record.push(s.label.index() as u8);
        record.push(u8::from(s.snr_db.is_some()));
        record.extend_from_slice(&(s.snr_db.unwrap_or(0.0) as f32).to_le_bytes());
        record.extend_from_slice(&s.seed.to_le_bytes());
        for v in &s.samples {
            record.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a `PQDS` dataset.
pub fn read_dataset<R: Read>(mut input: R) -> Result<Vec<Signal>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    let magic = r.array::<4>()?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            expected: *MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let len = r.u32()? as usize;
    if len != SIGNAL_LEN {
        return Err(Error::LengthMismatch {
            expected: SIGNAL_LEN,
            got: len,
        });
    }
    let mut signals = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let class = r.u8()?;
        let label = DisturbanceClass::from_index(class as usize)
            .ok_or_else(|| Error::Corrupt(format!("unknown class id {class}")))?;
        let has_snr = r.u8()? != 0;
        let snr = r.f32()?;
        let seed = r.u64()?;
        let samples = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        signals.push(Signal {
            samples,
            label,
            snr_db: has_snr.then_some(f64::from(snr)),
            seed,
        });
    }
    if !r.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after last record", r.remaining())));
    }
    Ok(signals)
}
