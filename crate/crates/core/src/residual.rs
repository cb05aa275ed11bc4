//! Residual retention: the step that turns an unbounded lossy reconstruction
//! into one with a guaranteed max-norm error.
//!
//! Residuals `r = x - x_bar` are masked (only `|r| > e_bound` is kept),
//! quantized with a step just under `2 * e_bound`, and stored with whichever
//! of three layouts is smallest after lossless packing.

use crate::error::{Error, Result};
use crate::lossless::{self, LosslessChoice};
use crate::stage2::guarded_step;
use crate::wire::{put_ivarint, put_uvarint, Reader};

/// How retained residuals are associated with sample positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// `(index delta, code)` pairs.
    DiffIndexed = 0,
    /// One bit per sample followed by the codes of set bits.
    BinaryMask = 1,
    /// Every sample's code, zero where masked.
    DenseMaskedVector = 2,
}

impl Strategy {
    /// Tie-break order used by [`choose_strategy`].
    pub const ALL: [Strategy; 3] = [Self::DiffIndexed, Self::BinaryMask, Self::DenseMaskedVector];

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::DiffIndexed),
            1 => Ok(Self::BinaryMask),
            2 => Ok(Self::DenseMaskedVector),
            other => Err(Error::Corrupt(format!("unknown residual strategy {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DiffIndexed => "diff_indexed",
            Self::BinaryMask => "binary_mask",
            Self::DenseMaskedVector => "dense_masked",
        }
    }
}

/// Sparse, quantized residuals for one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    pub n: usize,
    pub quant_step: f64,
    /// `(index, code)`, indices strictly increasing.
    pub entries: Vec<(u32, i64)>,
}

impl ResidualSet {
    pub fn empty(n: usize, quant_step: f64) -> Self {
        Self {
            n,
            quant_step,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `r_i = x_i - x_rec_i`
pub fn compute_residuals(x: &[f64], x_rec: &[f64]) -> Result<Vec<f64>> {
    if x.len() != x_rec.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: x_rec.len(),
        });
    }
    Ok(x.iter().zip(x_rec).map(|(a, b)| a - b).collect())
}

/// Keep `(i, r_i)` where `|r_i| > e_bound`; residuals exactly on the bound are dropped.
pub fn mask_residuals(r: &[f64], e_bound: f64) -> Vec<(u32, f64)> {
    r.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > e_bound)
        .map(|(i, &v)| (i as u32, v))
        .collect()
}

/// Quantization step used for residuals: `2 * e_bound * (1 - 2^-20)`.
pub fn residual_step(e_bound: f64) -> f64 {
    guarded_step(e_bound)
}

/// Round each retained residual to the residual step grid.
pub fn quantize_residuals(sparse: &[(u32, f64)], n: usize, e_bound: f64) -> ResidualSet {
    let quant_step = residual_step(e_bound);
    ResidualSet {
        n,
        quant_step,
        entries: sparse
            .iter()
            .map(|&(i, r)| (i, (r / quant_step).round() as i64))
            .collect(),
    }
}

fn check_index(index: u64, n: usize) -> Result<u32> {
    if index >= n as u64 {
        return Err(Error::IndexOutOfRange {
            index: index as usize,
            n,
        });
    }
    Ok(index as u32)
}

/// Strategy-specific payload (without the section header).
pub fn encode_residuals(set: &ResidualSet, strategy: Strategy) -> Vec<u8> {
    let mut out = Vec::new();
    match strategy {
        Strategy::DiffIndexed => {
            put_uvarint(&mut out, set.entries.len() as u64);
            let mut prev = 0u32;
            for &(i, code) in &set.entries {
                put_uvarint(&mut out, u64::from(i - prev));
                put_ivarint(&mut out, code);
                prev = i;
            }
        }
        Strategy::BinaryMask => {
            let mut mask = vec![0u8; set.n.div_ceil(8)];
            for &(i, _) in &set.entries {
                mask[i as usize / 8] |= 1 << (i % 8);
            }
            out.extend_from_slice(&mask);
            for &(_, code) in &set.entries {
                put_ivarint(&mut out, code);
            }
        }
        Strategy::DenseMaskedVector => {
            let mut dense = vec![0i64; set.n];
            for &(i, code) in &set.entries {
                dense[i as usize] = code;
            }
            for code in dense {
                put_ivarint(&mut out, code);
            }
        }
    }
    out
}

/// Inverse of [`encode_residuals`]. The payload must be consumed exactly.
pub fn decode_residuals(payload: &[u8], strategy: Strategy, n: usize, quant_step: f64) -> Result<ResidualSet> {
    let mut r = Reader::new(payload);
    let mut entries = Vec::new();
    match strategy {
        Strategy::DiffIndexed => {
            let count = r.uvarint()?;
            if count > n as u64 {
                return Err(Error::Corrupt(format!("{count} residuals for {n} samples")));
            }
            let mut index = 0u64;
            for k in 0..count {
                let delta = r.uvarint()?;
                if k > 0 && delta == 0 {
                    return Err(Error::Corrupt("repeated residual index".into()));
                }
                index = index.saturating_add(delta);
                entries.push((check_index(index, n)?, r.ivarint()?));
            }
        }
        Strategy::BinaryMask => {
            let mask = r.take(n.div_ceil(8))?;
            for i in 0..n {
                if mask[i / 8] >> (i % 8) & 1 == 1 {
                    entries.push((i as u32, r.ivarint()?));
                }
            }
            if n % 8 != 0 && mask[n / 8] >> (n % 8) != 0 {
                return Err(Error::Corrupt("mask bits set past the signal end".into()));
            }
        }
        Strategy::DenseMaskedVector => {
            for i in 0..n {
                let code = r.ivarint()?;
                if code != 0 {
                    entries.push((i as u32, code));
                }
            }
        }
    }
    if !r.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes in residual payload", r.remaining())));
    }
    Ok(ResidualSet { n, quant_step, entries })
}

/// Section layout: `strategy u8, quant_step f64, n u32, payload`.
pub fn encode_section(set: &ResidualSet, strategy: Strategy) -> Vec<u8> {
    let mut out = Vec::with_capacity(13);
    out.push(strategy as u8);
    out.extend_from_slice(&set.quant_step.to_le_bytes());
    out.extend_from_slice(&(set.n as u32).to_le_bytes());
    out.extend_from_slice(&encode_residuals(set, strategy));
    out
}

pub fn decode_section(bytes: &[u8]) -> Result<(Strategy, ResidualSet)> {
    let mut r = Reader::new(bytes);
    let strategy = Strategy::from_u8(r.u8()?)?;
    let quant_step = r.f64()?;
    if !(quant_step.is_finite() && quant_step > 0.0) {
        return Err(Error::Corrupt(format!("residual step {quant_step}")));
    }
    let n = r.u32()? as usize;
    let set = decode_residuals(r.rest(), strategy, n, quant_step)?;
    Ok((strategy, set))
}

/// Encode the section with every strategy, pack each with both lossless
/// backends, and keep the smallest. Ties prefer `DiffIndexed`, then
/// `BinaryMask`, then `DenseMaskedVector`.
pub fn choose_strategy(set: &ResidualSet) -> (Strategy, LosslessChoice) {
    let mut best: Option<(Strategy, LosslessChoice)> = None;
    for strategy in Strategy::ALL {
        let packed = lossless::compress_dual(&encode_section(set, strategy));
        if best.as_ref().is_none_or(|(_, b)| packed.payload.len() < b.payload.len()) {
            best = Some((strategy, packed));
        }
    }
    best.expect("three candidate strategies")
}

/// Width of index deltas when sizing the index structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaWidth {
    Varint,
    /// Every delta costs one byte.
    Fixed8,
}

/// Bytes spent on associating residuals with positions, before lossless
/// packing. Codes are left out: both sparse layouts store the same codes.
pub fn index_overhead(strategy: Strategy, indices: &[u32], n: usize, width: DeltaWidth) -> usize {
    match strategy {
        Strategy::DiffIndexed => match width {
            DeltaWidth::Fixed8 => indices.len(),
            DeltaWidth::Varint => {
                let mut prev = 0u32;
                indices
                    .iter()
                    .map(|&i| {
                        let d = i - prev;
                        prev = i;
                        crate::wire::uvarint_len(u64::from(d))
                    })
                    .sum()
            }
        },
        Strategy::BinaryMask => n.div_ceil(8),
        // Dense storage spends a (zero) code on every masked sample.
        Strategy::DenseMaskedVector => n - indices.len(),
    }
}

/// `x_hat_i = x_rec_i + code_i * step` at retained indices, `x_rec_i` elsewhere.
pub fn apply_residuals(x_rec: &[f64], set: &ResidualSet) -> Result<Vec<f64>> {
    if set.n != x_rec.len() {
        return Err(Error::LengthMismatch {
            expected: set.n,
            got: x_rec.len(),
        });
    }
    let mut out = x_rec.to_vec();
    for &(i, code) in &set.entries {
        let slot = out.get_mut(i as usize).ok_or(Error::IndexOutOfRange {
            index: i as usize,
            n: set.n,
        })?;
        *slot += code as f64 * set.quant_step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, count: usize) -> ResidualSet {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        for i in 0..count {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        let mut chosen = idx[..count].to_vec();
        chosen.sort_unstable();
        ResidualSet {
            n,
            quant_step: 0.002,
            entries: chosen
                .into_iter()
                .map(|i| {
                    let mag = rng.random_range(1..200i64);
                    (i, if rng.random() { mag } else { -mag })
                })
                .collect(),
        }
    }

    #[test]
    fn residual_identities() {
        let x = vec![0.5, -0.25, 1.0];
        assert_eq!(compute_residuals(&x, &x).unwrap(), vec![0.0; 3]);
        assert_eq!(compute_residuals(&x, &[0.0; 3]).unwrap(), x);
        assert!(compute_residuals(&x, &[0.0; 2]).is_err());
    }

    #[test]
    fn residual_plus_reconstruction_is_the_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xr: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = compute_residuals(&x, &xr).unwrap();
            for ((ri, xri), xi) in r.iter().zip(&xr).zip(&x) {
                // Sterbenz-free: check the stored residual re-adds to within one rounding.
                assert!(((ri + xri) - xi).abs() <= f64::EPSILON * 4.0 * xi.abs().max(xri.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn masking_threshold_is_strict() {
        let kept = mask_residuals(&[0.0005, -0.002, 0.001], 0.001);
        assert_eq!(kept, vec![(1, -0.002)]);
        assert!(mask_residuals(&[0.001, -0.001, 0.0], 0.001).is_empty());
    }

    #[test]
    fn gaussian_masking_fraction() {
        // P(|N(0,1)| > 1) = 2 (1 - Phi(1)) = 0.3173
        let e = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Vec<f64> = (0..100_000).map(|_| e * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let fraction = mask_residuals(&r, e).len() as f64 / r.len() as f64;
        assert!((fraction - 0.3173).abs() < 0.02, "{fraction}");
    }

    #[test]
    fn quantization_worked_example() {
        let e = 0.01;
        let set = quantize_residuals(&[(7, 0.031)], 10, e);
        assert_eq!(set.entries, vec![(7, 2)]);
        let step = 0.02 * (1.0 - 2f64.powi(-20));
        assert_eq!(set.quant_step, step);
        let err = (0.031 - 2.0 * step).abs();
        assert!((err - 0.009).abs() < 1e-7 && err < e);
    }

    #[test]
    fn retained_residuals_never_quantize_to_zero() {
        let e = 0.003;
        let set = quantize_residuals(&[(0, e * (1.0 + 1e-12)), (1, -e * 1.0000001)], 2, e);
        assert!(set.entries.iter().all(|&(_, c)| c != 0));
    }

    #[test]
    fn correction_error_is_always_below_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for e in [0.001, 0.01, 0.1] {
            let x: Vec<f64> = (0..100_000).map(|_| rng.random_range(-3.0..3.0)).collect();
            let zeros = vec![0.0; x.len()];
            let set = quantize_residuals(&mask_residuals(&x, e), x.len(), e);
            let xh = apply_residuals(&zeros, &set).unwrap();
            assert!(max_err(&x, &xh) <= e, "e={e}: {}", max_err(&x, &xh));
        }
    }

    #[test]
    fn empty_set_examples() {
        let empty = ResidualSet::empty(2560, 0.002);
        let mask = encode_residuals(&empty, Strategy::BinaryMask);
        assert_eq!(mask, vec![0u8; 320]);
        assert_eq!(encode_residuals(&empty, Strategy::DiffIndexed), vec![0]);
        let xr = vec![0.25; 2560];
        assert_eq!(apply_residuals(&xr, &empty).unwrap(), xr);
    }

    #[test]
    fn single_entry_diff_indexed_layout() {
        let set = ResidualSet {
            n: 2560,
            quant_step: 0.002,
            entries: vec![(0, 5)],
        };
        assert_eq!(encode_residuals(&set, Strategy::DiffIndexed), vec![1, 0, 10]);
    }

    #[test]
    fn strategies_round_trip_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..10_000 {
            let n = rng.random_range(1..300);
            let count = rng.random_range(0..=n);
            let set = random_set(&mut rng, n, count);
            let strategy = Strategy::ALL[case % 3];
            let bytes = encode_section(&set, strategy);
            assert_eq!(decode_section(&bytes).unwrap(), (strategy, set));
        }
    }

    #[test]
    fn corrupt_payloads_are_rejected() {
        let set = ResidualSet {
            n: 16,
            quant_step: 0.5,
            entries: vec![(3, 1), (9, -2)],
        };
        for strategy in Strategy::ALL {
            let bytes = encode_residuals(&set, strategy);
            assert!(decode_residuals(&bytes[..bytes.len() - 1], strategy, 16, 0.5).is_err());
        }
        // Index past the end.
        let bad = [1u8, 16, 2];
        assert!(matches!(
            decode_residuals(&bad, Strategy::DiffIndexed, 16, 0.5),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(decode_section(&[7, 0, 0]).is_err());
    }

    #[test]
    fn out_of_range_index_in_apply_is_an_error() {
        let set = ResidualSet {
            n: 4,
            quant_step: 0.1,
            entries: vec![(4, 1)],
        };
        assert!(matches!(
            apply_residuals(&[0.0; 4], &set),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(apply_residuals(&[0.0; 3], &set).is_err());
    }

    #[test]
    fn eight_bit_crossover_at_320() {
        let n = 2560;
        for k in [0usize, 1, 100, 319, 320, 321, 1000, 2560] {
            let indices: Vec<u32> = (0..k as u32).map(|i| i * (n as u32 / k.max(1) as u32).min(255)).collect();
            let diff = index_overhead(Strategy::DiffIndexed, &indices, n, DeltaWidth::Fixed8);
            let mask = index_overhead(Strategy::BinaryMask, &indices, n, DeltaWidth::Fixed8);
            assert_eq!(diff < mask, k < 320, "k={k}");
            assert_eq!(diff == mask, k == 320, "k={k}");
        }
    }

    #[test]
    fn strategy_choice_examples() {
        let empty = ResidualSet::empty(2560, 0.002);
        assert_eq!(choose_strategy(&empty).0, Strategy::DiffIndexed);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense = random_set(&mut rng, 2560, 2000);
        let (winner, packed) = choose_strategy(&dense);
        assert_ne!(winner, Strategy::DiffIndexed);
        let diff_size = lossless::compress_dual(&encode_section(&dense, Strategy::DiffIndexed)).payload.len();
        assert!(packed.payload.len() < diff_size);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn chosen_strategy_is_minimal(count in 0usize..400, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = random_set(&mut rng, 512, count.min(512));
            let (_, packed) = choose_strategy(&set);
            for s in Strategy::ALL {
                let size = lossless::compress_dual(&encode_section(&set, s)).payload.len();
                prop_assert!(packed.payload.len() <= size);
            }
        }
    }
}
