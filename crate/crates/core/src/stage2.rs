//! Second-stage lossy coding of the latent vector.
//!
//! Both coders bound the pointwise latent-domain error: the uniform quantizer
//! by rounding to a fixed grid inside an interval, the predictive coder by
//! quantizing the error of a linear extrapolation from already-decoded values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shrinks `2 * bound` so that round-to-nearest stays strictly inside the bound
/// under floating-point rounding.
pub const STEP_GUARD: f64 = 1.0 - 1.0 / (1u64 << 20) as f64;

/// Quantization step that keeps the rounding error below `bound`.
pub fn guarded_step(bound: f64) -> f64 {
    2.0 * bound * STEP_GUARD
}

/// Fixed interval and step of the uniform quantizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl QuantizerConfig {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidConfig(format!("quantizer interval ({lo}, {hi}) is empty")));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("quantizer step {step} must be positive")));
        }
        Ok(Self { lo, hi, step })
    }

    /// Interval `(lo, hi)` with the guarded step for `bound`.
    pub fn for_bound(bound: f64, (lo, hi): (f64, f64)) -> Result<Self> {
        Self::new(lo, hi, guarded_step(bound))
    }
}

/// Codes from [`quantize`] and the number of inputs clamped into the interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quantized {
    pub codes: Vec<i64>,
    pub saturated: usize,
}

/// `code = round((v - lo) / step)` after clamping `v` into `[lo, hi]`.
/// Ties round away from zero.
pub fn quantize(values: &[f64], cfg: &QuantizerConfig) -> Quantized {
    let mut saturated = 0;
    let codes = values
        .iter()
        .map(|&v| {
            let clamped = v.clamp(cfg.lo, cfg.hi);
            if clamped != v {
                saturated += 1;
            }
            ((clamped - cfg.lo) / cfg.step).round() as i64
        })
        .collect();
    Quantized { codes, saturated }
}

pub fn dequantize(codes: &[i64], cfg: &QuantizerConfig) -> Vec<f64> {
    codes.iter().map(|&c| cfg.lo + c as f64 * cfg.step).collect()
}

/// First element verbatim, then successive differences.
pub fn diff_encode(codes: &[i64]) -> Vec<i64> {
    let mut prev = 0i64;
    codes
        .iter()
        .map(|&c| {
            let d = c.wrapping_sub(prev);
            prev = c;
            d
        })
        .collect()
}

pub fn diff_decode(deltas: &[i64]) -> Vec<i64> {
    let mut acc = 0i64;
    deltas
        .iter()
        .map(|&d| {
            acc = acc.wrapping_add(d);
            acc
        })
        .collect()
}

/// Extrapolation used by the predictive coder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorOrder {
    /// `p_i = v_{i-1}`
    Constant,
    /// `p_i = 2 v_{i-1} - v_{i-2}`
    #[default]
    Linear,
    /// `p_i = 3 v_{i-1} - 3 v_{i-2} + v_{i-3}`
    Quadratic,
}

impl PredictorOrder {
    fn predict(self, history: &[f64; 3]) -> f64 {
        let [a, b, c] = *history;
        match self {
            Self::Constant => a,
            Self::Linear => 2.0 * a - b,
            Self::Quadratic => 3.0 * a - 3.0 * b + c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoderId {
    UniformQ,
    Predictive,
}

/// What a decoder needs besides the codes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StreamConfig {
    Uniform(QuantizerConfig),
    Predictive { step: f64, order: PredictorOrder },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedStream {
    pub codes: Vec<i64>,
    pub config: StreamConfig,
    /// Inputs clamped by the uniform quantizer; always 0 for the predictive coder.
    pub saturated: usize,
}

impl QuantizedStream {
    pub fn coder(&self) -> CoderId {
        match self.config {
            StreamConfig::Uniform(_) => CoderId::UniformQ,
            StreamConfig::Predictive { .. } => CoderId::Predictive,
        }
    }

    pub fn decode(&self) -> Vec<f64> {
        match self.config {
            StreamConfig::Uniform(cfg) => dequantize(&self.codes, &cfg),
            StreamConfig::Predictive { .. } => predictive_decode(self),
        }
    }
}

pub fn uniform_encode(values: &[f64], cfg: &QuantizerConfig) -> QuantizedStream {
    let Quantized { codes, saturated } = quantize(values, cfg);
    QuantizedStream {
        codes,
        config: StreamConfig::Uniform(*cfg),
        saturated,
    }
}

/// Predictive coding with the default linear predictor; `|v_hat - v| <= bound` pointwise.
pub fn predictive_encode(values: &[f64], bound: f64) -> Result<QuantizedStream> {
    predictive_encode_with(values, bound, PredictorOrder::default())
}

pub fn predictive_encode_with(values: &[f64], bound: f64, order: PredictorOrder) -> Result<QuantizedStream> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::InvalidConfig(format!("predictive bound {bound} must be positive")));
    }
    let step = guarded_step(bound);
    let mut history = [0.0f64; 3];
    let codes = values
        .iter()
        .map(|&v| {
            let p = order.predict(&history);
            let code = ((v - p) / step).round() as i64;
            let decoded = p + code as f64 * step;
            history = [decoded, history[0], history[1]];
            code
        })
        .collect();
    Ok(QuantizedStream {
        codes,
        config: StreamConfig::Predictive { step, order },
        saturated: 0,
    })
}

/// Replay the predictor over the codes.
pub fn predictive_decode(stream: &QuantizedStream) -> Vec<f64> {
    let StreamConfig::Predictive { step, order } = stream.config else {
        return stream.decode();
    };
    let mut history = [0.0f64; 3];
    stream
        .codes
        .iter()
        .map(|&code| {
            let decoded = order.predict(&history) + code as f64 * step;
            history = [decoded, history[0], history[1]];
            decoded
        })
        .collect()
}
