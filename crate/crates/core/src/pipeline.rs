//! The four-stage codec and its `PQZ1` container.
//!
//! `compress` runs stage 1 and stage 2, immediately decodes them again to get
//! exactly the reconstruction the decoder will see, and stores the residuals
//! that exceed the bound. Both sections go through the dual lossless stage.
//! `decompress` replays the same decode and adds the residuals back, so
//! `max |x - x_hat| <= e_bound` holds for every input.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossless::{self, Backend};
use crate::residual::{self, ResidualSet, Strategy};
use crate::siggen::SIGNAL_LEN;
use crate::stage1::{LinearAutoencoder, Stage1Codec, Stage1Kind};
use crate::stage2::{
    diff_decode, diff_encode, guarded_step, predictive_decode, predictive_encode_with, uniform_encode,
    PredictorOrder, QuantizedStream, QuantizerConfig, StreamConfig,
};
use crate::wire::{put_ivarint, Reader};

pub const MAGIC: &[u8; 4] = b"PQZ1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 34;
/// Size of one raw frame: 2560 samples of 8 bytes.
pub const UNCOMPRESSED_BYTES: usize = SIGNAL_LEN * 8;
/// Per-sample amplitude covered by the default uniform quantizer interval.
pub const INTERVAL_AMPLITUDE: f64 = 8.0;

const FLAG_SIGNAL_BWT: u8 = 1;
const FLAG_RESIDUAL_BWT: u8 = 1 << 1;
/// Non-default stage-2 parameters precede the codes in the signal section.
const FLAG_EXTENSION: u8 = 1 << 2;
const KNOWN_FLAGS: u8 = FLAG_SIGNAL_BWT | FLAG_RESIDUAL_BWT | FLAG_EXTENSION;
const NO_RESIDUALS: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Scheme {
    Cs8,
    Cs16,
    LinearAe8,
    LinearAe16,
    Identity,
}

impl Stage1Scheme {
    pub const ALL: [Stage1Scheme; 5] = [Self::Cs8, Self::Cs16, Self::LinearAe8, Self::LinearAe16, Self::Identity];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Corrupt(format!("unknown stage-1 id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cs8 => "cs8",
            Self::Cs16 => "cs16",
            Self::LinearAe8 => "linear_ae8",
            Self::LinearAe16 => "linear_ae16",
            Self::Identity => "identity",
        }
    }

    /// Dimensionality reduction factor; 1 for identity.
    pub fn ratio(self) -> usize {
        match self {
            Self::Cs8 | Self::LinearAe8 => 8,
            Self::Cs16 | Self::LinearAe16 => 16,
            Self::Identity => 1,
        }
    }

    pub fn latent_len(self, n: usize) -> usize {
        n / self.ratio()
    }

    /// Largest latent magnitude per unit of sample magnitude: the block
    /// length for CS, `sqrt(n)` for an orthonormal projection.
    pub fn latent_gain(self, n: usize) -> f64 {
        match self {
            Self::Cs8 | Self::Cs16 => self.ratio() as f64,
            Self::LinearAe8 | Self::LinearAe16 => (n as f64).sqrt(),
            Self::Identity => 1.0,
        }
    }

    /// Quantizer interval covering latents of signals up to [`INTERVAL_AMPLITUDE`].
    pub fn default_interval(self) -> (f64, f64) {
        let half = INTERVAL_AMPLITUDE * self.latent_gain(SIGNAL_LEN);
        (-half, half)
    }

    pub fn is_cs(self) -> bool {
        matches!(self, Self::Cs8 | Self::Cs16)
    }

    pub fn is_linear_ae(self) -> bool {
        matches!(self, Self::LinearAe8 | Self::LinearAe16)
    }

    /// File name of the trained model inside a model directory.
    pub fn model_file(self) -> Option<&'static str> {
        match self {
            Self::LinearAe8 => Some("linear_ae8.pqs"),
            Self::LinearAe16 => Some("linear_ae16.pqs"),
            _ => None,
        }
    }
}

impl fmt::Display for Stage1Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage1Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage-1 scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Scheme {
    UniformQ,
    Predictive,
    /// Plain rounding of the signal itself; only valid after the identity stage.
    None,
}

impl Stage2Scheme {
    pub const ALL: [Stage2Scheme; 3] = [Self::UniformQ, Self::Predictive, Self::None];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Corrupt(format!("unknown stage-2 id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::UniformQ => "uniform_q",
            Self::Predictive => "predictive",
            Self::None => "none",
        }
    }
}

impl fmt::Display for Stage2Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage2Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage-2 scheme {s:?}")))
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub stage1: Stage1Scheme,
    pub stage2: Stage2Scheme,
    pub e_bound: f64,
    /// Latent-domain bound of stage 2 as a multiple of `e_bound`.
    #[serde(default = "default_scale")]
    pub latent_scale: f64,
    /// Uniform quantizer interval in latent units; scheme default when unset.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
    /// OMP sparsity for CS; `m / 10` when unset.
    #[serde(default)]
    pub sparsity: Option<usize>,
    #[serde(default)]
    pub predictor: PredictorOrder,
    /// Expected fingerprint of the stage-1 model, checked against the store.
    #[serde(default)]
    pub model_ref: Option<u32>,
}

impl PipelineConfig {
    pub fn new(stage1: Stage1Scheme, stage2: Stage2Scheme, e_bound: f64) -> Result<Self> {
        let cfg = Self {
            stage1,
            stage2,
            e_bound,
            latent_scale: 1.0,
            interval: None,
            sparsity: None,
            predictor: PredictorOrder::default(),
            model_ref: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every valid (stage 1, stage 2) pair at `e_bound`.
    pub fn all(e_bound: f64) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for s1 in Stage1Scheme::ALL {
            for s2 in Stage2Scheme::ALL {
                if s2 != Stage2Scheme::None || s1 == Stage1Scheme::Identity {
                    out.push(Self::new(s1, s2, e_bound)?);
                }
            }
        }
        Ok(out)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_bound.is_finite() && self.e_bound > 0.0) {
            return Err(Error::InvalidConfig(format!("e_bound {} must be positive", self.e_bound)));
        }
        if self.stage2 == Stage2Scheme::None && self.stage1 != Stage1Scheme::Identity {
            return Err(Error::InvalidConfig(format!(
                "stage 2 'none' requires the identity stage 1, not {}",
                self.stage1
            )));
        }
        if !(self.latent_scale.is_finite() && self.latent_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("latent_scale {} must be positive", self.latent_scale)));
        }
        QuantizerConfig::for_bound(self.latent_bound(), self.interval())?;
        if let Some(k) = self.sparsity {
            let m = self.stage1.latent_len(SIGNAL_LEN);
            if !self.stage1.is_cs() || k == 0 || k > m {
                return Err(Error::InvalidConfig(format!("sparsity {k} invalid for {}", self.stage1)));
            }
        }
        Ok(())
    }

    /// `stage1+stage2`, e.g. `cs8+uniform_q`.
    pub fn name(&self) -> String {
        format!("{}+{}", self.stage1, self.stage2)
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval.unwrap_or_else(|| self.stage1.default_interval())
    }

    pub fn latent_bound(&self) -> f64 {
        self.e_bound * self.latent_scale
    }

    fn has_default_params(&self) -> bool {
        self.latent_scale == 1.0
            && self.interval.is_none()
            && self.sparsity.is_none()
            && self.predictor == PredictorOrder::default()
    }
}

/// Stage-1 codecs by scheme. CS and identity are built on first use; linear
/// autoencoders must be trained or loaded.
#[derive(Debug, Default)]
pub struct ModelStore {
    cs8: OnceLock<Stage1Codec>,
    cs16: OnceLock<Stage1Codec>,
    identity: OnceLock<Stage1Codec>,
    linear_ae8: Option<Stage1Codec>,
    linear_ae16: Option<Stage1Codec>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Train both linear autoencoders from one PCA fit.
    pub fn train<S: AsRef<[f64]>>(train: &[S]) -> Result<Self> {
        let ae8 = LinearAutoencoder::train(train, Stage1Scheme::LinearAe8.latent_len(SIGNAL_LEN))?;
        let ae16 = ae8.truncated(Stage1Scheme::LinearAe16.latent_len(SIGNAL_LEN))?;
        let mut store = Self::new();
        store.insert(Stage1Scheme::LinearAe8, Stage1Codec::from_linear_ae(ae8))?;
        store.insert(Stage1Scheme::LinearAe16, Stage1Codec::from_linear_ae(ae16))?;
        Ok(store)
    }

    /// Install a trained model for a linear-autoencoder scheme.
    pub fn insert(&mut self, scheme: Stage1Scheme, codec: Stage1Codec) -> Result<()> {
        let m = scheme.latent_len(SIGNAL_LEN);
        if codec.kind() != Stage1Kind::LinearAutoencoder || codec.n() != SIGNAL_LEN || codec.m() != m {
            return Err(Error::InvalidConfig(format!(
                "{scheme} needs a linear autoencoder {SIGNAL_LEN}->{m}, got {:?} {}->{}",
                codec.kind(),
                codec.n(),
                codec.m()
            )));
        }
        match scheme {
            Stage1Scheme::LinearAe8 => self.linear_ae8 = Some(codec),
            Stage1Scheme::LinearAe16 => self.linear_ae16 = Some(codec),
            _ => return Err(Error::InvalidConfig(format!("{scheme} is not a trained scheme"))),
        }
        Ok(())
    }

    pub fn codec(&self, scheme: Stage1Scheme) -> Result<&Stage1Codec> {
        let built = |cell: &'static str| Error::MissingModel(cell.to_string());
        match scheme {
            Stage1Scheme::Cs8 => Ok(self.cs8.get_or_init(|| cs_codec(8))),
            Stage1Scheme::Cs16 => Ok(self.cs16.get_or_init(|| cs_codec(16))),
            Stage1Scheme::Identity => Ok(self.identity.get_or_init(|| Stage1Codec::identity(SIGNAL_LEN))),
            Stage1Scheme::LinearAe8 => self.linear_ae8.as_ref().ok_or_else(|| built("linear_ae8")),
            Stage1Scheme::LinearAe16 => self.linear_ae16.as_ref().ok_or_else(|| built("linear_ae16")),
        }
    }

    /// Read whichever model files exist in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = Self::new();
        for scheme in Stage1Scheme::ALL {
            let Some(file) = scheme.model_file() else { continue };
            let path = dir.join(file);
            if path.exists() {
                let codec = Stage1Codec::from_model_bytes(&fs::read(&path)?)?;
                store.insert(scheme, codec)?;
            }
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for scheme in Stage1Scheme::ALL {
            if let (Some(file), Ok(codec)) = (scheme.model_file(), self.codec(scheme)) {
                fs::write(dir.join(file), codec.to_model_bytes())?;
            }
        }
        Ok(())
    }

    /// Bytes of the trained models, for amortized rates.
    pub fn model_bytes(&self, scheme: Stage1Scheme) -> usize {
        match scheme.model_file() {
            Some(_) => self.codec(scheme).map(|c| c.to_model_bytes().len()).unwrap_or(0),
            None => 0,
        }
    }
}

fn cs_codec(ratio: usize) -> Stage1Codec {
    Stage1Codec::cs(SIGNAL_LEN, SIGNAL_LEN / ratio).expect("frame length divisible by 8 and 16")
}

/// A serialized frame: 34-byte header plus two lossless-packed sections.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedBlock {
    pub version: u16,
    pub stage1: Stage1Scheme,
    pub stage2: Stage2Scheme,
    /// `None` when no residual exceeded the bound; the residual section is then empty.
    pub residual_strategy: Option<Strategy>,
    pub lossless_flags: u8,
    pub e_bound: f64,
    pub n: u32,
    pub m: u32,
    pub signal_payload: Vec<u8>,
    pub residual_payload: Vec<u8>,
}

impl CompressedBlock {
    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.signal_payload.len() + self.residual_payload.len()
    }

    pub fn signal_backend(&self) -> Backend {
        Backend::from_bit(self.lossless_flags & FLAG_SIGNAL_BWT != 0)
    }

    pub fn residual_backend(&self) -> Backend {
        Backend::from_bit(self.lossless_flags & FLAG_RESIDUAL_BWT != 0)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.stage1.id());
        out.push(self.stage2.id());
        out.push(self.residual_strategy.map_or(NO_RESIDUALS, |s| s as u8));
        out.push(self.lossless_flags);
        out.extend_from_slice(&self.e_bound.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.m.to_le_bytes());
        out.extend_from_slice(&(self.signal_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.residual_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.signal_payload);
        out.extend_from_slice(&self.residual_payload);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let found = r.array::<4>()?;
        if &found != MAGIC {
            return Err(Error::BadMagic {
                expected: *MAGIC,
                found,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let stage1 = Stage1Scheme::from_id(r.u8()?)?;
        let stage2 = Stage2Scheme::from_id(r.u8()?)?;
        let residual_strategy = match r.u8()? {
            NO_RESIDUALS => None,
            v => Some(Strategy::from_u8(v)?),
        };
        let lossless_flags = r.u8()?;
        if lossless_flags & !KNOWN_FLAGS != 0 {
            return Err(Error::Corrupt(format!("unknown lossless flags {lossless_flags:#04x}")));
        }
        let e_bound = r.f64()?;
        if !(e_bound.is_finite() && e_bound > 0.0) {
            return Err(Error::Corrupt(format!("error bound {e_bound}")));
        }
        let n = r.u32()?;
        let m = r.u32()?;
        let signal_len = r.u32()? as usize;
        let residual_len = r.u32()? as usize;
        let signal_payload = r.take(signal_len)?.to_vec();
        let residual_payload = r.take(residual_len)?.to_vec();
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("{} bytes after the block", r.remaining())));
        }
        if residual_strategy.is_none() != residual_payload.is_empty() {
            return Err(Error::Corrupt("residual strategy and section length disagree".into()));
        }
        Ok(Self {
            version,
            stage1,
            stage2,
            residual_strategy,
            lossless_flags,
            e_bound,
            n,
            m,
            signal_payload,
            residual_payload,
        })
    }
}

/// Side information from a compression run.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressStats {
    /// Residuals stored to enforce the bound.
    pub retained: usize,
    /// Latent values clamped by the uniform quantizer.
    pub saturated: usize,
    /// Bytes of the signal section before lossless packing.
    pub signal_raw_len: usize,
}

struct Stage2Output {
    /// Integers as written to the signal section.
    wire: Vec<i64>,
    decoded: Vec<f64>,
    saturated: usize,
}

fn stage2_forward(z: &[f64], cfg: &PipelineConfig) -> Result<Stage2Output> {
    let bound = cfg.latent_bound();
    Ok(match cfg.stage2 {
        Stage2Scheme::UniformQ => {
            let q = QuantizerConfig::for_bound(bound, cfg.interval())?;
            let stream = uniform_encode(z, &q);
            Stage2Output {
                wire: diff_encode(&stream.codes),
                decoded: stream.decode(),
                saturated: stream.saturated,
            }
        }
        Stage2Scheme::Predictive => {
            let stream = predictive_encode_with(z, bound, cfg.predictor)?;
            Stage2Output {
                decoded: predictive_decode(&stream),
                wire: stream.codes,
                saturated: 0,
            }
        }
        Stage2Scheme::None => {
            let step = guarded_step(cfg.e_bound);
            let codes: Vec<i64> = z.iter().map(|v| (v / step).round() as i64).collect();
            Stage2Output {
                decoded: codes.iter().map(|&c| c as f64 * step).collect(),
                wire: diff_encode(&codes),
                saturated: 0,
            }
        }
    })
}

fn stage2_inverse(wire: Vec<i64>, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let bound = cfg.latent_bound();
    Ok(match cfg.stage2 {
        Stage2Scheme::UniformQ => {
            let q = QuantizerConfig::for_bound(bound, cfg.interval())?;
            QuantizedStream {
                codes: diff_decode(&wire),
                config: StreamConfig::Uniform(q),
                saturated: 0,
            }
            .decode()
        }
        Stage2Scheme::Predictive => predictive_decode(&QuantizedStream {
            codes: wire,
            config: StreamConfig::Predictive {
                step: guarded_step(bound),
                order: cfg.predictor,
            },
            saturated: 0,
        }),
        Stage2Scheme::None => {
            let step = guarded_step(cfg.e_bound);
            diff_decode(&wire).into_iter().map(|c| c as f64 * step).collect()
        }
    })
}

/// Stage-1 decode with non-finite outputs replaced by zero, so the residual
/// stage always has a finite reference.
fn stage1_inverse(codec: &Stage1Codec, z: &[f64], cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let mut x = codec.decode_values(z, cfg.sparsity)?;
    for v in &mut x {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    Ok(x)
}

fn check_input(x: &[f64]) -> Result<()> {
    if x.len() != SIGNAL_LEN {
        return Err(Error::LengthMismatch {
            expected: SIGNAL_LEN,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn model_codec<'a>(store: &'a ModelStore, cfg: &PipelineConfig) -> Result<&'a Stage1Codec> {
    let codec = store.codec(cfg.stage1)?;
    if let Some(expected) = cfg.model_ref {
        let found = codec.fingerprint();
        if found != expected {
            return Err(Error::ModelMismatch { expected, found });
        }
    }
    Ok(codec)
}

/// `S1^-1(S2^-1(S2(S1(x))))`, or `S1^-1(S1(x))` when `stage2` is `None`
/// (the stage-1-only reference used to attribute residuals to stage 2).
pub fn lossy_reconstruction(
    x: &[f64],
    stage1: Stage1Scheme,
    stage2: Option<Stage2Scheme>,
    e_bound: f64,
    store: &ModelStore,
) -> Result<Vec<f64>> {
    check_input(x)?;
    let codec = store.codec(stage1)?;
    let z = codec.encode(x)?.values;
    let (cfg, z_bar) = match stage2 {
        Some(s2) => {
            let cfg = PipelineConfig::new(stage1, s2, e_bound)?;
            let out = stage2_forward(&z, &cfg)?;
            (cfg, out.decoded)
        }
        None => (PipelineConfig::new(stage1, Stage2Scheme::Predictive, e_bound)?, z),
    };
    stage1_inverse(codec, &z_bar, &cfg)
}

/// Quantized residuals such that `apply_residuals(x_bar, set)` is within
/// `e_bound` of `x` everywhere, checked on the exact decoder arithmetic.
fn bounded_residuals(x: &[f64], x_bar: &[f64], e_bound: f64) -> Result<ResidualSet> {
    let r = residual::compute_residuals(x, x_bar)?;
    let mut set = residual::quantize_residuals(&residual::mask_residuals(&r, e_bound), x.len(), e_bound);
    let x_hat = residual::apply_residuals(x_bar, &set)?;
    let bad: Vec<usize> = (0..x.len()).filter(|&i| (x[i] - x_hat[i]).abs() > e_bound).collect();
    if bad.is_empty() {
        return Ok(set);
    }
    let step = set.quant_step;
    for i in bad {
        let base = ((x[i] - x_bar[i]) / step).round() as i64;
        let code = [base, base - 1, base + 1]
            .into_iter()
            .filter(|&c| c != 0)
            .find(|&c| (x[i] - (x_bar[i] + c as f64 * step)).abs() <= e_bound)
            .ok_or(Error::BoundUnattainable { index: i, e_bound })?;
        match set.entries.binary_search_by_key(&(i as u32), |e| e.0) {
            Ok(pos) => set.entries[pos].1 = code,
            Err(pos) => set.entries.insert(pos, (i as u32, code)),
        }
    }
    Ok(set)
}

fn write_extension(out: &mut Vec<u8>, cfg: &PipelineConfig) {
    out.extend_from_slice(&cfg.latent_scale.to_le_bytes());
    let (lo, hi) = cfg.interval();
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    out.extend_from_slice(&(cfg.sparsity.unwrap_or(0) as u32).to_le_bytes());
    out.push(match cfg.predictor {
        PredictorOrder::Constant => 0,
        PredictorOrder::Linear => 1,
        PredictorOrder::Quadratic => 2,
    });
}

fn read_extension(r: &mut Reader<'_>, cfg: &mut PipelineConfig) -> Result<()> {
    cfg.latent_scale = r.f64()?;
    cfg.interval = Some((r.f64()?, r.f64()?));
    cfg.sparsity = match r.u32()? {
        0 => None,
        k => Some(k as usize),
    };
    cfg.predictor = match r.u8()? {
        0 => PredictorOrder::Constant,
        1 => PredictorOrder::Linear,
        2 => PredictorOrder::Quadratic,
        v => return Err(Error::Corrupt(format!("unknown predictor {v}"))),
    };
    cfg.validate().map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn compress(x: &[f64], cfg: &PipelineConfig, store: &ModelStore) -> Result<CompressedBlock> {
    compress_with_stats(x, cfg, store).map(|(block, _)| block)
}

pub fn compress_with_stats(
    x: &[f64],
    cfg: &PipelineConfig,
    store: &ModelStore,
) -> Result<(CompressedBlock, CompressStats)> {
    cfg.validate()?;
    check_input(x)?;
    let codec = model_codec(store, cfg)?;

    let z = codec.encode(x)?.values;
    let stage2 = stage2_forward(&z, cfg)?;
    let x_bar = stage1_inverse(codec, &stage2.decoded, cfg)?;
    let residuals = bounded_residuals(x, &x_bar, cfg.e_bound)?;

    let mut section = Vec::new();
    if cfg.stage1.is_linear_ae() {
        section.extend_from_slice(&codec.fingerprint().to_le_bytes());
    }
    let mut flags = 0u8;
    if !cfg.has_default_params() {
        flags |= FLAG_EXTENSION;
        write_extension(&mut section, cfg);
    }
    for &code in &stage2.wire {
        put_ivarint(&mut section, code);
    }
    let signal = lossless::compress_dual(&section);
    if signal.backend == Backend::Bwt {
        flags |= FLAG_SIGNAL_BWT;
    }

    let (residual_strategy, residual_payload) = if residuals.is_empty() {
        (None, Vec::new())
    } else {
        let (strategy, packed) = residual::choose_strategy(&residuals);
        if packed.backend == Backend::Bwt {
            flags |= FLAG_RESIDUAL_BWT;
        }
        (Some(strategy), packed.payload)
    };

    let block = CompressedBlock {
        version: VERSION,
        stage1: cfg.stage1,
        stage2: cfg.stage2,
        residual_strategy,
        lossless_flags: flags,
        e_bound: cfg.e_bound,
        n: x.len() as u32,
        m: z.len() as u32,
        signal_payload: signal.payload,
        residual_payload,
    };
    let stats = CompressStats {
        retained: residuals.len(),
        saturated: stage2.saturated,
        signal_raw_len: section.len(),
    };
    Ok((block, stats))
}

pub fn decompress(block: &CompressedBlock, store: &ModelStore) -> Result<Vec<f64>> {
    if block.version != VERSION {
        return Err(Error::UnsupportedVersion(block.version));
    }
    let mut cfg = PipelineConfig::new(block.stage1, block.stage2, block.e_bound)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    let codec = store.codec(block.stage1)?;
    if block.n as usize != codec.n() || block.m as usize != codec.m() {
        return Err(Error::Corrupt(format!(
            "block shape {}->{} does not match {} codec {}->{}",
            block.n,
            block.m,
            block.stage1,
            codec.n(),
            codec.m()
        )));
    }

    let section = lossless::decompress_with(block.signal_backend(), &block.signal_payload)?;
    let mut r = Reader::new(&section);
    if block.stage1.is_linear_ae() {
        let expected = r.u32()?;
        let found = codec.fingerprint();
        if expected != found {
            return Err(Error::ModelMismatch { expected, found });
        }
    }
    if block.lossless_flags & FLAG_EXTENSION != 0 {
        read_extension(&mut r, &mut cfg)?;
    }
    let wire = (0..codec.m()).map(|_| r.ivarint()).collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes in signal section", r.remaining())));
    }
    let z_bar = stage2_inverse(wire, &cfg)?;
    let x_bar = stage1_inverse(codec, &z_bar, &cfg)?;

    let residuals = match block.residual_strategy {
        None => ResidualSet::empty(x_bar.len(), residual::residual_step(cfg.e_bound)),
        Some(strategy) => {
            let bytes = lossless::decompress_with(block.residual_backend(), &block.residual_payload)?;
            let (found, set) = residual::decode_section(&bytes)?;
            if found != strategy || set.n != x_bar.len() {
                return Err(Error::Corrupt("residual section disagrees with the header".into()));
            }
            set
        }
    };
    residual::apply_residuals(&x_bar, &residuals)
}

/// Parse and decode a serialized block.
pub fn decompress_bytes(bytes: &[u8], store: &ModelStore) -> Result<Vec<f64>> {
    decompress(&CompressedBlock::deserialize(bytes)?, store)
}
