//! First-stage dimensionality reduction.
//!
//! None of these codecs bounds its reconstruction error; the residual stage
//! downstream is what enforces the pointwise bound.

mod cs;
mod dct;
mod linear_ae;

use std::io::{Read, Write};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

pub use cs::CompressedSensing;
pub use dct::OrthoDct;
pub use linear_ae::LinearAutoencoder;

use crate::error::{Error, Result};
use crate::wire::Reader;

const MODEL_MAGIC: &[u8; 4] = b"PQS1";
const MODEL_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage1Kind {
    Identity = 0,
    CompressedSensing = 1,
    LinearAutoencoder = 2,
}

impl Stage1Kind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Identity),
            1 => Ok(Self::CompressedSensing),
            2 => Ok(Self::LinearAutoencoder),
            other => Err(Error::Corrupt(format!("unknown stage-1 kind {other}"))),
        }
    }
}

/// Output of a stage-1 encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub values: Vec<f64>,
    /// Fingerprint of the codec that produced the latent.
    pub codec_id: u32,
}

#[derive(Clone, Debug)]
enum Inner {
    Identity { n: usize },
    Cs(CompressedSensing),
    LinearAe(LinearAutoencoder),
}

/// A stage-1 codec. Immutable once built; safe to share across threads.
#[derive(Clone, Debug)]
pub struct Stage1Codec {
    inner: Inner,
    fingerprint: OnceLock<u32>,
}

impl From<Inner> for Stage1Codec {
    fn from(inner: Inner) -> Self {
        Self {
            inner,
            fingerprint: OnceLock::new(),
        }
    }
}

impl Stage1Codec {
    pub fn identity(n: usize) -> Self {
        Inner::Identity { n }.into()
    }

    /// Compressed sensing with `m` block-sum measurements of an `n`-sample signal.
    pub fn cs(n: usize, m: usize) -> Result<Self> {
        Ok(Inner::Cs(CompressedSensing::new(n, m)?).into())
    }

    /// Train a linear autoencoder with latent size `m`.
    pub fn train_linear_ae<S: AsRef<[f64]>>(train: &[S], m: usize) -> Result<Self> {
        Ok(Inner::LinearAe(LinearAutoencoder::train(train, m)?).into())
    }

    pub fn from_linear_ae(ae: LinearAutoencoder) -> Self {
        Inner::LinearAe(ae).into()
    }

    pub fn kind(&self) -> Stage1Kind {
        match self.inner {
            Inner::Identity { .. } => Stage1Kind::Identity,
            Inner::Cs(_) => Stage1Kind::CompressedSensing,
            Inner::LinearAe(_) => Stage1Kind::LinearAutoencoder,
        }
    }

    pub fn n(&self) -> usize {
        match &self.inner {
            Inner::Identity { n } => *n,
            Inner::Cs(cs) => cs.n(),
            Inner::LinearAe(ae) => ae.n(),
        }
    }

    pub fn m(&self) -> usize {
        match &self.inner {
            Inner::Identity { n } => *n,
            Inner::Cs(cs) => cs.m(),
            Inner::LinearAe(ae) => ae.m(),
        }
    }

    pub fn as_cs(&self) -> Option<&CompressedSensing> {
        match &self.inner {
            Inner::Cs(cs) => Some(cs),
            _ => None,
        }
    }

    pub fn as_linear_ae(&self) -> Option<&LinearAutoencoder> {
        match &self.inner {
            Inner::LinearAe(ae) => Some(ae),
            _ => None,
        }
    }

    /// Default OMP sparsity for CS codecs; `None` for the others.
    pub fn default_sparsity(&self) -> Option<usize> {
        self.as_cs().map(CompressedSensing::default_sparsity)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Latent> {
        let values = match &self.inner {
            Inner::Identity { n } => {
                if x.len() != *n {
                    return Err(Error::LengthMismatch {
                        expected: *n,
                        got: x.len(),
                    });
                }
                x.to_vec()
            }
            Inner::Cs(cs) => cs.encode(x)?,
            Inner::LinearAe(ae) => ae.encode(x)?,
        };
        Ok(Latent {
            values,
            codec_id: self.fingerprint(),
        })
    }

    /// Decode latent values. `sparsity` only applies to CS and defaults to `m / 10`.
    pub fn decode_values(&self, z: &[f64], sparsity: Option<usize>) -> Result<Vec<f64>> {
        match &self.inner {
            Inner::Identity { n } => {
                if z.len() != *n {
                    return Err(Error::LengthMismatch {
                        expected: *n,
                        got: z.len(),
                    });
                }
                Ok(z.to_vec())
            }
            Inner::Cs(cs) => cs.decode(z, sparsity.unwrap_or_else(|| cs.default_sparsity())),
            Inner::LinearAe(ae) => ae.decode(z),
        }
    }

    pub fn decode(&self, latent: &Latent) -> Result<Vec<f64>> {
        let own = self.fingerprint();
        if latent.codec_id != own {
            return Err(Error::ModelMismatch {
                expected: latent.codec_id,
                found: own,
            });
        }
        self.decode_values(&latent.values, None)
    }

    /// First four bytes of the SHA-256 of the serialized model, little-endian.
    pub fn fingerprint(&self) -> u32 {
        *self.fingerprint.get_or_init(|| {
            let digest = Sha256::digest(self.to_model_bytes());
            u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
        })
    }

    /// Serialize in the `PQS1` model format.
    pub fn to_model_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(self.kind() as u8);
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        if let Inner::LinearAe(ae) = &self.inner {
            out.reserve(8 * (ae.mean().len() + ae.basis().len()));
            for v in ae.mean().iter().chain(ae.basis()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_model_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>()?;
        if &magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: *MODEL_MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = Stage1Kind::from_u8(r.u8()?)?;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let codec = match kind {
            Stage1Kind::Identity => {
                if m != n {
                    return Err(Error::Corrupt(format!("identity model with n={n}, m={m}")));
                }
                Self::identity(n)
            }
            Stage1Kind::CompressedSensing => Self::cs(n, m)?,
            Stage1Kind::LinearAutoencoder => {
                let expected = n.checked_mul(m + 1).and_then(|c| c.checked_mul(8));
                if expected != Some(r.remaining()) {
                    return Err(Error::Corrupt(format!(
                        "linear autoencoder payload has {} bytes, expected {} for n={n}, m={m}",
                        r.remaining(),
                        8 * n * (m + 1)
                    )));
                }
                let mean = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let basis = (0..n * m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Self::from_linear_ae(LinearAutoencoder::from_parts(mean, basis, m)?)
            }
        };
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes in model file", r.remaining())));
        }
        Ok(codec)
    }

    pub fn write_model<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.to_model_bytes())?;
        Ok(())
    }

    pub fn read_model<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_model_bytes(&buf)
    }
}
