//! Binary model format, little-endian:
//!
//! ```text
//! "MDTM" | version: u32 = 1 | seed: u64 | n_sizes: u32 | sizes: u32 * n_sizes
//!        | norm_mean: f64 | norm_std: f64 | params: f64 * P
//! ```
//!
//! Parameters are stored layer by layer, weights (row-major) then biases.

use alloc::vec::Vec;

use thiserror::Error;

use super::{InputNorm, Layer, Mlp};

pub const MODEL_MAGIC: [u8; 4] = *b"MDTM";
pub const MODEL_VERSION: u32 = 1;

const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelFormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid architecture")]
    InvalidArchitecture,
    #[error("invalid input normalization")]
    InvalidNorm,
    #[error("non-finite parameter")]
    NonFinite,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ModelFormatError> {
        if self.buf.len() < N {
            return Err(ModelFormatError::Truncated);
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, ModelFormatError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, ModelFormatError> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, ModelFormatError> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

impl Mlp {
    /// Serialize, embedding the seed that produced the model.
    pub fn to_bytes(&self, seed: u64) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(32 + 4 * sizes.len() + 8 * self.param_count());
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.norm.mean.to_le_bytes());
        out.extend_from_slice(&self.norm.std.to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parse a model file; returns the model and its embedded seed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64), ModelFormatError> {
        let mut r = Reader { buf: bytes };
        if r.take::<4>()? != MODEL_MAGIC {
            return Err(ModelFormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(ModelFormatError::UnsupportedVersion(version));
        }
        let seed = r.u64()?;
        let n_sizes = r.u32()? as usize;
        if !(2..=MAX_LAYERS).contains(&n_sizes) {
            return Err(ModelFormatError::InvalidArchitecture);
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = r.u32()? as usize;
            if s == 0 || s > MAX_WIDTH {
                return Err(ModelFormatError::InvalidArchitecture);
            }
            sizes.push(s);
        }
        if sizes[0] != 1 || sizes[n_sizes - 1] != 1 {
            return Err(ModelFormatError::InvalidArchitecture);
        }
        let norm = InputNorm {
            mean: r.f64()?,
            std: r.f64()?,
        };
        if !(norm.mean.is_finite() && norm.std.is_finite() && norm.std > 0.0) {
            return Err(ModelFormatError::InvalidNorm);
        }
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for w in sizes.windows(2) {
            let mut layer = Layer::zeros(w[0], w[1]);
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(ModelFormatError::NonFinite);
                }
            }
            layers.push(layer);
        }
        if !r.buf.is_empty() {
            return Err(ModelFormatError::TrailingBytes(r.buf.len()));
        }
        Ok((Mlp::from_parts(layers, norm), seed))
    }
}
