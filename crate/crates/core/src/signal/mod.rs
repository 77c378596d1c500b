//! Sample ingestion and stream segmentation.

mod double_buffer;
mod window;

pub use double_buffer::{double_buffer, BufferConfig, Consumer, IngestResult, OverflowMode, Producer};
pub use window::{segment, Segmenter, Window, WindowKind, WindowSpec};

use alloc::vec::Vec;
use thiserror::Error;

/// Errors raised when a block or window spec violates its invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("sample block is empty")]
    EmptyBlock,
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("sample rate mismatch: buffer configured for {expected} Hz, block carries {actual} Hz")]
    SampleRateMismatch { expected: f64, actual: f64 },
    #[error("block starts at sample {actual}, expected {expected} (stream must be gapless)")]
    Discontinuity { expected: u64, actual: u64 },
    #[error("invalid window spec: {0}")]
    InvalidSpec(&'static str),
}

/// A timestamped, contiguous run of AE voltage samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    start_index: u64,
    sample_rate_hz: f64,
    samples: Vec<f32>,
}

impl SampleBlock {
    pub fn new(start_index: u64, sample_rate_hz: f64, samples: Vec<f32>) -> Result<Self, SignalError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(SignalError::EmptyBlock);
        }
        Ok(Self {
            start_index,
            sample_rate_hz,
            samples,
        })
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
    }

    /// Index one past the last sample of this block.
    pub fn end_index(&self) -> u64 {
        self.start_index + self.samples.len() as u64
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}
