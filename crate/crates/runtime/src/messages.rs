//! Payload codecs for the pipeline topics. Little-endian, fixed field
//! order; an empty payload on any pipeline topic marks end of stream.

use milltwin_core::control::{decode_nc, encode_nc, CommandKind};
use milltwin_core::features::FeatureVector;
use milltwin_core::signal::SampleBlock;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("{0} payload truncated")]
    Truncated(&'static str),
    #[error("{0} payload has trailing bytes")]
    Trailing(&'static str),
    #[error("invalid {0} payload: {1}")]
    Invalid(&'static str, String),
}

struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated(self.what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn opt_f64(&mut self) -> Result<Option<f64>, DecodeError> {
        let tag = self.u8()?;
        let v = self.f64()?;
        Ok((tag != 0).then_some(v))
    }

    fn opt_u32(&mut self) -> Result<Option<u32>, DecodeError> {
        let tag = self.u8()?;
        let v = self.u32()?;
        Ok((tag != 0).then_some(v))
    }

    fn finish(self) -> Result<(), DecodeError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.what))
        }
    }
}

fn put_opt_f64(out: &mut Vec<u8>, v: Option<f64>) {
    out.push(u8::from(v.is_some()));
    out.extend_from_slice(&v.unwrap_or(0.0).to_bits().to_le_bytes());
}

fn put_opt_u32(out: &mut Vec<u8>, v: Option<u32>) {
    out.push(u8::from(v.is_some()));
    out.extend_from_slice(&v.unwrap_or(0).to_le_bytes());
}

pub fn encode_samples(block: &SampleBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * block.len());
    out.extend_from_slice(&block.start_index().to_le_bytes());
    out.extend_from_slice(&block.sample_rate_hz().to_bits().to_le_bytes());
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    for s in block.samples() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_samples(payload: &[u8]) -> Result<SampleBlock, DecodeError> {
    let mut r = Reader { what: "samples", buf: payload };
    let start = r.u64()?;
    let rate = r.f64()?;
    let n = r.u32()? as usize;
    let body = r.bytes(n.checked_mul(4).ok_or(DecodeError::Truncated("samples"))?)?;
    r.finish()?;
    let samples = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    SampleBlock::new(start, rate, samples).map_err(|e| DecodeError::Invalid("samples", e.to_string()))
}

/// Timing fields carried along with each window as it moves downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Timings {
    pub close_ns: u64,
    pub queue_ns: u64,
    pub feature_ns: u64,
    pub inference_ns: u64,
    pub transport_ns: u64,
}

impl Timings {
    fn put(&self, out: &mut Vec<u8>) {
        for v in [self.close_ns, self.queue_ns, self.feature_ns, self.inference_ns, self.transport_ns] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            close_ns: r.u64()?,
            queue_ns: r.u64()?,
            feature_ns: r.u64()?,
            inference_ns: r.u64()?,
            transport_ns: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMsg {
    pub window_seq: u64,
    pub start_index: u64,
    pub window_len: u32,
    pub sample_rate_hz: f64,
    pub timings: Timings,
    pub features: FeatureVector,
}

pub fn encode_features(m: &FeatureMsg) -> Vec<u8> {
    let f = &m.features;
    let mut out = Vec::with_capacity(200);
    out.extend_from_slice(&m.window_seq.to_le_bytes());
    out.extend_from_slice(&m.start_index.to_le_bytes());
    out.extend_from_slice(&m.window_len.to_le_bytes());
    out.extend_from_slice(&m.sample_rate_hz.to_bits().to_le_bytes());
    m.timings.put(&mut out);
    put_opt_f64(&mut out, f.rt_s);
    put_opt_u32(&mut out, f.counts);
    put_opt_f64(&mut out, f.amplitude_db);
    out.extend_from_slice(&f.rms_volts.to_bits().to_le_bytes());
    put_opt_f64(&mut out, f.asl_db);
    put_opt_u32(&mut out, f.counts_to_peak);
    out.extend_from_slice(&f.signal_strength.to_bits().to_le_bytes());
    out.extend_from_slice(&f.absolute_energy.to_bits().to_le_bytes());
    put_opt_f64(&mut out, f.avg_frequency_hz);
    put_opt_f64(&mut out, f.reverb_frequency_hz);
    put_opt_f64(&mut out, f.init_frequency_hz);
    put_opt_f64(&mut out, f.freq_centroid_hz);
    out.extend_from_slice(&f.peak_amplitude_volts.to_bits().to_le_bytes());
    out
}

pub fn decode_features(payload: &[u8]) -> Result<FeatureMsg, DecodeError> {
    let mut r = Reader { what: "features", buf: payload };
    let window_seq = r.u64()?;
    let start_index = r.u64()?;
    let window_len = r.u32()?;
    let sample_rate_hz = r.f64()?;
    let timings = Timings::read(&mut r)?;
    let features = FeatureVector {
        rt_s: r.opt_f64()?,
        counts: r.opt_u32()?,
        amplitude_db: r.opt_f64()?,
        rms_volts: r.f64()?,
        asl_db: r.opt_f64()?,
        counts_to_peak: r.opt_u32()?,
        signal_strength: r.f64()?,
        absolute_energy: r.f64()?,
        avg_frequency_hz: r.opt_f64()?,
        reverb_frequency_hz: r.opt_f64()?,
        init_frequency_hz: r.opt_f64()?,
        freq_centroid_hz: r.opt_f64()?,
        peak_amplitude_volts: r.f64()?,
    };
    r.finish()?;
    Ok(FeatureMsg {
        window_seq,
        start_index,
        window_len,
        sample_rate_hz,
        timings,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMsg {
    pub window_seq: u64,
    pub start_index: u64,
    /// Window duration in seconds.
    pub window_s: f64,
    pub timings: Timings,
    pub peak_amplitude_volts: f64,
    pub p_contact: f64,
}

pub fn encode_prediction(m: &PredictionMsg) -> Vec<u8> {
    let mut out = Vec::with_capacity(96);
    out.extend_from_slice(&m.window_seq.to_le_bytes());
    out.extend_from_slice(&m.start_index.to_le_bytes());
    out.extend_from_slice(&m.window_s.to_bits().to_le_bytes());
    m.timings.put(&mut out);
    out.extend_from_slice(&m.peak_amplitude_volts.to_bits().to_le_bytes());
    out.extend_from_slice(&m.p_contact.to_bits().to_le_bytes());
    out
}

pub fn decode_prediction(payload: &[u8]) -> Result<PredictionMsg, DecodeError> {
    let mut r = Reader { what: "prediction", buf: payload };
    let m = PredictionMsg {
        window_seq: r.u64()?,
        start_index: r.u64()?,
        window_s: r.f64()?,
        timings: Timings::read(&mut r)?,
        peak_amplitude_volts: r.f64()?,
        p_contact: r.f64()?,
    };
    r.finish()?;
    Ok(m)
}

/// A machine command as published on the command topic: the window that
/// triggered it and the command in NC text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandMsg {
    pub window_seq: u64,
    pub issue_timestamp_ns: u64,
    pub kind: CommandKind,
}

pub fn encode_command(m: &CommandMsg) -> Vec<u8> {
    let text = encode_nc(&m.kind);
    let mut out = Vec::with_capacity(16 + text.len());
    out.extend_from_slice(&m.window_seq.to_le_bytes());
    out.extend_from_slice(&m.issue_timestamp_ns.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

pub fn decode_command(payload: &[u8]) -> Result<CommandMsg, DecodeError> {
    let mut r = Reader { what: "command", buf: payload };
    let window_seq = r.u64()?;
    let issue_timestamp_ns = r.u64()?;
    let text = std::str::from_utf8(r.buf).map_err(|e| DecodeError::Invalid("command", e.to_string()))?;
    let kind = decode_nc(text).map_err(|e| DecodeError::Invalid("command", e.to_string()))?;
    Ok(CommandMsg {
        window_seq,
        issue_timestamp_ns,
        kind,
    })
}
