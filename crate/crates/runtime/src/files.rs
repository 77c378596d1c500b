//! On-disk formats: recorded signals, models, labeled datasets, feature
//! tables and JSON-lines logs.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use milltwin_core::features::FeatureVector;
use milltwin_core::model::{LabeledSample, ModelFormatError, Mlp};
use serde::Serialize;
use thiserror::Error;

pub const SIGNAL_MAGIC: [u8; 4] = *b"MDT1";
pub const SIGNAL_VERSION: u32 = 1;
const SIGNAL_HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER: &str = "window,start_index,peak_amplitude_volts,label";

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl FileError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_owned(),
            msg: msg.into(),
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, FileError> {
    fs::read(path).map_err(|e| FileError::io(path, e))
}

/// Write via a sibling temporary file so a failed write never leaves a
/// truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| FileError::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| FileError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalFormatError {
    #[error("not a signal file (bad magic)")]
    BadMagic,
    #[error("unsupported signal file version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid sample rate {0}")]
    BadRate(f64),
    #[error("signal file truncated: header promises {expected} samples, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("signal file has {0} trailing bytes")]
    Trailing(usize),
}

pub fn encode_signal(sample_rate_hz: f64, samples: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIGNAL_HEADER_LEN + 4 * samples.len());
    out.extend_from_slice(&SIGNAL_MAGIC);
    out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Parse a recorded signal into `(sample_rate_hz, samples)`.
pub fn decode_signal(bytes: &[u8]) -> Result<(f64, Vec<f32>), SignalFormatError> {
    if bytes.len() < 4 || bytes[..4] != SIGNAL_MAGIC {
        return Err(SignalFormatError::BadMagic);
    }
    if bytes.len() < SIGNAL_HEADER_LEN {
        return Err(SignalFormatError::Truncated { expected: 0, found: 0 });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SIGNAL_VERSION {
        return Err(SignalFormatError::UnsupportedVersion(version));
    }
    let rate = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SignalFormatError::BadRate(rate));
    }
    let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let body = &bytes[SIGNAL_HEADER_LEN..];
    let available = (body.len() / 4) as u64;
    if available < count {
        return Err(SignalFormatError::Truncated {
            expected: count,
            found: available,
        });
    }
    let used = count as usize * 4;
    if body.len() > used {
        return Err(SignalFormatError::Trailing(body.len() - used));
    }
    let samples = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((rate, samples))
}

pub fn write_signal(path: &Path, sample_rate_hz: f64, samples: &[f32]) -> Result<(), FileError> {
    write_atomic(path, &encode_signal(sample_rate_hz, samples))
}

pub fn read_signal(path: &Path) -> Result<(f64, Vec<f32>), FileError> {
    decode_signal(&read_all(path)?).map_err(|e| FileError::format(path, e.to_string()))
}

pub fn write_model(path: &Path, model: &Mlp, seed: u64) -> Result<(), FileError> {
    write_atomic(path, &model.to_bytes(seed))
}

/// Load a model and the seed it was trained with.
pub fn read_model(path: &Path) -> Result<(Mlp, u64), FileError> {
    Mlp::from_bytes(&read_all(path)?).map_err(|e: ModelFormatError| FileError::format(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub window: u64,
    pub start_index: u64,
    pub peak_amplitude_volts: f64,
    pub label: bool,
}

impl DatasetRow {
    pub fn sample(&self) -> LabeledSample {
        LabeledSample {
            input: self.peak_amplitude_volts,
            label: self.label,
        }
    }
}

/// Provenance line written as a `#` comment ahead of the CSV header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub window_samples: u64,
}

pub fn render_dataset(meta: &DatasetMeta, rows: &[DatasetRow]) -> String {
    let mut s = String::with_capacity(64 + rows.len() * 40);
    let _ = writeln!(
        s,
        "# milltwin-dataset version={} seed={} sample_rate_hz={} window_samples={}",
        meta.version, meta.seed, meta.sample_rate_hz, meta.window_samples
    );
    s.push_str(DATASET_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.window, r.start_index, r.peak_amplitude_volts, u8::from(r.label));
    }
    s
}

fn parse_meta(line: &str) -> Option<DatasetMeta> {
    let rest = line.strip_prefix("# milltwin-dataset")?;
    let mut meta = DatasetMeta {
        version: 0,
        seed: 0,
        sample_rate_hz: 0.0,
        window_samples: 0,
    };
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=')?;
        match k {
            "version" => meta.version = v.parse().ok()?,
            "seed" => meta.seed = v.parse().ok()?,
            "sample_rate_hz" => meta.sample_rate_hz = v.parse().ok()?,
            "window_samples" => meta.window_samples = v.parse().ok()?,
            _ => {}
        }
    }
    Some(meta)
}

pub fn parse_dataset(text: &str) -> Result<(Option<DatasetMeta>, Vec<DatasetRow>), String> {
    let mut meta = None;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(m) = parse_meta(line) {
                if m.version != DATASET_VERSION {
                    return Err(format!("line {line_no}: unsupported dataset version {}", m.version));
                }
                meta = Some(m);
            }
            continue;
        }
        if !seen_header {
            if line != DATASET_HEADER {
                return Err(format!("line {line_no}: expected header `{DATASET_HEADER}`"));
            }
            seen_header = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let [window, start, peak, label] = cells[..] else {
            return Err(format!("line {line_no}: expected 4 cells, found {}", cells.len()));
        };
        let bad = |what: &str| format!("line {line_no}: bad {what}");
        let peak: f64 = peak.parse().map_err(|_| bad("peak_amplitude_volts"))?;
        if !peak.is_finite() {
            return Err(bad("peak_amplitude_volts"));
        }
        rows.push(DatasetRow {
            window: window.parse().map_err(|_| bad("window"))?,
            start_index: start.parse().map_err(|_| bad("start_index"))?,
            peak_amplitude_volts: peak,
            label: match label {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label")),
            },
        });
    }
    if !seen_header {
        return Err("missing header".into());
    }
    Ok((meta, rows))
}

pub fn write_dataset(path: &Path, meta: &DatasetMeta, rows: &[DatasetRow]) -> Result<(), FileError> {
    write_atomic(path, render_dataset(meta, rows).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<(Option<DatasetMeta>, Vec<DatasetRow>), FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    parse_dataset(&text).map_err(|m| FileError::format(path, m))
}

pub fn render_feature_csv<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> String {
    let mut s = String::from(FeatureVector::CSV_HEADER);
    s.push('\n');
    for fv in rows {
        s.push_str(&fv.to_csv_row());
        s.push('\n');
    }
    s
}

/// Serialize each record as one compact JSON line.
pub fn render_jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(&r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    write_atomic(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let file = fs::File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| FileError::format(path, e.to_string()))?;
    w.write_all(b"\n").and_then(|()| w.flush()).map_err(|e| FileError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_roundtrip_bit_exact() {
        let samples = vec![0.0, -0.0, 1.5e-30, -7.25, f32::MAX];
        let bytes = encode_signal(100_000.0, &samples);
        assert_eq!(bytes.len(), 24 + 20);
        assert_eq!(&bytes[..4], b"MDT1");
        let (rate, back) = decode_signal(&bytes).unwrap();
        assert_eq!(rate, 100_000.0);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&samples));
    }

    #[test]
    fn signal_corruption_detected() {
        let bytes = encode_signal(100_000.0, &[1.0, 2.0]);
        assert_eq!(
            decode_signal(&bytes[..bytes.len() - 1]),
            Err(SignalFormatError::Truncated { expected: 2, found: 1 })
        );
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_signal(&extra), Err(SignalFormatError::Trailing(1)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(decode_signal(&v2), Err(SignalFormatError::UnsupportedVersion(2)));
        assert_eq!(decode_signal(b"MDTX"), Err(SignalFormatError::BadMagic));
        let zero_rate = encode_signal(0.0, &[]);
        assert_eq!(decode_signal(&zero_rate), Err(SignalFormatError::BadRate(0.0)));
    }

    #[test]
    fn dataset_roundtrip() {
        let meta = DatasetMeta {
            version: DATASET_VERSION,
            seed: 42,
            sample_rate_hz: 100_000.0,
            window_samples: 10_000,
        };
        let rows = vec![
            DatasetRow {
                window: 0,
                start_index: 0,
                peak_amplitude_volts: 0.041_234_567_890_123,
                label: false,
            },
            DatasetRow {
                window: 1,
                start_index: 10_000,
                peak_amplitude_volts: 0.8,
                label: true,
            },
        ];
        let text = render_dataset(&meta, &rows);
        let (m, back) = parse_dataset(&text).unwrap();
        assert_eq!(m, Some(meta));
        assert_eq!(back, rows);
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let text = format!("{DATASET_HEADER}\n0,0,0.1,1\n1,10000,abc,0\n");
        let err = parse_dataset(&text).unwrap_err();
        assert!(err.starts_with("line 3"), "{err}");
        assert!(parse_dataset("a,b\n").is_err());
        assert!(parse_dataset(&format!("{DATASET_HEADER}\n0,0,0.1,2\n")).is_err());
    }
}
