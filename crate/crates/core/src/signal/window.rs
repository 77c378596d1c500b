use alloc::vec::Vec;

use super::{SampleBlock, SignalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WindowKind {
    Fixed,
    Sliding,
    Session,
}

/// Segmentation policy for the unbounded sample stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowSpec {
    /// Consecutive disjoint windows of `length` samples.
    Fixed { length: usize },
    /// Windows of `length` samples starting every `hop` samples.
    Sliding { length: usize, hop: usize },
    /// Activity-gated windows: open at the first sample with `|v| >= threshold`,
    /// close after `gap_timeout` consecutive samples below it.
    Session { gap_timeout: usize, threshold_volts: f64 },
}

impl WindowSpec {
    pub fn fixed(length: usize) -> Result<Self, SignalError> {
        let spec = Self::Fixed { length };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sliding(length: usize, hop: usize) -> Result<Self, SignalError> {
        let spec = Self::Sliding { length, hop };
        spec.validate()?;
        Ok(spec)
    }

    pub fn session(gap_timeout: usize, threshold_volts: f64) -> Result<Self, SignalError> {
        let spec = Self::Session {
            gap_timeout,
            threshold_volts,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        match *self {
            Self::Fixed { length } if length == 0 => Err(SignalError::InvalidSpec("length must be at least 1")),
            Self::Sliding { length, .. } if length == 0 => {
                Err(SignalError::InvalidSpec("length must be at least 1"))
            }
            Self::Sliding { length, hop } if hop == 0 || hop > length => {
                Err(SignalError::InvalidSpec("sliding hop must satisfy 1 <= hop <= length"))
            }
            Self::Session { gap_timeout, .. } if gap_timeout == 0 => {
                Err(SignalError::InvalidSpec("session gap timeout must be at least 1"))
            }
            Self::Session { threshold_volts, .. } if !(threshold_volts >= 0.0 && threshold_volts.is_finite()) => {
                Err(SignalError::InvalidSpec("session threshold must be a nonnegative finite voltage"))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> WindowKind {
        match self {
            Self::Fixed { .. } => WindowKind::Fixed,
            Self::Sliding { .. } => WindowKind::Sliding,
            Self::Session { .. } => WindowKind::Session,
        }
    }
}

/// A finite segment of the stream; the unit of feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    kind: WindowKind,
    start_index: u64,
    sample_rate_hz: f64,
    samples: Vec<f32>,
    close_timestamp_ns: u64,
}

impl Window {
    pub fn new(
        kind: WindowKind,
        start_index: u64,
        sample_rate_hz: f64,
        samples: Vec<f32>,
        close_timestamp_ns: u64,
    ) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::EmptyBlock);
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate_hz));
        }
        Ok(Self {
            kind,
            start_index,
            sample_rate_hz,
            samples,
            close_timestamp_ns,
        })
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
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

    /// Monotonic time at which the window's final sample arrived.
    pub fn close_timestamp_ns(&self) -> u64 {
        self.close_timestamp_ns
    }
}

#[derive(Debug)]
struct OpenSession {
    start_index: u64,
    samples: Vec<f32>,
    below_run: usize,
}

/// Incremental segmenter: feed gapless blocks, collect closed windows.
#[derive(Debug)]
pub struct Segmenter {
    spec: WindowSpec,
    sample_rate_hz: Option<f64>,
    next_index: Option<u64>,
    pending: Vec<f32>,
    pending_start: u64,
    session: Option<OpenSession>,
}

impl Segmenter {
    pub fn new(spec: WindowSpec) -> Result<Self, SignalError> {
        spec.validate()?;
        Ok(Self {
            spec,
            sample_rate_hz: None,
            next_index: None,
            pending: Vec::new(),
            pending_start: 0,
            session: None,
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    /// Samples held back because they do not yet complete a window
    /// (Fixed/Sliding only; the in-progress session for Session).
    pub fn retained(&self) -> &[f32] {
        match self.spec {
            WindowSpec::Session { .. } => self.session.as_ref().map_or(&[][..], |s| &s.samples[..]),
            _ => &self.pending,
        }
    }

    /// Stream index of the first retained sample.
    pub fn retained_start(&self) -> u64 {
        match (&self.spec, &self.session) {
            (WindowSpec::Session { .. }, Some(open)) => open.start_index,
            _ => self.pending_start,
        }
    }

    /// Push one block; every window completed by it is appended to `out`
    /// stamped with `arrival_ns`.
    pub fn push(&mut self, block: &SampleBlock, arrival_ns: u64, out: &mut Vec<Window>) -> Result<usize, SignalError> {
        match self.sample_rate_hz {
            Some(rate) if rate != block.sample_rate_hz() => {
                return Err(SignalError::SampleRateMismatch {
                    expected: rate,
                    actual: block.sample_rate_hz(),
                })
            }
            Some(_) => {}
            None => self.sample_rate_hz = Some(block.sample_rate_hz()),
        }
        match self.next_index {
            Some(expected) if expected != block.start_index() => {
                return Err(SignalError::Discontinuity {
                    expected,
                    actual: block.start_index(),
                })
            }
            Some(_) => {}
            None => self.pending_start = block.start_index(),
        }
        self.next_index = Some(block.end_index());

        let before = out.len();
        let rate = block.sample_rate_hz();
        match self.spec {
            WindowSpec::Fixed { length } => self.push_strided(block, length, length, rate, arrival_ns, out),
            WindowSpec::Sliding { length, hop } => self.push_strided(block, length, hop, rate, arrival_ns, out),
            WindowSpec::Session {
                gap_timeout,
                threshold_volts,
            } => self.push_session(block, gap_timeout, threshold_volts, rate, arrival_ns, out),
        }
        Ok(out.len() - before)
    }

    fn push_strided(
        &mut self,
        block: &SampleBlock,
        length: usize,
        hop: usize,
        rate: f64,
        arrival_ns: u64,
        out: &mut Vec<Window>,
    ) {
        self.pending.extend_from_slice(block.samples());
        let kind = self.spec.kind();
        let mut offset = 0;
        while self.pending.len() - offset >= length {
            out.push(Window {
                kind,
                start_index: self.pending_start + offset as u64,
                sample_rate_hz: rate,
                samples: self.pending[offset..offset + length].to_vec(),
                close_timestamp_ns: arrival_ns,
            });
            offset += hop;
        }
        if offset > 0 {
            let drop = offset.min(self.pending.len());
            self.pending.drain(..drop);
            self.pending_start += offset as u64;
        }
    }

    fn push_session(
        &mut self,
        block: &SampleBlock,
        gap_timeout: usize,
        threshold: f64,
        rate: f64,
        arrival_ns: u64,
        out: &mut Vec<Window>,
    ) {
        for (offset, &v) in block.samples().iter().enumerate() {
            let above = f64::from(v).abs() >= threshold;
            match self.session.as_mut() {
                None => {
                    if above {
                        let mut samples = Vec::new();
                        samples.push(v);
                        self.session = Some(OpenSession {
                            start_index: block.start_index() + offset as u64,
                            samples,
                            below_run: 0,
                        });
                    }
                }
                Some(open) => {
                    open.samples.push(v);
                    if above {
                        open.below_run = 0;
                    } else {
                        open.below_run += 1;
                        if open.below_run == gap_timeout {
                            let mut open = self.session.take().expect("session is open");
                            let keep = open.samples.len() - open.below_run;
                            open.samples.truncate(keep);
                            out.push(Window {
                                kind: WindowKind::Session,
                                start_index: open.start_index,
                                sample_rate_hz: rate,
                                samples: open.samples,
                                close_timestamp_ns: arrival_ns,
                            });
                        }
                    }
                }
            }
        }
        self.pending_start = block.end_index();
    }

    /// End of stream: emit the Fixed remainder as a short window, or close
    /// an open session. Sliding remainders are discarded.
    pub fn flush(&mut self, now_ns: u64) -> Option<Window> {
        let rate = self.sample_rate_hz?;
        match self.spec {
            WindowSpec::Fixed { .. } => {
                if self.pending.is_empty() {
                    return None;
                }
                let samples = core::mem::take(&mut self.pending);
                let start_index = self.pending_start;
                self.pending_start += samples.len() as u64;
                Some(Window {
                    kind: WindowKind::Fixed,
                    start_index,
                    sample_rate_hz: rate,
                    samples,
                    close_timestamp_ns: now_ns,
                })
            }
            WindowSpec::Sliding { .. } => {
                self.pending_start += self.pending.len() as u64;
                self.pending.clear();
                None
            }
            WindowSpec::Session { .. } => {
                let mut open = self.session.take()?;
                let keep = open.samples.len() - open.below_run;
                open.samples.truncate(keep);
                Some(Window {
                    kind: WindowKind::Session,
                    start_index: open.start_index,
                    sample_rate_hz: rate,
                    samples: open.samples,
                    close_timestamp_ns: now_ns,
                })
            }
        }
    }
}

/// Segment a finite, gapless sequence of blocks. Windows are stamped with
/// the sample-clock time (ns) of the end of the block that closed them.
/// Nothing is flushed: the Fixed remainder stays unemitted.
pub fn segment<'a, I>(blocks: I, spec: WindowSpec) -> Result<Vec<Window>, SignalError>
where
    I: IntoIterator<Item = &'a SampleBlock>,
{
    let mut segmenter = Segmenter::new(spec)?;
    let mut out = Vec::new();
    for block in blocks {
        let stamp = sample_clock_ns(block.end_index(), block.sample_rate_hz());
        segmenter.push(block, stamp, &mut out)?;
    }
    Ok(out)
}

fn sample_clock_ns(index: u64, rate: f64) -> u64 {
    crate::math::round(index as f64 * 1e9 / rate) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn blocks(samples: &[f32], chunk: usize, rate: f64) -> Vec<SampleBlock> {
        samples
            .chunks(chunk)
            .enumerate()
            .map(|(i, c)| SampleBlock::new((i * chunk) as u64, rate, c.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn fixed_windows_keep_remainder() {
        let data: Vec<f32> = (0..25_000).map(|i| i as f32).collect();
        let spec = WindowSpec::fixed(10_000).unwrap();
        let mut seg = Segmenter::new(spec).unwrap();
        let mut out = Vec::new();
        for b in blocks(&data, 3_000, 100_000.0) {
            seg.push(&b, 7, &mut out).unwrap();
        }
        let starts: Vec<u64> = out.iter().map(Window::start_index).collect();
        assert_eq!(starts, vec![0, 10_000]);
        assert_eq!(seg.retained().len(), 5_000);
        assert_eq!(seg.retained_start(), 20_000);
        assert!(out.iter().all(|w| w.len() == 10_000 && w.close_timestamp_ns() == 7));
        let tail = seg.flush(9).unwrap();
        assert_eq!(tail.len(), 5_000);
        assert_eq!(tail.start_index(), 20_000);
        assert!(seg.flush(10).is_none());
    }

    #[test]
    fn sliding_windows_start_every_hop() {
        let data = vec![0.0f32; 20_000];
        let windows = segment(&blocks(&data, 1_000, 100_000.0), WindowSpec::sliding(10_000, 5_000).unwrap()).unwrap();
        let starts: Vec<u64> = windows.iter().map(Window::start_index).collect();
        assert_eq!(starts, vec![0, 5_000, 10_000]);
    }

    #[test]
    fn session_window_around_single_burst() {
        let mut data = vec![0.0f32; 10_000];
        for (i, v) in data[4_000..7_000].iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.5 } else { -0.5 };
        }
        let windows = segment(&blocks(&data, 512, 100_000.0), WindowSpec::session(1_000, 0.1).unwrap()).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].start_index(), 4_000);
        assert_eq!(windows[0].len(), 3_000);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(WindowSpec::fixed(0).is_err());
        assert!(WindowSpec::sliding(10, 0).is_err());
        assert!(WindowSpec::sliding(10, 11).is_err());
        assert!(WindowSpec::session(0, 0.1).is_err());
        assert!(WindowSpec::session(5, -1.0).is_err());
    }

    #[test]
    fn gaps_and_rate_changes_rejected() {
        let mut seg = Segmenter::new(WindowSpec::fixed(4).unwrap()).unwrap();
        let mut out = Vec::new();
        seg.push(&SampleBlock::new(0, 10.0, vec![1.0; 3]).unwrap(), 0, &mut out).unwrap();
        let gap = SampleBlock::new(5, 10.0, vec![1.0; 3]).unwrap();
        assert_eq!(
            seg.push(&gap, 0, &mut out),
            Err(SignalError::Discontinuity { expected: 3, actual: 5 })
        );
        let rate = SampleBlock::new(3, 20.0, vec![1.0; 3]).unwrap();
        assert!(matches!(seg.push(&rate, 0, &mut out), Err(SignalError::SampleRateMismatch { .. })));
    }
}
