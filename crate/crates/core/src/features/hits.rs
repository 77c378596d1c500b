use alloc::vec::Vec;

use super::{FeatureConfig, FeatureError};
use crate::signal::Window;

/// One AE hit. Indices are offsets within the window; `end_index` is the
/// last above-threshold sample (the sub-threshold tail is excluded).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AeHit {
    pub start_index: usize,
    pub peak_index: usize,
    pub end_index: usize,
    pub duration_s: f64,
    pub rise_time_s: f64,
    pub counts: u32,
    pub counts_to_peak: u32,
    pub peak_amplitude_volts: f64,
}

struct Open {
    start: usize,
    peak: usize,
    peak_abs: f64,
    last_above: usize,
    below_run: usize,
    crossings: Vec<usize>,
}

impl Open {
    fn close(self, fs: f64) -> AeHit {
        let counts_to_peak = self.crossings.iter().filter(|&&i| i <= self.peak).count();
        AeHit {
            start_index: self.start,
            peak_index: self.peak,
            end_index: self.last_above,
            duration_s: (self.last_above - self.start) as f64 / fs,
            rise_time_s: (self.peak - self.start) as f64 / fs,
            counts: self.crossings.len() as u32,
            counts_to_peak: counts_to_peak as u32,
            peak_amplitude_volts: self.peak_abs,
        }
    }
}

/// Find AE hits in `window`.
///
/// A hit opens at the first sample with `|v| >= threshold` and closes after
/// `hit_end_timeout_samples` consecutive samples below it. Counts are the
/// positive-going threshold crossings of `|v|` inside the hit; the opening
/// sample is one such crossing.
pub fn detect_hits(window: &Window, cfg: &FeatureConfig) -> Result<Vec<AeHit>, FeatureError> {
    cfg.validate()?;
    let fs = window.sample_rate_hz();
    let threshold = cfg.ae_threshold_volts;
    let timeout = cfg.hit_end_timeout_samples;

    let mut hits = Vec::new();
    let mut open: Option<Open> = None;
    let mut prev_above = false;
    for (i, &v) in window.samples().iter().enumerate() {
        let a = f64::from(v).abs();
        let above = a >= threshold;
        match open.as_mut() {
            None if above => {
                open = Some(Open {
                    start: i,
                    peak: i,
                    peak_abs: a,
                    last_above: i,
                    below_run: 0,
                    crossings: alloc::vec![i],
                });
            }
            None => {}
            Some(h) if above => {
                if !prev_above {
                    h.crossings.push(i);
                }
                if a > h.peak_abs {
                    h.peak_abs = a;
                    h.peak = i;
                }
                h.last_above = i;
                h.below_run = 0;
            }
            Some(h) => {
                h.below_run += 1;
                if h.below_run == timeout {
                    hits.push(open.take().expect("hit is open").close(fs));
                }
            }
        }
        prev_above = above;
    }
    if let Some(h) = open {
        hits.push(h.close(fs));
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WindowKind;
    use alloc::vec;

    fn hits(samples: &[f32], threshold: f64, timeout: usize) -> Vec<AeHit> {
        let w = Window::new(WindowKind::Fixed, 0, 1_000.0, samples.to_vec(), 0).unwrap();
        let cfg = FeatureConfig {
            ae_threshold_volts: threshold,
            hit_end_timeout_samples: timeout,
            ..FeatureConfig::default()
        };
        detect_hits(&w, &cfg).unwrap()
    }

    #[test]
    fn two_isolated_excursions() {
        let h = hits(&[0.0, 0.2, 0.0, 0.3, 0.0], 0.1, 1);
        assert_eq!(h.len(), 2);
        assert!(h.iter().all(|h| h.counts == 1));
        assert_eq!((h[0].start_index, h[1].start_index), (1, 3));
    }

    #[test]
    fn one_hit_with_peak_inside() {
        let h = hits(&[0.0, 0.2, 0.15, 0.3, 0.05, 0.0], 0.1, 2);
        assert_eq!(h.len(), 1);
        let h = h[0];
        assert_eq!(h.counts, 1);
        assert_eq!(h.peak_index, 3);
        assert_eq!(h.counts_to_peak, 1);
        assert_eq!(h.end_index, 3);
        assert!((h.rise_time_s - 0.002).abs() < 1e-15);
        assert!((h.duration_s - 0.002).abs() < 1e-15);
    }

    #[test]
    fn reentry_within_timeout_adds_counts() {
        // drops below for one sample, timeout 2 keeps the hit open
        let h = hits(&[0.5, 0.0, -0.9, 0.0, 0.4, 0.0, 0.0, 0.0], 0.1, 2);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].counts, 3);
        assert_eq!(h[0].counts_to_peak, 2);
        assert_eq!(h[0].peak_index, 2);
        assert_eq!(h[0].end_index, 4);
    }

    #[test]
    fn quiet_window_has_no_hits() {
        assert!(hits(&vec![0.0; 64], 0.1, 3).is_empty());
    }
}
