//! Acoustic-emission features over one window.
//!
//! Hit-based quantities (rise time, counts, counts to peak, amplitude and
//! the three frequencies derived from them) come from the dominant hit of
//! the window: the one with the largest peak, earliest start on ties.
//! Quantities that cannot be formed (no hit, zero denominators, log of
//! zero) are `None` rather than NaN or infinity.

mod hits;

pub use hits::{detect_hits, AeHit};

use alloc::string::String;
use core::fmt::Write as _;

use thiserror::Error;

use crate::fft::{magnitude_spectrum, Spectrum};
use crate::math;
use crate::signal::Window;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("reference resistance must be positive, got {0}")]
    InvalidResistance(f64),
    #[error("AE threshold must be a nonnegative finite voltage, got {0}")]
    InvalidThreshold(f64),
    #[error("hit end timeout must be at least one sample")]
    InvalidTimeout,
    #[error("preamplifier gain must be finite")]
    InvalidGain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureConfig {
    pub ae_threshold_volts: f64,
    pub preamp_gain_db: f64,
    pub reference_resistance_ohm: f64,
    pub hit_end_timeout_samples: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            ae_threshold_volts: 0.1,
            preamp_gain_db: 40.0,
            reference_resistance_ohm: 10_000.0,
            hit_end_timeout_samples: 100,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.reference_resistance_ohm > 0.0 && self.reference_resistance_ohm.is_finite()) {
            return Err(FeatureError::InvalidResistance(self.reference_resistance_ohm));
        }
        if !(self.ae_threshold_volts >= 0.0 && self.ae_threshold_volts.is_finite()) {
            return Err(FeatureError::InvalidThreshold(self.ae_threshold_volts));
        }
        if self.hit_end_timeout_samples == 0 {
            return Err(FeatureError::InvalidTimeout);
        }
        if !self.preamp_gain_db.is_finite() {
            return Err(FeatureError::InvalidGain);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVector {
    pub rt_s: Option<f64>,
    pub counts: Option<u32>,
    pub amplitude_db: Option<f64>,
    pub rms_volts: f64,
    pub asl_db: Option<f64>,
    pub counts_to_peak: Option<u32>,
    pub signal_strength: f64,
    pub absolute_energy: f64,
    pub avg_frequency_hz: Option<f64>,
    pub reverb_frequency_hz: Option<f64>,
    pub init_frequency_hz: Option<f64>,
    pub freq_centroid_hz: Option<f64>,
    pub peak_amplitude_volts: f64,
}

impl FeatureVector {
    pub const CSV_HEADER: &'static str = "rt_s,counts,amplitude_db,rms_volts,asl_db,counts_to_peak,signal_strength,\
absolute_energy,avg_frequency_hz,reverb_frequency_hz,init_frequency_hz,freq_centroid_hz,peak_amplitude_volts";

    /// One CSV row in header order; undefined features are empty cells.
    /// Floats use the shortest representation that round-trips exactly.
    pub fn to_csv_row(&self) -> String {
        fn opt<T: core::fmt::Display>(out: &mut String, v: Option<T>) {
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        let mut s = String::with_capacity(160);
        opt(&mut s, self.rt_s);
        s.push(',');
        opt(&mut s, self.counts);
        s.push(',');
        opt(&mut s, self.amplitude_db);
        let _ = write!(s, ",{},", self.rms_volts);
        opt(&mut s, self.asl_db);
        s.push(',');
        opt(&mut s, self.counts_to_peak);
        let _ = write!(s, ",{},{},", self.signal_strength, self.absolute_energy);
        opt(&mut s, self.avg_frequency_hz);
        s.push(',');
        opt(&mut s, self.reverb_frequency_hz);
        s.push(',');
        opt(&mut s, self.init_frequency_hz);
        s.push(',');
        opt(&mut s, self.freq_centroid_hz);
        let _ = write!(s, ",{}", self.peak_amplitude_volts);
        s
    }
}

/// A = 120·log10(V_max) − P, in dB.
pub fn amplitude_db(v_max: f64, preamp_gain_db: f64) -> Option<f64> {
    (v_max > 0.0).then(|| 120.0 * math::log10(v_max) - preamp_gain_db)
}

pub fn compute_spectrum(window: &Window) -> Spectrum {
    magnitude_spectrum(window.samples(), window.sample_rate_hz())
}

/// Compute every feature for `window`.
pub fn extract_features(window: &Window, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    cfg.validate()?;
    let samples = window.samples();
    let fs = window.sample_rate_hz();
    let n = samples.len() as f64;

    let mut sum_sq = 0.0;
    let mut sum_abs = 0.0;
    let mut peak = 0.0f64;
    for &v in samples {
        let v = f64::from(v);
        sum_sq += v * v;
        sum_abs += v.abs();
        peak = peak.max(v.abs());
    }
    let rms = math::sqrt(sum_sq / n);
    let mean_abs = sum_abs / n;
    let asl = (mean_abs > 0.0).then(|| 120.0 * math::log10(mean_abs));

    let ss = samples
        .windows(2)
        .map(|p| f64::from(p[0]).abs() + f64::from(p[1]).abs())
        .sum::<f64>()
        / fs;
    let abe = sum_sq / cfg.reference_resistance_ohm;

    let hits = detect_hits(window, cfg)?;
    let dominant = hits
        .iter()
        .fold(None::<&AeHit>, |best, h| match best {
            Some(b) if b.peak_amplitude_volts >= h.peak_amplitude_volts => Some(b),
            _ => Some(h),
        })
        .copied();

    let centroid = compute_spectrum(window).centroid_hz();

    let mut fv = FeatureVector {
        rt_s: None,
        counts: None,
        amplitude_db: None,
        rms_volts: rms,
        asl_db: asl,
        counts_to_peak: None,
        signal_strength: ss,
        absolute_energy: abe,
        avg_frequency_hz: None,
        reverb_frequency_hz: None,
        init_frequency_hz: None,
        freq_centroid_hz: centroid,
        peak_amplitude_volts: peak,
    };
    if let Some(hit) = dominant {
        let c = f64::from(hit.counts);
        let cp = f64::from(hit.counts_to_peak);
        fv.rt_s = Some(hit.rise_time_s);
        fv.counts = Some(hit.counts);
        fv.counts_to_peak = Some(hit.counts_to_peak);
        fv.amplitude_db = amplitude_db(hit.peak_amplitude_volts, cfg.preamp_gain_db);
        fv.avg_frequency_hz = (hit.duration_s > 0.0).then(|| c / hit.duration_s);
        fv.reverb_frequency_hz = (hit.duration_s != hit.rise_time_s).then(|| (c - cp) / (hit.duration_s - hit.rise_time_s));
        fv.init_frequency_hz = (hit.rise_time_s > 0.0).then(|| cp / hit.rise_time_s);
    }
    Ok(fv)
}
