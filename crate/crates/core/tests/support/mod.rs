//! Brute-force oracles shared by the feature and model test suites.

#![allow(dead_code)]

use std::f64::consts::PI;

use milltwin_core::features::{detect_hits, extract_features, FeatureConfig, FeatureVector};
use milltwin_core::model::{InputNorm, LabeledSample, Mlp};
use milltwin_core::signal::{Window, WindowKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(N^2) DFT magnitudes of `x` zero-padded to `n`, bins 0..=n/2.
pub fn naive_dft(x: &[f32], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (j, &v) in x.iter().enumerate() {
                let angle = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += f64::from(v) * angle.cos();
                im += f64::from(v) * angle.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

pub struct OracleHit {
    pub start: usize,
    pub peak: usize,
    pub end: usize,
    pub counts: u32,
    pub counts_to_peak: u32,
    pub peak_abs: f64,
}

/// Runs of above-threshold samples, merged when separated by fewer than
/// `timeout` sub-threshold samples.
pub fn oracle_hits(x: &[f32], threshold: f64, timeout: usize) -> Vec<OracleHit> {
    let above: Vec<bool> = x.iter().map(|&v| f64::from(v).abs() >= threshold).collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < x.len() {
        if above[i] {
            let s = i;
            while i < x.len() && above[i] {
                i += 1;
            }
            runs.push((s, i - 1));
        } else {
            i += 1;
        }
    }
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for run in runs {
        match groups.last_mut() {
            Some(g) if run.0 - g.last().unwrap().1 - 1 < timeout => g.push(run),
            _ => groups.push(vec![run]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let start = g[0].0;
            let end = g.last().unwrap().1;
            let mut peak = start;
            for j in start..=end {
                if f64::from(x[j]).abs() > f64::from(x[peak]).abs() {
                    peak = j;
                }
            }
            OracleHit {
                start,
                peak,
                end,
                counts: g.len() as u32,
                counts_to_peak: g.iter().filter(|r| r.0 <= peak).count() as u32,
                peak_abs: f64::from(x[peak]).abs(),
            }
        })
        .collect()
}

pub fn oracle_features(x: &[f32], fs: f64, cfg: &FeatureConfig) -> FeatureVector {
    let v: Vec<f64> = x.iter().map(|&s| f64::from(s)).collect();
    let n = v.len() as f64;
    let rms = (v.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    let mean_abs = v.iter().map(|a| a.abs()).sum::<f64>() / n;
    let mut ss = 0.0;
    for i in 0..v.len() - 1 {
        ss += v[i].abs() + v[i + 1].abs();
    }
    let mags = naive_dft(x, x.len().max(2).next_power_of_two());
    let padded = x.len().max(2).next_power_of_two() as f64;
    let num: f64 = mags.iter().enumerate().map(|(k, m)| k as f64 * fs / padded * m).sum();
    let den: f64 = mags.iter().sum();

    let hits = oracle_hits(x, cfg.ae_threshold_volts, cfg.hit_end_timeout_samples);
    let mut dom: Option<&OracleHit> = None;
    for h in &hits {
        if dom.map_or(true, |d| h.peak_abs > d.peak_abs) {
            dom = Some(h);
        }
    }
    let mut fv = FeatureVector {
        rt_s: None,
        counts: None,
        amplitude_db: None,
        rms_volts: rms,
        asl_db: (mean_abs > 0.0).then(|| 120.0 * mean_abs.log10()),
        counts_to_peak: None,
        signal_strength: ss / fs,
        absolute_energy: v.iter().map(|a| a * a).sum::<f64>() / cfg.reference_resistance_ohm,
        avg_frequency_hz: None,
        reverb_frequency_hz: None,
        init_frequency_hz: None,
        freq_centroid_hz: (den > 0.0).then(|| num / den),
        peak_amplitude_volts: v.iter().fold(0.0, |m, a| m.max(a.abs())),
    };
    if let Some(h) = dom {
        let rt = (h.peak - h.start) as f64 / fs;
        let ht = (h.end - h.start) as f64 / fs;
        let c = f64::from(h.counts);
        let cp = f64::from(h.counts_to_peak);
        fv.rt_s = Some(rt);
        fv.counts = Some(h.counts);
        fv.counts_to_peak = Some(h.counts_to_peak);
        fv.amplitude_db = (h.peak_abs > 0.0).then(|| 120.0 * h.peak_abs.log10() - cfg.preamp_gain_db);
        fv.avg_frequency_hz = (ht > 0.0).then(|| c / ht);
        fv.reverb_frequency_hz = (ht != rt).then(|| (c - cp) / (ht - rt));
        fv.init_frequency_hz = (rt > 0.0).then(|| cp / rt);
    }
    fv
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, rel: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, rel),
        (None, None) => true,
        _ => false,
    }
}

/// Every feature of `got` within `rel` of `want`, or the first mismatch.
pub fn features_match(got: &FeatureVector, want: &FeatureVector, rel: f64) -> Result<(), String> {
    let mismatch = |name: &str, a: &dyn std::fmt::Debug, b: &dyn std::fmt::Debug| Err(format!("{name}: {a:?} vs {b:?}"));
    if got.counts != want.counts {
        return mismatch("counts", &got.counts, &want.counts);
    }
    if got.counts_to_peak != want.counts_to_peak {
        return mismatch("counts_to_peak", &got.counts_to_peak, &want.counts_to_peak);
    }
    if got.peak_amplitude_volts != want.peak_amplitude_volts {
        return mismatch("peak_amplitude_volts", &got.peak_amplitude_volts, &want.peak_amplitude_volts);
    }
    let optional = [
        ("rt_s", got.rt_s, want.rt_s),
        ("amplitude_db", got.amplitude_db, want.amplitude_db),
        ("asl_db", got.asl_db, want.asl_db),
        ("avg_frequency_hz", got.avg_frequency_hz, want.avg_frequency_hz),
        ("reverb_frequency_hz", got.reverb_frequency_hz, want.reverb_frequency_hz),
        ("init_frequency_hz", got.init_frequency_hz, want.init_frequency_hz),
        ("freq_centroid_hz", got.freq_centroid_hz, want.freq_centroid_hz),
    ];
    for (name, a, b) in optional {
        if !close_opt(a, b, rel) {
            return mismatch(name, &a, &b);
        }
    }
    let plain = [
        ("rms_volts", got.rms_volts, want.rms_volts),
        ("signal_strength", got.signal_strength, want.signal_strength),
        ("absolute_energy", got.absolute_energy, want.absolute_energy),
    ];
    for (name, a, b) in plain {
        if !close(a, b, rel) {
            return mismatch(name, &a, &b);
        }
    }
    Ok(())
}

pub fn assert_features_match(got: &FeatureVector, want: &FeatureVector, rel: f64) {
    if let Err(e) = features_match(got, want, rel) {
        panic!("{e}");
    }
}

/// Bursty random window: noise plus a few decaying sinusoids.
pub fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    for _ in 0..rng.random_range(0..4) {
        let at = rng.random_range(0..n);
        let amp = rng.random_range(0.1..1.0);
        let f = rng.random_range(0.01..0.45);
        for (k, v) in x[at..].iter_mut().enumerate() {
            *v += amp * (-(k as f64) / 60.0).exp() * (2.0 * PI * f * k as f64).sin();
        }
    }
    x.into_iter().map(|v| v as f32).collect()
}

pub fn window(x: Vec<f32>, fs: f64) -> Window {
    Window::new(WindowKind::Fixed, 0, fs, x, 0).unwrap()
}

pub fn scaled(x: &[f32], k: f64) -> Vec<f32> {
    x.iter().map(|&v| (f64::from(v) * k) as f32).collect()
}

// Scaled windows are requantized to f32, so the scaling laws hold to f32
// precision rather than exactly.
pub const SCALE_REL: f64 = 1e-6;

/// One scaling-law case: a random 256-sample window scaled by `k`, with the
/// threshold scaled alongside.
pub fn scaling_laws_hold(seed: u64, k: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_window(&mut rng, 256);
    let cfg = FeatureConfig { hit_end_timeout_samples: 20, ..FeatureConfig::default() };
    let cfg_k = FeatureConfig { ae_threshold_volts: cfg.ae_threshold_volts * k, ..cfg };
    let a = extract_features(&window(x.clone(), 1e5), &cfg).map_err(|e| e.to_string())?;
    let b = extract_features(&window(scaled(&x, k), 1e5), &cfg_k).map_err(|e| e.to_string())?;
    let fail = |what: &str| Err(format!("seed {seed} k {k}: {what}"));

    if !close(b.rms_volts, k * a.rms_volts, SCALE_REL) {
        return fail("rms");
    }
    if !close(b.signal_strength, k * a.signal_strength, SCALE_REL) {
        return fail("signal strength");
    }
    if !close(b.peak_amplitude_volts, k * a.peak_amplitude_volts, SCALE_REL) {
        return fail("peak amplitude");
    }
    if !close(b.absolute_energy, k * k * a.absolute_energy, SCALE_REL) {
        return fail("absolute energy");
    }
    let shift = 120.0 * k.log10();
    for (name, x, y) in [("asl", a.asl_db, b.asl_db), ("amplitude", a.amplitude_db, b.amplitude_db)] {
        if let (Some(x), Some(y)) = (x, y) {
            if (y - (x + shift)).abs() > 1e-4 {
                return fail(name);
            }
        }
    }
    if !close_opt(b.freq_centroid_hz, a.freq_centroid_hz, SCALE_REL) {
        return fail("frequency centroid");
    }

    // hit structure is preserved unless an f32 rounding lands a sample
    // exactly on the scaled threshold
    let near_threshold = x.iter().any(|&v| (f64::from(v).abs() - cfg.ae_threshold_volts).abs() < 1e-6);
    if !near_threshold {
        let hits_a = detect_hits(&window(x.clone(), 1e5), &cfg).map_err(|e| e.to_string())?;
        let hits_b = detect_hits(&window(scaled(&x, k), 1e5), &cfg_k).map_err(|e| e.to_string())?;
        if (a.counts, a.counts_to_peak, a.rt_s) != (b.counts, b.counts_to_peak, b.rt_s) || hits_a.len() != hits_b.len() {
            return fail("hit structure");
        }
    }
    Ok(())
}

pub fn random_small_model(rng: &mut ChaCha8Rng) -> Mlp {
    let hidden = rng.random_range(1..=3);
    let mut sizes = vec![1];
    for _ in 0..hidden {
        sizes.push(rng.random_range(2..=6));
    }
    sizes.push(1);
    let mut m = Mlp::new(&sizes, rng.random());
    let mut p = m.params();
    for v in &mut p {
        *v += rng.random_range(-0.3..0.3);
    }
    m.set_params(&p);
    m.set_input_norm(InputNorm {
        mean: rng.random_range(-0.5..0.5),
        std: rng.random_range(0.2..2.0),
    });
    m
}

pub fn random_batch(rng: &mut ChaCha8Rng) -> Vec<LabeledSample> {
    let n = rng.random_range(4..=12);
    (0..n)
        .map(|i| LabeledSample {
            input: rng.random_range(-1.0..1.5),
            label: i % 2 == 0 || rng.random_bool(0.3),
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;
// below this magnitude the comparison is absolute (roundoff of the
// difference quotient is ~1e-11)
const FD_FLOOR: f64 = 1e-6;

/// Backprop against central differences on `models` random small networks.
/// Returns the number of parameters checked.
pub fn gradient_check(seed: u64, models: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    for model_idx in 0..models {
        let m = random_small_model(&mut rng);
        let batch = random_batch(&mut rng);
        let (grad, loss) = m.gradient(&batch);
        if (loss - m.mean_loss(&batch)).abs() >= 1e-12 {
            return Err(format!("model {model_idx}: loss {loss} disagrees with mean_loss"));
        }
        let base = m.params();
        let mut probe = m.clone();
        for (j, &g) in grad.iter().enumerate() {
            let mut p = base.clone();
            p[j] = base[j] + FD_STEP;
            probe.set_params(&p);
            let up = probe.mean_loss(&batch);
            p[j] = base[j] - FD_STEP;
            probe.set_params(&p);
            let down = probe.mean_loss(&batch);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > FD_TOL {
                return Err(format!(
                    "model {model_idx} ({:?}) param {j}: analytic {g:e} numeric {numeric:e} rel {rel:e}",
                    m.layer_sizes()
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
