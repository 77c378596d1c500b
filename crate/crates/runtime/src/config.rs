//! Flat `key = value` configuration.
//!
//! One setting per line, `#` starts a comment, sections are dotted key
//! prefixes (`window.length = 10000`). Command-line overrides use the same
//! `key=value` syntax and are applied after the file. Scenario files use
//! the keys of the `scenario.` section without the prefix; `contact` may
//! repeat, and the first `contact` line of each source replaces the
//! inherited list (`contact = none` clears it).

use std::fmt;
use std::path::{Path, PathBuf};

use milltwin_core::control::{decode_nc, CommandKind, DecisionPolicy};
use milltwin_core::features::FeatureConfig;
use milltwin_core::model::TrainConfig;
use milltwin_core::plant::{MachineLimits, Scenario};
use milltwin_core::signal::WindowSpec;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{origin}: {msg}")]
pub struct ConfigError {
    pub origin: String,
    pub msg: String,
}

impl ConfigError {
    fn new(origin: impl fmt::Display, msg: impl Into<String>) -> Self {
        Self {
            origin: origin.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// `file:line` or `--set`.
    pub origin: String,
}

pub fn parse_entries(text: &str, source: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = format!("{source}:{}", i + 1);
        let line = raw.split_once('#').map_or(raw, |(head, _)| head).trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_assignment(line, origin)?);
    }
    Ok(out)
}

pub fn parse_override(text: &str) -> Result<Entry, ConfigError> {
    parse_assignment(text.trim(), "--set".to_owned())
}

fn parse_assignment(line: &str, origin: String) -> Result<Entry, ConfigError> {
    let Some((key, value)) = line.split_once('=') else {
        return Err(ConfigError::new(origin, format!("expected `key = value`, got `{line}`")));
    };
    let key = key.trim();
    let valid = !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    if !valid {
        return Err(ConfigError::new(origin, format!("invalid key `{key}`")));
    }
    Ok(Entry {
        key: key.to_owned(),
        value: value.trim().to_owned(),
        origin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Realtime,
    Replay,
    AsFastAsPossible,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Realtime => "realtime",
            Self::Replay => "replay",
            Self::AsFastAsPossible => "as-fast-as-possible",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(Self::Realtime),
            "replay" => Ok(Self::Replay),
            "as-fast-as-possible" | "afap" => Ok(Self::AsFastAsPossible),
            _ => Err(format!("unknown run mode `{s}` (realtime, replay, as-fast-as-possible)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantConfig {
    pub seed: u64,
    pub spindle_rpm: f64,
    /// Initial (nominal) feed; burst amplitude scales relative to it.
    pub feed_mm_per_min: f64,
    pub limits: MachineLimits,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            spindle_rpm: 10_000.0,
            feed_mm_per_min: 100.0,
            limits: MachineLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub features: FeatureConfig,
    pub model_path: Option<PathBuf>,
    pub policy: DecisionPolicy,
    /// Predicted-contact seconds per tool life; enables the wear check.
    pub tool_life_s: Option<f64>,
    pub listen: Option<String>,
    pub retention: usize,
    pub mode: RunMode,
    /// Samples per plant block (and per pacing tick in realtime mode).
    pub block_samples: usize,
    /// Closed windows waiting for feature extraction before the oldest is
    /// dropped.
    pub queue_depth: usize,
    pub buffer_capacity: usize,
    pub latency_budget_ns: u64,
    pub scenario: Scenario,
    pub plant: PlantConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::Fixed { length: 10_000 },
            features: FeatureConfig::default(),
            model_path: None,
            policy: DecisionPolicy::default(),
            tool_life_s: None,
            listen: None,
            retention: crate::broker::DEFAULT_RETENTION,
            mode: RunMode::Realtime,
            block_samples: 1_000,
            queue_depth: 4,
            buffer_capacity: 16_384,
            latency_budget_ns: 10_000_000,
            scenario: Scenario::default(),
            plant: PlantConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| ConfigError::new(&e.origin, format!("`{}`: cannot parse `{}`", e.key, e.value)))
}

fn finite(e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = num(e)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(&e.origin, format!("`{}` must be finite", e.key)))
    }
}

fn command(e: &Entry) -> Result<CommandKind, ConfigError> {
    decode_nc(&e.value).map_err(|err| ConfigError::new(&e.origin, format!("`{}`: {err}", e.key)))
}

fn parse_contact(e: &Entry) -> Result<Option<(f64, f64)>, ConfigError> {
    if e.value == "none" {
        return Ok(None);
    }
    let bad = || ConfigError::new(&e.origin, format!("contact must be `start,end` in seconds, got `{}`", e.value));
    let (a, b) = e.value.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    Ok(Some((a, b)))
}

fn source_of(origin: &str) -> &str {
    origin.rsplit_once(':').map_or(origin, |(file, _)| file)
}

/// Apply one scenario key (without the `scenario.` prefix). The first
/// `contact` from a new source replaces the inherited intervals.
fn apply_scenario_key(
    scenario: &mut Scenario,
    key: &str,
    e: &Entry,
    contact_source: &mut Option<String>,
) -> Result<(), ConfigError> {
    match key {
        "duration_s" => scenario.duration_s = finite(e)?,
        "sample_rate_hz" => scenario.sample_rate_hz = finite(e)?,
        "noise_volts" => scenario.noise_amplitude_volts = finite(e)?,
        "burst_volts" => scenario.contact_burst_amplitude_volts = finite(e)?,
        "burst_rate_hz" => scenario.burst_rate_hz = finite(e)?,
        "carrier_hz" => scenario.carrier_hz = finite(e)?,
        "decay_tau_s" => scenario.decay_tau_s = finite(e)?,
        "contact" => {
            let source = source_of(&e.origin);
            if contact_source.as_deref() != Some(source) {
                scenario.contact_intervals.clear();
                *contact_source = Some(source.to_owned());
            }
            if let Some(iv) = parse_contact(e)? {
                scenario.contact_intervals.push(iv);
            }
        }
        _ => return Err(ConfigError::new(&e.origin, format!("unknown scenario key `{key}`"))),
    }
    Ok(())
}

pub fn parse_scenario(text: &str, source: &str, base: Scenario) -> Result<Scenario, ConfigError> {
    let entries = parse_entries(text, source)?;
    let mut scenario = base;
    let mut contacts = None;
    for e in &entries {
        apply_scenario_key(&mut scenario, &e.key, e, &mut contacts)?;
    }
    scenario
        .validate()
        .map_err(|err| ConfigError::new(source, err.to_string()))?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path, base: Scenario) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display(), e.to_string()))?;
    parse_scenario(&text, &path.display().to_string(), base)
}

impl PipelineConfig {
    /// Defaults, then the config file (if any), then overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        let mut base_dir = PathBuf::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display(), e.to_string()))?;
            entries = parse_entries(&text, &path.display().to_string())?;
            base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        }
        for o in overrides {
            entries.push(parse_override(o)?);
        }
        let mut cfg = Self::default();
        cfg.apply(&entries, &base_dir)?;
        let origin = path.map_or_else(|| "--set".to_owned(), |p| p.display().to_string());
        cfg.validate().map_err(|msg| ConfigError::new(origin, msg))?;
        Ok(cfg)
    }

    pub fn apply(&mut self, entries: &[Entry], base_dir: &Path) -> Result<(), ConfigError> {
        let mut window_kind: Option<String> = None;
        let (mut length, mut hop, mut gap, mut thresh) = match self.window {
            WindowSpec::Fixed { length } => (length, length / 2, 1_000, 0.1),
            WindowSpec::Sliding { length, hop } => (length, hop, 1_000, 0.1),
            WindowSpec::Session {
                gap_timeout,
                threshold_volts,
            } => (10_000, 5_000, gap_timeout, threshold_volts),
        };
        let mut contacts = None;
        for e in entries {
            let unknown = || ConfigError::new(&e.origin, format!("unknown key `{}`", e.key));
            match e.key.as_str() {
                "sample_rate_hz" => self.scenario.sample_rate_hz = finite(e)?,
                "window.kind" => window_kind = Some(e.value.clone()),
                "window.length" => length = num(e)?,
                "window.hop" => hop = num(e)?,
                "window.gap_timeout" => gap = num(e)?,
                "window.threshold_volts" => thresh = finite(e)?,
                "features.ae_threshold_volts" => self.features.ae_threshold_volts = finite(e)?,
                "features.preamp_gain_db" => self.features.preamp_gain_db = finite(e)?,
                "features.reference_resistance_ohm" => self.features.reference_resistance_ohm = finite(e)?,
                "features.hit_end_timeout_samples" => self.features.hit_end_timeout_samples = num(e)?,
                "model.path" => self.model_path = Some(base_dir.join(&e.value)),
                "policy.threshold" => self.policy.contact_probability_threshold = finite(e)?,
                "policy.debounce" => self.policy.debounce_windows = num(e)?,
                "policy.wear_fraction" => self.policy.wear_replacement_fraction = finite(e)?,
                "policy.tool_life_s" => {
                    self.tool_life_s = if e.value == "none" { None } else { Some(finite(e)?) };
                }
                "policy.contact_action" => self.policy.contact_action = command(e)?,
                "policy.restore_action" => self.policy.restore_action = command(e)?,
                "policy.anomaly_action" => self.policy.anomaly_action = command(e)?,
                "transport.listen" => self.listen = (!e.value.is_empty() && e.value != "none").then(|| e.value.clone()),
                "transport.retention" => self.retention = num(e)?,
                "run.mode" => self.mode = e.value.parse().map_err(|m| ConfigError::new(&e.origin, m))?,
                "run.block_samples" => self.block_samples = num(e)?,
                "run.queue_depth" => self.queue_depth = num(e)?,
                "run.buffer_capacity" => self.buffer_capacity = num(e)?,
                "run.latency_budget_ms" => self.latency_budget_ns = (finite(e)? * 1e6).round() as u64,
                "scenario.file" => {
                    self.scenario = load_scenario(&base_dir.join(&e.value), self.scenario.clone())?;
                }
                "plant.seed" => self.plant.seed = num(e)?,
                "plant.spindle_rpm" => self.plant.spindle_rpm = finite(e)?,
                "plant.feed" => self.plant.feed_mm_per_min = finite(e)?,
                "plant.max_spindle_rpm" => self.plant.limits.max_spindle_rpm = finite(e)?,
                "plant.max_feed" => self.plant.limits.max_feed_mm_per_min = finite(e)?,
                "train.hidden" => {
                    self.train.hidden_layers = e
                        .value
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| ConfigError::new(&e.origin, "train.hidden must be comma-separated widths"))?;
                }
                "train.learning_rate" => self.train.learning_rate = finite(e)?,
                "train.max_epochs" => self.train.max_epochs = num(e)?,
                "train.patience" => self.train.early_stop_patience = num(e)?,
                "train.min_improvement" => self.train.min_improvement = finite(e)?,
                "train.batch_size" => self.train.batch_size = num(e)?,
                "train.test_fraction" => self.train.test_fraction = finite(e)?,
                "train.validation_fraction" => self.train.validation_fraction = finite(e)?,
                "train.seed" => self.train.seed = num(e)?,
                "train.update_epochs" => self.train.update_epochs = num(e)?,
                key => match key.strip_prefix("scenario.") {
                    Some(sk) => apply_scenario_key(&mut self.scenario, sk, e, &mut contacts)?,
                    None => return Err(unknown()),
                },
            }
        }
        let kind = window_kind.unwrap_or_else(|| {
            match self.window {
                WindowSpec::Fixed { .. } => "fixed",
                WindowSpec::Sliding { .. } => "sliding",
                WindowSpec::Session { .. } => "session",
            }
            .to_owned()
        });
        self.window = match kind.as_str() {
            "fixed" => WindowSpec::Fixed { length },
            "sliding" => WindowSpec::Sliding { length, hop },
            "session" => WindowSpec::Session {
                gap_timeout: gap,
                threshold_volts: thresh,
            },
            other => return Err(ConfigError::new("window.kind", format!("unknown window kind `{other}`"))),
        };
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.window.validate().map_err(|e| format!("window: {e}"))?;
        self.features.validate().map_err(|e| format!("features: {e}"))?;
        self.policy.validate().map_err(|e| format!("policy: {e}"))?;
        self.scenario.validate().map_err(|e| format!("scenario: {e}"))?;
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        if let Some(t) = self.tool_life_s {
            if !(t > 0.0) {
                return Err("policy.tool_life_s must be positive".into());
            }
        }
        if self.block_samples == 0 {
            return Err("run.block_samples must be positive".into());
        }
        if self.buffer_capacity < self.block_samples {
            return Err("run.buffer_capacity must be at least run.block_samples".into());
        }
        if self.queue_depth == 0 {
            return Err("run.queue_depth must be at least 1".into());
        }
        if self.retention == 0 {
            return Err("transport.retention must be at least 1".into());
        }
        if !(self.plant.feed_mm_per_min > 0.0 && self.plant.spindle_rpm > 0.0) {
            return Err("plant.feed and plant.spindle_rpm must be positive".into());
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.scenario.sample_rate_hz
    }
}
