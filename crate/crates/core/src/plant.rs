//! Deterministic simulated milling plant.
//!
//! Background Gaussian noise everywhere; during scripted contact intervals,
//! Poisson-arriving AE bursts (exponentially decaying sinusoids) whose
//! amplitude scales linearly with the current feed rate. The random stream
//! is ChaCha8 seeded from a `u64`, and draws never depend on machine state,
//! so a command changes the signal only through the feed scale.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::control::{CommandKind, MachineCommand};
use crate::math;
use crate::signal::SampleBlock;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),
    #[error("plant is halted; only Resume is accepted (got {0})")]
    Halted(&'static str),
    #[error("plant is not halted; Resume has no effect")]
    NotHalted,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub duration_s: f64,
    /// Half-open `[start_s, end_s)` contact intervals, sorted and disjoint.
    pub contact_intervals: Vec<(f64, f64)>,
    /// Standard deviation of the background noise.
    pub noise_amplitude_volts: f64,
    pub contact_burst_amplitude_volts: f64,
    pub burst_rate_hz: f64,
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    pub decay_tau_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            contact_intervals: alloc::vec![(3.0, 6.0)],
            noise_amplitude_volts: 0.0125,
            contact_burst_amplitude_volts: 0.8,
            burst_rate_hz: 200.0,
            sample_rate_hz: 100_000.0,
            carrier_hz: 15_000.0,
            decay_tau_s: 1e-3,
        }
    }
}

impl Scenario {
    /// 155.5 s (1,555 windows of 0.1 s) alternating between 2 s of contact
    /// and 3 s of air cutting.
    pub fn dataset_default() -> Self {
        let duration_s = 155.5;
        let contact_intervals = (0..)
            .map(|k| (k as f64 * 5.0 + 1.0, k as f64 * 5.0 + 3.0))
            .take_while(|&(_, end)| end <= duration_s)
            .collect();
        Self {
            duration_s,
            contact_intervals,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = PlantError::InvalidScenario;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(bad("duration must be positive"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(bad("sample rate must be positive"));
        }
        if !(self.noise_amplitude_volts >= 0.0 && self.noise_amplitude_volts.is_finite()) {
            return Err(bad("noise amplitude must be nonnegative"));
        }
        if !(self.contact_burst_amplitude_volts > self.noise_amplitude_volts
            && self.contact_burst_amplitude_volts.is_finite())
        {
            return Err(bad("burst amplitude must exceed noise amplitude"));
        }
        if !(self.burst_rate_hz > 0.0 && self.burst_rate_hz.is_finite()) {
            return Err(bad("burst rate must be positive"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz < self.sample_rate_hz / 2.0) {
            return Err(bad("carrier must lie strictly between 0 and Nyquist"));
        }
        if !(self.decay_tau_s > 0.0 && self.decay_tau_s.is_finite()) {
            return Err(bad("decay constant must be positive"));
        }
        let mut prev_end = 0.0;
        for &(start, end) in &self.contact_intervals {
            if !(start >= prev_end && start < end && end <= self.duration_s) {
                return Err(bad("contact intervals must be sorted, disjoint and inside the run"));
            }
            prev_end = end;
        }
        Ok(())
    }

    pub fn total_samples(&self) -> u64 {
        math::round(self.duration_s * self.sample_rate_hz) as u64
    }

    /// Contact intervals as half-open sample-index ranges.
    pub fn contact_ranges(&self) -> Vec<(u64, u64)> {
        self.contact_intervals
            .iter()
            .map(|&(s, e)| (self.time_to_index(s), self.time_to_index(e)))
            .collect()
    }

    fn time_to_index(&self, t: f64) -> u64 {
        // first index i with i / fs >= t, tolerant of representation error
        math::ceil(t * self.sample_rate_hz - 1e-6).max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MachineLimits {
    pub max_spindle_rpm: f64,
    pub max_feed_mm_per_min: f64,
}

impl Default for MachineLimits {
    fn default() -> Self {
        Self {
            max_spindle_rpm: 30_000.0,
            max_feed_mm_per_min: 5_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantState {
    pub spindle_speed_rpm: f64,
    pub feed_rate_mm_per_min: f64,
    pub in_contact: bool,
    pub halted: bool,
    pub rng_seed: u64,
    pub tool_changes: u32,
    resume: (f64, f64),
}

impl PlantState {
    pub fn new(spindle_speed_rpm: f64, feed_rate_mm_per_min: f64, rng_seed: u64) -> Self {
        Self {
            spindle_speed_rpm,
            feed_rate_mm_per_min,
            in_contact: false,
            halted: false,
            rng_seed,
            tool_changes: 0,
            resume: (spindle_speed_rpm, feed_rate_mm_per_min),
        }
    }

    /// State after `cmd`. A halted plant accepts only Resume.
    pub fn apply_command(&self, cmd: &MachineCommand, limits: &MachineLimits) -> Result<Self, PlantError> {
        let mut next = *self;
        match (self.halted, cmd.kind) {
            (true, CommandKind::Resume) => {
                next.halted = false;
                (next.spindle_speed_rpm, next.feed_rate_mm_per_min) = self.resume;
            }
            (true, other) => return Err(PlantError::Halted(other.name())),
            (false, CommandKind::Resume) => return Err(PlantError::NotHalted),
            (false, CommandKind::SetFeedRate(f)) => {
                next.feed_rate_mm_per_min = f.clamp(0.0, limits.max_feed_mm_per_min);
            }
            (false, CommandKind::SetSpindleSpeed(s)) => {
                next.spindle_speed_rpm = s.clamp(f64::MIN_POSITIVE, limits.max_spindle_rpm);
            }
            (false, CommandKind::Halt) => {
                next.resume = (self.spindle_speed_rpm, self.feed_rate_mm_per_min);
                next.halted = true;
                next.feed_rate_mm_per_min = 0.0;
                next.spindle_speed_rpm = 0.0;
            }
            (false, CommandKind::ToolChange) => next.tool_changes += 1,
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    re: f64,
    im: f64,
    floor: f64,
}

/// A block of generated samples with per-sample contact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub block: SampleBlock,
    pub labels: Vec<bool>,
}

/// The running plant: scenario, machine state and generator state.
#[derive(Debug, Clone)]
pub struct Plant {
    scenario: Scenario,
    state: PlantState,
    limits: MachineLimits,
    nominal_feed: f64,
    ranges: Vec<(u64, u64)>,
    total: u64,
    cursor: u64,
    rng: ChaCha8Rng,
    next_arrival: f64,
    bursts: Vec<Burst>,
    rot: (f64, f64),
}

impl Plant {
    pub fn new(scenario: Scenario, state: PlantState, limits: MachineLimits) -> Result<Self, PlantError> {
        scenario.validate()?;
        if !(state.feed_rate_mm_per_min > 0.0 && state.spindle_speed_rpm > 0.0) {
            return Err(PlantError::InvalidScenario("initial feed and spindle speed must be positive"));
        }
        let fs = scenario.sample_rate_hz;
        let decay = math::exp(-1.0 / (scenario.decay_tau_s * fs));
        let omega = 2.0 * PI * scenario.carrier_hz / fs;
        let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        let first = exp_gap(&mut rng, scenario.burst_rate_hz, fs);
        Ok(Self {
            ranges: scenario.contact_ranges(),
            total: scenario.total_samples(),
            nominal_feed: state.feed_rate_mm_per_min,
            scenario,
            state,
            limits,
            cursor: 0,
            rng,
            next_arrival: first,
            bursts: Vec::new(),
            rot: (decay * math::cos(omega), decay * math::sin(omega)),
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Index of the next sample to be generated.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn is_finished(&self) -> bool {
        self.cursor >= self.total
    }

    /// Apply a command; it takes effect from the next generated sample.
    pub fn apply_command(&mut self, cmd: &MachineCommand) -> Result<(), PlantError> {
        self.state = self.state.apply_command(cmd, &self.limits)?;
        Ok(())
    }

    pub fn is_contact_index(&self, index: u64) -> bool {
        self.ranges.iter().any(|&(s, e)| index >= s && index < e)
    }

    /// Generate up to `n_samples`; `None` once the scenario is exhausted.
    pub fn generate(&mut self, n_samples: usize) -> Option<Generated> {
        let n = (n_samples as u64).min(self.total.saturating_sub(self.cursor)) as usize;
        if n == 0 {
            return None;
        }
        let fs = self.scenario.sample_rate_hz;
        let scale = if self.state.halted {
            0.0
        } else {
            self.state.feed_rate_mm_per_min / self.nominal_feed
        };
        let mut samples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let start = self.cursor;
        for _ in 0..n {
            let i = self.cursor;
            let contact = self.is_contact_index(i);
            while self.next_arrival <= i as f64 {
                let jitter: f64 = self.rng.random_range(0.75..1.0);
                if contact {
                    let amp = self.scenario.contact_burst_amplitude_volts * jitter;
                    self.bursts.push(Burst {
                        re: amp,
                        im: 0.0,
                        floor: amp * 1e-4,
                    });
                }
                self.next_arrival += exp_gap(&mut self.rng, self.scenario.burst_rate_hz, fs);
            }
            let noise: f64 = self.rng.sample(StandardNormal);
            let mut burst_sum = 0.0;
            let (cr, ci) = self.rot;
            for b in &mut self.bursts {
                burst_sum += b.im;
                let re = b.re * cr - b.im * ci;
                b.im = b.re * ci + b.im * cr;
                b.re = re;
            }
            self.bursts.retain(|b| b.re.abs() + b.im.abs() > b.floor);
            let v = noise * self.scenario.noise_amplitude_volts + if contact { scale * burst_sum } else { 0.0 };
            samples.push(v as f32);
            labels.push(contact);
            self.cursor += 1;
        }
        self.state.in_contact = labels[n - 1];
        let block = SampleBlock::new(start, fs, samples).expect("nonempty block at positive rate");
        Some(Generated { block, labels })
    }
}

fn exp_gap(rng: &mut ChaCha8Rng, rate_hz: f64, fs: f64) -> f64 {
    // U in (0, 1]
    let u: f64 = 1.0 - rng.random::<f64>();
    -math::ln(u) / rate_hz * fs
}
