use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{InputNorm, Mlp, DEFAULT_LAYER_SIZES};
use crate::features::FeatureVector;
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    Empty,
    #[error("training split contains a single class ({positives} contact of {total}); refusing to train")]
    SingleClass { positives: usize, total: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged: non-finite parameters at epoch {0}")]
    Diverged(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledSample {
    /// Window peak amplitude in volts.
    pub input: f64,
    pub label: bool,
}

impl LabeledSample {
    pub fn from_features(fv: &FeatureVector, label: bool) -> Self {
        Self {
            input: fv.peak_amplitude_volts,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: u32,
    pub early_stop_patience: u32,
    /// Minimum validation-loss decrease that counts as improvement.
    pub min_improvement: f64,
    pub batch_size: usize,
    /// Fraction of the whole dataset held out for testing.
    pub test_fraction: f64,
    /// Fraction of the training split carved out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epoch budget for incremental updates.
    pub update_epochs: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: DEFAULT_LAYER_SIZES[1..DEFAULT_LAYER_SIZES.len() - 1].to_vec(),
            learning_rate: 0.001,
            max_epochs: 200,
            early_stop_patience: 15,
            min_improvement: 1e-6,
            batch_size: 32,
            test_fraction: 0.2,
            validation_fraction: 0.1,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            update_epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = TrainError::InvalidConfig;
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return Err(bad("hidden layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(bad("max_epochs must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(bad("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch size must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(bad("validation fraction must lie in (0, 1)"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad("test fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(bad("Adam hyperparameters out of range"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(1);
        sizes
    }
}

/// Labeled peak amplitudes with a seeded train/test split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shuffle with `seed` and cut off `round(len * test_fraction)` samples
    /// for testing. Returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
        let mut shuffled = self.samples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = math::round(shuffled.len() as f64 * test_fraction) as usize;
        let test = shuffled.split_off(shuffled.len() - n_test);
        (shuffled, test)
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn from_config(param_count: usize, cfg: &TrainConfig) -> Self {
        Self::new(param_count, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (math::sqrt(v_hat) + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Waiting,
    Stop,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: u32,
    min_delta: f64,
    best: f64,
    since_best: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> StopSignal {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.since_best = 0;
            StopSignal::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopSignal::Stop
            } else {
                StopSignal::Waiting
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: u32,
    pub best_epoch: u32,
    pub best_val_loss: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    pub seed: u64,
}

/// The three disjoint subsets used by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Whole training split (fit + validation); normalization statistics
    /// come from here.
    pub train: Vec<LabeledSample>,
    pub fit: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Seeded test split, then a validation carve-out from the training split.
pub fn partition(data: &LabeledDataset, cfg: &TrainConfig) -> Result<Partition, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let (train, test) = data.split(cfg.test_fraction, cfg.seed);
    let positives = train.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train.len() {
        return Err(TrainError::SingleClass {
            positives,
            total: train.len(),
        });
    }
    let mut fit = train.clone();
    fit.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11));
    let n_val = (math::round(fit.len() as f64 * cfg.validation_fraction) as usize).clamp(1, fit.len() - 1);
    let val = fit.split_off(fit.len() - n_val);
    Ok(Partition { train, fit, val, test })
}

/// Split, normalize, train with early stopping and evaluate on the test split.
pub fn train(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Mlp, TrainReport), TrainError> {
    cfg.validate()?;
    let Partition { train, mut fit, val, test } = partition(data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe90c_5eed);

    let mut model = Mlp::new(&cfg.layer_sizes(), cfg.seed);
    model.set_input_norm(InputNorm::fit(train.iter().map(|s| s.input)));

    let mut params = model.params();
    let mut adam = Adam::from_config(params.len(), cfg);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, cfg.min_improvement);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stopped_epoch = cfg.max_epochs;

    for epoch in 1..=cfg.max_epochs {
        fit.shuffle(&mut rng);
        for batch in fit.chunks(cfg.batch_size) {
            let (grad, _) = model.gradient(batch);
            adam.step(&mut params, &grad);
            model.set_params(&params);
        }
        if !model.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
        let record = EpochRecord {
            epoch,
            train_loss: model.mean_loss(&fit),
            val_loss: model.mean_loss(&val),
        };
        epochs.push(record);
        match stopper.observe(record.val_loss) {
            StopSignal::Improved => {
                best_params.copy_from_slice(&params);
                best_epoch = epoch;
            }
            StopSignal::Waiting => {}
            StopSignal::Stop => {
                stopped_epoch = epoch;
                break;
            }
        }
    }
    model.set_params(&best_params);

    let report = TrainReport {
        epochs,
        stopped_epoch,
        best_epoch,
        best_val_loss: stopper.best(),
        train_size: fit.len(),
        val_size: val.len(),
        test_size: test.len(),
        test_accuracy: model.accuracy(&test),
        seed: cfg.seed,
    };
    Ok((model, report))
}

/// Fine-tune a trained model on newly labeled windows for
/// `cfg.update_epochs` epochs. Input normalization is left untouched and a
/// new model is returned.
pub fn incremental_update(model: &Mlp, new_samples: &[LabeledSample], cfg: &TrainConfig) -> Result<Mlp, TrainError> {
    cfg.validate()?;
    let mut updated = model.clone();
    if new_samples.is_empty() {
        return Ok(updated);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1ac2_e3e7);
    let mut batch_order = new_samples.to_vec();
    let mut params = updated.params();
    let mut adam = Adam::from_config(params.len(), cfg);
    for epoch in 1..=cfg.update_epochs {
        batch_order.shuffle(&mut rng);
        for batch in batch_order.chunks(cfg.batch_size) {
            let (grad, _) = updated.gradient(batch);
            adam.step(&mut params, &grad);
            updated.set_params(&params);
        }
        if !updated.is_finite() {
            return Err(TrainError::Diverged(epoch));
        }
    }
    Ok(updated)
}
