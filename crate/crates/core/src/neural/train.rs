//! Minibatch Adam training with early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, Network, Params};
use crate::error::{ExitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Params,
    v: Params,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &Params) -> Self {
        Adam { config, m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in
            params.tensors.iter_mut().zip(&grad.tensors).zip(&mut self.m.tensors).zip(&mut self.v.tensors)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive validation-loss increases that stop training.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 250,
            max_epochs: 200,
            patience: 3,
            validation_fraction: 0.05,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig { batch_size: 32, max_epochs: 20, ..TrainConfig::paper() }
    }
}

/// What the early-stopping rule says after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Keep going. `snapshot` asks the caller to remember the parameters
    /// of this epoch as the current restore point.
    Continue { snapshot: bool },
    /// Stop now and restore the parameters saved after `restore_epoch`.
    Stop { restore_epoch: usize },
}

/// Stops at the first epoch after which the validation loss has increased
/// `patience` times in a row, restoring the epoch before the rises began.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    previous: Option<f64>,
    rises: usize,
    anchor_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience: patience.max(1), previous: None, rises: 0, anchor_epoch: 0, epoch: 0 }
    }

    /// Records the validation loss of the next epoch (epochs count from 1).
    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        let rose = matches!(self.previous, Some(prev) if loss > prev);
        self.previous = Some(loss);
        if rose {
            self.rises += 1;
            if self.rises >= self.patience {
                return StopDecision::Stop { restore_epoch: self.anchor_epoch };
            }
            StopDecision::Continue { snapshot: false }
        } else {
            self.rises = 0;
            self.anchor_epoch = self.epoch;
            StopDecision::Continue { snapshot: true }
        }
    }

    pub fn anchor_epoch(&self) -> usize {
        self.anchor_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Epoch whose parameters were returned.
    pub restored_epoch: usize,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains `net` in place. When `validation` is empty the training loss
/// drives early stopping.
pub fn train(net: &mut Network, training: &[Example], validation: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    if training.is_empty() {
        return Err(ExitError::Dataset("cannot train on an empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(ExitError::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, net.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut snapshot = net.params().clone();
    let mut order: Vec<usize> = (0..training.len()).collect();
    let mut report = TrainReport {
        epochs_run: 0,
        stopped_early: false,
        restored_epoch: 0,
        train_losses: Vec::new(),
        validation_losses: Vec::new(),
        steps: 0,
    };
    let mut batch: Vec<&Example> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &training[i]));
            let (loss, grad) = net.loss_and_gradient_refs(&batch, 1.0)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(net.params_mut(), &grad);
            net.enforce_hex_mask();
            report.steps += 1;
        }
        if !net.params().all_finite() {
            return Err(ExitError::Network(format!("parameters diverged in epoch {}", report.epochs_run + 1)));
        }
        report.epochs_run += 1;
        report.train_losses.push(epoch_loss / training.len() as f64);
        let monitored = if validation.is_empty() {
            net.loss(training)?
        } else {
            net.loss(validation)?
        };
        report.validation_losses.push(monitored);
        match stopper.observe(monitored) {
            StopDecision::Continue { snapshot: true } => {
                snapshot = net.params().clone();
                report.restored_epoch = report.epochs_run;
            }
            StopDecision::Continue { snapshot: false } => {}
            StopDecision::Stop { restore_epoch } => {
                report.stopped_early = true;
                report.restored_epoch = restore_epoch;
                break;
            }
        }
    }
    *net.params_mut() = snapshot;
    Ok(report)
}

/// Splits indices into (train, validation), taking `fraction` of every
/// group into validation. Groups of one sample stay in training.
pub fn stratified_split(groups: &[u64], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_group: std::collections::BTreeMap<u64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in by_group {
        members.shuffle(&mut rng);
        let k = if members.len() < 2 { 0 } else { ((members.len() as f64 * fraction).round() as usize).max(1) };
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}
