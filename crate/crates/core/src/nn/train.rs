use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Optimizer, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Minibatch optimization settings shared by the prior and translator trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Hard cap on the total step count, resumed steps included.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 8,
            lr: 1e-3,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        let full = self.epochs as u64 * self.steps_per_epoch(dataset_len);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Parameters plus optimizer state: enough to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: Vec<f32>,
    pub optimizer: OptimizerState,
    pub step: u64,
}

impl TrainState {
    pub fn new(theta: Vec<f32>) -> Self {
        Self {
            theta,
            optimizer: OptimizerState::default(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Minibatch loss before each update, indexed from the first step of this run.
    pub step_losses: Vec<f64>,
    /// Mean step loss for every epoch touched by this run.
    pub epoch_losses: Vec<f64>,
}

/// Visiting order of the dataset in `epoch`.
pub fn epoch_permutation(seed: u64, epoch: u64, dataset_len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dataset_len).collect();
    perm.shuffle(&mut rng::stream(seed, &[tag::TRAIN, epoch]));
    perm
}

/// Drives `state` forward with minibatch gradient steps.
///
/// `sample_grad(theta, step, slot, index)` returns the loss and gradient of
/// one dataset item; `slot` is its position in the minibatch. Per-sample work
/// runs in parallel but is reduced in minibatch order, so results do not
/// depend on the thread count.
pub fn run<G>(dataset_len: usize, config: &TrainConfig, mut state: TrainState, sample_grad: G) -> Result<(TrainState, TrainLog)>
where
    G: Fn(&[f32], u64, usize, usize) -> Result<(f64, Vec<f32>)> + Sync,
{
    config.validate()?;
    if dataset_len == 0 {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let n_params = state.theta.len();
    if config.optimizer == OptimizerKind::Adam && state.optimizer.first_moment.len() != n_params {
        if state.step != 0 {
            return Err(Error::Config("resumed Adam state does not match the parameter count".into()));
        }
        state.optimizer = Optimizer::new(OptimizerKind::Adam, config.lr, n_params).state().clone();
    }
    let mut optimizer = Optimizer::with_state(config.optimizer, config.lr, state.optimizer);
    let per_epoch = config.steps_per_epoch(dataset_len);
    let total = config.total_steps(dataset_len);
    let mut log = TrainLog::default();
    let mut theta = state.theta;
    let mut perm: Vec<usize> = Vec::new();
    let mut perm_epoch = u64::MAX;
    let (mut epoch_sum, mut epoch_n) = (0.0, 0usize);

    for step in state.step..total {
        let epoch = step / per_epoch;
        if epoch != perm_epoch {
            if epoch_n > 0 {
                log.epoch_losses.push(epoch_sum / epoch_n as f64);
                (epoch_sum, epoch_n) = (0.0, 0);
            }
            perm = epoch_permutation(config.seed, epoch, dataset_len);
            perm_epoch = epoch;
        }
        let b = (step % per_epoch) as usize * config.batch_size;
        let batch = &perm[b..(b + config.batch_size).min(dataset_len)];
        let results: Vec<(f64, Vec<f32>)> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| sample_grad(&theta, step, slot, i))
            .collect::<Result<_>>()?;

        let inv = 1.0 / batch.len() as f64;
        let loss = results.iter().map(|r| r.0).sum::<f64>() * inv;
        let mut grad = vec![0.0f32; n_params];
        for (_, g) in &results {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += *b;
            }
        }
        grad.iter_mut().for_each(|g| *g *= inv as f32);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: step as usize,
                last_finite: theta,
            });
        }
        let before = theta.clone();
        optimizer.step(&mut theta, &grad);
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                step: step as usize,
                last_finite: before,
            });
        }
        log.step_losses.push(loss);
        epoch_sum += loss;
        epoch_n += 1;
    }
    if epoch_n > 0 {
        log.epoch_losses.push(epoch_sum / epoch_n as f64);
    }
    Ok((
        TrainState {
            theta,
            optimizer: optimizer.state().clone(),
            step: total.max(state.step),
        },
        log,
    ))
}
