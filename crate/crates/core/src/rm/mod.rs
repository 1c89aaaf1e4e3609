//! Linear Bradley-Terry reward model r(x, y) = θ·φ(x, y) + b.

mod features;

pub use features::Featurizer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{DataError, DatasetSplit};
use crate::par;
use crate::sim::SimError;
use crate::strategies::ResponseScorer;

#[derive(Debug, thiserror::Error)]
pub enum RmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite loss at step {step} (learning rate {lr} too high?)")]
    NonFinite { step: usize, lr: f64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RmParams {
    pub fn zeros(dim: usize) -> Self {
        RmParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn score(params: &RmParams, phi: &[f64]) -> Result<f64, RmError> {
    if phi.len() != params.dim() {
        return Err(RmError::Dimension {
            expected: params.dim(),
            got: phi.len(),
        });
    }
    Ok(dot(&params.weights, phi) + params.bias)
}

/// −log σ(Δ) without overflow for large |Δ|.
pub fn bt_loss(delta: f64) -> f64 {
    if delta > 0.0 {
        (-delta).exp().ln_1p()
    } else {
        -delta + delta.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    /// Always zero: the bias cancels in r₊ − r₋.
    pub grad_bias: f64,
}

/// Bradley-Terry loss of one pair and its gradient; `phi_pos` belongs to the
/// preferred response.
pub fn pair_loss_and_grad(params: &RmParams, phi_pos: &[f64], phi_neg: &[f64]) -> Result<PairGrad, RmError> {
    let delta = score(params, phi_pos)? - score(params, phi_neg)?;
    let coef = -sigmoid(-delta);
    Ok(PairGrad {
        loss: bt_loss(delta),
        grad_weights: phi_pos.iter().zip(phi_neg).map(|(p, n)| coef * (p - n)).collect(),
        grad_bias: 0.0,
    })
}

/// Hyper-parameters of mini-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub l2: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            max_epochs: 5,
            seed: 0,
            l2: 0.0,
            eval_every: 25,
        }
    }
}

/// Learning rates and batch sizes swept for transformer reward models. They
/// are orders of magnitude too small for the linear model and are kept only
/// for sweeps that want the same grid.
pub const TRANSFORMER_LR_GRID: [f64; 6] = [3e-6, 1e-6, 3e-5, 1e-5, 3e-4, 1e-4];
pub const TRANSFORMER_BATCH_GRID: [usize; 3] = [8, 16, 32];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RmError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RmError::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(RmError::Config("batch_size and eval_every must be >= 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(RmError::Config("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// JSON checkpoint `{dim, weights, bias, featurizer, seed, val_accuracy}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub featurizer: Featurizer,
    pub seed: u64,
    pub val_accuracy: f64,
}

impl Checkpoint {
    pub fn params(&self) -> RmParams {
        RmParams {
            weights: self.weights.clone(),
            bias: self.bias,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RmError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, json + "\n").map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, RmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        if ck.weights.len() != ck.dim || ck.dim != ck.featurizer.dim() {
            return Err(RmError::Dimension {
                expected: ck.featurizer.dim(),
                got: ck.weights.len(),
            });
        }
        Ok(ck)
    }

    /// Reward of one response.
    pub fn reward(&self, prompt: &str, response: &str) -> Result<f64, RmError> {
        let phi = self.featurizer.featurize(prompt, response)?;
        Ok(dot(&self.weights, &phi) + self.bias)
    }
}

impl ResponseScorer for Checkpoint {
    fn score(&self, prompt: &str, response: &str) -> Result<f64, String> {
        self.reward(prompt, response).map_err(|e| e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RmError {
    RmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One row of the training log CSV `step,loss,val_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Only set on evaluation steps.
    pub val_accuracy: Option<f64>,
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<(), RmError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Step at which the returned parameters were taken.
    pub best_step: usize,
}

/// Featurized (preferred, rejected) pairs of a split, in split order.
pub fn featurize_pairs(split: &DatasetSplit, featurizer: &Featurizer) -> Result<Vec<(Vec<f64>, Vec<f64>)>, RmError> {
    par::map(&split.examples, |ex| -> Result<_, RmError> {
        Ok((
            featurizer.featurize(&ex.prompt, ex.preferred())?,
            featurizer.featurize(&ex.prompt, ex.rejected())?,
        ))
    })
    .into_iter()
    .collect()
}

/// Share of pairs scored in the labelled order; exact ties count half.
pub fn pair_accuracy(params: &RmParams, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, RmError> {
    if pairs.is_empty() {
        return Err(RmError::EmptySplit("evaluation"));
    }
    let credits = par::map(pairs, |(p, n)| -> Result<f64, RmError> {
        let (sp, sn) = (score(params, p)?, score(params, n)?);
        Ok(if sp > sn {
            1.0
        } else if sp == sn {
            0.5
        } else {
            0.0
        })
    });
    let mut total = 0.0;
    for c in credits {
        total += c?;
    }
    Ok(total / pairs.len() as f64)
}

pub fn evaluate_accuracy(params: &RmParams, split: &DatasetSplit, featurizer: &Featurizer) -> Result<f64, RmError> {
    if split.is_empty() {
        return Err(RmError::EmptySplit("evaluation"));
    }
    pair_accuracy(params, &featurize_pairs(split, featurizer)?)
}

/// Mini-batch gradient descent on the mean pair loss plus `l2·‖θ‖²`, starting
/// from θ = 0. Validation accuracy is measured before the first step, every
/// `eval_every` steps and after the last step; the parameters with the best
/// validation accuracy (earliest on ties) are returned.
pub fn train(
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<TrainOutcome, RmError> {
    config.validate()?;
    featurizer.validate()?;
    if train_split.is_empty() {
        return Err(RmError::EmptySplit("training"));
    }
    if val_split.is_empty() {
        return Err(RmError::EmptySplit("validation"));
    }
    let train_pairs = featurize_pairs(train_split, featurizer)?;
    let val_pairs = featurize_pairs(val_split, featurizer)?;
    train_on_pairs(&train_pairs, &val_pairs, featurizer, config)
}

pub fn train_on_pairs(
    train_pairs: &[(Vec<f64>, Vec<f64>)],
    val_pairs: &[(Vec<f64>, Vec<f64>)],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<TrainOutcome, RmError> {
    let dim = featurizer.dim();
    let mut params = RmParams::zeros(dim);
    let mut best = (pair_accuracy(&params, val_pairs)?, params.clone(), 0);
    let mut log = vec![LogRow {
        step: 0,
        loss: mean_loss(&params, train_pairs, config.l2)?,
        val_accuracy: Some(best.0),
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut step = 0;
    let mut grad = vec![0.0; dim];
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                let (p, n) = &train_pairs[i];
                let pg = pair_loss_and_grad(&params, p, n)?;
                loss += pg.loss;
                for (g, d) in grad.iter_mut().zip(&pg.grad_weights) {
                    *g += d;
                }
            }
            let m = batch.len() as f64;
            loss = loss / m + config.l2 * dot(&params.weights, &params.weights);
            if !loss.is_finite() {
                return Err(RmError::NonFinite {
                    step,
                    lr: config.learning_rate,
                });
            }
            for (w, g) in params.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * (g / m + 2.0 * config.l2 * *w);
            }
            let mut row = LogRow {
                step,
                loss,
                val_accuracy: None,
            };
            if step % config.eval_every == 0 {
                let acc = pair_accuracy(&params, val_pairs)?;
                row.val_accuracy = Some(acc);
                if acc > best.0 {
                    best = (acc, params.clone(), step);
                }
            }
            log.push(row);
        }
    }
    if step % config.eval_every != 0 {
        let acc = pair_accuracy(&params, val_pairs)?;
        if let Some(last) = log.last_mut() {
            last.val_accuracy = Some(acc);
        }
        if acc > best.0 {
            best = (acc, params.clone(), step);
        }
    }
    let (val_accuracy, params, best_step) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            dim,
            weights: params.weights,
            bias: params.bias,
            featurizer: featurizer.clone(),
            seed: config.seed,
            val_accuracy,
        },
        log,
        best_step,
    })
}

fn mean_loss(params: &RmParams, pairs: &[(Vec<f64>, Vec<f64>)], l2: f64) -> Result<f64, RmError> {
    let mut total = 0.0;
    for (p, n) in pairs {
        total += bt_loss(score(params, p)? - score(params, n)?);
    }
    Ok(total / pairs.len().max(1) as f64 + l2 * dot(&params.weights, &params.weights))
}

/// Trains one model per `(learning_rate, batch_size)` and keeps the one with
/// the best validation accuracy (earliest grid point on ties).
pub fn train_sweep(
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    featurizer: &Featurizer,
    base: &TrainConfig,
    grid: &[(f64, usize)],
) -> Result<TrainOutcome, RmError> {
    if grid.is_empty() {
        return Err(RmError::Config("empty sweep grid".into()));
    }
    let train_pairs = featurize_pairs(train_split, featurizer)?;
    let val_pairs = featurize_pairs(val_split, featurizer)?;
    let mut best: Option<TrainOutcome> = None;
    for &(learning_rate, batch_size) in grid {
        let config = TrainConfig {
            learning_rate,
            batch_size,
            ..base.clone()
        };
        config.validate()?;
        let out = train_on_pairs(&train_pairs, &val_pairs, featurizer, &config)?;
        if best
            .as_ref()
            .is_none_or(|b| out.checkpoint.val_accuracy > b.checkpoint.val_accuracy)
        {
            best = Some(out);
        }
    }
    Ok(best.expect("grid is nonempty"))
}
