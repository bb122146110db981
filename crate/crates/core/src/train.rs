//! Minibatch training loop shared by pretraining and retraining.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{AnchorMode, LossBreakdown};
use crate::matrix::Matrix;
use crate::metrics::micro_f1;
use crate::model::{adam_step, forward, AdamConfig, ClassifierModel, OptimizerState};
use crate::objective::{composite_loss, evaluate_distance_loss, DistanceTerm, FeedbackProblem, LossWeights};

pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub anchor_mode: AnchorMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            anchor_mode: AnchorMode::Live,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let lr = self.adam.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        let w = self.weights;
        if !(w.w_cls.is_finite() && w.w_cls >= 0.0 && w.w_dis.is_finite() && w.w_dis >= 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Summary of one completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-step loss breakdowns.
    pub loss: LossBreakdown,
    /// Hinge loss over all moved items at the end of the epoch.
    pub loss_dis: f64,
    pub val_micro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub initial_val_micro_f1: Option<f64>,
    pub initial_loss_dis: f64,
    pub epochs: Vec<EpochReport>,
    /// Set when the callback stopped training early.
    pub stopped: bool,
}

/// Labelled rows used for per-epoch evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EvalSet<'a> {
    pub inputs: &'a Matrix<f32>,
    pub labels: &'a [usize],
}

/// Seeded shuffle of `0..n` cut into batches of at most `batch_size`.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.clamp(1, n.max(1))).map(<[usize]>::to_vec).collect()
}

fn evaluate(model: &ClassifierModel, set: Option<EvalSet<'_>>) -> Result<Option<f64>> {
    match set {
        Some(s) if !s.labels.is_empty() => Ok(Some(micro_f1(&forward(model, s.inputs)?.predictions(), s.labels)?)),
        _ => Ok(None),
    }
}

fn hinge_value(model: &ClassifierModel, problem: Option<&FeedbackProblem<f32>>, frozen: Option<&DistanceTerm<f32>>) -> Result<f64> {
    match (problem, frozen) {
        (_, Some(term)) => {
            let fp = forward(model, &term.moved_inputs)?;
            let (v, _) = crate::feedback::distance_loss(fp.latents(), &term.targets)?;
            Ok(v as f64)
        }
        (Some(p), None) => evaluate_distance_loss(model, p),
        (None, None) => Ok(0.0),
    }
}

/// Runs `config.epochs` epochs of Adam on the composite objective, in place.
///
/// Reference sets in `feedback` stay fixed; anchors are rebuilt from the
/// current network before every step in live mode, or once up front in frozen
/// mode. `on_epoch` sees each report and may stop training early.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut ClassifierModel,
    optimizer: &mut OptimizerState<f32>,
    inputs: &Matrix<f32>,
    labels: &[usize],
    feedback: Option<&FeedbackProblem<f32>>,
    validation: Option<EvalSet<'_>>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if inputs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} training rows but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::Precondition("training set is empty".into()));
    }
    optimizer.config = config.adam;
    let feedback = feedback.filter(|p| !p.is_empty());
    let frozen = match (feedback, config.anchor_mode) {
        (Some(p), AnchorMode::Frozen) => Some(p.resolve(model)?),
        _ => None,
    };

    let mut outcome = TrainOutcome {
        initial_val_micro_f1: evaluate(model, validation)?,
        initial_loss_dis: hinge_value(model, feedback, frozen.as_ref())?,
        epochs: Vec::with_capacity(config.epochs),
        stopped: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(inputs.rows(), config.batch_size, &mut rng);
        let (mut cls, mut dis) = (0.0, 0.0);
        for batch in &batches {
            let x = inputs.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let live;
            let term = match (feedback, &frozen) {
                (_, Some(t)) => Some(t),
                (Some(p), None) => {
                    live = p.resolve(model)?;
                    Some(&live)
                }
                (None, None) => None,
            };
            let (loss, grads) = composite_loss(model, &x, &y, term, config.weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss (cls {}, dis {})", loss.loss_cls, loss.loss_dis),
                });
            }
            adam_step(model, &grads, optimizer).map_err(|e| match e {
                Error::NonFiniteGradient { param } => Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient in {param}"),
                },
                other => other,
            })?;
            cls += loss.loss_cls;
            dis += loss.loss_dis;
        }
        if !model.all_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
        let steps = batches.len() as f64;
        let report = EpochReport {
            epoch,
            loss: crate::feedback::total_loss(cls / steps, dis / steps, config.weights.w_cls, config.weights.w_dis)?,
            loss_dis: hinge_value(model, feedback, frozen.as_ref())?,
            val_micro_f1: evaluate(model, validation)?,
        };
        let flow = on_epoch(&report);
        outcome.epochs.push(report);
        if flow.is_break() {
            outcome.stopped = true;
            break;
        }
    }
    Ok(outcome)
}
