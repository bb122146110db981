use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{project, test_metrics, HistoryAction, HistoryEntry, Session};
use crate::dataset::{DatasetBundle, Split};
use crate::embedding::{procrustes_align, Layout2D};
use crate::error::{Error, Result};
use crate::feedback::{select_references, AnchorMode, AnchorWeighting, ReferenceSelection};
use crate::metrics::MetricsReport;
use crate::model::{AdamConfig, ClassifierModel, OptimizerState};
use crate::objective::{FeedbackProblem, LossWeights};
use crate::train::{train, EpochReport, EvalSet, TrainConfig, TrainOutcome, DEFAULT_BATCH_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub k: usize,
    pub delta: f64,
    pub w_cls: f64,
    pub w_dis: f64,
    pub anchor_mode: AnchorMode,
    pub anchor_weighting: AnchorWeighting,
    pub seed: u64,
    /// Permits a run with no pending edits.
    pub allow_empty: bool,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: DEFAULT_BATCH_SIZE,
            k: 5,
            delta: 1.0,
            w_cls: 1.0,
            w_dis: 0.1,
            anchor_mode: AnchorMode::Live,
            anchor_weighting: AnchorWeighting::Normalized,
            seed: 0,
            allow_empty: false,
        }
    }
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config("delta must be finite and non-negative".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            weights: LossWeights {
                w_cls: self.w_cls,
                w_dis: self.w_dis,
            },
            anchor_mode: self.anchor_mode,
            seed: self.seed,
        }
    }
}

/// Everything a retrain needs, detached from the session.
#[derive(Clone, Debug)]
pub struct RetrainJob {
    pub config: RetrainConfig,
    pub selection: ReferenceSelection,
    dataset: Arc<DatasetBundle>,
    model: ClassifierModel,
    problem: Option<FeedbackProblem<f32>>,
    previous_layout: Layout2D,
    previous_metrics: MetricsReport,
    k_graph: usize,
    checkpoint_id: usize,
    generation: u64,
}

#[derive(Clone, Debug)]
pub struct RetrainResult {
    pub config: RetrainConfig,
    pub model: ClassifierModel,
    pub layout: Layout2D,
    pub metrics: MetricsReport,
    pub outcome: TrainOutcome,
    pub selection: ReferenceSelection,
    /// Procrustes residual of the new layout against the previous one.
    pub alignment_rmse: f64,
    checkpoint_id: usize,
    generation: u64,
}

impl RetrainResult {
    pub fn checkpoint_id(&self) -> usize {
        self.checkpoint_id
    }
}

impl Session {
    /// Freezes reference sets for the pending edits and snapshots the state a
    /// retrain starts from.
    pub fn prepare_retrain(&self, config: &RetrainConfig) -> Result<RetrainJob> {
        config.validate()?;
        let pending = self.pending_edits();
        if pending.is_empty() && !config.allow_empty {
            return Err(Error::Precondition(
                "no pending edits; set allow_empty to retrain anyway".into(),
            ));
        }
        let mut moved: Vec<usize> = pending.iter().flat_map(|tx| tx.ids()).collect();
        moved.sort_unstable();
        moved.dedup();
        let dataset = self.dataset_arc();
        let eligible: Vec<bool> = dataset.splits.iter().map(|&s| s != Split::Test).collect();
        let selection = select_references(
            self.history.round_layout(),
            self.layout(),
            &dataset.labels,
            &moved,
            config.k,
            Some(&eligible),
        )?;
        for w in &selection.warnings {
            log::warn!("{w}");
        }
        if !moved.is_empty() && selection.sets.is_empty() {
            return Err(Error::Rejected(
                "none of the moved items has both positive and negative references".into(),
            ));
        }
        let problem = if selection.sets.is_empty() {
            None
        } else {
            Some(FeedbackProblem::from_references(
                &dataset.features,
                &selection.sets,
                config.delta,
                config.anchor_weighting,
            )?)
        };
        Ok(RetrainJob {
            config: config.clone(),
            selection,
            dataset,
            model: self.model().clone(),
            problem,
            previous_layout: self.layout().clone(),
            previous_metrics: self.metrics().clone(),
            k_graph: self.config.k_graph,
            checkpoint_id: self.checkpoints.len(),
            generation: self.generation,
        })
    }

    /// Installs a finished job's checkpoint, layout and metrics as a new
    /// history boundary. Fails without side effects if the session changed
    /// since the job was prepared.
    pub fn commit_retrain(&mut self, result: RetrainResult) -> Result<usize> {
        if result.generation != self.generation || result.checkpoint_id != self.checkpoints.len() {
            return Err(Error::Rejected(
                "the session changed while the retrain job was running".into(),
            ));
        }
        self.checkpoints.push(result.model);
        self.history.push(HistoryEntry {
            action: HistoryAction::Retrain { config: result.config },
            layout: result.layout,
            checkpoint: result.checkpoint_id,
            metrics: result.metrics,
            label: None,
            created_at: None,
        });
        self.generation += 1;
        Ok(result.checkpoint_id)
    }
}

impl RetrainJob {
    pub fn moved_count(&self) -> usize {
        self.problem.as_ref().map_or(0, FeedbackProblem::len)
    }

    pub fn problem(&self) -> Option<&FeedbackProblem<f32>> {
        self.problem.as_ref()
    }

    /// Trains from the snapshot checkpoint and re-projects. Touches no
    /// session state; a break from `on_epoch` aborts with an error.
    pub fn run(self, on_epoch: impl FnMut(&EpochReport) -> ControlFlow<()>) -> Result<RetrainResult> {
        let mut model = self.model;
        let ds = &self.dataset;
        let (_, x, y) = ds.subset(Split::Train);
        let (_, vx, vy) = ds.subset(Split::Validation);
        let cfg = self.config.train_config();
        let mut opt = OptimizerState::new(&model, cfg.adam);
        let outcome = train(
            &mut model,
            &mut opt,
            &x,
            &y,
            self.problem.as_ref(),
            Some(EvalSet { inputs: &vx, labels: &vy }),
            &cfg,
            on_epoch,
        )?;
        if outcome.stopped {
            return Err(Error::Rejected("retrain was cancelled".into()));
        }
        let fresh = project(&model, ds, self.k_graph, self.checkpoint_id)?;
        let (coords, rmse) = procrustes_align(&self.previous_layout.coords, &fresh.coords, false)?;
        let layout = Layout2D::new(coords, fresh.method, self.checkpoint_id);
        let (acc, roc) = test_metrics(&model, ds)?;
        let prev = &self.previous_metrics;
        let metrics = MetricsReport {
            accuracy_before: prev.accuracy_after.unwrap_or(prev.accuracy_before),
            accuracy_after: Some(acc),
            micro_f1_per_epoch: outcome.epochs.iter().filter_map(|e| e.val_micro_f1).collect(),
            roc_points: roc.points,
            auc: roc.auc,
            split: Split::Test,
        };
        Ok(RetrainResult {
            config: self.config,
            model,
            layout,
            metrics,
            outcome,
            selection: self.selection,
            alignment_rmse: rmse,
            checkpoint_id: self.checkpoint_id,
            generation: self.generation,
        })
    }
}
