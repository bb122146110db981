//! Session state: dataset, checkpoints, the editable layout and its history.
//!
//! All mutations go through `&mut Session`. Retraining is split into
//! [`Session::prepare_retrain`], [`RetrainJob::run`] and
//! [`Session::commit_retrain`] so the expensive middle step can run on a
//! snapshot while readers keep seeing the previous state.

mod history;
mod oracle;
mod persist;
mod retrain;

pub use history::{History, HistoryAction, HistoryEntry};
pub use oracle::{oracle_edit, OracleOptions, OraclePolicy};
pub use persist::{load_session, read_edit_script, save_session, write_edit_script, ScriptLine, SESSION_VERSION};
pub use retrain::{RetrainConfig, RetrainJob, RetrainResult};

use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Split};
use crate::embedding::{isomap_layout, Layout2D, DEFAULT_K_GRAPH};
use crate::error::{Error, Result};
use crate::feedback::EditTransaction;
use crate::matrix::Matrix;
use crate::metrics::{accuracy, roc_curve, MetricsReport};
use crate::model::{forward, init_model, ClassifierModel, ForwardPass, ModelConfig, OptimizerState};
use crate::objective::LossWeights;
use crate::train::{train, EpochReport, EvalSet, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub model: ModelConfig,
    pub k_graph: usize,
    pub pretrain: TrainConfig,
}

impl SessionConfig {
    /// Defaults for a dataset of the given input width: CE-only pretraining.
    pub fn new(input_dim: usize, num_classes: usize, epochs: usize, seed: u64) -> Self {
        let mut model = ModelConfig::new(input_dim);
        model.num_classes = num_classes;
        model.seed = seed;
        Self {
            model,
            k_graph: DEFAULT_K_GRAPH,
            pretrain: TrainConfig {
                epochs,
                weights: LossWeights::classification_only(),
                seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Session {
    dataset: Arc<DatasetBundle>,
    config: SessionConfig,
    checkpoints: Vec<ClassifierModel>,
    history: History,
    visibility: Vec<bool>,
    /// Bumped on every mutation; lets a finished job detect a stale snapshot.
    generation: u64,
}

/// Test accuracy and ROC of a checkpoint.
pub(crate) fn test_metrics(model: &ClassifierModel, dataset: &DatasetBundle) -> Result<(f64, crate::metrics::RocCurve)> {
    let (_, x, y) = dataset.subset(Split::Test);
    if y.is_empty() {
        return Err(Error::Precondition("the test split is empty".into()));
    }
    let fp = forward(model, &x)?;
    let acc = accuracy(&fp.predictions(), &y)?;
    let roc = roc_curve(&fp.probs.cast::<f64>(), &y)?;
    Ok((acc, roc))
}

pub(crate) fn project(model: &ClassifierModel, dataset: &DatasetBundle, k_graph: usize, epoch: usize) -> Result<Layout2D> {
    let fp = forward(model, &dataset.features)?;
    isomap_layout(&fp.latents().cast::<f64>(), k_graph, epoch)
}

impl Session {
    /// Trains a fresh classifier with cross-entropy only and projects all items.
    pub fn pretrain(
        dataset: DatasetBundle,
        config: SessionConfig,
        on_epoch: impl FnMut(&EpochReport) -> ControlFlow<()>,
    ) -> Result<(Self, TrainOutcome)> {
        dataset.validate()?;
        if config.model.input_dim != dataset.input_dim() || config.model.num_classes != dataset.num_classes() {
            return Err(Error::Config(format!(
                "model expects {} inputs and {} classes, dataset has {} and {}",
                config.model.input_dim,
                config.model.num_classes,
                dataset.input_dim(),
                dataset.num_classes()
            )));
        }
        let mut model = init_model(&config.model)?;
        let (_, x, y) = dataset.subset(Split::Train);
        let (_, vx, vy) = dataset.subset(Split::Validation);
        let mut opt = OptimizerState::new(&model, config.pretrain.adam);
        let validation = EvalSet { inputs: &vx, labels: &vy };
        let outcome = train(&mut model, &mut opt, &x, &y, None, Some(validation), &config.pretrain, on_epoch)?;
        let layout = project(&model, &dataset, config.k_graph, 0)?;
        let (acc, roc) = test_metrics(&model, &dataset)?;
        let metrics = MetricsReport {
            accuracy_before: acc,
            accuracy_after: None,
            micro_f1_per_epoch: outcome.epochs.iter().filter_map(|e| e.val_micro_f1).collect(),
            roc_points: roc.points,
            auc: roc.auc,
            split: Split::Test,
        };
        let classes = dataset.num_classes();
        let session = Self {
            dataset: Arc::new(dataset),
            config,
            checkpoints: vec![model],
            history: History::new(layout, 0, metrics),
            visibility: vec![true; classes],
            generation: 0,
        };
        Ok((session, outcome))
    }

    pub(crate) fn from_parts(
        dataset: DatasetBundle,
        config: SessionConfig,
        checkpoints: Vec<ClassifierModel>,
        history: History,
        visibility: Vec<bool>,
    ) -> Result<Self> {
        let n = dataset.len();
        if history.base_layout.len() != n || history.entries().iter().any(|e| e.layout.len() != n) {
            return Err(Error::Schema("a stored layout does not cover every item".into()));
        }
        if history.base_checkpoint >= checkpoints.len()
            || history.entries().iter().any(|e| e.checkpoint >= checkpoints.len())
        {
            return Err(Error::Schema("history refers to a missing checkpoint".into()));
        }
        if visibility.len() != dataset.num_classes() {
            return Err(Error::Schema("visibility flags do not match the class count".into()));
        }
        Ok(Self {
            dataset: Arc::new(dataset),
            config,
            checkpoints,
            history,
            visibility,
            generation: 0,
        })
    }

    pub fn dataset(&self) -> &DatasetBundle {
        &self.dataset
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn checkpoints(&self) -> &[ClassifierModel] {
        &self.checkpoints
    }

    pub fn checkpoint_id(&self) -> usize {
        self.history.checkpoint()
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.checkpoints[self.checkpoint_id()]
    }

    pub fn layout(&self) -> &Layout2D {
        self.history.layout()
    }

    pub fn metrics(&self) -> &MetricsReport {
        self.history.metrics()
    }

    pub fn pending_edits(&self) -> Vec<&EditTransaction> {
        self.history.pending()
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_visibility(&mut self, class: usize, visible: bool) -> Result<()> {
        let slot = self
            .visibility
            .get_mut(class)
            .ok_or_else(|| Error::Input(format!("class {class} does not exist")))?;
        *slot = visible;
        self.generation += 1;
        Ok(())
    }

    /// Forward pass of the current checkpoint over every item.
    pub fn forward_all(&self) -> Result<ForwardPass<f32>> {
        forward(self.model(), &self.dataset.features)
    }

    pub fn predictions(&self) -> Result<Vec<usize>> {
        Ok(self.forward_all()?.predictions())
    }

    /// Applies a set of moves. The recorded old positions are taken from the
    /// current layout. Returns the new history index, or `None` for an empty
    /// transaction, which leaves the session untouched.
    pub fn apply_edits(&mut self, mut tx: EditTransaction) -> Result<Option<usize>> {
        tx.validate()?;
        if tx.is_empty() {
            return Ok(None);
        }
        let n = self.dataset.len();
        for mv in &tx.moves {
            if mv.id >= n {
                return Err(Error::Input(format!("item {} does not exist", mv.id)));
            }
            if self.dataset.splits[mv.id] == Split::Test {
                return Err(Error::Rejected(format!(
                    "item {} belongs to the test split; test items cannot be moved so that test metrics stay honest",
                    mv.id
                )));
            }
        }
        let mut layout = self.layout().clone();
        for mv in &mut tx.moves {
            mv.old = layout.coords[mv.id];
            layout.coords[mv.id] = mv.new;
        }
        let created_at = tx.created_at;
        self.history.push(HistoryEntry {
            action: HistoryAction::Edit { transaction: tx },
            layout,
            checkpoint: self.history.checkpoint(),
            metrics: self.history.metrics().clone(),
            label: None,
            created_at,
        });
        self.generation += 1;
        Ok(Some(self.history.cursor() - 1))
    }

    pub fn undo(&mut self) -> Result<()> {
        self.history.undo()?;
        self.generation += 1;
        Ok(())
    }

    pub fn redo(&mut self) -> Result<()> {
        self.history.redo()?;
        self.generation += 1;
        Ok(())
    }

    /// Moves the cursor so that the first `index` history entries are applied.
    pub fn restore(&mut self, index: usize) -> Result<()> {
        self.history.restore(index)?;
        self.generation += 1;
        Ok(())
    }

    /// Drops the pending edits by returning to the last retrain boundary.
    pub fn reset(&mut self) -> Result<()> {
        let start = self.history.round_start();
        if start == self.history.cursor() {
            return Err(Error::NoOp("reset"));
        }
        self.restore(start)
    }

    pub fn set_label(&mut self, index: usize, label: Option<String>) -> Result<()> {
        self.history.set_label(index, label)?;
        self.generation += 1;
        Ok(())
    }

    /// Proposes a scripted edit for the current state.
    pub fn oracle_edit(&self, policy: OraclePolicy, options: &OracleOptions) -> Result<EditTransaction> {
        oracle_edit(self, policy, options)
    }

    /// Runs a retrain job to completion on the calling thread.
    pub fn retrain(
        &mut self,
        config: &RetrainConfig,
        on_epoch: impl FnMut(&EpochReport) -> ControlFlow<()>,
    ) -> Result<RetrainResult> {
        let job = self.prepare_retrain(config)?;
        let result = job.run(on_epoch)?;
        self.commit_retrain(result.clone())?;
        Ok(result)
    }

    /// Latent vectors of every item under the current checkpoint.
    pub fn latents(&self) -> Result<Matrix<f64>> {
        Ok(self.forward_all()?.latents().cast())
    }

    /// Discards every checkpoint and history entry after the base state.
    pub fn rewind_to_base(&mut self) {
        let base = self.history.base_checkpoint;
        self.checkpoints.truncate(base + 1);
        self.history = History::new(
            self.history.base_layout.clone(),
            base,
            self.history.base_metrics.clone(),
        );
        self.generation += 1;
    }

    pub(crate) fn dataset_arc(&self) -> Arc<DatasetBundle> {
        Arc::clone(&self.dataset)
    }
}
