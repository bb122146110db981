use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::embedding::Method;
use crate::feedback::{AnchorMode, EditSource, EditTransaction, Move};
use crate::session::{HistoryAction, HistoryEntry, RetrainConfig};

/// One workspace point as the client draws it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDto {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub predicted: usize,
    pub label: usize,
    pub importance: f64,
    pub mispredicted: bool,
    pub visible: bool,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatusDto {
    pub id: u64,
    pub state: JobState,
    /// Completed epochs.
    pub epoch: usize,
    pub epochs: usize,
    pub micro_f1: Vec<f64>,
    pub loss_dis: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDto {
    pub id: usize,
    pub name: String,
    pub color: String,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDto {
    pub items: usize,
    pub classes: Vec<ClassDto>,
    pub checkpoint: usize,
    pub checkpoints: usize,
    pub method: Method,
    pub cursor: usize,
    pub history_len: usize,
    pub pending_edits: usize,
    pub accuracy_before: f64,
    pub accuracy_after: Option<f64>,
    pub running_job: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryItemDto {
    pub index: usize,
    pub kind: String,
    pub moves: usize,
    pub checkpoint: usize,
    pub applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

impl HistoryItemDto {
    pub(crate) fn new(index: usize, entry: &HistoryEntry, cursor: usize) -> Self {
        let (kind, moves) = match &entry.action {
            HistoryAction::Edit { transaction } => ("edit", transaction.moves.len()),
            HistoryAction::Retrain { .. } => ("retrain", 0),
        };
        Self {
            index,
            kind: kind.into(),
            moves,
            checkpoint: entry.checkpoint,
            applied: index < cursor,
            label: entry.label.clone(),
            created_at: entry.created_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryDto {
    pub cursor: usize,
    pub entries: Vec<HistoryItemDto>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveDto {
    pub id: usize,
    /// Ignored; the server records the current position.
    #[serde(default)]
    pub old: Option<[f64; 2]>,
    pub new: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub moves: Vec<MoveDto>,
    #[serde(default)]
    pub source: EditSource,
}

impl EditRequest {
    pub(crate) fn into_transaction(self, created_at: Option<u64>) -> EditTransaction {
        EditTransaction {
            moves: self
                .moves
                .into_iter()
                .map(|m| Move {
                    id: m.id,
                    old: m.old.unwrap_or([0.0, 0.0]),
                    new: m.new,
                })
                .collect(),
            source: self.source,
            created_at,
        }
    }
}

/// Body of `POST /api/retrain`; omitted fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRequest {
    pub epochs: Option<usize>,
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub w_cls: Option<f64>,
    pub w_dis: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub anchor_mode: Option<AnchorMode>,
    #[serde(default)]
    pub allow_empty: bool,
}

impl RetrainRequest {
    pub fn into_config(self) -> RetrainConfig {
        let d = RetrainConfig::default();
        RetrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            k: self.k.unwrap_or(d.k),
            delta: self.delta.unwrap_or(d.delta),
            w_cls: self.w_cls.unwrap_or(d.w_cls),
            w_dis: self.w_dis.unwrap_or(d.w_dis),
            anchor_mode: self.anchor_mode.unwrap_or(d.anchor_mode),
            anchor_weighting: d.anchor_weighting,
            seed: self.seed.unwrap_or(d.seed),
            allow_empty: self.allow_empty,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
