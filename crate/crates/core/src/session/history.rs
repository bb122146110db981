use serde::{Deserialize, Serialize};

use super::RetrainConfig;
use crate::embedding::Layout2D;
use crate::error::{Error, Result};
use crate::feedback::EditTransaction;
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HistoryAction {
    Edit { transaction: EditTransaction },
    Retrain { config: RetrainConfig },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub action: HistoryAction,
    /// Layout after this entry took effect.
    pub layout: Layout2D,
    /// Checkpoint in effect after this entry.
    pub checkpoint: usize,
    /// Metrics in effect after this entry; only retrain boundaries change them.
    pub metrics: MetricsReport,
    pub label: Option<String>,
    pub created_at: Option<u64>,
}

impl HistoryEntry {
    pub fn is_retrain(&self) -> bool {
        matches!(self.action, HistoryAction::Retrain { .. })
    }
}

/// Linear history with a cursor; entries past the cursor form the redo tail.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub base_layout: Layout2D,
    pub base_checkpoint: usize,
    pub base_metrics: MetricsReport,
    entries: Vec<HistoryEntry>,
    cursor: usize,
}

impl History {
    pub fn new(base_layout: Layout2D, base_checkpoint: usize, base_metrics: MetricsReport) -> Self {
        Self {
            base_layout,
            base_checkpoint,
            base_metrics,
            entries: Vec::new(),
            cursor: 0,
        }
    }

    pub(crate) fn from_parts(
        base_layout: Layout2D,
        base_checkpoint: usize,
        base_metrics: MetricsReport,
        entries: Vec<HistoryEntry>,
        cursor: usize,
    ) -> Result<Self> {
        if cursor > entries.len() {
            return Err(Error::Schema(format!(
                "history cursor {cursor} exceeds {} entries",
                entries.len()
            )));
        }
        Ok(Self {
            base_layout,
            base_checkpoint,
            base_metrics,
            entries,
            cursor,
        })
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    /// Number of applied entries.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tip(&self) -> Option<&HistoryEntry> {
        self.cursor.checked_sub(1).map(|i| &self.entries[i])
    }

    pub fn layout(&self) -> &Layout2D {
        self.tip().map_or(&self.base_layout, |e| &e.layout)
    }

    pub fn checkpoint(&self) -> usize {
        self.tip().map_or(self.base_checkpoint, |e| e.checkpoint)
    }

    pub fn metrics(&self) -> &MetricsReport {
        self.tip().map_or(&self.base_metrics, |e| &e.metrics)
    }

    /// Index one past the last applied retrain boundary (0 if none).
    pub fn round_start(&self) -> usize {
        self.entries[..self.cursor]
            .iter()
            .rposition(HistoryEntry::is_retrain)
            .map_or(0, |i| i + 1)
    }

    /// Layout at the start of the current round, before any pending edit.
    pub fn round_layout(&self) -> &Layout2D {
        match self.round_start() {
            0 => &self.base_layout,
            i => &self.entries[i - 1].layout,
        }
    }

    /// Applied edits since the last retrain boundary.
    pub fn pending(&self) -> Vec<&EditTransaction> {
        self.entries[self.round_start()..self.cursor]
            .iter()
            .filter_map(|e| match &e.action {
                HistoryAction::Edit { transaction } => Some(transaction),
                HistoryAction::Retrain { .. } => None,
            })
            .collect()
    }

    /// Appends an entry, discarding the redo tail.
    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.truncate(self.cursor);
        self.entries.push(entry);
        self.cursor = self.entries.len();
    }

    pub fn undo(&mut self) -> Result<()> {
        if self.cursor == 0 {
            return Err(Error::NoOp("undo"));
        }
        self.cursor -= 1;
        Ok(())
    }

    pub fn redo(&mut self) -> Result<()> {
        if self.cursor == self.entries.len() {
            return Err(Error::NoOp("redo"));
        }
        self.cursor += 1;
        Ok(())
    }

    /// Moves the cursor so that exactly `index` entries are applied.
    pub fn restore(&mut self, index: usize) -> Result<()> {
        if index > self.entries.len() {
            return Err(Error::Input(format!(
                "history index {index} is beyond the {} recorded entries",
                self.entries.len()
            )));
        }
        self.cursor = index;
        Ok(())
    }

    pub fn set_label(&mut self, index: usize, label: Option<String>) -> Result<()> {
        let e = self
            .entries
            .get_mut(index)
            .ok_or_else(|| Error::Input(format!("no history entry {index}")))?;
        e.label = label;
        Ok(())
    }

    /// Rebuilds the current layout from the base by re-applying every entry up
    /// to the cursor: edit moves are written in, retrain boundaries substitute
    /// their recomputed layout.
    pub fn replay(&self) -> Layout2D {
        let mut layout = self.base_layout.clone();
        for e in &self.entries[..self.cursor] {
            match &e.action {
                HistoryAction::Edit { transaction } => {
                    for mv in &transaction.moves {
                        layout.coords[mv.id] = mv.new;
                    }
                }
                HistoryAction::Retrain { .. } => layout = e.layout.clone(),
            }
        }
        layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::embedding::Method;
    use crate::feedback::{EditSource, Move};

    fn metrics(acc: f64) -> MetricsReport {
        MetricsReport {
            accuracy_before: acc,
            accuracy_after: None,
            micro_f1_per_epoch: vec![],
            roc_points: vec![],
            auc: 0.5,
            split: Split::Test,
        }
    }

    fn edit(h: &mut History, id: usize, to: [f64; 2]) {
        let mut layout = h.layout().clone();
        let old = layout.coords[id];
        layout.coords[id] = to;
        h.push(HistoryEntry {
            action: HistoryAction::Edit {
                transaction: EditTransaction::new(vec![Move { id, old, new: to }], EditSource::Human),
            },
            layout,
            checkpoint: h.checkpoint(),
            metrics: h.metrics().clone(),
            label: None,
            created_at: None,
        });
    }

    fn base() -> History {
        History::new(Layout2D::new(vec![[0.0, 0.0]; 4], Method::Isomap, 0), 0, metrics(0.5))
    }

    #[test]
    fn undo_at_base_and_redo_at_tip_are_noops() {
        let mut h = base();
        assert!(matches!(h.undo(), Err(Error::NoOp(_))));
        edit(&mut h, 1, [1.0, 2.0]);
        assert!(matches!(h.redo(), Err(Error::NoOp(_))));
    }

    #[test]
    fn push_truncates_redo_tail() {
        let mut h = base();
        edit(&mut h, 1, [1.0, 2.0]);
        edit(&mut h, 2, [3.0, 2.0]);
        h.undo().unwrap();
        edit(&mut h, 3, [5.0, 5.0]);
        assert_eq!(h.len(), 2);
        assert_eq!(h.layout().coords[2], [0.0, 0.0]);
        assert_eq!(h.replay(), *h.layout());
    }

    #[test]
    fn pending_stops_at_retrain_boundary() {
        let mut h = base();
        edit(&mut h, 1, [1.0, 2.0]);
        let layout = h.layout().clone();
        h.push(HistoryEntry {
            action: HistoryAction::Retrain {
                config: RetrainConfig::default(),
            },
            layout,
            checkpoint: 1,
            metrics: metrics(0.7),
            label: None,
            created_at: None,
        });
        assert!(h.pending().is_empty());
        edit(&mut h, 2, [0.5, 0.5]);
        assert_eq!(h.pending().len(), 1);
        assert_eq!(h.checkpoint(), 1);
        h.restore(0).unwrap();
        assert_eq!(h.checkpoint(), 0);
        assert_eq!(h.metrics().accuracy_before, 0.5);
    }
}
