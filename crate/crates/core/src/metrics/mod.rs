//! Classification metrics and the 2D guidance overlays derived from a layout.

mod classification;
mod guidance;

pub use classification::{accuracy, micro_f1, roc_curve, ConfusionMatrix, RocCurve};
pub use guidance::{class_heatmap, guide_geometry, importance_scores, GuideCircle, HeatmapGrid, DEFAULT_GRID};

use serde::{Deserialize, Serialize};

use crate::dataset::Split;

/// Metrics for the current editing round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Test accuracy of the checkpoint the current round started from.
    pub accuracy_before: f64,
    /// Test accuracy after the most recent retrain; `None` until one has run.
    pub accuracy_after: Option<f64>,
    /// Validation micro-F1 after each epoch of the most recent training job.
    pub micro_f1_per_epoch: Vec<f64>,
    pub roc_points: Vec<[f64; 2]>,
    pub auc: f64,
    pub split: Split,
}
