use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Session;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::feedback::{EditSource, EditTransaction, Move};
use crate::metrics::{guide_geometry, ConfusionMatrix};

/// Scripted stand-ins for the strategies human editors use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePolicy {
    /// Mispredicted items go to their true class centroid.
    ToTrueCentroid,
    /// The most confused class pair is pushed apart along its centroid axis.
    SeparateMixed,
    /// Every item moves halfway toward its class centroid.
    AggregateWithinClass,
}

impl FromStr for OraclePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_true_centroid" => Ok(Self::ToTrueCentroid),
            "separate_mixed" => Ok(Self::SeparateMixed),
            "aggregate_within_class" => Ok(Self::AggregateWithinClass),
            other => Err(Error::Config(format!("unknown oracle policy {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub seed: u64,
    /// Jitter radius as a fraction of the target class radius.
    pub jitter: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { seed: 0, jitter: 0.05 }
    }
}

/// Builds the transaction a policy would submit. Only train and validation
/// items are ever moved.
pub fn oracle_edit(session: &Session, policy: OraclePolicy, options: &OracleOptions) -> Result<EditTransaction> {
    let ds = session.dataset();
    let layout = session.layout();
    let guides = guide_geometry(layout, &ds.labels, ds.num_classes())?;
    let editable: Vec<usize> = (0..ds.len()).filter(|&i| ds.splits[i] != Split::Test).collect();
    let predictions = session.predictions()?;
    let mut moves = Vec::new();
    let mut push = |id: usize, new: [f64; 2]| {
        moves.push(Move {
            id,
            old: layout.coords[id],
            new,
        })
    };

    match policy {
        OraclePolicy::ToTrueCentroid => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            for &id in &editable {
                if predictions[id] == ds.labels[id] {
                    continue;
                }
                let g = &guides[ds.labels[id]];
                let r = options.jitter * g.radius * rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                push(id, [g.centroid[0] + r * angle.cos(), g.centroid[1] + r * angle.sin()]);
            }
        }
        OraclePolicy::SeparateMixed => {
            let ed_pred: Vec<usize> = editable.iter().map(|&i| predictions[i]).collect();
            let ed_true: Vec<usize> = editable.iter().map(|&i| ds.labels[i]).collect();
            if ed_true.is_empty() {
                return Ok(EditTransaction::new(moves, EditSource::Oracle));
            }
            let cm = ConfusionMatrix::new(&ed_pred, &ed_true)?;
            let size = cm.counts.len();
            let mut best: Option<(u64, usize, usize)> = None;
            for a in 0..size {
                for b in a + 1..size {
                    let c = cm.counts[a][b] + cm.counts[b][a];
                    if c > 0 && best.is_none_or(|(m, _, _)| c > m) {
                        best = Some((c, a, b));
                    }
                }
            }
            if let Some((_, a, b)) = best {
                let (ca, cb) = (guides[a].centroid, guides[b].centroid);
                let axis = [cb[0] - ca[0], cb[1] - ca[1]];
                let len = axis[0].hypot(axis[1]);
                let u = if len > 0.0 { [axis[0] / len, axis[1] / len] } else { [1.0, 0.0] };
                let shift = 0.5 * (guides[a].radius + guides[b].radius);
                for &id in &editable {
                    let sign = match ds.labels[id] {
                        l if l == a => -1.0,
                        l if l == b => 1.0,
                        _ => continue,
                    };
                    let p = layout.coords[id];
                    push(id, [p[0] + sign * shift * u[0], p[1] + sign * shift * u[1]]);
                }
            }
        }
        OraclePolicy::AggregateWithinClass => {
            for &id in &editable {
                let c = guides[ds.labels[id]].centroid;
                let p = layout.coords[id];
                push(id, [p[0] + 0.5 * (c[0] - p[0]), p[1] + 0.5 * (c[1] - p[1])]);
            }
        }
    }
    Ok(EditTransaction::new(moves, EditSource::Oracle))
}
