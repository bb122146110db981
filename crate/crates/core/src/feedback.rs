//! Turning 2D point moves into a latent-space training signal.
//!
//! For a moved item `m`, positives are the `k` nearest unmoved items sharing
//! its label around the new 2D position; negatives are the `k` nearest unmoved
//! items with a different label around the old position. Their latent vectors
//! are averaged into anchors `P` and `N` with inverse squared-distance weights,
//! and the hinge `max(‖m−P‖² − ‖m−N‖² + δ, 0)` pulls `m` toward `P` and away from `N`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::Layout2D;
use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix, Real};

/// Added to squared latent distances before inverting them.
pub const ANCHOR_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EditSource {
    #[default]
    Human,
    Oracle,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub id: usize,
    pub old: [f64; 2],
    pub new: [f64; 2],
}

/// One user gesture: a single drag or a lasso translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct EditTransaction {
    pub moves: Vec<Move>,
    #[serde(default)]
    pub source: EditSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

impl EditTransaction {
    pub fn new(moves: Vec<Move>, source: EditSource) -> Self {
        Self {
            moves,
            source,
            created_at: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.moves.iter().map(|m| m.id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for mv in &self.moves {
            if !seen.insert(mv.id) {
                return Err(Error::Input(format!(
                    "item {} appears twice in one transaction",
                    mv.id
                )));
            }
            if mv.old.iter().chain(&mv.new).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "item {} has a non-finite position",
                    mv.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRefSet {
    pub moved_id: usize,
    /// Nearest same-label items to the new position, closest first.
    pub positive_ids: Vec<usize>,
    /// Nearest other-label items to the old position, closest first.
    pub negative_ids: Vec<usize>,
    pub k: usize,
}

impl TripletRefSet {
    pub fn positive_shortfall(&self) -> usize {
        self.k.saturating_sub(self.positive_ids.len())
    }

    pub fn negative_shortfall(&self) -> usize {
        self.k.saturating_sub(self.negative_ids.len())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSelection {
    /// Items with at least one positive and one negative.
    pub sets: Vec<TripletRefSet>,
    /// Moved items dropped from the distance loss.
    pub excluded: Vec<usize>,
    pub warnings: Vec<String>,
}

fn nearest(
    origin: [f64; 2],
    positions: &[[f64; 2]],
    candidates: impl Iterator<Item = usize>,
    k: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .map(|j| {
            let p = positions[j];
            let (dx, dy) = (p[0] - origin[0], p[1] - origin[1]);
            (dx * dx + dy * dy, j)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Picks positive and negative reference items for every moved item.
///
/// Moved items never serve as references. `eligible`, when given, further
/// restricts the candidate pool (the session uses it to keep test items out).
pub fn select_references(
    before: &Layout2D,
    after: &Layout2D,
    labels: &[usize],
    moved_ids: &[usize],
    k: usize,
    eligible: Option<&[bool]>,
) -> Result<ReferenceSelection> {
    let n = labels.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if before.len() != n || after.len() != n {
        return Err(Error::Shape(format!(
            "layouts cover {} and {} items but {n} labels were given",
            before.len(),
            after.len()
        )));
    }
    if let Some(mask) = eligible {
        if mask.len() != n {
            return Err(Error::Shape("eligibility mask length mismatch".into()));
        }
    }
    let mut is_moved = vec![false; n];
    for &m in moved_ids {
        if m >= n {
            return Err(Error::Input(format!("moved item {m} does not exist")));
        }
        is_moved[m] = true;
    }
    let candidate = |j: usize| !is_moved[j] && eligible.is_none_or(|mask| mask[j]);

    let mut out = ReferenceSelection::default();
    for &m in moved_ids {
        let label = labels[m];
        let positive_ids = nearest(
            after.coords[m],
            &after.coords,
            (0..n).filter(|&j| candidate(j) && labels[j] == label),
            k,
        );
        let negative_ids = nearest(
            before.coords[m],
            &before.coords,
            (0..n).filter(|&j| candidate(j) && labels[j] != label),
            k,
        );
        let set = TripletRefSet {
            moved_id: m,
            positive_ids,
            negative_ids,
            k,
        };
        if set.positive_ids.is_empty() || set.negative_ids.is_empty() {
            out.warnings.push(format!(
                "item {m} has no {} references and is excluded from the distance loss",
                if set.positive_ids.is_empty() { "positive" } else { "negative" }
            ));
            out.excluded.push(m);
            continue;
        }
        if set.positive_shortfall() > 0 || set.negative_shortfall() > 0 {
            out.warnings.push(format!(
                "item {m}: only {} positive and {} negative references available (k = {k})",
                set.positive_ids.len(),
                set.negative_ids.len()
            ));
        }
        out.sets.push(set);
    }
    Ok(out)
}

/// How reference weights are turned into an anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorWeighting {
    /// Inverse squared distances rescaled to sum to one (a convex combination).
    #[default]
    Normalized,
    /// Inverse squared distances used as-is.
    Raw,
}

/// Whether anchors follow the network during retraining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorMode {
    /// Recomputed every optimisation step from current reference latents.
    #[default]
    Live,
    /// Computed once when retraining starts.
    Frozen,
}

/// Inverse-distance weights of `refs` around `latent_m`, before any normalisation.
pub fn anchor_weights<T: Real>(latent_m: &[T], refs: &[&[T]]) -> Result<Vec<T>> {
    let eps = T::lit(ANCHOR_EPSILON);
    refs.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != latent_m.len() {
                return Err(Error::Shape(format!(
                    "reference {i} has dimension {}, moved latent has {}",
                    r.len(),
                    latent_m.len()
                )));
            }
            Ok(T::one() / (squared_distance(latent_m, r) + eps))
        })
        .collect()
}

/// Weighted combination of reference latents.
pub fn compute_anchor<T: Real>(
    latent_m: &[T],
    refs: &[&[T]],
    weighting: AnchorWeighting,
) -> Result<Vec<T>> {
    if refs.is_empty() {
        return Err(Error::Input("an anchor needs at least one reference".into()));
    }
    let mut weights = anchor_weights(latent_m, refs)?;
    if weighting == AnchorWeighting::Normalized {
        let total: T = weights.iter().copied().sum();
        for w in &mut weights {
            *w = *w / total;
        }
    }
    let mut anchor = vec![T::zero(); latent_m.len()];
    for (w, r) in weights.iter().zip(refs) {
        for (a, &v) in anchor.iter_mut().zip(r.iter()) {
            *a = *a + *w * v;
        }
    }
    Ok(anchor)
}

/// Anchors for every moved item that takes part in the distance loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackTargets<T> {
    pub anchors_p: Vec<Vec<T>>,
    pub anchors_n: Vec<Vec<T>>,
    pub delta: T,
}

impl<T: Real> FeedbackTargets<T> {
    pub fn len(&self) -> usize {
        self.anchors_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors_p.is_empty()
    }

    pub fn cast<U: Real>(&self) -> FeedbackTargets<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(f64::NAN))).collect();
        FeedbackTargets {
            anchors_p: self.anchors_p.iter().map(conv).collect(),
            anchors_n: self.anchors_n.iter().map(conv).collect(),
            delta: U::lit(self.delta.to_f64().unwrap_or(f64::NAN)),
        }
    }
}

/// Per-item `‖m−P‖² − ‖m−N‖² + δ`; the hinge is active where this is positive.
pub fn hinge_arguments<T: Real>(moved_latents: &Matrix<T>, targets: &FeedbackTargets<T>) -> Result<Vec<T>> {
    if moved_latents.rows() != targets.len() || targets.anchors_n.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} moved latents but {} anchor pairs",
            moved_latents.rows(),
            targets.len()
        )));
    }
    moved_latents
        .iter_rows()
        .zip(targets.anchors_p.iter().zip(&targets.anchors_n))
        .map(|(m, (p, n))| {
            if p.len() != m.len() || n.len() != m.len() {
                return Err(Error::Shape("anchor dimension differs from latent dimension".into()));
            }
            Ok(squared_distance(m, p) - squared_distance(m, n) + targets.delta)
        })
        .collect()
}

/// Summed hinge loss over moved items and its gradient with respect to each moved latent.
/// Anchors are constants: no gradient reaches the reference items.
pub fn distance_loss<T: Real>(
    moved_latents: &Matrix<T>,
    targets: &FeedbackTargets<T>,
) -> Result<(T, Matrix<T>)> {
    let args = hinge_arguments(moved_latents, targets)?;
    let mut grads = Matrix::zeros(moved_latents.rows(), moved_latents.cols());
    let mut loss = T::zero();
    let two = T::lit(2.0);
    for (i, &arg) in args.iter().enumerate() {
        if arg <= T::zero() {
            continue;
        }
        loss = loss + arg;
        let m = moved_latents.row(i);
        let (p, n) = (&targets.anchors_p[i], &targets.anchors_n[i]);
        for (j, g) in grads.row_mut(i).iter_mut().enumerate() {
            *g = two * (m[j] - p[j]) - two * (m[j] - n[j]);
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_cls: f64,
    pub loss_dis: f64,
    pub w_cls: f64,
    pub w_dis: f64,
    pub total: f64,
}

/// Weighted sum of the classification and distance losses.
pub fn total_loss(loss_cls: f64, loss_dis: f64, w_cls: f64, w_dis: f64) -> Result<LossBreakdown> {
    if !(w_cls >= 0.0) || !(w_dis >= 0.0) {
        return Err(Error::Config(format!(
            "loss weights must be non-negative (w_cls = {w_cls}, w_dis = {w_dis})"
        )));
    }
    Ok(LossBreakdown {
        loss_cls,
        loss_dis,
        w_cls,
        w_dis,
        total: w_cls * loss_cls + w_dis * loss_dis,
    })
}
