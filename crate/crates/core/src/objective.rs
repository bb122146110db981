//! The retraining objective: weighted cross-entropy plus the edit hinge loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{
    compute_anchor, distance_loss, total_loss, AnchorWeighting, FeedbackTargets, LossBreakdown,
    TripletRefSet,
};
use crate::matrix::{Matrix, Real};
use crate::model::{backward, cross_entropy, forward, Gradients, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_cls: f64,
    pub w_dis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_dis: 0.1,
        }
    }
}

impl LossWeights {
    pub fn classification_only() -> Self {
        Self {
            w_cls: 1.0,
            w_dis: 0.0,
        }
    }
}

/// Moved items with anchors already resolved.
#[derive(Clone, Debug)]
pub struct DistanceTerm<T> {
    pub moved_inputs: Matrix<T>,
    pub targets: FeedbackTargets<T>,
}

/// Moved items plus the reference items their anchors are built from.
///
/// Reference index lists point into `ref_inputs` rows. Anchors are derived
/// from whatever network [`FeedbackProblem::resolve`] is given, so calling it
/// every step yields live anchors and calling it once yields frozen ones.
#[derive(Clone, Debug)]
pub struct FeedbackProblem<T> {
    pub moved_ids: Vec<usize>,
    pub moved_inputs: Matrix<T>,
    pub ref_inputs: Matrix<T>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub delta: f64,
    pub weighting: AnchorWeighting,
}

impl<T: Real> FeedbackProblem<T> {
    /// Gathers the feature rows needed by `sets` out of the full dataset matrix.
    pub fn from_references(
        features: &Matrix<T>,
        sets: &[TripletRefSet],
        delta: f64,
        weighting: AnchorWeighting,
    ) -> Result<Self> {
        let n = features.rows();
        let mut ref_ids: Vec<usize> = sets
            .iter()
            .flat_map(|s| s.positive_ids.iter().chain(&s.negative_ids).copied())
            .collect();
        ref_ids.sort_unstable();
        ref_ids.dedup();
        if let Some(&bad) = sets
            .iter()
            .map(|s| &s.moved_id)
            .chain(&ref_ids)
            .find(|&&i| i >= n)
        {
            return Err(Error::Input(format!("item {bad} is outside the dataset")));
        }
        let row_of = |id: usize| ref_ids.binary_search(&id).expect("collected above");
        let moved_ids: Vec<usize> = sets.iter().map(|s| s.moved_id).collect();
        Ok(Self {
            moved_inputs: features.select_rows(&moved_ids),
            moved_ids,
            ref_inputs: features.select_rows(&ref_ids),
            positives: sets
                .iter()
                .map(|s| s.positive_ids.iter().map(|&i| row_of(i)).collect())
                .collect(),
            negatives: sets
                .iter()
                .map(|s| s.negative_ids.iter().map(|&i| row_of(i)).collect())
                .collect(),
            delta,
            weighting,
        })
    }

    pub fn len(&self) -> usize {
        self.moved_inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Computes anchors from `model`'s current latents. The result carries no
    /// dependence on the parameters (stop-gradient).
    pub fn resolve(&self, model: &Network<T>) -> Result<DistanceTerm<T>> {
        let moved = forward(model, &self.moved_inputs)?;
        let refs = forward(model, &self.ref_inputs)?;
        let ref_latents = refs.latents();
        let build = |m: &[T], rows: &[usize]| {
            let views: Vec<&[T]> = rows.iter().map(|&r| ref_latents.row(r)).collect();
            compute_anchor(m, &views, self.weighting)
        };
        let mut anchors_p = Vec::with_capacity(self.len());
        let mut anchors_n = Vec::with_capacity(self.len());
        for (i, m) in moved.latents().iter_rows().enumerate() {
            anchors_p.push(build(m, &self.positives[i])?);
            anchors_n.push(build(m, &self.negatives[i])?);
        }
        Ok(DistanceTerm {
            moved_inputs: self.moved_inputs.clone(),
            targets: FeedbackTargets {
                anchors_p,
                anchors_n,
                delta: T::lit(self.delta),
            },
        })
    }

    pub fn cast<U: Real>(&self) -> FeedbackProblem<U> {
        FeedbackProblem {
            moved_ids: self.moved_ids.clone(),
            moved_inputs: self.moved_inputs.cast(),
            ref_inputs: self.ref_inputs.cast(),
            positives: self.positives.clone(),
            negatives: self.negatives.clone(),
            delta: self.delta,
            weighting: self.weighting,
        }
    }
}

/// Value of the hinge loss alone for the given network, with anchors resolved against it.
pub fn evaluate_distance_loss<T: Real>(model: &Network<T>, problem: &FeedbackProblem<T>) -> Result<f64> {
    if problem.is_empty() {
        return Ok(0.0);
    }
    let term = problem.resolve(model)?;
    let fp = forward(model, &term.moved_inputs)?;
    let (loss, _) = distance_loss(fp.latents(), &term.targets)?;
    Ok(loss.to_f64().unwrap_or(f64::NAN))
}

/// Loss breakdown and parameter gradients of `w_cls·CE(batch) + w_dis·hinge(moved)`.
///
/// A term whose weight is zero contributes no gradient at all, so a zero
/// distance weight reproduces plain cross-entropy training exactly.
pub fn composite_loss<T: Real>(
    model: &Network<T>,
    inputs: &Matrix<T>,
    labels: &[usize],
    distance: Option<&DistanceTerm<T>>,
    weights: LossWeights,
) -> Result<(LossBreakdown, Gradients<T>)> {
    let mut grads = Gradients::zeros_like(model);
    let mut loss_cls = 0.0;
    if !labels.is_empty() {
        let fp = forward(model, inputs)?;
        let (ce, mut grad_logits) = cross_entropy(&fp.probs, labels)?;
        loss_cls = ce.to_f64().unwrap_or(f64::NAN);
        if weights.w_cls != 0.0 {
            grad_logits.scale(T::lit(weights.w_cls));
            grads = backward(model, &fp, &grad_logits, None)?;
        }
    }
    let mut loss_dis = 0.0;
    if let Some(term) = distance.filter(|t| !t.targets.is_empty()) {
        let fp = forward(model, &term.moved_inputs)?;
        let (hinge, mut grad_latents) = distance_loss(fp.latents(), &term.targets)?;
        loss_dis = hinge.to_f64().unwrap_or(f64::NAN);
        if weights.w_dis != 0.0 {
            grad_latents.scale(T::lit(weights.w_dis));
            let zero_logits = Matrix::zeros(fp.logits.rows(), fp.logits.cols());
            let g = backward(model, &fp, &zero_logits, Some(&grad_latents))?;
            grads.add_assign(&g);
        }
    }
    Ok((total_loss(loss_cls, loss_dis, weights.w_cls, weights.w_dis)?, grads))
}
