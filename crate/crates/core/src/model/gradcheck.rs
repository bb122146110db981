use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward, ClassifierModel, Network};
use crate::error::Result;
use crate::feedback::hinge_arguments;
use crate::matrix::Matrix;
use crate::objective::{composite_loss, DistanceTerm, FeedbackProblem, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because the ±h probe crossed a ReLU or hinge kink.
    pub skipped_kinks: usize,
}

/// Denominator floor for relative errors, so that near-zero gradients are
/// compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// Piecewise-linear regime of the objective: ReLU masks and active hinges.
fn regime(model: &Network<f64>, inputs: &Matrix<f64>, term: Option<&DistanceTerm<f64>>) -> Result<Vec<bool>> {
    let mut sig = Vec::new();
    let mut push = |fp: &super::ForwardPass<f64>| {
        for h in &fp.hidden {
            sig.extend(h.as_slice().iter().map(|&a| a > 0.0));
        }
    };
    if inputs.rows() > 0 {
        push(&forward(model, inputs)?);
    }
    if let Some(t) = term {
        let fp = forward(model, &t.moved_inputs)?;
        push(&fp);
        sig.extend(hinge_arguments(fp.latents(), &t.targets)?.iter().map(|&a| a > 0.0));
    }
    Ok(sig)
}

/// Compares the analytic gradient of the composite loss with central finite
/// differences on a random sample of parameters.
///
/// Runs in `f64` on a copy of `model`. Anchors are resolved once against the
/// unperturbed network and then held fixed, matching the stop-gradient
/// treatment in training. Probes that change the activation regime are skipped.
pub fn gradient_check(
    model: &ClassifierModel,
    inputs: &Matrix<f32>,
    labels: &[usize],
    feedback: Option<&FeedbackProblem<f32>>,
    weights: LossWeights,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let net: Network<f64> = model.cast();
    let x = inputs.cast::<f64>();
    let term = match feedback {
        Some(p) if !p.is_empty() => Some(p.cast::<f64>().resolve(&net)?),
        _ => None,
    };
    let (_, grads) = composite_loss(&net, &x, labels, term.as_ref(), weights)?;
    let analytic = grads.flat();
    let base_regime = regime(&net, &x, term.as_ref())?;

    let total = net.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, samples.min(total));

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let loss_at = |m: &Network<f64>| -> Result<f64> {
        Ok(composite_loss(m, &x, labels, term.as_ref(), weights)?.0.total)
    };
    for idx in picks.iter() {
        let theta = net.param(idx);
        let h = 1e-4 * theta.abs().max(1.0);
        let mut plus = net.clone();
        *plus.param_mut(idx) = theta + h;
        let mut minus = net.clone();
        *minus.param_mut(idx) = theta - h;
        if regime(&plus, &x, term.as_ref())? != base_regime
            || regime(&minus, &x, term.as_ref())? != base_regime
        {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
