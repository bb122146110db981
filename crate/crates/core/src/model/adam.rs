use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{Error, Result};
use crate::matrix::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Gradients<T>,
    second: Gradients<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(model: &Network<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }
}

/// One bias-corrected Adam update, in place.
///
/// Fails before touching any parameter if a gradient is non-finite.
pub fn adam_step<T: Real>(
    model: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if grads.layers.len() != model.layers.len()
        || grads
            .layers
            .iter()
            .zip(&model.layers)
            .any(|(g, l)| g.weights.shape() != l.weights.shape() || g.bias.len() != l.bias.len())
    {
        return Err(Error::Shape("gradient layout does not match the model".into()));
    }
    if let Some(bad) = grads.flat().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            param: model.param_name(bad),
        });
    }

    state.step += 1;
    let cfg = state.config;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);

    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first.layers)
        .zip(&mut state.second.layers)
    {
        for (((p, &gi), mi), vi) in layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .zip(m.weights.as_mut_slice())
            .zip(v.weights.as_mut_slice())
        {
            update(p, gi, mi, vi);
        }
        for (((p, &gi), mi), vi) in layer
            .bias
            .iter_mut()
            .zip(&g.bias)
            .zip(&mut m.bias)
            .zip(&mut v.bias)
        {
            update(p, gi, mi, vi);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::{init_model, Activation, Layer, ModelConfig};

    fn scalar_model(w: f64) -> Network<f64> {
        // 1 -> 1 -> 1 network; only the first weight is exercised
        Network::from_layers(
            vec![
                Layer {
                    weights: Matrix::from_vec(1, 1, vec![w]).unwrap(),
                    bias: vec![0.0],
                },
                Layer {
                    weights: Matrix::from_vec(1, 1, vec![0.0]).unwrap(),
                    bias: vec![0.0],
                },
            ],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = scalar_model(1.0);
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[0].weights.set(0, 0, 0.37);
        adam_step(&mut model, &grads, &mut state).unwrap();
        let moved = 1.0 - model.param(0);
        assert!((moved - 1e-3).abs() < 1e-8, "moved {moved}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut model = init_model(&ModelConfig::new(4)).unwrap();
        let before = model.clone();
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        adam_step(&mut model, &Gradients::zeros_like(&before), &mut state).unwrap();
        assert_eq!(model, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut model = scalar_model(1.0);
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[1].bias[0] = f64::INFINITY;
        let err = adam_step(&mut model, &grads, &mut state).unwrap_err();
        match err {
            Error::NonFiniteGradient { param } => assert_eq!(param, "layer 1 bias[0]"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let model = init_model(&ModelConfig::new(8)).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        for (i, v) in grads.layers[0].weights.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin();
        }
        let run = || {
            let mut m = model.clone();
            let mut s = OptimizerState::new(&m, AdamConfig::default());
            for _ in 0..3 {
                adam_step(&mut m, &grads, &mut s).unwrap();
            }
            (m, s)
        };
        let (m1, s1) = run();
        let (m2, s2) = run();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
    }
}
