use super::backprop::{Gradients, LayerGradients};
use super::MlpModel;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step_count: 0,
        }
    }
}

fn check_shapes(model: &MlpModel, grads: &Gradients, what: &str) -> Result<()> {
    let ok =
        grads.layers.len() == model.layers.len()
            && grads.layers.iter().zip(&model.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            });
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} do not mirror the model parameters"
        )))
    }
}

/// One Adam step applied in place. Nothing is modified when a gradient is
/// not finite.
pub fn adam_update(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::validation(
            "learning rate",
            format!("{lr} is not positive"),
        ));
    }
    check_shapes(model, grads, "gradients")?;
    check_shapes(model, &state.m, "first moments")?;
    check_shapes(model, &state.v, "second moments")?;
    for (j, g) in grads.layers.iter().enumerate() {
        if g.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: format!("layer{j}.weights"),
            });
        }
        if g.biases.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: format!("layer{j}.biases"),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let corr1 = 1.0 - b1.powi(t);
    let corr2 = 1.0 - b2.powi(t);

    let step = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        let LayerGradients {
            weights: mw,
            biases: mb,
        } = m;
        let LayerGradients {
            weights: vw,
            biases: vb,
        } = v;
        step(&mut layer.weights, &g.weights, mw, vw);
        step(&mut layer.biases, &g.biases, mb, vb);
    }
    Ok(())
}
