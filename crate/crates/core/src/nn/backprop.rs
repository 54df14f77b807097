use super::{Layer, MlpModel};
use crate::error::{Error, Result};

pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Loss gradients with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }
}

/// Per-sample activations and deltas, reused across a batch.
pub(crate) struct BackpropScratch {
    /// `acts[0]` is the input, `acts[j + 1]` the output of layer `j`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BackpropScratch {
    pub(crate) fn new(model: &MlpModel) -> Self {
        let mut acts = vec![vec![0.0; model.input_width]];
        acts.extend(model.layers.iter().map(|l| vec![0.0; l.fan_out]));
        let widest = model.widest();
        BackpropScratch {
            acts,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    /// Forward pass for one sample, keeping every layer's output.
    pub(crate) fn forward(&mut self, model: &MlpModel, input: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(input);
        for (j, layer) in model.layers.iter().enumerate() {
            let (prev, next) = self.acts.split_at_mut(j + 1);
            layer.forward_into(&prev[j], &mut next[0]);
        }
        self.acts[model.layers.len()][0]
    }

    /// Adds `d(scale * (pred - target)^2)` to `grads`. Requires a preceding
    /// [`Self::forward`] on the same sample.
    pub(crate) fn accumulate(
        &mut self,
        model: &MlpModel,
        target: f64,
        scale: f64,
        grads: &mut Gradients,
    ) {
        let depth = model.layers.len();
        let pred = self.acts[depth][0];
        let last = &model.layers[depth - 1];
        self.delta[0] =
            2.0 * scale * (pred - target) * last.activation.derivative_from_output(pred);

        for j in (0..depth).rev() {
            let layer: &Layer = &model.layers[j];
            let input = &self.acts[j];
            let delta = &self.delta[..layer.fan_out];
            let g = &mut grads.layers[j];
            for (gb, d) in g.biases.iter_mut().zip(delta) {
                *gb += d;
            }
            for (x, grow) in input.iter().zip(g.weights.chunks_exact_mut(layer.fan_out)) {
                if *x == 0.0 {
                    continue;
                }
                for (gw, d) in grow.iter_mut().zip(delta) {
                    *gw += x * d;
                }
            }
            if j == 0 {
                break;
            }
            let below = model.layers[j - 1].activation;
            for (i, wrow) in layer.weights.chunks_exact(layer.fan_out).enumerate() {
                let a = input[i];
                let deriv = below.derivative_from_output(a);
                self.delta_prev[i] = if deriv == 0.0 {
                    0.0
                } else {
                    wrow.iter().zip(delta).map(|(w, d)| w * d).sum::<f64>() * deriv
                };
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

/// Gradients of the batch-mean squared error with respect to every weight
/// and bias.
pub fn backward(model: &MlpModel, inputs: &[&[f64]], targets: &[f64]) -> Result<Gradients> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::Empty("backward batch"));
    }
    if let Some(row) = inputs.iter().find(|r| r.len() != model.input_width) {
        return Err(Error::ShapeMismatch(format!(
            "batch row has width {}, model expects {}",
            row.len(),
            model.input_width
        )));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = BackpropScratch::new(model);
    let scale = 1.0 / inputs.len() as f64;
    for (x, &t) in inputs.iter().zip(targets) {
        scratch.forward(model, x);
        scratch.accumulate(model, t, scale, &mut grads);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{architecture_specs, ArchKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch_loss(model: &MlpModel, inputs: &[&[f64]], targets: &[f64]) -> f64 {
        let preds: Vec<f64> = inputs.iter().map(|x| model.forward(x).unwrap()).collect();
        loss_mse(&preds, targets).unwrap()
    }

    #[test]
    fn mse_values() {
        assert_eq!(loss_mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[0.5], &[1.0]).unwrap(), 0.25);
        assert!((loss_mse(&[0.1, 0.4], &[0.2, 0.2]).unwrap() - 0.025).abs() < 1e-15);
        assert!(loss_mse(&[0.1], &[0.1, 0.2]).is_err());
        assert!(loss_mse(&[], &[]).is_err());
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let model = MlpModel::new(41, &architecture_specs(&[4]), ArchKind::Custom, 5).unwrap();
        let x = vec![0.4; 41];
        let target = model.forward(&x).unwrap();
        let g = backward(&model, &[&x], &[target]).unwrap();
        assert!(g.iter_values().all(|v| v == 0.0));
    }

    #[test]
    fn matches_central_differences_on_toy_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = MlpModel::new(41, &architecture_specs(&[4]), ArchKind::Custom, 9).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..41).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let inputs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let targets: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let g = backward(&model, &inputs, &targets).unwrap();
        let h = 1e-5;
        for (j, layer) in model.layers().iter().enumerate() {
            for k in 0..layer.weights().len() + layer.biases().len() {
                let bump = |delta: f64| {
                    let mut m = model.clone();
                    let l = &mut m.layers_mut()[j];
                    if k < l.weights.len() {
                        l.weights[k] += delta;
                    } else {
                        l.biases[k - l.weights.len()] += delta;
                    }
                    batch_loss(&m, &inputs, &targets)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let gl = &g.layers[j];
                let analytic = if k < gl.weights.len() {
                    gl.weights[k]
                } else {
                    gl.biases[k - gl.weights.len()]
                };
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {j} param {k}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let model = MlpModel::new(41, &architecture_specs(&[6, 3]), ArchKind::Custom, 2).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 5.0; 41]).collect();
        let once: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let twice: Vec<&[f64]> = once.iter().chain(&once).copied().collect();
        let t = [0.1, 0.9, 0.5, 0.3, 0.7];
        let t2: Vec<f64> = t.iter().chain(&t).copied().collect();
        let a = backward(&model, &once, &t).unwrap();
        let b = backward(&model, &twice, &t2).unwrap();
        for (x, y) in a.iter_values().zip(b.iter_values()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1e-300) + 1e-18);
        }
    }

    #[test]
    fn shape_errors() {
        let model = MlpModel::new(41, &architecture_specs(&[4]), ArchKind::Custom, 1).unwrap();
        let short = vec![0.0; 40];
        assert!(backward(&model, &[&short], &[0.5]).is_err());
        assert!(backward(&model, &[], &[]).is_err());
        let ok = vec![0.0; 41];
        assert!(backward(&model, &[&ok], &[0.5, 0.1]).is_err());
    }
}
