//! A small dense feed-forward network mapping one row of filter-bank
//! outputs to a delivery-ratio forecast.
//!
//! Weights of layer `j` are stored row-major with shape
//! `(fan_in, fan_out)`, so `out[k] = b[k] + sum_i in[i] * w[i * fan_out + k]`.
//! The last layer is always a single sigmoid unit, which keeps every
//! prediction inside `[0, 1]` without clamping.

mod adam;
mod backprop;
mod io;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_update, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use backprop::{backward, loss_mse, Gradients, LayerGradients};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION};
pub use train::{epoch_permutation, learning_rate, train, Dataset, TrainConfig, TrainReport};

use crate::ema::{AlphaGrid, FeatureMatrix, GRID_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::validation(
                "activation",
                format!("unknown activation {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        LayerSpec { width, activation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchKind {
    Hourglass,
    Pyramid,
    Custom,
}

/// Hidden widths of the bottleneck network: narrow, then widen again.
pub const HOURGLASS_HIDDEN: [usize; 3] = [32, 8, 32];
/// Hidden widths of the funnel network: steadily narrowing.
pub const PYRAMID_HIDDEN: [usize; 3] = [32, 16, 8];

impl ArchKind {
    pub fn hidden_widths(self) -> Option<&'static [usize]> {
        match self {
            ArchKind::Hourglass => Some(&HOURGLASS_HIDDEN),
            ArchKind::Pyramid => Some(&PYRAMID_HIDDEN),
            ArchKind::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Hourglass => "hourglass",
            ArchKind::Pyramid => "pyramid",
            ArchKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hourglass" => Ok(ArchKind::Hourglass),
            "pyramid" => Ok(ArchKind::Pyramid),
            "custom" => Ok(ArchKind::Custom),
            other => Err(Error::validation(
                "architecture",
                format!("unknown architecture {other:?}"),
            )),
        }
    }
}

/// How the model's input features were produced, so prediction-time
/// feature extraction can reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub grid: AlphaGrid,
    pub init_state: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) fan_in: usize,
    pub(crate) fan_out: usize,
    pub(crate) activation: Activation,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Layer {
            fan_in,
            fan_out,
            activation,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.fan_in, self.fan_out)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    pub(crate) fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        for (x, row) in input.iter().zip(self.weights.chunks_exact(self.fan_out)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        for o in out.iter_mut() {
            *o = self.activation.apply(*o);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_width: usize,
    layers: Vec<Layer>,
    arch: ArchKind,
    provenance: Option<Provenance>,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn new(input_width: usize, specs: &[LayerSpec], arch: ArchKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MlpModel::zeros(input_width, specs, arch)?;
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    /// All weights and biases zero.
    pub fn zeros(input_width: usize, specs: &[LayerSpec], arch: ArchKind) -> Result<Self> {
        let layers = chain_layers(input_width, specs)?
            .into_iter()
            .map(|(fan_in, spec)| Layer::zeros(fan_in, spec.width, spec.activation))
            .collect();
        Ok(MlpModel {
            input_width,
            layers,
            arch,
            provenance: None,
        })
    }

    pub(crate) fn from_layers(
        input_width: usize,
        layers: Vec<Layer>,
        arch: ArchKind,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec::new(l.fan_out, l.activation))
            .collect();
        for ((fan_in, _), layer) in chain_layers(input_width, &specs)?.iter().zip(&layers) {
            if layer.fan_in != *fan_in
                || layer.weights.len() != layer.fan_in * layer.fan_out
                || layer.biases.len() != layer.fan_out
            {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}x{} does not chain from width {fan_in}",
                    layer.fan_in, layer.fan_out
                )));
            }
        }
        Ok(MlpModel {
            input_width,
            layers,
            arch,
            provenance,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn arch(&self) -> ArchKind {
        self.arch
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.fan_out, l.activation))
            .collect()
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = Some(provenance);
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn widest(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_out)
            .chain([self.input_width])
            .max()
            .unwrap_or(1)
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "input has width {}, model expects {}",
                input.len(),
                self.input_width
            )));
        }
        let mut scratch = ForwardScratch::new(self);
        Ok(scratch.run(self, input))
    }

    pub fn predict_series(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.width() != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "features have width {}, model expects {}",
                features.width(),
                self.input_width
            )));
        }
        let mut scratch = ForwardScratch::new(self);
        Ok(features.iter_rows().map(|r| scratch.run(self, r)).collect())
    }
}

fn chain_layers(input_width: usize, specs: &[LayerSpec]) -> Result<Vec<(usize, LayerSpec)>> {
    if input_width == 0 {
        return Err(Error::validation("model", "input width must be at least 1"));
    }
    match specs.last() {
        None => return Err(Error::validation("model", "at least one layer is required")),
        Some(last) if last.width != 1 || last.activation != Activation::Sigmoid => {
            return Err(Error::validation(
                "model",
                format!(
                    "output layer must be 1 sigmoid unit, got {} {}",
                    last.width, last.activation
                ),
            ))
        }
        _ => {}
    }
    let mut fan_in = input_width;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.width == 0 {
            return Err(Error::validation("model", "layer width must be at least 1"));
        }
        out.push((fan_in, *spec));
        fan_in = spec.width;
    }
    Ok(out)
}

/// Reusable buffers for allocation-free forward passes.
struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ForwardScratch {
    fn new(model: &MlpModel) -> Self {
        let w = model.widest();
        ForwardScratch {
            a: vec![0.0; w],
            b: vec![0.0; w],
        }
    }

    fn run(&mut self, model: &MlpModel, input: &[f64]) -> f64 {
        let mut width = input.len();
        self.a[..width].copy_from_slice(input);
        for layer in &model.layers {
            layer.forward_into(&self.a[..width], &mut self.b[..layer.fan_out]);
            std::mem::swap(&mut self.a, &mut self.b);
            width = layer.fan_out;
        }
        self.a[0]
    }
}

/// Hidden layers are relu, the output a single sigmoid unit.
pub fn architecture_specs(hidden: &[usize]) -> Vec<LayerSpec> {
    hidden
        .iter()
        .map(|&w| LayerSpec::new(w, Activation::Relu))
        .chain([LayerSpec::new(1, Activation::Sigmoid)])
        .collect()
}

/// Untrained hourglass or pyramid network.
pub fn build_architecture(kind: ArchKind, input_width: usize, seed: u64) -> Result<MlpModel> {
    let hidden = kind.hidden_widths().ok_or_else(|| {
        Error::validation("architecture", "custom networks need explicit layer specs")
    })?;
    MlpModel::new(input_width, &architecture_specs(hidden), kind, seed)
}

/// [`build_architecture`] for the canonical 41-filter input.
pub fn build_default(kind: ArchKind, seed: u64) -> Result<MlpModel> {
    build_architecture(kind, GRID_SIZE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hourglass_shapes() {
        let m = build_default(ArchKind::Hourglass, 1).unwrap();
        let shapes: Vec<_> = m.layers().iter().map(Layer::shape).collect();
        assert_eq!(shapes, vec![(41, 32), (32, 8), (8, 32), (32, 1)]);
    }

    #[test]
    fn pyramid_shapes() {
        let m = build_default(ArchKind::Pyramid, 1).unwrap();
        let shapes: Vec<_> = m.layers().iter().map(Layer::shape).collect();
        assert_eq!(shapes, vec![(41, 32), (32, 16), (16, 8), (8, 1)]);
        assert_eq!(m.layers().len(), 4);
    }

    #[test]
    fn unknown_architecture_name() {
        assert!("lstm".parse::<ArchKind>().is_err());
        assert!(build_architecture(ArchKind::Custom, 41, 0).is_err());
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let m = build_default(ArchKind::Hourglass, 3).unwrap();
        for l in m.layers() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() <= limit));
            assert!(l.biases().iter().all(|&b| b == 0.0));
        }
        assert_eq!(m, build_default(ArchKind::Hourglass, 3).unwrap());
        assert_ne!(m, build_default(ArchKind::Hourglass, 4).unwrap());
    }

    #[test]
    fn zero_network_outputs_half() {
        let m = MlpModel::zeros(
            41,
            &architecture_specs(&HOURGLASS_HIDDEN),
            ArchKind::Hourglass,
        )
        .unwrap();
        assert_eq!(m.forward(&[0.3; 41]).unwrap(), 0.5);
        let f = FeatureMatrix::from_rows(vec![0.7; 41 * 5], 41, 0).unwrap();
        assert_eq!(m.predict_series(&f).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn single_unit_is_sigmoid() {
        let mut m = MlpModel::zeros(
            1,
            &[LayerSpec::new(1, Activation::Sigmoid)],
            ArchKind::Custom,
        )
        .unwrap();
        m.layers_mut()[0].weights_mut()[0] = 1.0;
        assert_eq!(m.forward(&[0.0]).unwrap(), 0.5);
        assert_eq!(m.forward(&[1.3]).unwrap(), sigmoid(1.3));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = build_default(ArchKind::Pyramid, 1).unwrap();
        assert!(m.forward(&[0.5; 40]).is_err());
        let f = FeatureMatrix::from_rows(vec![0.5; 40], 40, 0).unwrap();
        assert!(m.predict_series(&f).is_err());
    }

    #[test]
    fn output_layer_must_be_sigmoid_scalar() {
        let specs = [LayerSpec::new(2, Activation::Sigmoid)];
        assert!(MlpModel::zeros(3, &specs, ArchKind::Custom).is_err());
        let specs = [LayerSpec::new(1, Activation::Relu)];
        assert!(MlpModel::zeros(3, &specs, ArchKind::Custom).is_err());
    }

    #[test]
    fn series_matches_row_by_row_forward() {
        let m = build_default(ArchKind::Hourglass, 8).unwrap();
        let data: Vec<f64> = (0..41 * 20)
            .map(|i| ((i * 37) % 101) as f64 / 100.0)
            .collect();
        let f = FeatureMatrix::from_rows(data, 41, 0).unwrap();
        let series = m.predict_series(&f).unwrap();
        for (i, row) in f.iter_rows().enumerate() {
            assert_eq!(series[i].to_bits(), m.forward(row).unwrap().to_bits());
            assert!(series[i] > 0.0 && series[i] < 1.0);
        }
    }
}
