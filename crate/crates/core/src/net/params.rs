use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{FEATURE_CHANNELS, NUM_CLASSES};
use crate::tensor::{ConvSpec, Tensor};

/// Dilations of the seven 3x3 context convolutions.
pub const DILATIONS: [usize; 7] = [1, 1, 2, 4, 8, 16, 32];
pub const CORNER_CHANNELS: usize = 24;

/// Layer names in forward order. Weight files store `<name>.weight` and
/// `<name>.bias` for each.
///
/// | index | name        | layer                     |
/// |-------|-------------|---------------------------|
/// | 0     | `enc1`      | conv(5, E, 3)             |
/// | 1     | `enc2`      | conv(E, E, 3)             |
/// | 2..8  | `dconv1..7` | dconv(E/C, C, 3), dilated |
/// | 9     | `dconv8`    | conv(C, E, 1)             |
/// | 10    | `obj_conv1` | conv(E, E, 3)             |
/// | 11    | `obj_conv2` | conv(E, 4, 3)             |
/// | 12    | `cor_conv1` | conv(E, E, 3)             |
/// | 13    | `cor_conv2` | conv(E, 24, 3)            |
pub const LAYER_NAMES: [&str; 14] = [
    "enc1",
    "enc2",
    "dconv1",
    "dconv2",
    "dconv3",
    "dconv4",
    "dconv5",
    "dconv6",
    "dconv7",
    "dconv8",
    "obj_conv1",
    "obj_conv2",
    "cor_conv1",
    "cor_conv2",
];

pub const ENC1: usize = 0;
pub const ENC2: usize = 1;
/// First of the eight context layers; each is followed by dropout and ReLU.
pub const CONTEXT: usize = 2;
pub const CONTEXT_LAYERS: usize = 8;
pub const OBJ_CONV1: usize = 10;
pub const OBJ_CONV2: usize = 11;
pub const COR_CONV1: usize = 12;
pub const COR_CONV2: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Channels of the encoder and decoder convolutions (64 in the original).
    pub encoder_width: usize,
    /// Channels inside the dilated context stack (128 in the original).
    pub context_width: usize,
    /// ReLU on the objectness logits before the softmax.
    pub objectness_relu: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            encoder_width: 64,
            context_width: 128,
            objectness_relu: true,
        }
    }
}

impl NetConfig {
    pub fn reduced(encoder_width: usize, context_width: usize) -> Self {
        NetConfig {
            encoder_width,
            context_width,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_width == 0 || self.context_width == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        Ok(())
    }

    /// Convolution of every layer, indexed like [`LAYER_NAMES`].
    pub fn specs(&self) -> Vec<ConvSpec> {
        let (e, c) = (self.encoder_width, self.context_width);
        let mut specs = vec![ConvSpec::same(FEATURE_CHANNELS, e, 3, 1), ConvSpec::same(e, e, 3, 1)];
        for (i, &d) in DILATIONS.iter().enumerate() {
            specs.push(ConvSpec::same(if i == 0 { e } else { c }, c, 3, d));
        }
        specs.push(ConvSpec::same(c, e, 1, 1));
        specs.push(ConvSpec::same(e, e, 3, 1));
        specs.push(ConvSpec::same(e, NUM_CLASSES, 3, 1));
        specs.push(ConvSpec::same(e, e, 3, 1));
        specs.push(ConvSpec::same(e, CORNER_CHANNELS, 3, 1));
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: &'static str,
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All learnable parameters, one [`Layer`] per entry of [`LAYER_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct LMNetParams {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

impl LMNetParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = LAYER_NAMES
            .iter()
            .zip(config.specs())
            .map(|(&name, spec)| Layer {
                name,
                spec,
                weight: Tensor::zeros(&spec.weight_shape()),
                bias: Tensor::zeros(&[spec.out_channels]),
            })
            .collect();
        Ok(LMNetParams { config, layers })
    }

    /// Full-width network with He-uniform weights and zero biases.
    pub fn build(seed: u64) -> Self {
        Self::build_with(NetConfig::default(), seed).expect("default config is valid")
    }

    /// Weights drawn from `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn build_with(config: NetConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = (6.0 / layer.spec.fan_in() as f64).sqrt() as f32;
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// The eight context convolutions, in order.
    pub fn context_specs(&self) -> Vec<ConvSpec> {
        self.layers[CONTEXT..CONTEXT + CONTEXT_LAYERS]
            .iter()
            .map(|l| l.spec)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Multiply-accumulates of one forward pass on an `h x w` input.
    pub fn forward_macs(&self, h: usize, w: usize) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let pixels = if (CONTEXT..CONTEXT + CONTEXT_LAYERS).contains(&i) {
                    (h / 2) * (w / 2)
                } else {
                    h * w
                };
                (l.weight.len() * pixels) as u64
            })
            .sum()
    }
}

/// Gradients with the layout of [`LMNetParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &LMNetParams) -> Self {
        Gradients {
            weights: params.layers.iter().map(|l| Tensor::zeros(l.weight.shape())).collect(),
            biases: params.layers.iter().map(|l| Tensor::zeros(l.bias.shape())).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.axpy(1.0, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.axpy(1.0, b);
        }
    }

    pub fn scale(&mut self, factor: f32) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|t| t.scale(factor));
    }

    /// Euclidean norm over every weight and bias gradient.
    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|t| t.data())
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Divergence error naming the first layer with a non-finite gradient.
    pub fn check_finite(&self, params: &LMNetParams) -> Result<()> {
        for (i, layer) in params.layers.iter().enumerate() {
            if !self.weights[i].is_finite() || !self.biases[i].is_finite() {
                return Err(Error::Divergence {
                    layer: layer.name.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Plain SGD: `p -= lr * g`.
pub fn sgd_step(params: &mut LMNetParams, grads: &Gradients, lr: f32) -> Result<()> {
    if grads.weights.len() != params.layers.len() || grads.biases.len() != params.layers.len() {
        return Err(Error::invalid(format!(
            "gradients for {} layers, network has {}",
            grads.weights.len(),
            params.layers.len()
        )));
    }
    for (i, layer) in params.layers.iter().enumerate() {
        for (p, g) in [(&layer.weight, &grads.weights[i]), (&layer.bias, &grads.biases[i])] {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    name: layer.name.to_string(),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
    }
    grads.check_finite(params)?;
    for (i, layer) in params.layers.iter_mut().enumerate() {
        layer.weight.axpy(-lr, &grads.weights[i]);
        layer.bias.axpy(-lr, &grads.biases[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_layer_shapes() {
        let p = LMNetParams::build(1);
        assert_eq!(p.layer("enc1").unwrap().weight.shape(), [64, 5, 3, 3]);
        let d4 = p.layer("dconv4").unwrap();
        assert_eq!(d4.weight.shape(), [128, 128, 3, 3]);
        assert_eq!(d4.spec.dilation, 4);
        assert_eq!(p.layer("dconv1").unwrap().weight.shape(), [128, 64, 3, 3]);
        assert_eq!(p.layer("dconv8").unwrap().weight.shape(), [64, 128, 1, 1]);
        assert_eq!(p.layer("obj_conv2").unwrap().weight.shape(), [4, 64, 3, 3]);
        assert_eq!(p.layer("cor_conv2").unwrap().weight.shape(), [24, 64, 3, 3]);
        let dilations: Vec<usize> = p.context_specs()[..7].iter().map(|s| s.dilation).collect();
        assert_eq!(dilations, DILATIONS);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = NetConfig::reduced(8, 16);
        assert_eq!(
            LMNetParams::build_with(cfg, 3).unwrap(),
            LMNetParams::build_with(cfg, 3).unwrap()
        );
        assert_ne!(
            LMNetParams::build_with(cfg, 3).unwrap(),
            LMNetParams::build_with(cfg, 4).unwrap()
        );
    }

    #[test]
    fn init_within_fan_in_bound() {
        let p = LMNetParams::build_with(NetConfig::reduced(8, 16), 0).unwrap();
        for l in &p.layers {
            let bound = (6.0 / l.spec.fan_in() as f32).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn sgd_zero_rate_and_single_step() {
        let mut p = LMNetParams::build_with(NetConfig::reduced(2, 2), 0).unwrap();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        g.weights.iter_mut().for_each(|t| t.data_mut().fill(2.0));
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
        sgd_step(&mut p, &g, 0.1).unwrap();
        let (a, b) = (p.layers[0].weight.data()[0], before.layers[0].weight.data()[0]);
        assert!((b - a - 0.2).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = LMNetParams::build_with(NetConfig::reduced(2, 2), 0).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.biases[5].data_mut()[0] = f32::NAN;
        match sgd_step(&mut p, &g, 0.1) {
            Err(Error::Divergence { layer }) => assert_eq!(layer, "dconv4"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
