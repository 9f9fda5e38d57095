use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_inplace(&mut out);
    out
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Passes `grad` through wherever the forward input was positive.
pub fn relu_backward(input: &Tensor, grad: &Tensor) -> Tensor {
    assert_eq!(input.shape(), grad.shape(), "relu_backward shape mismatch");
    let data = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Per-pixel softmax across the channel axis of a `[c, h, w]` map.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let plane = h * w;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    for p in 0..plane {
        let max = (0..c).map(|k| x[k * plane + p]).fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f32;
        for k in 0..c {
            let e = (x[k * plane + p] - max).exp();
            y[k * plane + p] = e;
            total += e;
        }
        for k in 0..c {
            y[k * plane + p] /= total;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f32,
}

impl DropoutMask {
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    /// Factor applied to surviving units, `1 / (1 - rate)`.
    pub fn scale(&self) -> f32 {
        self.scale
    }
}

/// Inverted dropout. Outside training the input passes through unchanged
/// and the mask keeps every unit.
pub fn dropout(input: &Tensor, rate: f32, seed: u64, training: bool) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok((
            input.clone(),
            DropoutMask {
                keep: vec![true; input.len()],
                scale: 1.0,
            },
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    let keep: Vec<bool> = (0..input.len()).map(|_| rng.random::<f32>() >= rate).collect();
    let data = input
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * scale } else { 0.0 })
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, DropoutMask { keep, scale }))
}

pub fn dropout_backward(grad: &Tensor, mask: &DropoutMask) -> Tensor {
    assert_eq!(grad.len(), mask.keep.len(), "dropout mask size mismatch");
    let data = grad
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g * mask.scale } else { 0.0 })
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let x = Tensor::from_vec(&[2], vec![-3.5, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_uniform_softmax() {
        let y = softmax_channels(&Tensor::zeros(&[4, 1, 1])).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let x = Tensor::from_vec(&[2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let y = softmax_channels(&x).unwrap();
        assert!(y.is_finite());
        assert_eq!(y.data()[0], 1.0);
    }

    #[test]
    fn zero_rate_is_identity() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let (y, mask) = dropout(&x, 0.0, 9, true).unwrap();
        assert_eq!(y, x);
        assert!(mask.keep().iter().all(|&k| k));
    }

    #[test]
    fn inference_is_identity() {
        let x = Tensor::full(&[1, 4, 4], 2.0);
        let (y, _) = dropout(&x, 0.5, 9, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rate_one_rejected() {
        assert!(dropout(&Tensor::zeros(&[1]), 1.0, 0, true).is_err());
        assert!(dropout(&Tensor::zeros(&[1]), -0.1, 0, true).is_err());
    }

    #[test]
    fn fixed_seed_reproducible() {
        let x = Tensor::full(&[8, 8, 8], 1.0);
        let (a, ma) = dropout(&x, 0.3, 42, true).unwrap();
        let (b, mb) = dropout(&x, 0.3, 42, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let kept = ma.keep().iter().filter(|&&k| k).count() as f32 / x.len() as f32;
        assert!((kept - 0.7).abs() < 0.05, "kept fraction {kept}");
        assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-6));
    }
}
