//! Analytic gradients against central finite differences of the `f64`
//! reference implementation.

use lmnet::net::{
    backward, forward, loss, pointwise_weights, ForwardOptions, LMNetParams, LossTargets, NetConfig, LAYER_NAMES,
};
use lmnet::tensor::{
    conv2d_backward, dropout, dropout_backward, maxpool2, maxunpool2, relu_backward, ConvSpec, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ActivationPattern, Map, Params};

pub const EPS: f64 = 1e-3;
/// Kink-free checks required per layer.
pub const WEIGHT_CHECKS: usize = 8;
pub const BIAS_CHECKS: usize = 3;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// `|a - n| / max(|a|, |n|)`, with exact agreement (including both zero)
/// counting as 0.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(EPS) - f(-EPS)) / (2.0 * EPS)
}

fn dot(a: &Map, b: &Map) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Worst relative error of a dilated convolution's input, weight and bias
/// gradients.
pub fn conv_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec::same(2, 3, 3, 2);
    let x = random_tensor(&[2, 6, 6], &mut rng);
    let w = random_tensor(&spec.weight_shape(), &mut rng);
    let b = random_tensor(&[3], &mut rng);
    let g = random_tensor(&[3, 6, 6], &mut rng);
    let grads = conv2d_backward(&x, &w, &g, &spec).unwrap();

    let gm = Map::from_tensor(&g);
    let objective = |x: &Map, w: &[f64], b: &[f64]| dot(&crate::conv2d(x, w, b, &spec), &gm);
    let xm = Map::from_tensor(&x);
    let wv: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();

    let mut worst = 0.0f64;
    for i in 0..xm.data.len() {
        let n = central_difference(|e| {
            let mut xp = xm.clone();
            xp.data[i] += e;
            objective(&xp, &wv, &bv)
        });
        worst = worst.max(rel_err(grads.input.data()[i] as f64, n));
    }
    for i in 0..wv.len() {
        let n = central_difference(|e| {
            let mut wp = wv.clone();
            wp[i] += e;
            objective(&xm, &wp, &bv)
        });
        worst = worst.max(rel_err(grads.weights.data()[i] as f64, n));
    }
    for i in 0..bv.len() {
        let n = central_difference(|e| {
            let mut bp = bv.clone();
            bp[i] += e;
            objective(&xm, &wv, &bp)
        });
        worst = worst.max(rel_err(grads.bias.data()[i] as f64, n));
    }
    worst
}

/// Worst relative error of the max-pool, ReLU and dropout backward passes.
pub fn pool_relu_dropout_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[3, 6, 8], &mut rng);
    let xm = Map::from_tensor(&x);

    // Max pooling: its backward is the unpooling scatter.
    let (pooled, idx) = maxpool2(&x).unwrap();
    let g = random_tensor(pooled.shape(), &mut rng);
    let analytic = maxunpool2(&g, &idx, [3, 6, 8]).unwrap();
    let gm = Map::from_tensor(&g);
    let mut worst = 0.0f64;
    for i in 0..xm.data.len() {
        let n = central_difference(|e| {
            let mut xp = xm.clone();
            xp.data[i] += e;
            dot(&crate::maxpool2(&xp).0, &gm)
        });
        worst = worst.max(rel_err(analytic.data()[i] as f64, n));
    }

    let g = random_tensor(x.shape(), &mut rng);
    let gm = Map::from_tensor(&g);
    let analytic = relu_backward(&x, &g);
    for i in 0..xm.data.len() {
        let n = central_difference(|e| {
            let mut xp = xm.clone();
            xp.data[i] += e;
            dot(&crate::relu(&xp), &gm)
        });
        worst = worst.max(rel_err(analytic.data()[i] as f64, n));
    }

    let (_, mask) = dropout(&x, 0.3, 5, true).unwrap();
    let analytic = dropout_backward(&g, &mask);
    for i in 0..xm.data.len() {
        let n = central_difference(|e| {
            let v = xm.data[i] + e;
            let kept = if mask.keep()[i] { v * mask.scale() as f64 } else { 0.0 };
            kept * gm.data[i]
        });
        worst = worst.max(rel_err(analytic.data()[i] as f64, n));
    }
    worst
}

/// Random supervision on an `h x w` map: about a quarter object pixels of
/// mixed classes, a few pixels without returns.
pub fn random_targets(h: usize, w: usize, rng: &mut ChaCha8Rng) -> LossTargets {
    let n = h * w;
    let mut classes = vec![0u8; n];
    let mut valid = vec![true; n];
    let mut sizes = vec![0.0f32; n];
    let mut corners = Tensor::full(&[24, h, w], f32::NAN);
    for p in 0..n {
        let r: f32 = rng.random();
        if r < 0.1 {
            valid[p] = false;
        } else if r < 0.35 {
            classes[p] = rng.random_range(1..4);
            sizes[p] = rng.random_range(2.0..20.0f32).round();
            for ch in 0..24 {
                corners.data_mut()[ch * n + p] = rng.random_range(-3.0..3.0);
            }
        }
    }
    LossTargets {
        height: h,
        width: w,
        classes,
        valid,
        corners,
        instance_size: sizes,
        class_mean_size: [0.0, 9.0, 5.0, 7.0],
    }
}

#[derive(Clone, Debug)]
pub struct NetworkCheck {
    /// Loss of the network against the reference loss.
    pub loss: (f64, f64),
    /// Worst relative error per layer, in [`LAYER_NAMES`] order.
    pub layer_errors: Vec<f64>,
    /// Perturbations discarded because they crossed a kink.
    pub skipped: usize,
}

impl NetworkCheck {
    pub fn worst(&self) -> f64 {
        self.layer_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks sampled weight and bias gradients of every layer of a width 4/8
/// network, through the full multi-task loss with `m = 4`, on a 5x4x8 input.
///
/// Errors when a layer cannot get its quota of kink-free checks.
pub fn network(objectness_relu: bool, seed: u64) -> Result<NetworkCheck, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetConfig {
        objectness_relu,
        ..NetConfig::reduced(4, 8)
    };
    let mut params = LMNetParams::build_with(config, seed).unwrap();
    // Zero biases put every pre-activation fed only by zeros (padding,
    // unpooled holes) exactly on a ReLU kink; move to a generic point.
    for layer in &mut params.layers {
        layer
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x = random_tensor(&[5, 4, 8], &mut rng);
    let targets = random_targets(4, 8, &mut rng);
    let weights = pointwise_weights(&targets, 4.0).unwrap();

    let (out, trace) = forward(&params, &x, &ForwardOptions::training(0.0, 0)).unwrap();
    let l = loss(&out, &targets, &weights).unwrap();
    let grads = backward(&params, &trace, &l.grad_logits, &l.grad_corners).unwrap();

    let base = Params::from_net(&params);
    let xm = Map::from_tensor(&x);
    let (_, _, pattern): (_, _, ActivationPattern) = crate::forward_with_pattern(&base, &xm);
    let (lg, cr) = crate::forward(&base, &xm);
    let reference = crate::loss(&lg, &cr, &targets, &weights);

    // A central difference whose perturbation flips a ReLU or a pooling
    // winner straddles a kink and says nothing about the derivative.
    let smooth_difference = |perturb: &dyn Fn(&mut Params, f64)| -> Option<f64> {
        let side = |e: f64| {
            let mut p = base.clone();
            perturb(&mut p, e);
            let (lg, cr, pat) = crate::forward_with_pattern(&p, &xm);
            (pat == pattern).then(|| crate::loss(&lg, &cr, &targets, &weights))
        };
        Some((side(EPS)? - side(-EPS)?) / (2.0 * EPS))
    };
    let mut check = NetworkCheck {
        loss: (l.total, reference),
        layer_errors: Vec::new(),
        skipped: 0,
    };
    for (i, name) in LAYER_NAMES.iter().enumerate() {
        let mut layer_worst = 0.0f64;
        let mut sample = |len: usize, want: usize, bias: bool, rng: &mut ChaCha8Rng| {
            let mut done = 0;
            for _ in 0..8 * want {
                if done == want {
                    break;
                }
                let k = rng.random_range(0..len);
                let (analytic, numeric) = if bias {
                    (
                        grads.biases[i].data()[k],
                        smooth_difference(&|p, e| p.biases[i][k] += e),
                    )
                } else {
                    (
                        grads.weights[i].data()[k],
                        smooth_difference(&|p, e| p.weights[i][k] += e),
                    )
                };
                match numeric {
                    Some(n) => {
                        layer_worst = layer_worst.max(rel_err(analytic as f64, n));
                        done += 1;
                    }
                    None => check.skipped += 1,
                }
            }
            done
        };
        let w_done = sample(base.weights[i].len(), WEIGHT_CHECKS, false, &mut rng);
        let b_done = sample(base.biases[i].len(), BIAS_CHECKS, true, &mut rng);
        if w_done < WEIGHT_CHECKS || b_done < BIAS_CHECKS {
            return Err(format!(
                "{name}: only {w_done} weight and {b_done} bias checks avoided kinks"
            ));
        }
        check.layer_errors.push(layer_worst);
    }
    Ok(check)
}
