use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{backward, forward, ForwardOptions};
use super::loss::{loss, pointwise_weights, LossTargets, PointwiseWeights};
use super::params::{sgd_step, Gradients, LMNetParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// `m` in the background weight `m|O|/|O^c|`.
    pub background_balance: f32,
    pub dropout: f32,
    pub seed: u64,
    /// Batch gradients longer than this are rescaled to it; off by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            epochs: 200,
            batch_size: 4,
            background_balance: 4.0,
            dropout: 0.5,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("learning rate, epochs and batch size must be positive"));
        }
        if !(self.background_balance > 0.0) {
            return Err(Error::invalid("background balance m must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.max_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }
}

/// One training map and its supervision.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: Tensor,
    pub targets: LossTargets,
}

fn prepare(data: &[TrainSample], m: f32) -> Result<Vec<PointwiseWeights>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if data.iter().all(|s| s.targets.object_count() == 0) {
        return Err(Error::DegenerateScene(
            "no object pixels anywhere in the training set".into(),
        ));
    }
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            pointwise_weights(&s.targets, m).map_err(|e| match e {
                Error::DegenerateScene(msg) => Error::DegenerateScene(format!("sample {i}: {msg}")),
                e => e,
            })
        })
        .collect()
}

/// Loss and gradients of one sample.
pub fn sample_gradients(
    params: &LMNetParams,
    sample: &TrainSample,
    weights: &PointwiseWeights,
    opts: &ForwardOptions,
) -> Result<(f64, Gradients)> {
    let (out, trace) = forward(params, &sample.input, opts)?;
    let l = loss(&out, &sample.targets, weights)?;
    let grads = backward(params, &trace, &l.grad_logits, &l.grad_corners)?;
    Ok((l.total, grads))
}

/// Mean per-sample loss in inference mode.
pub fn evaluate_loss(params: &LMNetParams, data: &[TrainSample], m: f32) -> Result<f64> {
    let weights = prepare(data, m)?;
    let losses: Result<Vec<f64>> = data
        .par_iter()
        .zip(&weights)
        .map(|(s, w)| {
            let (out, _) = forward(params, &s.input, &ForwardOptions::inference())?;
            Ok(loss(&out, &s.targets, w)?.total)
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / data.len() as f64)
}

pub fn train(params: &mut LMNetParams, data: &[TrainSample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_with_progress(params, data, cfg, |_, _| {})
}

/// Mini-batch SGD over shuffled samples. The batch gradient is the mean of
/// the sample gradients; an epoch's loss is the mean of the sample losses
/// seen during that epoch (each measured before its batch's update).
pub fn train_with_progress(
    params: &mut LMNetParams,
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let weights = prepare(data, cfg.background_balance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let opts = ForwardOptions::training(cfg.dropout, cfg.seed ^ (step << 20) ^ i as u64);
                    sample_gradients(params, &data[i], &weights[i], &opts)
                })
                .collect();
            let mut total = Gradients::zeros_like(params);
            for r in results {
                let (l, g) = r?;
                epoch_loss += l;
                total.accumulate(&g);
            }
            total.scale(1.0 / batch.len() as f32);
            if let Some(limit) = cfg.max_grad_norm {
                let norm = total.norm();
                if norm > limit as f64 {
                    total.scale((limit as f64 / norm) as f32);
                }
            }
            sgd_step(params, &total, cfg.learning_rate)?;
            step += 1;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { layer: "loss".into() });
        }
        info!("epoch {} loss {mean:.6}", epoch + 1);
        progress(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}
