use super::forward::NetOutput;
use super::params::CORNER_CHANNELS;
use crate::error::{Error, Result};
use crate::geom::{BACKGROUND, NUM_CLASSES};
use crate::tensor::Tensor;

/// Supervision for one map.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub height: usize,
    pub width: usize,
    /// Class id per pixel, background included.
    pub classes: Vec<u8>,
    /// Pixels holding a LiDAR return; only these enter the loss.
    pub valid: Vec<bool>,
    /// `[24, H, W]` corner offsets, read on object pixels only.
    pub corners: Tensor,
    /// `s(p)`: point count of the pixel's instance (object pixels).
    pub instance_size: Vec<f32>,
    /// `s̄[κ]` indexed by class id; entry 0 is unused.
    pub class_mean_size: [f32; NUM_CLASSES],
}

impl LossTargets {
    fn is_object(&self, p: usize) -> bool {
        self.valid[p] && self.classes[p] != BACKGROUND
    }

    pub fn object_count(&self) -> usize {
        (0..self.classes.len()).filter(|&p| self.is_object(p)).count()
    }

    pub fn background_count(&self) -> usize {
        (0..self.classes.len())
            .filter(|&p| self.valid[p] && self.classes[p] == BACKGROUND)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.classes.len() != n || self.valid.len() != n || self.instance_size.len() != n {
            return Err(Error::invalid(format!(
                "targets for a {}x{} map need {n} entries per pixel map",
                self.height, self.width
            )));
        }
        if self.corners.shape() != [CORNER_CHANNELS, self.height, self.width] {
            return Err(Error::invalid(format!(
                "corner targets shaped {:?}, expected [{CORNER_CHANNELS}, {}, {}]",
                self.corners.shape(),
                self.height,
                self.width
            )));
        }
        if let Some(c) = self.classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::invalid(format!("target class {c} outside 0..{NUM_CLASSES}")));
        }
        for p in (0..n).filter(|&p| self.is_object(p)) {
            let size = self.instance_size[p];
            let mean = self.class_mean_size[self.classes[p] as usize];
            if !(size > 0.0) || !(mean > 0.0) {
                return Err(Error::invalid(format!(
                    "object pixel {p} has instance size {size} and class mean {mean}"
                )));
            }
            if (0..CORNER_CHANNELS).any(|ch| !self.corners.data()[ch * n + p].is_finite()) {
                return Err(Error::invalid(format!("object pixel {p} lacks finite corner targets")));
            }
        }
        Ok(())
    }
}

/// Per-pixel loss weights. Pixels without a return weigh 0 in both maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseWeights {
    /// `w_obj = w_bac * w_cor`
    pub objectness: Vec<f32>,
    /// `w_cor`
    pub corners: Vec<f32>,
}

/// `w_cor = s̄[κ]/s(p)` on objects and 1 on background; `w_bac = m|O|/|O^c|`
/// on background and 1 on objects.
pub fn pointwise_weights(t: &LossTargets, m: f32) -> Result<PointwiseWeights> {
    t.validate()?;
    if !(m > 0.0) {
        return Err(Error::invalid(format!(
            "background balance m must be positive, got {m}"
        )));
    }
    let objects = t.object_count();
    let background = t.background_count();
    if background == 0 {
        return Err(Error::DegenerateScene(format!(
            "no background pixels among {objects} valid pixels"
        )));
    }
    let w_bac = (m as f64 * objects as f64 / background as f64) as f32;
    let n = t.height * t.width;
    let mut objectness = vec![0.0; n];
    let mut corners = vec![0.0; n];
    for p in 0..n {
        if !t.valid[p] {
            continue;
        }
        if t.classes[p] == BACKGROUND {
            corners[p] = 1.0;
            objectness[p] = w_bac;
        } else {
            let w = t.class_mean_size[t.classes[p] as usize] / t.instance_size[p];
            corners[p] = w;
            objectness[p] = w;
        }
    }
    Ok(PointwiseWeights { objectness, corners })
}

/// Fast R-CNN smooth L1: `0.5 x²` below 1, `|x| - 0.5` above.
pub fn smooth_l1(x: f32) -> f32 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f32) -> f32 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: f64,
    pub objectness: f64,
    pub corners: f64,
    pub grad_logits: Tensor,
    pub grad_corners: Tensor,
}

/// Weighted softmax cross-entropy over valid pixels plus weighted smooth-L1
/// corner regression over object pixels, with gradients for backward.
pub fn loss(out: &NetOutput, t: &LossTargets, w: &PointwiseWeights) -> Result<LossValue> {
    t.validate()?;
    let (h, wd) = (t.height, t.width);
    if out.logits.shape() != [NUM_CLASSES, h, wd] || out.corners.shape() != [CORNER_CHANNELS, h, wd] {
        return Err(Error::invalid(format!(
            "outputs {:?} / {:?} do not match {h}x{wd} targets",
            out.logits.shape(),
            out.corners.shape()
        )));
    }
    let n = h * wd;
    if w.objectness.len() != n || w.corners.len() != n {
        return Err(Error::invalid("weight maps do not match the targets"));
    }
    let z = out.logits.data();
    let mut grad_logits = Tensor::zeros(out.logits.shape());
    let gl = grad_logits.data_mut();
    let mut obj_loss = 0.0f64;
    for p in 0..n {
        let wo = w.objectness[p];
        if wo == 0.0 {
            continue;
        }
        let target = t.classes[p] as usize;
        let max = (0..NUM_CLASSES)
            .map(|k| z[k * n + p] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: [f64; NUM_CLASSES] = std::array::from_fn(|k| (z[k * n + p] as f64 - max).exp());
        let total: f64 = exps.iter().sum();
        obj_loss += wo as f64 * (total.ln() - (z[target * n + p] as f64 - max));
        for k in 0..NUM_CLASSES {
            let onehot = if k == target { 1.0 } else { 0.0 };
            gl[k * n + p] = (wo as f64 * (exps[k] / total - onehot)) as f32;
        }
    }

    let pred = out.corners.data();
    let target = t.corners.data();
    let mut grad_corners = Tensor::zeros(out.corners.shape());
    let gc = grad_corners.data_mut();
    let mut cor_loss = 0.0f64;
    for p in (0..n).filter(|&p| t.is_object(p)) {
        let wc = w.corners[p];
        for ch in 0..CORNER_CHANNELS {
            let i = ch * n + p;
            let r = pred[i] - target[i];
            cor_loss += (wc * smooth_l1(r)) as f64;
            gc[i] = wc * smooth_l1_grad(r);
        }
    }
    Ok(LossValue {
        total: obj_loss + cor_loss,
        objectness: obj_loss,
        corners: cor_loss,
        grad_logits,
        grad_corners,
    })
}
