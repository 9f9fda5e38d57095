//! Straightforward `f64` re-implementations of the detector's numerics.
//!
//! Everything here is written for clarity, not speed, and shares no code
//! with the `lmnet` kernels it checks: plain nested loops, exhaustive
//! searches and rasterized areas.

pub mod gradcheck;

use lmnet::geom::Box3D;
use lmnet::net::{LMNetParams, LossTargets, PointwiseWeights, CONTEXT, CONTEXT_LAYERS};
use lmnet::postproc::{Candidate, NmsConfig};
use lmnet::tensor::{ConvSpec, Tensor};

/// `[c, h, w]` map in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Map {
            c: s[0],
            h: s[1],
            w: s[2],
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }
}

/// Six nested loops over output channel, row, column, input channel and the
/// two kernel taps.
pub fn conv2d(input: &Map, weights: &[f64], bias: &[f64], spec: &ConvSpec) -> Map {
    let (kh, kw) = spec.kernel;
    let d = spec.dilation as i64;
    let (ph, pw) = (spec.padding.0 as i64, spec.padding.1 as i64);
    let oh = (input.h as i64 + 2 * ph - d * (kh as i64 - 1)) as usize;
    let ow = (input.w as i64 + 2 * pw - d * (kw as i64 - 1)) as usize;
    let mut out = Map::zeros(spec.out_channels, oh, ow);
    for o in 0..spec.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for i in 0..spec.in_channels {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = y as i64 - ph + ky as i64 * d;
                            let ix = x as i64 - pw + kx as i64 * d;
                            if iy < 0 || ix < 0 || iy >= input.h as i64 || ix >= input.w as i64 {
                                continue;
                            }
                            let wv = weights[((o * spec.in_channels + i) * kh + ky) * kw + kx];
                            acc += wv * input.at(i, iy as usize, ix as usize);
                        }
                    }
                }
                *out.at_mut(o, y, x) = acc;
            }
        }
    }
    out
}

pub fn relu(m: &Map) -> Map {
    Map {
        data: m.data.iter().map(|&v| v.max(0.0)).collect(),
        ..m.clone()
    }
}

/// 2x2 max pooling; the first maximum in row-major window order wins.
/// Returns the pooled map and, per output cell, the input `(y, x)` chosen.
pub fn maxpool2(m: &Map) -> (Map, Vec<(usize, usize)>) {
    let (oh, ow) = (m.h / 2, m.w / 2);
    let mut out = Map::zeros(m.c, oh, ow);
    let mut arg = Vec::with_capacity(m.c * oh * ow);
    for c in 0..m.c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (2 * y, 2 * x);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (yy, xx) = (2 * y + dy, 2 * x + dx);
                    if m.at(c, yy, xx) > m.at(c, best.0, best.1) {
                        best = (yy, xx);
                    }
                }
                *out.at_mut(c, y, x) = m.at(c, best.0, best.1);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxunpool2(m: &Map, arg: &[(usize, usize)]) -> Map {
    let mut out = Map::zeros(m.c, m.h * 2, m.w * 2);
    for c in 0..m.c {
        for y in 0..m.h {
            for x in 0..m.w {
                let (yy, xx) = arg[(c * m.h + y) * m.w + x];
                *out.at_mut(c, yy, xx) = m.at(c, y, x);
            }
        }
    }
    out
}

/// Network parameters widened to `f64`, one `(weights, bias)` per layer.
#[derive(Clone, Debug)]
pub struct Params {
    pub specs: Vec<ConvSpec>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub objectness_relu: bool,
}

impl Params {
    pub fn from_net(p: &LMNetParams) -> Self {
        Params {
            specs: p.layers.iter().map(|l| l.spec).collect(),
            weights: p
                .layers
                .iter()
                .map(|l| l.weight.data().iter().map(|&v| v as f64).collect())
                .collect(),
            biases: p
                .layers
                .iter()
                .map(|l| l.bias.data().iter().map(|&v| v as f64).collect())
                .collect(),
            objectness_relu: p.config.objectness_relu,
        }
    }
}

/// Which side of every ReLU each unit is on and which cell won every pooling
/// window. Finite differences are only meaningful when a perturbation
/// leaves this unchanged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationPattern {
    pub relu: Vec<bool>,
    pub pool: Vec<(usize, usize)>,
}

/// Logits and corner maps of the network without dropout.
pub fn forward(p: &Params, input: &Map) -> (Map, Map) {
    let (logits, corners, _) = forward_with_pattern(p, input);
    (logits, corners)
}

pub fn forward_with_pattern(p: &Params, input: &Map) -> (Map, Map, ActivationPattern) {
    let mut pattern = ActivationPattern::default();
    let mut act = |m: Map| {
        pattern.relu.extend(m.data.iter().map(|&v| v > 0.0));
        relu(&m)
    };
    let conv = |i: usize, x: &Map| conv2d(x, &p.weights[i], &p.biases[i], &p.specs[i]);
    let a = act(conv(0, input));
    let a = act(conv(1, &a));
    let (mut h, arg) = maxpool2(&a);
    for k in 0..CONTEXT_LAYERS {
        h = act(conv(CONTEXT + k, &h));
    }
    let u = maxunpool2(&h, &arg);
    let obj_hidden = act(conv(CONTEXT + CONTEXT_LAYERS, &u));
    let mut logits = conv(CONTEXT + CONTEXT_LAYERS + 1, &obj_hidden);
    if p.objectness_relu {
        logits = act(logits);
    }
    let cor_hidden = act(conv(CONTEXT + CONTEXT_LAYERS + 2, &u));
    let corners = conv(CONTEXT + CONTEXT_LAYERS + 3, &cor_hidden);
    pattern.pool = arg;
    (logits, corners, pattern)
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Weighted cross-entropy of the softmax plus weighted smooth-L1 on object
/// pixels.
pub fn loss(logits: &Map, corners: &Map, t: &LossTargets, w: &PointwiseWeights) -> f64 {
    let mut total = 0.0;
    for y in 0..t.height {
        for x in 0..t.width {
            let p = y * t.width + x;
            if w.objectness[p] != 0.0 {
                let z: Vec<f64> = (0..logits.c).map(|k| logits.at(k, y, x)).collect();
                let sum: f64 = z.iter().map(|v| v.exp()).sum();
                let prob = z[t.classes[p] as usize].exp() / sum;
                total += w.objectness[p] as f64 * -prob.ln();
            }
            if t.valid[p] && t.classes[p] != 0 {
                for ch in 0..corners.c {
                    let r = corners.at(ch, y, x) - t.corners.at3(ch, y, x) as f64;
                    total += w.corners[p] as f64 * smooth_l1(r);
                }
            }
        }
    }
    total
}

pub fn corner_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.corners[0] - b.corners[0]).norm() + (a.corners[7] - b.corners[7]).norm()
}

/// Neighbor counts by comparing every pair.
pub fn brute_force_scores(cands: &[Candidate], cfg: &NmsConfig) -> Vec<usize> {
    cands
        .iter()
        .map(|a| {
            cands
                .iter()
                .filter(|b| b.bbox.class == a.bbox.class)
                .filter(|b| corner_distance(&a.bbox, &b.bbox) < cfg.neighbor_radius.get(a.bbox.class))
                .count()
        })
        .collect()
}

fn outranks(a: &Candidate, b: &Candidate) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.confidence != b.confidence {
        return a.confidence > b.confidence;
    }
    a.pixel < b.pixel
}

/// Greedy suppression replayed literally: repeatedly take the best remaining
/// candidate and delete everything of its class within `T`.
pub fn brute_force_nms(cands: &[Candidate], cfg: &NmsConfig) -> Vec<Candidate> {
    let mut remaining: Vec<Candidate> = cands.iter().filter(|c| c.score >= cfg.min_score).cloned().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if outranks(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let top = remaining.swap_remove(best);
        let t = cfg.suppression.get(top.bbox.class);
        remaining.retain(|c| c.bbox.class != top.bbox.class || corner_distance(&c.bbox, &top.bbox) >= t);
        kept.push(top);
    }
    kept
}

fn inside_footprint(b: &Box3D, x: f64, y: f64) -> bool {
    // Bottom face corners 2, 3, 7, 6 walk around the rectangle.
    let ring = [2, 3, 7, 6].map(|i| (b.corners[i].x, b.corners[i].y));
    let mut sign = 0.0;
    for k in 0..4 {
        let (ax, ay) = ring[k];
        let (bx, by) = ring[(k + 1) % 4];
        let c = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
        if c != 0.0 {
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// BEV IoU estimated by sampling cell centers of an `n x n` grid over the
/// union's bounding rectangle.
pub fn raster_bev_iou(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let xs = a.corners.iter().chain(&b.corners).map(|c| c.x);
    let ys = a.corners.iter().chain(&b.corners).map(|c| c.y);
    let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (i as f64 + 0.5) / n as f64 * (x1 - x0);
            let y = y0 + (j as f64 + 0.5) / n as f64 * (y1 - y0);
            let (ia, ib) = (inside_footprint(a, x, y), inside_footprint(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
