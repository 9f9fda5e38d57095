//! Stride-1 dilated 2D convolution (cross-correlation, zero padding).
//!
//! Two forward paths exist: a direct loop nest that serves as the reference,
//! and an im2col + SGEMM path used everywhere else. Both accumulate in `f32`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Target size (in floats) of one im2col panel. Fixed so that chunking, and
/// therefore the floating-point result, never depends on the thread count.
const PANEL_FLOATS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(kernel_h, kernel_w)`
    pub kernel: (usize, usize),
    pub dilation: usize,
    /// Zero padding added to each side, `(rows, cols)`.
    pub padding: (usize, usize),
}

impl ConvSpec {
    /// Square kernel with "same" padding for the given dilation.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        let extent = kernel + (kernel - 1) * (dilation.max(1) - 1);
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            dilation,
            padding: (extent / 2, extent / 2),
        }
    }

    /// Square kernel without padding.
    pub fn valid(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        ConvSpec {
            padding: (0, 0),
            ..ConvSpec::same(in_channels, out_channels, kernel, dilation)
        }
    }

    pub fn effective_extent(&self) -> (usize, usize) {
        let d = self.dilation;
        (
            self.kernel.0 + (self.kernel.0 - 1) * (d - 1),
            self.kernel.1 + (self.kernel.1 - 1) * (d - 1),
        )
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.dilation == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::invalid(format!(
                "kernel {:?} with dilation {} is not a valid convolution",
                self.kernel, self.dilation
            )));
        }
        let (eh, ew) = self.effective_extent();
        let (ph, pw) = self.padding;
        if height + 2 * ph < eh || width + 2 * pw < ew {
            return Err(Error::invalid(format!(
                "input {height}x{width} with padding {:?} is smaller than the dilated kernel extent {eh}x{ew}",
                self.padding
            )));
        }
        Ok((height + 2 * ph - eh + 1, width + 2 * pw - ew + 1))
    }
}

/// Receptive field of a stack of stride-1 convolutions: starts at 1 and
/// grows by `(k - 1) * dilation` per layer.
pub fn receptive_field(schedule: &[ConvSpec]) -> (usize, usize) {
    schedule.iter().fold((1, 1), |(h, w), s| {
        (h + (s.kernel.0 - 1) * s.dilation, w + (s.kernel.1 - 1) * s.dilation)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvAlgo {
    /// Direct loop nest; the numerical reference.
    Direct,
    #[default]
    Im2col,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn check(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    let (c, in_h, in_w) = input.dims3()?;
    if c != spec.in_channels {
        return Err(Error::invalid(format!(
            "input channels: spec expects {}, input has {c}",
            spec.in_channels
        )));
    }
    let expected = spec.weight_shape();
    if weights.shape() != expected {
        let dim = ["out_channels", "in_channels", "kernel_h", "kernel_w"]
            .iter()
            .zip(expected.iter())
            .zip(weights.shape().iter().chain(std::iter::repeat(&0)))
            .find(|((_, e), f)| e != f)
            .map(|((n, _), _)| *n)
            .unwrap_or("rank");
        return Err(Error::invalid(format!(
            "weights {dim}: expected shape {expected:?}, got {:?}",
            weights.shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::invalid(format!(
            "bias out_channels: expected [{}], got {:?}",
            spec.out_channels,
            bias.shape()
        )));
    }
    let (out_h, out_w) = spec.output_size(in_h, in_w)?;
    Ok(Geometry {
        in_h,
        in_w,
        out_h,
        out_w,
    })
}

/// Convolution using the default (im2col) path.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_with(input, weights, bias, spec, ConvAlgo::Im2col)
}

pub fn conv2d_with(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec, algo: ConvAlgo) -> Result<Tensor> {
    match algo {
        ConvAlgo::Direct => conv2d_direct(input, weights, bias, spec),
        ConvAlgo::Im2col => conv2d_im2col(input, weights, bias, spec),
    }
}

/// Reference convolution: one multiply-add per kernel tap per output pixel.
pub fn conv2d_direct(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = check(input, weights, bias, spec)?;
    let (kh, kw) = spec.kernel;
    let (ph, pw) = (spec.padding.0 as isize, spec.padding.1 as isize);
    let d = spec.dilation as isize;
    let x = input.data();
    let w = weights.data();
    let mut out = Tensor::zeros(&[spec.out_channels, g.out_h, g.out_w]);
    let plane = g.out_h * g.out_w;

    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = bias.data()[o];
                for i in 0..spec.in_channels {
                    for ky in 0..kh {
                        let iy = oy as isize + ky as isize * d - ph;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox as isize + kx as isize * d - pw;
                            if ix < 0 || ix >= g.in_w as isize {
                                continue;
                            }
                            let wv = w[((o * spec.in_channels + i) * kh + ky) * kw + kx];
                            let xv = x[(i * g.in_h + iy as usize) * g.in_w + ix as usize];
                            acc += wv * xv;
                        }
                    }
                }
                dst[oy * g.out_w + ox] = acc;
            }
        }
    });
    Ok(out)
}

/// Half-open range of output columns whose tap at kernel column offset
/// `shift` (already multiplied by the dilation, minus the padding) lands
/// inside the input row.
#[inline]
fn valid_cols(shift: isize, in_w: usize, out_w: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, out_w as isize) as usize;
    let hi = (in_w as isize - shift).clamp(0, out_w as isize) as usize;
    (lo, hi.max(lo))
}

fn rows_per_panel(k: usize, out_w: usize, out_h: usize) -> usize {
    (PANEL_FLOATS / (k * out_w).max(1)).clamp(1, out_h.max(1))
}

/// Fills `col` (`K x rows*out_w`, row-major) with the patches for output
/// rows `y0..y0+rows`.
fn im2col_panel(input: &[f32], spec: &ConvSpec, g: &Geometry, y0: usize, rows: usize, col: &mut [f32]) {
    let (kh, kw) = spec.kernel;
    let d = spec.dilation as isize;
    let (ph, pw) = (spec.padding.0 as isize, spec.padding.1 as isize);
    let n = rows * g.out_w;
    for i in 0..spec.in_channels {
        for ky in 0..kh {
            for kx in 0..kw {
                let k = (i * kh + ky) * kw + kx;
                let dst_row = &mut col[k * n..(k + 1) * n];
                let shift = kx as isize * d - pw;
                let (lo, hi) = valid_cols(shift, g.in_w, g.out_w);
                for r in 0..rows {
                    let dst = &mut dst_row[r * g.out_w..(r + 1) * g.out_w];
                    let iy = (y0 + r) as isize + ky as isize * d - ph;
                    if iy < 0 || iy >= g.in_h as isize || lo == hi {
                        dst.fill(0.0);
                        continue;
                    }
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let src_row = (i * g.in_h + iy as usize) * g.in_w;
                    let start = (src_row as isize + lo as isize + shift) as usize;
                    dst[lo..hi].copy_from_slice(&input[start..start + (hi - lo)]);
                }
            }
        }
    }
}

/// Scatter-adds a `K x rows*out_w` gradient panel back onto the input grid.
fn col2im_panel(col: &[f32], spec: &ConvSpec, g: &Geometry, y0: usize, rows: usize, grad_input: &mut [f32]) {
    let (kh, kw) = spec.kernel;
    let d = spec.dilation as isize;
    let (ph, pw) = (spec.padding.0 as isize, spec.padding.1 as isize);
    let n = rows * g.out_w;
    for i in 0..spec.in_channels {
        for ky in 0..kh {
            for kx in 0..kw {
                let k = (i * kh + ky) * kw + kx;
                let src_row = &col[k * n..(k + 1) * n];
                let shift = kx as isize * d - pw;
                let (lo, hi) = valid_cols(shift, g.in_w, g.out_w);
                if lo == hi {
                    continue;
                }
                for r in 0..rows {
                    let iy = (y0 + r) as isize + ky as isize * d - ph;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = (i * g.in_h + iy as usize) * g.in_w;
                    let start = (dst_row as isize + lo as isize + shift) as usize;
                    let dst = &mut grad_input[start..start + (hi - lo)];
                    let src = &src_row[r * g.out_w + lo..r * g.out_w + hi];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc, "sgemm output too small");
    // SAFETY: the extents of all three operands were checked against their
    // slices above, and `c` is borrowed mutably so it cannot alias `a`/`b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn conv2d_im2col(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = check(input, weights, bias, spec)?;
    let k = spec.fan_in();
    let cout = spec.out_channels;
    let rows = rows_per_panel(k, g.out_w, g.out_h);
    let panels: Vec<usize> = (0..g.out_h).step_by(rows).collect();

    let results: Vec<Vec<f32>> = panels
        .par_iter()
        .map(|&y0| {
            let r = rows.min(g.out_h - y0);
            let n = r * g.out_w;
            let mut col = vec![0.0; k * n];
            im2col_panel(input.data(), spec, &g, y0, r, &mut col);
            let mut out = vec![0.0; cout * n];
            for (o, dst) in out.chunks_mut(n).enumerate() {
                dst.fill(bias.data()[o]);
            }
            sgemm(cout, k, n, weights.data(), (k, 1), &col, (n, 1), 1.0, &mut out, (n, 1));
            out
        })
        .collect();

    let plane = g.out_h * g.out_w;
    let mut out = Tensor::zeros(&[cout, g.out_h, g.out_w]);
    let dst = out.data_mut();
    for (&y0, panel) in panels.iter().zip(&results) {
        let n = panel.len() / cout.max(1);
        for o in 0..cout {
            let start = o * plane + y0 * g.out_w;
            dst[start..start + n].copy_from_slice(&panel[o * n..(o + 1) * n]);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let bias = Tensor::zeros(&[spec.out_channels]);
    let g = check(input, weights, &bias, spec)?;
    let cout = spec.out_channels;
    if grad_out.shape() != [cout, g.out_h, g.out_w] {
        return Err(Error::invalid(format!(
            "grad_out: expected shape {:?}, got {:?}",
            [cout, g.out_h, g.out_w],
            grad_out.shape()
        )));
    }
    let k = spec.fan_in();
    let plane = g.out_h * g.out_w;
    let go = grad_out.data();

    let mut grad_bias = Tensor::zeros(&[cout]);
    for (o, gb) in grad_bias.data_mut().iter_mut().enumerate() {
        *gb = go[o * plane..(o + 1) * plane].iter().sum();
    }

    let mut grad_w = Tensor::zeros(&spec.weight_shape());
    let mut grad_in = Tensor::zeros(input.shape());
    let rows = rows_per_panel(k, g.out_w, g.out_h);
    let mut col = Vec::new();
    let mut grad_col = Vec::new();
    for y0 in (0..g.out_h).step_by(rows) {
        let r = rows.min(g.out_h - y0);
        let n = r * g.out_w;
        col.resize(k * n, 0.0);
        grad_col.resize(k * n, 0.0);
        im2col_panel(input.data(), spec, &g, y0, r, &mut col);
        let go_panel = &go[y0 * g.out_w..];
        // dW[cout x K] += dY[cout x n] * col^T[n x K]
        sgemm(
            cout,
            n,
            k,
            go_panel,
            (plane, 1),
            &col,
            (1, n),
            1.0,
            grad_w.data_mut(),
            (k, 1),
        );
        // dcol[K x n] = W^T[K x cout] * dY[cout x n]
        sgemm(
            k,
            cout,
            n,
            weights.data(),
            (1, k),
            go_panel,
            (plane, 1),
            0.0,
            &mut grad_col,
            (n, 1),
        );
        col2im_panel(&grad_col, spec, &g, y0, r, grad_in.data_mut());
    }

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_bias,
    })
}
