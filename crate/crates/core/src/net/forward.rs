use super::params::{
    Gradients, LMNetParams, CONTEXT, CONTEXT_LAYERS, COR_CONV1, COR_CONV2, ENC1, ENC2, OBJ_CONV1, OBJ_CONV2,
};
use crate::error::{Error, Result};
use crate::geom::FEATURE_CHANNELS;
use crate::tensor::{
    conv2d_backward, conv2d_with, dropout, dropout_backward, maxpool2, maxunpool2, maxunpool2_backward, relu_backward,
    relu_inplace, softmax_channels, ConvAlgo, DropoutMask, PoolIndices, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    /// Dropout rate of the context layers; only used when training.
    pub dropout: f32,
    pub seed: u64,
    pub algo: ConvAlgo,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        ForwardOptions {
            training: false,
            dropout: 0.0,
            seed: 0,
            algo: ConvAlgo::Im2col,
        }
    }

    pub fn training(dropout: f32, seed: u64) -> Self {
        ForwardOptions {
            training: true,
            dropout,
            seed,
            ..Self::inference()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    /// `[4, H, W]` pre-softmax scores.
    pub logits: Tensor,
    /// `[4, H, W]` per-pixel class probabilities.
    pub objectness: Tensor,
    /// `[24, H, W]` raw corner offsets.
    pub corners: Tensor,
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Tensor,
    /// Post-activation output of every layer, indexed like the layers. The
    /// objectness entry holds the logits.
    outputs: Vec<Tensor>,
    pooled: Tensor,
    unpooled: Tensor,
    indices: PoolIndices,
    masks: Vec<DropoutMask>,
    options: ForwardOptions,
}

impl ForwardTrace {
    pub fn pool_indices(&self) -> &PoolIndices {
        &self.indices
    }

    /// Output of layer `index` after its activation.
    pub fn activation(&self, index: usize) -> &Tensor {
        &self.outputs[index]
    }

    /// Shared decoder input: the context features unpooled to full size.
    pub fn unpooled(&self) -> &Tensor {
        &self.unpooled
    }

    pub fn dropout_masks(&self) -> &[DropoutMask] {
        &self.masks
    }

    /// Recomputes the forward pass from the stored input, reusing the stored
    /// dropout masks.
    pub fn replay(&self, params: &LMNetParams) -> Result<NetOutput> {
        run(params, &self.input, &self.options, Some(&self.masks)).map(|(out, _)| out)
    }
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((layer as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn apply_mask(t: &Tensor, mask: &DropoutMask) -> Tensor {
    let data = t
        .data()
        .iter()
        .zip(mask.keep())
        .map(|(&v, &k)| if k { v * mask.scale() } else { 0.0 })
        .collect();
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

fn run(
    params: &LMNetParams,
    input: &Tensor,
    opts: &ForwardOptions,
    masks: Option<&[DropoutMask]>,
) -> Result<(NetOutput, ForwardTrace)> {
    let (c, h, w) = input.dims3()?;
    if c != FEATURE_CHANNELS || h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "network input must be [{FEATURE_CHANNELS}, H, W] with even H and W, got {:?}",
            input.shape()
        )));
    }
    let conv = |i: usize, x: &Tensor| -> Result<Tensor> {
        let l = &params.layers[i];
        conv2d_with(x, &l.weight, &l.bias, &l.spec, opts.algo)
    };
    let mut outputs: Vec<Tensor> = Vec::with_capacity(params.layers.len());

    let mut a = conv(ENC1, input)?;
    relu_inplace(&mut a);
    outputs.push(a);
    let mut a = conv(ENC2, &outputs[ENC1])?;
    relu_inplace(&mut a);
    outputs.push(a);
    let (pooled, indices) = maxpool2(&outputs[ENC2])?;

    let mut new_masks = Vec::with_capacity(CONTEXT_LAYERS);
    for k in 0..CONTEXT_LAYERS {
        let i = CONTEXT + k;
        let x = if k == 0 { &pooled } else { &outputs[i - 1] };
        let z = conv(i, x)?;
        let mut d = match masks {
            Some(m) => apply_mask(&z, &m[k]),
            None => {
                let rate = if opts.training { opts.dropout } else { 0.0 };
                let (d, mask) = dropout(&z, rate, layer_seed(opts.seed, i), opts.training)?;
                new_masks.push(mask);
                d
            }
        };
        relu_inplace(&mut d);
        outputs.push(d);
    }
    let last = &outputs[CONTEXT + CONTEXT_LAYERS - 1];
    let unpooled = maxunpool2(last, &indices, [last.shape()[0], h, w])?;

    let mut b = conv(OBJ_CONV1, &unpooled)?;
    relu_inplace(&mut b);
    outputs.push(b);
    let mut logits = conv(OBJ_CONV2, &outputs[OBJ_CONV1])?;
    if params.config.objectness_relu {
        relu_inplace(&mut logits);
    }
    outputs.push(logits);
    let mut b = conv(COR_CONV1, &unpooled)?;
    relu_inplace(&mut b);
    outputs.push(b);
    let corners = conv(COR_CONV2, &outputs[COR_CONV1])?;
    outputs.push(corners);

    let out = NetOutput {
        logits: outputs[OBJ_CONV2].clone(),
        objectness: softmax_channels(&outputs[OBJ_CONV2])?,
        corners: outputs[COR_CONV2].clone(),
    };
    let trace = ForwardTrace {
        input: input.clone(),
        outputs,
        pooled,
        unpooled,
        indices,
        masks: masks.map_or(new_masks, |m| m.to_vec()),
        options: *opts,
    };
    Ok((out, trace))
}

/// Runs the network on a `[5, H, W]` map (H and W even).
pub fn forward(params: &LMNetParams, input: &Tensor, opts: &ForwardOptions) -> Result<(NetOutput, ForwardTrace)> {
    run(params, input, opts, None)
}

/// Inference-mode forward pass without a trace.
pub fn infer(params: &LMNetParams, input: &Tensor, algo: ConvAlgo) -> Result<NetOutput> {
    let opts = ForwardOptions {
        algo,
        ..ForwardOptions::inference()
    };
    run(params, input, &opts, None).map(|(out, _)| out)
}

/// Parameter gradients given the loss gradients with respect to the
/// objectness logits and the corner outputs.
pub fn backward(
    params: &LMNetParams,
    trace: &ForwardTrace,
    grad_logits: &Tensor,
    grad_corners: &Tensor,
) -> Result<Gradients> {
    let outs = &trace.outputs;
    if grad_logits.shape() != outs[OBJ_CONV2].shape() || grad_corners.shape() != outs[COR_CONV2].shape() {
        return Err(Error::invalid(format!(
            "output gradients {:?} / {:?} do not match outputs {:?} / {:?}",
            grad_logits.shape(),
            grad_corners.shape(),
            outs[OBJ_CONV2].shape(),
            outs[COR_CONV2].shape()
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut conv_back = |i: usize, x: &Tensor, g: &Tensor| -> Result<Tensor> {
        let l = &params.layers[i];
        let cg = conv2d_backward(x, &l.weight, g, &l.spec)?;
        grads.weights[i] = cg.weights;
        grads.biases[i] = cg.bias;
        Ok(cg.input)
    };

    let g = conv_back(COR_CONV2, &outs[COR_CONV1], grad_corners)?;
    let g = relu_backward(&outs[COR_CONV1], &g);
    let mut grad_unpooled = conv_back(COR_CONV1, &trace.unpooled, &g)?;

    let g = if params.config.objectness_relu {
        relu_backward(&outs[OBJ_CONV2], grad_logits)
    } else {
        grad_logits.clone()
    };
    let g = conv_back(OBJ_CONV2, &outs[OBJ_CONV1], &g)?;
    let g = relu_backward(&outs[OBJ_CONV1], &g);
    grad_unpooled.axpy(1.0, &conv_back(OBJ_CONV1, &trace.unpooled, &g)?);

    let mut g = maxunpool2_backward(&grad_unpooled, &trace.indices)?;
    for k in (0..CONTEXT_LAYERS).rev() {
        let i = CONTEXT + k;
        let gd = relu_backward(&outs[i], &g);
        let gz = dropout_backward(&gd, &trace.masks[k]);
        let x = if k == 0 { &trace.pooled } else { &outs[i - 1] };
        g = conv_back(i, x, &gz)?;
    }
    let g = maxunpool2(&g, &trace.indices, trace.indices.input_shape())?;
    let g = relu_backward(&outs[ENC2], &g);
    let g = conv_back(ENC2, &outs[ENC1], &g)?;
    let g = relu_backward(&outs[ENC1], &g);
    conv_back(ENC1, &trace.input, &g)?;
    Ok(grads)
}
