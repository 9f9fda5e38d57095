use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool2`], one per output cell, as flat
/// indices into the pooled input tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    indices: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.input_shape;
        [c, h / 2, w / 2]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the smallest flat index.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "max pooling needs even spatial dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let top = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = top;
                // Row-major window order makes the strict comparison keep
                // the smallest index among equal maxima.
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: [c, h, w],
            indices,
        },
    ))
}

fn check_unpool(input: &Tensor, indices: &PoolIndices, out_shape: [usize; 3]) -> Result<()> {
    if input.shape() != indices.output_shape() {
        return Err(Error::invalid(format!(
            "unpooling input {:?} does not match the recorded pooling output {:?}",
            input.shape(),
            indices.output_shape()
        )));
    }
    let [c, h, w] = out_shape;
    if c != input.shape()[0] || h != 2 * input.shape()[1] || w != 2 * input.shape()[2] {
        return Err(Error::invalid(format!(
            "unpooling output {out_shape:?} is not twice the spatial size of {:?}",
            input.shape()
        )));
    }
    let limit = c * h * w;
    if let Some(bad) = indices.indices.iter().find(|&&i| i >= limit) {
        return Err(Error::Corruption(format!(
            "pooling index {bad} lies outside an output of {limit} elements"
        )));
    }
    Ok(())
}

/// Scatters each value back to the position recorded by the paired pooling
/// layer; every other cell is zero.
pub fn maxunpool2(input: &Tensor, indices: &PoolIndices, out_shape: [usize; 3]) -> Result<Tensor> {
    check_unpool(input, indices, out_shape)?;
    let mut out = Tensor::zeros(&out_shape);
    let dst = out.data_mut();
    for (&v, &i) in input.data().iter().zip(&indices.indices) {
        dst[i] = v;
    }
    Ok(out)
}

/// Gradient of [`maxunpool2`] with respect to its input: a gather at the
/// recorded positions. (The gradient of [`maxpool2`] is [`maxunpool2`].)
pub fn maxunpool2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.shape() != indices.input_shape {
        return Err(Error::invalid(format!(
            "unpooling gradient {:?} does not match {:?}",
            grad_out.shape(),
            indices.input_shape
        )));
    }
    let g = grad_out.data();
    let data = indices.indices.iter().map(|&i| g[i]).collect();
    Tensor::from_vec(&indices.output_shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.as_slice(), &[3]);
    }

    #[test]
    fn constant_input_picks_window_origin() {
        let x = Tensor::full(&[2, 4, 6], 0.5);
        let (y, idx) = maxpool2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        for (cell, &i) in idx.as_slice().iter().enumerate() {
            let (c, rem) = (cell / 6, cell % 6);
            let (oy, ox) = (rem / 3, rem % 3);
            assert_eq!(i, (c * 4 + 2 * oy) * 6 + 2 * ox);
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(
            maxpool2(&Tensor::zeros(&[1, 3, 4])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn paper_sized_maps() {
        let x = Tensor::zeros(&[64, 64, 512]);
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[64, 32, 256]);
        let up = maxunpool2(&y, &idx, [64, 64, 512]).unwrap();
        assert_eq!(up.shape(), &[64, 64, 512]);
    }

    #[test]
    fn unpool_restores_window_maxima() {
        let x = Tensor::from_vec(&[1, 2, 4], vec![1.0, -2.0, 0.5, 0.25, 3.0, 0.0, 0.75, 2.0]).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        let up = maxunpool2(&y, &idx, [1, 2, 4]).unwrap();
        assert_eq!(up.data(), &[0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 2.0]);
        assert_eq!(up.sum(), y.sum());
    }

    #[test]
    fn corrupt_index_detected() {
        let (y, mut idx) = maxpool2(&Tensor::zeros(&[1, 2, 2])).unwrap();
        idx.indices[0] = 99;
        assert!(matches!(maxunpool2(&y, &idx, [1, 2, 2]), Err(Error::Corruption(_))));
    }
}
