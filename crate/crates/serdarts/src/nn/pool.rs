//! Max and average 2D pooling.

use crate::error::{Error, Result};
use crate::tensor::{Element, OpCtx, Tensor};

use super::conv_out_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Pooling window over `[B,C,H,W]` inputs. Output extents follow the same
/// formula as convolution with dilation 1. Max-pool gradients route to the
/// first maximal element of each window; avg-pool distributes uniformly.
#[derive(Debug, Clone, Copy)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Pool2d {
    pub fn new(kind: PoolKind, kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Pool2d { kind, kernel, stride, padding }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 {
            return Err(Error::invalid("pool2d", format!("expected [B,C,H,W], got {input:?}")));
        }
        // kernel must fit in the padded input
        if self.kernel.0 > input[2] + 2 * self.padding.0 || self.kernel.1 > input[3] + 2 * self.padding.1 {
            return Err(Error::invalid(
                "pool2d",
                format!(
                    "kernel {:?} larger than padded input {}x{}",
                    self.kernel,
                    input[2] + 2 * self.padding.0,
                    input[3] + 2 * self.padding.1
                ),
            ));
        }
        let oh = conv_out_extent(input[2], self.kernel.0, self.stride.0, self.padding.0, 1);
        let ow = conv_out_extent(input[3], self.kernel.1, self.stride.1, self.padding.1, 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(vec![input[0], input[1], oh, ow]),
            _ => Err(Error::invalid("pool2d", "window does not fit")),
        }
    }

    pub fn forward<S: Element>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = self.output_shape(x.shape())?;
        let in_shape = x.shape().to_vec();
        let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let kind = self.kind;

        let xv = x.data();
        let mut data = vec![S::zero(); planes * oh * ow];
        // argmax linear index (within the input plane) per output element
        let mut argmax = vec![0usize; if kind == PoolKind::Max { planes * oh * ow } else { 0 }];
        let inv_count = S::one() / S::from_f64((kh * kw) as f64);
        for plane in 0..planes {
            let xp = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let oidx = (plane * oh + oy) * ow + ox;
                    match kind {
                        PoolKind::Max => {
                            let mut best: Option<(S, usize)> = None;
                            for ky in 0..kh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let lin = iy as usize * w + ix as usize;
                                    let v = xp[lin];
                                    // strictly greater: first index wins ties
                                    if best.map_or(true, |(bv, _)| v > bv) {
                                        best = Some((v, lin));
                                    }
                                }
                            }
                            let (v, lin) = best.expect("pool window entirely in padding");
                            data[oidx] = v;
                            argmax[oidx] = lin;
                        }
                        PoolKind::Avg => {
                            let mut acc = S::zero();
                            for ky in 0..kh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xp[iy as usize * w + ix as usize];
                                }
                            }
                            data[oidx] = acc * inv_count;
                        }
                    }
                }
            }
        }
        drop(xv);

        Ok(Tensor::from_op(out_shape, data, vec![x.clone()], move |ctx: &OpCtx<'_, S>| {
            let g = ctx.out_grad;
            ctx.parents[0].accumulate_grad(|gx| match kind {
                PoolKind::Max => {
                    for plane in 0..planes {
                        for o in 0..oh * ow {
                            let oidx = plane * oh * ow + o;
                            gx[plane * h * w + argmax[oidx]] += g[oidx];
                        }
                    }
                }
                PoolKind::Avg => {
                    for plane in 0..planes {
                        let base = plane * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(plane * oh + oy) * ow + ox] * inv_count;
                                for ky in 0..kh {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        gx[base + iy as usize * w + ix as usize] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }))
    }
}
