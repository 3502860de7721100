//! 2D convolution with stride, zero padding, dilation, and groups.
//!
//! Depthwise (`groups == channels`) plus pointwise 1x1 pairs form the
//! separable convolutions of the search space; dilation covers the dilated
//! variants. The direct loops parallelize over independent output planes so
//! each element is reduced in a fixed order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::ops::{mm_nn, mm_nt, mm_tn};
use crate::tensor::{Element, OpCtx, Tensor};

use super::conv_out_extent;

/// Convolution geometry plus its weight/bias parameters.
///
/// Weight layout: `[out_channels, in_channels/groups, kh, kw]`.
pub struct Conv2d<S: Element> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Element> Conv2d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        dilation: (usize, usize),
        groups: usize,
        with_bias: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("channels ({in_channels} -> {out_channels}) not divisible by groups {groups}"),
            ));
        }
        let fan_in = (in_channels / groups) * kernel.0 * kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Tensor::randn(
            rng,
            &[out_channels, in_channels / groups, kernel.0, kernel.1],
            std,
        )
        .tracked();
        let bias = with_bias.then(|| Tensor::zeros(&[out_channels]).tracked());
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation,
            groups,
            weight,
            bias,
        })
    }

    /// Output shape for a `[B,C,H,W]` input, validating geometry.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: vec![0, self.in_channels, 0, 0],
            });
        }
        let oh = conv_out_extent(input[2], self.kernel.0, self.stride.0, self.padding.0, self.dilation.0);
        let ow = conv_out_extent(input[3], self.kernel.1, self.stride.1, self.padding.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(vec![input[0], self.out_channels, oh, ow]),
            _ => Err(Error::BadConvGeometry {
                input: input.to_vec(),
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
                dilation: self.dilation,
            }),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = self.output_shape(x.shape())?;
        conv2d_op(
            x,
            &self.weight,
            self.bias.as_ref(),
            Geometry {
                stride: self.stride,
                padding: self.padding,
                dilation: self.dilation,
                groups: self.groups,
            },
            out_shape,
        )
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = vec![self.weight.clone()];
        if let Some(b) = &self.bias {
            p.push(b.clone());
        }
        p
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    stride: (usize, usize),
    padding: (usize, usize),
    dilation: (usize, usize),
    groups: usize,
}

fn conv2d_op<S: Element>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    geo: Geometry,
    out_shape: Vec<usize>,
) -> Result<Tensor<S>> {
    let in_shape = x.shape().to_vec();
    let w_shape = weight.shape().to_vec();
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oc, cg, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);

    let pointwise = kh == 1 && kw == 1 && geo.groups == 1 && geo.padding == (0, 0)
        && geo.stride == (1, 1) && geo.dilation == (1, 1);

    let data = {
        let xv = x.data();
        let wv = weight.data();
        if pointwise {
            pointwise_forward(&xv, &wv, b, c, h * w, oc)
        } else {
            direct_forward(&xv, &wv, (b, c, h, w), (oc, cg, kh, kw), (oh, ow), geo)
        }
    };
    let mut data = data;
    if let Some(bias) = bias {
        let bv = bias.data();
        for bi in 0..b {
            for o in 0..oc {
                let base = (bi * oc + o) * oh * ow;
                let bval = bv[o];
                for v in &mut data[base..base + oh * ow] {
                    *v += bval;
                }
            }
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    Ok(Tensor::from_op(out_shape, data, parents, move |ctx: &OpCtx<'_, S>| {
        let px = &ctx.parents[0];
        let pw = &ctx.parents[1];
        let g = ctx.out_grad;

        if let Some(pb) = ctx.parents.get(2) {
            pb.accumulate_grad(|gb| {
                for bi in 0..b {
                    for o in 0..oc {
                        let base = (bi * oc + o) * oh * ow;
                        let mut s = S::zero();
                        for &gv in &g[base..base + oh * ow] {
                            s += gv;
                        }
                        gb[o] += s;
                    }
                }
            });
        }

        if px.is_tracked() {
            let wv = pw.data();
            let dx = if pointwise {
                pointwise_dx(g, &wv, b, c, h * w, oc)
            } else {
                direct_dx(g, &wv, (b, c, h, w), (oc, cg, kh, kw), (oh, ow), geo)
            };
            px.accumulate_grad(|gx| {
                gx.iter_mut().zip(&dx).for_each(|(gi, &d)| *gi += d);
            });
        }

        if pw.is_tracked() {
            let xv = px.data();
            let dw = if pointwise {
                pointwise_dw(g, &xv, b, c, h * w, oc)
            } else {
                direct_dw(g, &xv, (b, c, h, w), (oc, cg, kh, kw), (oh, ow), geo)
            };
            pw.accumulate_grad(|gw| {
                gw.iter_mut().zip(&dw).for_each(|(gi, &d)| *gi += d);
            });
        }
    }))
}

// ── Pointwise (1x1, stride 1, groups 1) fast path via matmul ────────

fn pointwise_forward<S: Element>(x: &[S], w: &[S], b: usize, c: usize, hw: usize, oc: usize) -> Vec<S> {
    let mut out = vec![S::zero(); b * oc * hw];
    for bi in 0..b {
        let xb = &x[bi * c * hw..(bi + 1) * c * hw];
        let ob = mm_nn(&w[..oc * c], xb, oc, c, hw);
        out[bi * oc * hw..(bi + 1) * oc * hw].copy_from_slice(&ob);
    }
    out
}

fn pointwise_dx<S: Element>(g: &[S], w: &[S], b: usize, c: usize, hw: usize, oc: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); b * c * hw];
    for bi in 0..b {
        let gb = &g[bi * oc * hw..(bi + 1) * oc * hw];
        let dxb = mm_tn(&w[..oc * c], gb, oc, c, hw);
        dx[bi * c * hw..(bi + 1) * c * hw].copy_from_slice(&dxb);
    }
    dx
}

fn pointwise_dw<S: Element>(g: &[S], x: &[S], b: usize, c: usize, hw: usize, oc: usize) -> Vec<S> {
    let mut dw = vec![S::zero(); oc * c];
    for bi in 0..b {
        let gb = &g[bi * oc * hw..(bi + 1) * oc * hw];
        let xb = &x[bi * c * hw..(bi + 1) * c * hw];
        let part = mm_nt(gb, xb, oc, hw, c);
        dw.iter_mut().zip(&part).for_each(|(d, &p)| *d += p);
    }
    dw
}

// ── Direct loops for the general case ───────────────────────────────

type Dims4 = (usize, usize, usize, usize);

fn direct_forward<S: Element>(
    x: &[S],
    w: &[S],
    (b, c, h, wi): Dims4,
    (oc, cg, kh, kw): Dims4,
    (oh, ow): (usize, usize),
    geo: Geometry,
) -> Vec<S> {
    let ocg = oc / geo.groups;
    let mut out = vec![S::zero(); b * oc * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, oplane)| {
        let (bi, o) = (plane / oc, plane % oc);
        let group = o / ocg;
        let ic0 = group * cg;
        let wbase = o * cg * kh * kw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for icr in 0..cg {
                    let xc = (bi * c + ic0 + icr) * h * wi;
                    let wc = wbase + icr * kh * kw;
                    for ky in 0..kh {
                        let iy = (oy * geo.stride.0 + ky * geo.dilation.0) as isize
                            - geo.padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * geo.stride.1 + kx * geo.dilation.1) as isize
                                - geo.padding.1 as isize;
                            if ix < 0 || ix >= wi as isize {
                                continue;
                            }
                            acc += x[xc + iy as usize * wi + ix as usize] * w[wc + ky * kw + kx];
                        }
                    }
                }
                oplane[oy * ow + ox] = acc;
            }
        }
    });
    out
}

fn direct_dx<S: Element>(
    g: &[S],
    w: &[S],
    (b, c, h, wi): Dims4,
    (oc, cg, kh, kw): Dims4,
    (oh, ow): (usize, usize),
    geo: Geometry,
) -> Vec<S> {
    let ocg = oc / geo.groups;
    let mut dx = vec![S::zero(); b * c * h * wi];
    // each batch element owns a disjoint slice of dx
    dx.par_chunks_mut(c * h * wi).enumerate().for_each(|(bi, dxb)| {
        for o in 0..oc {
            let group = o / ocg;
            let ic0 = group * cg;
            let wbase = o * cg * kh * kw;
            let gplane = &g[(bi * oc + o) * oh * ow..(bi * oc + o + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = gplane[oy * ow + ox];
                    for icr in 0..cg {
                        let xc = (ic0 + icr) * h * wi;
                        let wc = wbase + icr * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * geo.stride.0 + ky * geo.dilation.0) as isize
                                - geo.padding.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * geo.stride.1 + kx * geo.dilation.1) as isize
                                    - geo.padding.1 as isize;
                                if ix < 0 || ix >= wi as isize {
                                    continue;
                                }
                                dxb[xc + iy as usize * wi + ix as usize] += gv * w[wc + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

fn direct_dw<S: Element>(
    g: &[S],
    x: &[S],
    (b, c, h, wi): Dims4,
    (oc, cg, kh, kw): Dims4,
    (oh, ow): (usize, usize),
    geo: Geometry,
) -> Vec<S> {
    let ocg = oc / geo.groups;
    let mut dw = vec![S::zero(); oc * cg * kh * kw];
    // each output channel owns a disjoint slice of dw
    dw.par_chunks_mut(cg * kh * kw).enumerate().for_each(|(o, dwo)| {
        let group = o / ocg;
        let ic0 = group * cg;
        for bi in 0..b {
            let gplane = &g[(bi * oc + o) * oh * ow..(bi * oc + o + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = gplane[oy * ow + ox];
                    for icr in 0..cg {
                        let xc = (bi * c + ic0 + icr) * h * wi;
                        for ky in 0..kh {
                            let iy = (oy * geo.stride.0 + ky * geo.dilation.0) as isize
                                - geo.padding.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * geo.stride.1 + kx * geo.dilation.1) as isize
                                    - geo.padding.1 as isize;
                                if ix < 0 || ix >= wi as isize {
                                    continue;
                                }
                                dwo[icr * kh * kw + ky * kw + kx] +=
                                    gv * x[xc + iy as usize * wi + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(
        cfg: (usize, usize, (usize, usize), (usize, usize), (usize, usize), (usize, usize), usize),
        seed: u64,
    ) -> Conv2d<f64> {
        let mut rng = RngState::new(seed);
        Conv2d::new(cfg.0, cfg.1, cfg.2, cfg.3, cfg.4, cfg.5, cfg.6, true, &mut rng).unwrap()
    }

    #[test]
    fn shapes_follow_the_formula() {
        let c = conv((1, 1, (3, 3), (1, 1), (1, 1), (1, 1), 1), 0);
        assert_eq!(c.output_shape(&[1, 1, 8, 8]).unwrap(), vec![1, 1, 8, 8]);

        let c = conv((1, 4, (3, 3), (2, 2), (1, 1), (1, 1), 1), 0);
        assert_eq!(c.output_shape(&[2, 1, 128, 128]).unwrap(), vec![2, 4, 64, 64]);

        let c = conv((1, 1, (3, 3), (1, 1), (2, 2), (2, 2), 1), 0);
        assert_eq!(c.output_shape(&[1, 1, 16, 16]).unwrap(), vec![1, 1, 16, 16]);
    }

    #[test]
    fn bad_geometry_is_an_error() {
        let c = conv((1, 1, (5, 5), (1, 1), (0, 0), (1, 1), 1), 0);
        assert!(matches!(c.output_shape(&[1, 1, 2, 2]), Err(Error::BadConvGeometry { .. })));
        // channel mismatch
        let c = conv((3, 4, (3, 3), (1, 1), (1, 1), (1, 1), 1), 0);
        assert!(c.output_shape(&[1, 2, 8, 8]).is_err());
    }

    #[test]
    fn known_small_convolution() {
        // 1x1x3x3 input, 2x2 kernel of ones, no padding: each output is the
        // window sum.
        let mut rng = RngState::new(1);
        let c = Conv2d::<f64>::new(1, 1, (2, 2), (1, 1), (0, 0), (1, 1), 1, false, &mut rng).unwrap();
        c.weight.set_data(&[1.0, 1.0, 1.0, 1.0]);
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::tensor::grad_check::grad_check;
        let mut rng = RngState::new(7);
        for (groups, dil, stride) in [(1, 1, 1), (2, 1, 1), (4, 2, 1), (1, 1, 2)] {
            let conv = Conv2d::<f64>::new(
                4,
                4,
                (3, 3),
                (stride, stride),
                (dil, dil),
                (dil, dil),
                groups,
                true,
                &mut rng,
            )
            .unwrap();
            let x = Tensor::<f64>::randn(&mut rng, &[2, 4, 6, 6], 1.0).tracked();
            // check input gradient
            let err = grad_check(|t| Ok(conv.forward(t)?.mean()), &x, 1e-3).unwrap();
            assert!(err <= 1e-4, "dx err {err} (g={groups} d={dil} s={stride})");
            // check weight gradient
            let xc = Tensor::<f64>::randn(&mut rng, &[2, 4, 6, 6], 1.0);
            let err = grad_check(
                |_| Ok(conv.forward(&xc)?.mean()),
                &conv.weight,
                1e-3,
            )
            .unwrap();
            assert!(err <= 1e-4, "dw err {err} (g={groups} d={dil} s={stride})");
        }
    }

    #[test]
    fn pointwise_fast_path_matches_direct() {
        let mut rng = RngState::new(3);
        let fast = Conv2d::<f64>::new(3, 5, (1, 1), (1, 1), (0, 0), (1, 1), 1, true, &mut rng).unwrap();
        // same parameters, geometry forced through the direct path by padding
        let x = Tensor::<f64>::randn(&mut rng, &[2, 3, 4, 4], 1.0);
        let y_fast = fast.forward(&x).unwrap();

        let direct = {
            let xv = x.to_vec();
            let wv = fast.weight.to_vec();
            direct_forward(
                &xv,
                &wv,
                (2, 3, 4, 4),
                (5, 3, 1, 1),
                (4, 4),
                Geometry { stride: (1, 1), padding: (0, 0), dilation: (1, 1), groups: 1 },
            )
        };
        let bv = fast.bias.as_ref().unwrap().to_vec();
        for bi in 0..2 {
            for o in 0..5 {
                for p in 0..16 {
                    let idx = (bi * 5 + o) * 16 + p;
                    let want = direct[idx] + bv[o];
                    assert!((y_fast.to_vec()[idx] - want).abs() < 1e-12);
                }
            }
        }
    }
}
