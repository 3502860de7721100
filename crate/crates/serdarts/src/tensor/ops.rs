//! Primitive tensor operations and their gradient rules.
//!
//! Shapes are validated up front and errors name both shapes. Broadcasting
//! is deliberately limited: binary ops require equal shapes or an explicit
//! scalar, and the few structured broadcasts (bias over the last axis,
//! per-step scaling of a sequence) are their own primitives with exact
//! gradient rules.

use rayon::prelude::*;

use super::{Element, OpCtx, Tensor};
use crate::error::{Error, Result};

/// Work threshold above which matmul parallelizes across output rows.
/// Each output element is still reduced sequentially, so results do not
/// depend on the thread count.
const PAR_FLOPS: usize = 1 << 18;

/// Binary elementwise operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn same_shape<S: Element>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Elementwise combination of two equal-shape tensors.
pub fn elementwise<S: Element>(kind: ElemOp, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(
        match kind {
            ElemOp::Add => "add",
            ElemOp::Sub => "sub",
            ElemOp::Mul => "mul",
            ElemOp::Div => "div",
        },
        a,
        b,
    )?;
    let av = a.data();
    let bv = b.data();
    let data: Vec<S> = match kind {
        ElemOp::Add => av.iter().zip(bv.iter()).map(|(&x, &y)| x + y).collect(),
        ElemOp::Sub => av.iter().zip(bv.iter()).map(|(&x, &y)| x - y).collect(),
        ElemOp::Mul => av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect(),
        ElemOp::Div => av.iter().zip(bv.iter()).map(|(&x, &y)| x / y).collect(),
    };
    drop(av);
    drop(bv);
    let shape = a.shape().to_vec();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        move |ctx: &OpCtx<'_, S>| {
            let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
            match kind {
                ElemOp::Add => {
                    pa.accumulate_grad(|g| {
                        g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi += o)
                    });
                    pb.accumulate_grad(|g| {
                        g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi += o)
                    });
                }
                ElemOp::Sub => {
                    pa.accumulate_grad(|g| {
                        g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi += o)
                    });
                    pb.accumulate_grad(|g| {
                        g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi -= o)
                    });
                }
                ElemOp::Mul => {
                    {
                        let bv = pb.data();
                        pa.accumulate_grad(|g| {
                            for (i, gi) in g.iter_mut().enumerate() {
                                *gi += ctx.out_grad[i] * bv[i];
                            }
                        });
                    }
                    let av = pa.data();
                    pb.accumulate_grad(|g| {
                        for (i, gi) in g.iter_mut().enumerate() {
                            *gi += ctx.out_grad[i] * av[i];
                        }
                    });
                }
                ElemOp::Div => {
                    {
                        let bv = pb.data();
                        pa.accumulate_grad(|g| {
                            for (i, gi) in g.iter_mut().enumerate() {
                                *gi += ctx.out_grad[i] / bv[i];
                            }
                        });
                    }
                    let av = pa.data();
                    let bv = pb.data();
                    pb.accumulate_grad(|g| {
                        for (i, gi) in g.iter_mut().enumerate() {
                            *gi -= ctx.out_grad[i] * av[i] / (bv[i] * bv[i]);
                        }
                    });
                }
            }
        },
    ))
}

pub fn add<S: Element>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(ElemOp::Add, a, b)
}
pub fn sub<S: Element>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(ElemOp::Sub, a, b)
}
pub fn mul<S: Element>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(ElemOp::Mul, a, b)
}
pub fn div<S: Element>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise(ElemOp::Div, a, b)
}

/// Elementwise combination with a plain scalar on the right.
pub fn elementwise_scalar<S: Element>(kind: ElemOp, a: &Tensor<S>, c: S) -> Tensor<S> {
    let data: Vec<S> = {
        let av = a.data();
        match kind {
            ElemOp::Add => av.iter().map(|&x| x + c).collect(),
            ElemOp::Sub => av.iter().map(|&x| x - c).collect(),
            ElemOp::Mul => av.iter().map(|&x| x * c).collect(),
            ElemOp::Div => av.iter().map(|&x| x / c).collect(),
        }
    };
    let shape = a.shape().to_vec();
    Tensor::from_op(shape, data, vec![a.clone()], move |ctx: &OpCtx<'_, S>| {
        let factor = match kind {
            ElemOp::Add | ElemOp::Sub => S::one(),
            ElemOp::Mul => c,
            ElemOp::Div => S::one() / c,
        };
        ctx.parents[0].accumulate_grad(|g| {
            for (gi, &o) in g.iter_mut().zip(ctx.out_grad) {
                *gi += o * factor;
            }
        });
    })
}

// ── Matmul kernels ──────────────────────────────────────────────────

pub(crate) fn mm_nn<S: Element>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    let body = |i: usize, crow: &mut [S]| {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    };
    if m * n * k >= PAR_FLOPS {
        out.par_chunks_mut(n).enumerate().for_each(|(i, crow)| body(i, crow));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, crow)| body(i, crow));
    }
    out
}

/// C[m,k] = A[m,n] * B[k,n]^T
pub(crate) fn mm_nt<S: Element>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * k];
    let body = |i: usize, crow: &mut [S]| {
        let arow = &a[i * n..(i + 1) * n];
        for (p, cp) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *cp += s;
        }
    };
    if m * n * k >= PAR_FLOPS {
        out.par_chunks_mut(k).enumerate().for_each(|(i, crow)| body(i, crow));
    } else {
        out.chunks_mut(k).enumerate().for_each(|(i, crow)| body(i, crow));
    }
    out
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub(crate) fn mm_tn<S: Element>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * n];
    let body = |p: usize, crow: &mut [S]| {
        for i in 0..m {
            let apv = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += apv * bj;
            }
        }
    };
    if m * n * k >= PAR_FLOPS {
        out.par_chunks_mut(n).enumerate().for_each(|(p, crow)| body(p, crow));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(p, crow)| body(p, crow));
    }
    out
}

/// Matrix product of `[M,K] x [K,N]`. Gradients: `dA = G B^T`, `dB = A^T G`.
pub fn matmul<S: Element>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(Error::InnerDimMismatch { lhs: ash.to_vec(), rhs: bsh.to_vec() });
    }
    let (m, k, n) = (ash[0], ash[1], bsh[1]);
    let data = mm_nn(&a.data(), &b.data(), m, k, n);
    Ok(Tensor::from_op(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        move |ctx: &OpCtx<'_, S>| {
            let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
            if pa.is_tracked() {
                let da = mm_nt(ctx.out_grad, &pb.data(), m, n, k);
                pa.accumulate_grad(|g| {
                    g.iter_mut().zip(&da).for_each(|(gi, &d)| *gi += d);
                });
            }
            if pb.is_tracked() {
                let db = mm_tn(&pa.data(), ctx.out_grad, m, k, n);
                pb.accumulate_grad(|g| {
                    g.iter_mut().zip(&db).for_each(|(gi, &d)| *gi += d);
                });
            }
        },
    ))
}

// ── Lane iteration over one axis ────────────────────────────────────

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stabilized softmax along `axis`: outputs are positive and sum
/// to one along the axis.
pub fn softmax<S: Element>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() || shape[axis] == 0 {
        return Err(Error::InvalidAxis { axis, shape });
    }
    let (outer, len, inner) = lanes(&shape, axis);
    let xv = x.data();
    let mut data = vec![S::zero(); xv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = xv[base];
            for j in 1..len {
                let v = xv[base + j * inner];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = S::zero();
            for j in 0..len {
                let e = (xv[base + j * inner] - mx).exp();
                data[base + j * inner] = e;
                denom += e;
            }
            for j in 0..len {
                data[base + j * inner] /= denom;
            }
        }
    }
    drop(xv);
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone()],
        move |ctx: &OpCtx<'_, S>| {
            // dx = y * (g - sum(g * y)) per lane
            let y = ctx.out_data;
            let g = ctx.out_grad;
            ctx.parents[0].accumulate_grad(|dx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = S::zero();
                        for j in 0..len {
                            let idx = base + j * inner;
                            dot += g[idx] * y[idx];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            dx[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            });
        },
    ))
}

/// Mean negative log-softmax of the true class over a `[B,K]` logit batch.
pub fn cross_entropy<S: Element>(logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::invalid("cross_entropy", format!("expected [B,K] logits, got {shape:?}")));
    }
    let (b, k) = (shape[0], shape[1]);
    if labels.len() != b {
        return Err(Error::invalid(
            "cross_entropy",
            format!("batch is {b} rows but {} labels given", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let xv = logits.data();
    let mut probs = vec![S::zero(); b * k];
    let mut total = S::zero();
    for row in 0..b {
        let xrow = &xv[row * k..(row + 1) * k];
        let mx = xrow.iter().cloned().fold(xrow[0], S::max);
        let mut denom = S::zero();
        for j in 0..k {
            let e = (xrow[j] - mx).exp();
            probs[row * k + j] = e;
            denom += e;
        }
        for j in 0..k {
            probs[row * k + j] /= denom;
        }
        // log-sum-exp minus true logit
        total += denom.ln() + mx - xrow[labels[row]];
    }
    drop(xv);
    let loss = total / S::from_f64(b as f64);
    let labels_owned = labels.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        move |ctx: &OpCtx<'_, S>| {
            let scale = ctx.out_grad[0] / S::from_f64(b as f64);
            ctx.parents[0].accumulate_grad(|dx| {
                for row in 0..b {
                    for j in 0..k {
                        let idx = row * k + j;
                        let indicator =
                            if labels_owned[row] == j { S::one() } else { S::zero() };
                        dx[idx] += scale * (probs[idx] - indicator);
                    }
                }
            });
        },
    ))
}

/// Bias addition broadcast over the trailing axis: `x[..., j] + b[j]`.
pub fn add_bias<S: Element>(x: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let n = *x.shape().last().ok_or_else(|| Error::invalid("add_bias", "empty shape"))?;
    if bias.shape() != [n] {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let xv = x.data();
    let bv = bias.data();
    let data: Vec<S> = xv.iter().enumerate().map(|(i, &v)| v + bv[i % n]).collect();
    drop(xv);
    drop(bv);
    let shape = x.shape().to_vec();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone(), bias.clone()],
        move |ctx: &OpCtx<'_, S>| {
            ctx.parents[0].accumulate_grad(|g| {
                g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi += o);
            });
            ctx.parents[1].accumulate_grad(|g| {
                for (i, &o) in ctx.out_grad.iter().enumerate() {
                    g[i % n] += o;
                }
            });
        },
    ))
}

/// Multiply by a one-element tensor: `out = w * x`, differentiable in both.
pub fn scale_by<S: Element>(x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    if w.numel() != 1 {
        return Err(Error::invalid("scale_by", format!("weight must be scalar, got {:?}", w.shape())));
    }
    let wv = w.data()[0];
    let data: Vec<S> = x.data().iter().map(|&v| v * wv).collect();
    let shape = x.shape().to_vec();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone(), w.clone()],
        move |ctx: &OpCtx<'_, S>| {
            let (px, pw) = (&ctx.parents[0], &ctx.parents[1]);
            px.accumulate_grad(|g| {
                for (gi, &o) in g.iter_mut().zip(ctx.out_grad) {
                    *gi += o * wv;
                }
            });
            if pw.is_tracked() {
                let xv = px.data();
                let mut dot = S::zero();
                for (&o, &xi) in ctx.out_grad.iter().zip(xv.iter()) {
                    dot += o * xi;
                }
                pw.accumulate_grad(|g| g[0] += dot);
            }
        },
    ))
}

/// Scale each time step of a `[B,T,H]` sequence by a `[B,T]` weight.
pub fn mul_time<S: Element>(seq: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let ssh = seq.shape().to_vec();
    if ssh.len() != 3 || w.shape() != &ssh[..2] {
        return Err(Error::ShapeMismatch {
            op: "mul_time",
            lhs: ssh,
            rhs: w.shape().to_vec(),
        });
    }
    let (b, t, h) = (ssh[0], ssh[1], ssh[2]);
    let sv = seq.data();
    let wv = w.data();
    let mut data = vec![S::zero(); b * t * h];
    for bt in 0..b * t {
        let scale = wv[bt];
        for j in 0..h {
            data[bt * h + j] = sv[bt * h + j] * scale;
        }
    }
    drop(sv);
    drop(wv);
    Ok(Tensor::from_op(
        ssh,
        data,
        vec![seq.clone(), w.clone()],
        move |ctx: &OpCtx<'_, S>| {
            let (ps, pw) = (&ctx.parents[0], &ctx.parents[1]);
            {
                let wv = pw.data();
                ps.accumulate_grad(|g| {
                    for bt in 0..b * t {
                        let scale = wv[bt];
                        for j in 0..h {
                            g[bt * h + j] += ctx.out_grad[bt * h + j] * scale;
                        }
                    }
                });
            }
            if pw.is_tracked() {
                let sv = ps.data();
                pw.accumulate_grad(|g| {
                    for bt in 0..b * t {
                        let mut dot = S::zero();
                        for j in 0..h {
                            dot += ctx.out_grad[bt * h + j] * sv[bt * h + j];
                        }
                        g[bt] += dot;
                    }
                });
            }
        },
    ))
}

/// Concatenate equal-rank tensors along `axis`; all other extents must match.
pub fn concat<S: Element>(axis: usize, parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::invalid("concat", "no inputs"));
    }
    let first = parts[0].shape().to_vec();
    if axis >= first.len() {
        return Err(Error::InvalidAxis { axis, shape: first });
    }
    let mut axis_total = 0;
    for p in parts {
        let sh = p.shape();
        if sh.len() != first.len()
            || sh.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.clone(),
                rhs: sh.to_vec(),
            });
        }
        axis_total += sh[axis];
    }
    let mut shape = first.clone();
    shape[axis] = axis_total;
    let (outer, _, inner) = lanes(&shape, axis);
    let mut data = vec![S::zero(); outer * axis_total * inner];
    let mut offset = 0;
    for p in parts {
        let plen = p.shape()[axis];
        let pv = p.data();
        for o in 0..outer {
            let src = o * plen * inner;
            let dst = (o * axis_total + offset) * inner;
            data[dst..dst + plen * inner].copy_from_slice(&pv[src..src + plen * inner]);
        }
        offset += plen;
    }
    let parents: Vec<Tensor<S>> = parts.to_vec();
    Ok(Tensor::from_op(
        shape,
        data,
        parents,
        move |ctx: &OpCtx<'_, S>| {
            let mut offset = 0;
            for p in ctx.parents {
                let plen = p.shape()[axis];
                p.accumulate_grad(|g| {
                    for o in 0..outer {
                        let dst = o * plen * inner;
                        let src = (o * axis_total + offset) * inner;
                        for j in 0..plen * inner {
                            g[dst + j] += ctx.out_grad[src + j];
                        }
                    }
                });
                offset += plen;
            }
        },
    ))
}

// ── Tensor methods ──────────────────────────────────────────────────

impl<S: Element> Tensor<S> {
    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        elementwise_scalar(ElemOp::Add, self, c)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor<S> {
        elementwise_scalar(ElemOp::Mul, self, S::from_f64(c))
    }

    pub fn relu(&self) -> Tensor<S> {
        let data: Vec<S> =
            self.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
        let shape = self.shape().to_vec();
        Tensor::from_op(shape, data, vec![self.clone()], |ctx: &OpCtx<'_, S>| {
            let p = &ctx.parents[0];
            let pv = p.data();
            p.accumulate_grad(|g| {
                for (i, gi) in g.iter_mut().enumerate() {
                    if pv[i] > S::zero() {
                        *gi += ctx.out_grad[i];
                    }
                }
            });
        })
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let data: Vec<S> =
            self.data().iter().map(|&v| S::one() / (S::one() + (-v).exp())).collect();
        let shape = self.shape().to_vec();
        Tensor::from_op(shape, data, vec![self.clone()], |ctx: &OpCtx<'_, S>| {
            ctx.parents[0].accumulate_grad(|g| {
                for (i, gi) in g.iter_mut().enumerate() {
                    let y = ctx.out_data[i];
                    *gi += ctx.out_grad[i] * y * (S::one() - y);
                }
            });
        })
    }

    pub fn tanh(&self) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&v| v.tanh()).collect();
        let shape = self.shape().to_vec();
        Tensor::from_op(shape, data, vec![self.clone()], |ctx: &OpCtx<'_, S>| {
            ctx.parents[0].accumulate_grad(|g| {
                for (i, gi) in g.iter_mut().enumerate() {
                    let y = ctx.out_data[i];
                    *gi += ctx.out_grad[i] * (S::one() - y * y);
                }
            });
        })
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total = self.data().iter().fold(S::zero(), |acc, &v| acc + v);
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], |ctx: &OpCtx<'_, S>| {
            let o = ctx.out_grad[0];
            ctx.parents[0].accumulate_grad(|g| g.iter_mut().for_each(|gi| *gi += o));
        })
    }

    /// Mean of all elements as a scalar tensor.
    pub fn mean(&self) -> Tensor<S> {
        let n = self.numel();
        let total = self.data().iter().fold(S::zero(), |acc, &v| acc + v);
        let inv = S::one() / S::from_f64(n as f64);
        Tensor::from_op(
            vec![1],
            vec![total * inv],
            vec![self.clone()],
            move |ctx: &OpCtx<'_, S>| {
                let o = ctx.out_grad[0] * inv;
                ctx.parents[0].accumulate_grad(|g| g.iter_mut().for_each(|gi| *gi += o));
            },
        )
    }

    /// Sum over one axis, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<S>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let xv = self.data();
        let mut data = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += xv[(o * len + j) * inner + i];
                }
            }
        }
        drop(xv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |ctx: &OpCtx<'_, S>| {
                ctx.parents[0].accumulate_grad(|g| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                g[(o * len + j) * inner + i] += ctx.out_grad[o * inner + i];
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Same data viewed under a new shape with identical element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<S>> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(Error::invalid(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), new_shape),
            ));
        }
        let data = self.to_vec();
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            data,
            vec![self.clone()],
            |ctx: &OpCtx<'_, S>| {
                ctx.parents[0].accumulate_grad(|g| {
                    g.iter_mut().zip(ctx.out_grad).for_each(|(gi, &o)| *gi += o);
                });
            },
        ))
    }

    /// Reorder axes; `axes` must be a permutation of `0..ndim`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<S>> {
        let shape = self.shape().to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid("permute", format!("{axes:?} is not a permutation for {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        // strides of the input, then mapping from output flat index to input
        let mut in_strides = vec![1usize; nd];
        for d in (0..nd.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let numel = self.numel();
        let mut mapping = vec![0usize; numel];
        let mut idx = vec![0usize; nd];
        for m in mapping.iter_mut() {
            let mut src = 0;
            for d in 0..nd {
                src += idx[d] * perm_strides[d];
            }
            *m = src;
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let xv = self.data();
        let data: Vec<S> = mapping.iter().map(|&s| xv[s]).collect();
        drop(xv);
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |ctx: &OpCtx<'_, S>| {
                ctx.parents[0].accumulate_grad(|g| {
                    for (out_i, &src) in mapping.iter().enumerate() {
                        g[src] += ctx.out_grad[out_i];
                    }
                });
            },
        ))
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        if start + len > shape[axis] {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} exceeds extent {} on axis {axis}", start + len, shape[axis]),
            ));
        }
        let (outer, full, inner) = lanes(&shape, axis);
        let xv = self.data();
        let mut data = vec![S::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * full + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
        }
        drop(xv);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |ctx: &OpCtx<'_, S>| {
                ctx.parents[0].accumulate_grad(|g| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            g[dst + j] += ctx.out_grad[src + j];
                        }
                    }
                });
            },
        ))
    }

    /// Row-wise argmax of a `[B,K]` tensor; ties take the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::invalid("argmax_rows", format!("expected [B,K], got {shape:?}")));
        }
        let (b, k) = (shape[0], shape[1]);
        let xv = self.data();
        Ok((0..b)
            .map(|row| {
                let xrow = &xv[row * k..(row + 1) * k];
                let mut best = 0;
                for (j, &v) in xrow.iter().enumerate().skip(1) {
                    if v > xrow[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

// ── Operator sugar (panicking on shape mismatch, for short-lived math) ──

impl<S: Element> std::ops::Add for &Tensor<S> {
    type Output = Tensor<S>;
    fn add(self, rhs: Self) -> Tensor<S> {
        add(self, rhs).expect("tensor add: shape mismatch")
    }
}

impl<S: Element> std::ops::Sub for &Tensor<S> {
    type Output = Tensor<S>;
    fn sub(self, rhs: Self) -> Tensor<S> {
        sub(self, rhs).expect("tensor sub: shape mismatch")
    }
}

impl<S: Element> std::ops::Mul for &Tensor<S> {
    type Output = Tensor<S>;
    fn mul(self, rhs: Self) -> Tensor<S> {
        mul(self, rhs).expect("tensor mul: shape mismatch")
    }
}
