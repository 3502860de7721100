//! Inverted dropout.

use crate::error::{Error, Result};
use crate::tensor::{Element, OpCtx, Tensor};

use super::ForwardCtx;

/// Zeroes each element with probability `p` in training and rescales
/// survivors by `1/(1-p)`, so the expectation is unchanged. Identity in eval
/// mode.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p must be in [0,1), got {p}")));
        }
        Ok(Dropout { p })
    }

    pub fn forward<S: Element>(&self, x: &Tensor<S>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<S>> {
        let rng = match ctx {
            ForwardCtx::Eval => return Ok(x.clone()),
            ForwardCtx::Train(rng) => rng,
        };
        if self.p == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - self.p));
        let mask: Vec<S> = (0..x.numel())
            .map(|_| if rng.unit() >= self.p { keep_scale } else { S::zero() })
            .collect();
        let data: Vec<S> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = x.shape().to_vec();
        Ok(Tensor::from_op(shape, data, vec![x.clone()], move |ctx: &OpCtx<'_, S>| {
            ctx.parents[0].accumulate_grad(|g| {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += ctx.out_grad[i] * mask[i];
                }
            });
        }))
    }
}
