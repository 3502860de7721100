//! Additive attention pooling over a sequence.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::ops::{matmul, mul_time, softmax};
use crate::tensor::{Element, Tensor};

/// Pools `[B,T,H]` to `[B,H]` with additive attention:
/// `score_t = v^T tanh(W h_t)`, weights = softmax over t,
/// output = sum_t weight_t * h_t.
pub struct AttentionPool<S: Element> {
    pub features: usize,
    w: Tensor<S>, // [H, H]
    v: Tensor<S>, // [H, 1]
}

impl<S: Element> AttentionPool<S> {
    pub fn new(features: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (features as f64).sqrt();
        AttentionPool {
            features,
            w: Tensor::rand_uniform(rng, &[features, features], -bound, bound).tracked(),
            v: Tensor::rand_uniform(rng, &[features, 1], -bound, bound).tracked(),
        }
    }

    /// Softmaxed attention weights `[B,T]` for a sequence.
    pub fn weights(&self, seq: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = seq.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.features {
            return Err(Error::ShapeMismatch {
                op: "attention_pool",
                lhs: shape,
                rhs: vec![0, 0, self.features],
            });
        }
        let (b, t, h) = (shape[0], shape[1], shape[2]);
        let scores = matmul(&matmul(&seq.reshape(&[b * t, h])?, &self.w)?.tanh(), &self.v)?
            .reshape(&[b, t])?;
        softmax(&scores, 1)
    }

    pub fn forward(&self, seq: &Tensor<S>) -> Result<Tensor<S>> {
        let weights = self.weights(seq)?;
        mul_time(seq, &weights)?.sum_axis(1)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        vec![self.w.clone(), self.v.clone()]
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.v"), self.v.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_passes_through() {
        let mut rng = RngState::new(0);
        let att = AttentionPool::<f64>::new(3, &mut rng);
        let x = Tensor::from_vec(&[1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = att.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_steps_average_to_themselves() {
        let mut rng = RngState::new(1);
        let att = AttentionPool::<f64>::new(2, &mut rng);
        let step = [0.3, -0.7];
        let x = Tensor::from_vec(&[1, 4, 2], step.repeat(4)).unwrap();
        let y = att.forward(&x).unwrap().to_vec();
        assert!((y[0] - step[0]).abs() < 1e-12 && (y[1] - step[1]).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = RngState::new(2);
        let att = AttentionPool::<f64>::new(4, &mut rng);
        for _ in 0..5 {
            let x = Tensor::<f64>::randn(&mut rng, &[3, 6, 4], 2.0);
            let w = att.weights(&x).unwrap();
            for row in w.to_vec().chunks(6) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradients_check() {
        use crate::tensor::grad_check::grad_check;
        let mut rng = RngState::new(3);
        let att = AttentionPool::<f64>::new(3, &mut rng);
        let x = Tensor::<f64>::randn(&mut rng, &[2, 4, 3], 1.0).tracked();
        let err = grad_check(|t| Ok(att.forward(t)?.mean()), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "err {err}");
    }
}
