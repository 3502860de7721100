//! Fully connected layer.

use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::ops::{add_bias, matmul};
use crate::tensor::{Element, Tensor};

/// Affine map `y = x W + b` over `[B, in]` inputs. Weight layout `[in, out]`.
pub struct Linear<S: Element> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Element> Linear<S> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Tensor::rand_uniform(rng, &[in_features, out_features], -bound, bound).tracked(),
            bias: Tensor::zeros(&[out_features]).tracked(),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        add_bias(&matmul(x, &self.weight)?, &self.bias)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}
