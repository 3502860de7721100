//! Batch normalization over the channel axis of `[B,C,H,W]` tensors.

use crate::error::{Error, Result};
use crate::tensor::{Element, OpCtx, Tensor};

/// Per-channel normalization with trainable scale/shift and running
/// statistics. Train mode normalizes by batch statistics and folds them into
/// the running buffers with `momentum`; eval mode normalizes by the running
/// buffers and has no side effects.
pub struct BatchNorm2d<S: Element> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
}

impl<S: Element> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            // small enough that unit running variance is an identity map to
            // well under 1e-6
            eps: 1e-6,
            momentum: 0.1,
            gamma: Tensor::full(&[channels], S::one()).tracked(),
            beta: Tensor::zeros(&[channels]).tracked(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], S::one()),
        }
    }

    pub fn running_stats(&self) -> (Vec<S>, Vec<S>) {
        (self.running_mean.to_vec(), self.running_var.to_vec())
    }

    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                lhs: shape,
                rhs: vec![0, self.channels, 0, 0],
            });
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if b == 0 {
            return Err(Error::invalid("batchnorm2d", "batch of size 0"));
        }
        let n_per_c = b * h * w;
        let plane = h * w;
        let eps = S::from_f64(self.eps);

        let xv = x.data();
        let (mean, var): (Vec<S>, Vec<S>) = if train {
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            for ch in 0..c {
                let mut s = S::zero();
                for bi in 0..b {
                    let base = (bi * c + ch) * plane;
                    for &v in &xv[base..base + plane] {
                        s += v;
                    }
                }
                let m = s / S::from_f64(n_per_c as f64);
                let mut sq = S::zero();
                for bi in 0..b {
                    let base = (bi * c + ch) * plane;
                    for &v in &xv[base..base + plane] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / S::from_f64(n_per_c as f64);
            }
            // fold into running buffers
            let mom = S::from_f64(self.momentum);
            let keep = S::one() - mom;
            self.running_mean.map_data_mut(|rm| {
                for ch in 0..c {
                    rm[ch] = keep * rm[ch] + mom * mean[ch];
                }
            });
            self.running_var.map_data_mut(|rv| {
                for ch in 0..c {
                    rv[ch] = keep * rv[ch] + mom * var[ch];
                }
            });
            (mean, var)
        } else {
            (self.running_mean.to_vec(), self.running_var.to_vec())
        };

        let istd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let gv = self.gamma.data();
        let bv = self.beta.data();
        let mut xhat = vec![S::zero(); xv.len()];
        let mut data = vec![S::zero(); xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let (m, is, ga, be) = (mean[ch], istd[ch], gv[ch], bv[ch]);
                for i in base..base + plane {
                    let xh = (xv[i] - m) * is;
                    xhat[i] = xh;
                    data[i] = ga * xh + be;
                }
            }
        }
        drop(xv);
        drop(gv);
        drop(bv);

        let out_shape = x.shape().to_vec();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            move |ctx: &OpCtx<'_, S>| {
                let g = ctx.out_grad;
                let (px, pg, pb) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);

                // per-channel reductions shared by all three gradients
                let mut sum_g = vec![S::zero(); c];
                let mut sum_gx = vec![S::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * plane;
                        for i in base..base + plane {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                pb.accumulate_grad(|gb| {
                    for ch in 0..c {
                        gb[ch] += sum_g[ch];
                    }
                });
                pg.accumulate_grad(|gg| {
                    for ch in 0..c {
                        gg[ch] += sum_gx[ch];
                    }
                });
                if px.is_tracked() {
                    let gammas = pg.data();
                    px.accumulate_grad(|gx| {
                        if train {
                            let n = S::from_f64(n_per_c as f64);
                            for bi in 0..b {
                                for ch in 0..c {
                                    let base = (bi * c + ch) * plane;
                                    let coeff = gammas[ch] * istd[ch] / n;
                                    for i in base..base + plane {
                                        gx[i] += coeff
                                            * (n * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                                    }
                                }
                            }
                        } else {
                            for bi in 0..b {
                                for ch in 0..c {
                                    let base = (bi * c + ch) * plane;
                                    let coeff = gammas[ch] * istd[ch];
                                    for i in base..base + plane {
                                        gx[i] += coeff * g[i];
                                    }
                                }
                            }
                        }
                    });
                }
            },
        ))
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    /// Trainable parameters plus running buffers, for checkpointing.
    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.named_params(prefix, out);
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::grad_check::grad_check;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![5.0; 8]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        assert!(y.to_vec().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn identity_running_stats_in_eval() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, -0.3, 0.7, 0.0]).unwrap();
        let y = bn.forward(&x, false).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::<f64>::zeros(&[0, 1, 2, 2]);
        assert!(bn.forward(&x, true).is_err());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, true).unwrap();
        let (rm, rv) = bn.running_stats();
        assert!((rm[0] - 0.1 * 2.5).abs() < 1e-12);
        assert!((rv[0] - (0.9 * 1.0 + 0.1 * 1.25)).abs() < 1e-12);
        // eval is side-effect free
        bn.forward(&x, false).unwrap();
        assert_eq!(bn.running_stats().0, rm);
    }

    #[test]
    fn scale_shift_and_input_gradients_check() {
        let mut rng = RngState::new(9);
        let bn = BatchNorm2d::<f64>::new(3);
        let x = Tensor::<f64>::randn(&mut rng, &[2, 3, 2, 2], 1.0).tracked();

        let err = grad_check(|t| Ok(bn.forward(t, true)?.mean()), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "dx err {err}");

        let xc = Tensor::<f64>::randn(&mut rng, &[2, 3, 2, 2], 1.0);
        let err = grad_check(|_| Ok(bn.forward(&xc, true)?.mean()), &bn.gamma, 1e-3).unwrap();
        assert!(err <= 1e-4, "dgamma err {err}");
        let err = grad_check(|_| Ok(bn.forward(&xc, true)?.mean()), &bn.beta, 1e-3).unwrap();
        assert!(err <= 1e-4, "dbeta err {err}");

        let err = grad_check(|t| Ok(bn.forward(t, false)?.mean()), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "eval dx err {err}");
    }
}
