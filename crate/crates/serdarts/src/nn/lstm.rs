//! LSTM over `[B,T,F]` sequences with optional bidirectional pass.
//!
//! The recurrence is composed from tensor primitives, so backpropagation
//! through time falls out of the tape; no bespoke backward pass.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::ops::{add, add_bias, concat, matmul, mul};
use crate::tensor::{Element, Tensor};

/// One direction's parameters. Gate order along the `4H` axis: input,
/// forget, cell, output.
struct Direction<S: Element> {
    w_x: Tensor<S>, // [F, 4H]
    w_h: Tensor<S>, // [H, 4H]
    bias: Tensor<S>, // [4H]
}

impl<S: Element> Direction<S> {
    fn new(input_size: usize, hidden: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_x = Tensor::rand_uniform(rng, &[input_size, 4 * hidden], -bound, bound).tracked();
        let w_h = Tensor::rand_uniform(rng, &[hidden, 4 * hidden], -bound, bound).tracked();
        // forget-gate bias starts at 1 so early training does not erase the
        // cell state
        let mut b = vec![S::zero(); 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = S::one();
        }
        let bias = Tensor::from_vec(&[4 * hidden], b).unwrap().tracked();
        Direction { w_x, w_h, bias }
    }
}

/// Standard LSTM: sigmoid input/forget/output gates, tanh cell update.
/// Bidirectional mode concatenates a reversed-time pass along the feature
/// axis, giving `hidden * 2` features per step.
pub struct Lstm<S: Element> {
    pub input_size: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    fwd: Direction<S>,
    bwd: Option<Direction<S>>,
}

impl<S: Element> Lstm<S> {
    pub fn new(input_size: usize, hidden: usize, bidirectional: bool, rng: &mut RngState) -> Self {
        Lstm {
            input_size,
            hidden,
            bidirectional,
            fwd: Direction::new(input_size, hidden, rng),
            bwd: bidirectional.then(|| Direction::new(input_size, hidden, rng)),
        }
    }

    /// Output feature width per step.
    pub fn output_features(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }

    pub fn forward(&self, seq: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = seq.shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                lhs: shape,
                rhs: vec![0, 0, self.input_size],
            });
        }
        if shape[1] == 0 {
            return Err(Error::invalid("lstm", "sequence length 0"));
        }
        let out_f = self.run_direction(seq, &self.fwd, false)?;
        match &self.bwd {
            None => Ok(out_f),
            Some(dir) => {
                let out_b = self.run_direction(seq, dir, true)?;
                concat(2, &[out_f, out_b])
            }
        }
    }

    fn run_direction(&self, seq: &Tensor<S>, dir: &Direction<S>, reverse: bool) -> Result<Tensor<S>> {
        let (b, t, f) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
        let h = self.hidden;

        // project all steps at once: [B*T, F] x [F, 4H]
        let flat = seq.reshape(&[b * t, f])?;
        let xp = add_bias(&matmul(&flat, &dir.w_x)?, &dir.bias)?.reshape(&[b, t, 4 * h])?;

        let mut hidden = Tensor::zeros(&[b, h]);
        let mut cell = Tensor::zeros(&[b, h]);
        let mut outputs: Vec<Option<Tensor<S>>> = vec![None; t];
        for step in 0..t {
            let ti = if reverse { t - 1 - step } else { step };
            let gates = add(
                &xp.narrow(1, ti, 1)?.reshape(&[b, 4 * h])?,
                &matmul(&hidden, &dir.w_h)?,
            )?;
            let gate_i = gates.narrow(1, 0, h)?.sigmoid();
            let gate_f = gates.narrow(1, h, h)?.sigmoid();
            let gate_g = gates.narrow(1, 2 * h, h)?.tanh();
            let gate_o = gates.narrow(1, 3 * h, h)?.sigmoid();
            cell = add(&mul(&gate_f, &cell)?, &mul(&gate_i, &gate_g)?)?;
            hidden = mul(&gate_o, &cell.tanh())?;
            outputs[ti] = Some(hidden.reshape(&[b, 1, h])?);
        }
        let steps: Vec<Tensor<S>> = outputs.into_iter().map(|o| o.unwrap()).collect();
        concat(1, &steps)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = vec![self.fwd.w_x.clone(), self.fwd.w_h.clone(), self.fwd.bias.clone()];
        if let Some(dir) = &self.bwd {
            p.extend([dir.w_x.clone(), dir.w_h.clone(), dir.bias.clone()]);
        }
        p
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.w_x"), self.fwd.w_x.clone()));
        out.push((format!("{prefix}.w_h"), self.fwd.w_h.clone()));
        out.push((format!("{prefix}.bias"), self.fwd.bias.clone()));
        if let Some(dir) = &self.bwd {
            out.push((format!("{prefix}.rev.w_x"), dir.w_x.clone()));
            out.push((format!("{prefix}.rev.w_h"), dir.w_h.clone()));
            out.push((format!("{prefix}.rev.bias"), dir.bias.clone()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check::grad_check;

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut rng = RngState::new(0);
        let lstm = Lstm::<f64>::new(2, 3, false, &mut rng);
        for p in lstm.params() {
            p.set_data(&vec![0.0; p.numel()]);
        }
        let x = Tensor::from_vec(&[1, 4, 2], vec![1.0; 8]).unwrap();
        let y = lstm.forward(&x).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unidirectional_output_shape() {
        let mut rng = RngState::new(1);
        let lstm = Lstm::<f64>::new(2, 4, false, &mut rng);
        let x = Tensor::<f64>::randn(&mut rng, &[1, 3, 2], 1.0);
        assert_eq!(lstm.forward(&x).unwrap().shape(), &[1, 3, 4]);
    }

    #[test]
    fn bidirectional_doubles_features() {
        let mut rng = RngState::new(2);
        let lstm = Lstm::<f64>::new(3, 5, true, &mut rng);
        assert_eq!(lstm.output_features(), 10);
        let x = Tensor::<f64>::randn(&mut rng, &[2, 4, 3], 1.0);
        assert_eq!(lstm.forward(&x).unwrap().shape(), &[2, 4, 10]);
    }

    #[test]
    fn empty_sequence_and_feature_mismatch_error() {
        let mut rng = RngState::new(3);
        let lstm = Lstm::<f64>::new(2, 3, false, &mut rng);
        assert!(lstm.forward(&Tensor::zeros(&[1, 0, 2])).is_err());
        assert!(lstm.forward(&Tensor::zeros(&[1, 3, 5])).is_err());
    }

    #[test]
    fn reversed_pass_sees_reversed_time() {
        // with shared parameters, the backward direction on x equals the
        // forward direction on time-reversed x, read back in reverse
        let mut rng = RngState::new(4);
        let lstm = Lstm::<f64>::new(1, 2, true, &mut rng);
        let p = lstm.params();
        for (fwd, bwd) in [(&p[0], &p[3]), (&p[1], &p[4]), (&p[2], &p[5])] {
            bwd.set_data(&fwd.to_vec());
        }

        let x = Tensor::from_vec(&[1, 3, 1], vec![0.1, 0.5, -0.4]).unwrap();
        let xr = Tensor::from_vec(&[1, 3, 1], vec![-0.4, 0.5, 0.1]).unwrap();
        let y = lstm.forward(&x).unwrap().to_vec(); // [1,3,4]: fwd 2 | bwd 2
        let yr = lstm.forward(&xr).unwrap().to_vec();
        for t in 0..3 {
            for j in 0..2 {
                let bwd_t = y[t * 4 + 2 + j];
                let fwd_rev = yr[(2 - t) * 4 + j];
                assert!((bwd_t - fwd_rev).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_step_bptt_gradients_check() {
        let mut rng = RngState::new(5);
        let lstm = Lstm::<f64>::new(2, 4, false, &mut rng);
        let x = Tensor::<f64>::randn(&mut rng, &[1, 3, 2], 1.0).tracked();
        let err = grad_check(|t| Ok(lstm.forward(t)?.mean()), &x, 1e-3).unwrap();
        assert!(err <= 1e-4, "dx err {err}");

        let xc = Tensor::<f64>::randn(&mut rng, &[1, 3, 2], 1.0);
        for p in lstm.params() {
            let err = grad_check(|_| Ok(lstm.forward(&xc)?.mean()), &p, 1e-3).unwrap();
            assert!(err <= 1e-4, "param err {err}");
        }
    }
}
