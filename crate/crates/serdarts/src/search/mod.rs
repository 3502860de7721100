//! The candidate operation set and the alpha-weighted mixed operation.
//!
//! Every DAG edge carries one instance of each of the eight candidates; the
//! edge's output during search is the softmax-weighted sum of all candidate
//! outputs. The softmax normalization keeps the discretization argmax
//! insensitive to the scale and shift of the raw alpha row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::ops::{add, scale_by, softmax};
use crate::tensor::{Element, Tensor};

mod candidates;

pub use candidates::{build_candidate, CandidateOp, FactorizedReduce, ReluConvBn, SepConv};

/// The fixed, ordered candidate set. Serialized names are exactly the
/// snake_case identifiers used in genotype files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_conv_3x3")]
    DilConv3x3,
    #[serde(rename = "dil_conv_5x5")]
    DilConv5x5,
    #[serde(rename = "skip_connect")]
    SkipConnect,
    #[serde(rename = "none")]
    None,
}

/// Number of candidate operations per edge.
pub const NUM_OPS: usize = 8;

impl OpKind {
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::SkipConnect,
        OpKind::None,
    ];

    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
            OpKind::SkipConnect => "skip_connect",
            OpKind::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Result<OpKind> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownOpName(name.to_string()))
    }
}

/// Architecture weights for one cell kind: a tracked `[num_edges x 8]`
/// tensor, one row per DAG edge, shared across all cells of that kind.
pub struct AlphaTable<S: Element> {
    pub table: Tensor<S>,
    pub num_edges: usize,
}

/// Standard deviation of the random alpha initialization: near-uniform
/// mixing weights at the start of search.
pub const ALPHA_INIT_STD: f64 = 1e-3;

/// Randomly initialize an alpha table with entries ~ Normal(0, 1e-3^2).
pub fn alpha_init<S: Element>(rng: &mut RngState, num_edges: usize) -> Result<AlphaTable<S>> {
    if num_edges == 0 {
        return Err(Error::invalid("alpha_init", "num_edges must be >= 1"));
    }
    Ok(AlphaTable {
        table: Tensor::randn(rng, &[num_edges, NUM_OPS], ALPHA_INIT_STD).tracked(),
        num_edges,
    })
}

impl<S: Element> AlphaTable<S> {
    /// Softmaxed mixing weights, `[num_edges x 8]`, rows summing to one.
    pub fn weights(&self) -> Result<Tensor<S>> {
        softmax(&self.table, 1)
    }

    /// Softmaxed weights of one row as plain values (no graph).
    pub fn row_weights(&self, row: usize) -> Result<Vec<f64>> {
        let w = crate::tensor::no_grad(|| self.weights())?;
        let out =
            w.data()[row * NUM_OPS..(row + 1) * NUM_OPS].iter().map(|&v| Element::to_f64(v)).collect();
        Ok(out)
    }

    /// Mean over edges of the Shannon entropy (nats) of each softmaxed row.
    /// Falls during search as edges commit to operations.
    pub fn mean_row_entropy(&self) -> Result<f64> {
        let w = crate::tensor::no_grad(|| self.weights())?;
        let wv = w.data();
        let mut total = 0.0;
        for row in 0..self.num_edges {
            let mut h = 0.0;
            for j in 0..NUM_OPS {
                let p = wv[row * NUM_OPS + j].to_f64();
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            total += h;
        }
        Ok(total / self.num_edges as f64)
    }
}

/// One mixed edge: the edge identity, one instantiated candidate per
/// [`OpKind`] at the edge's stride, and the row of the alpha table it reads.
pub struct MixedOp<S: Element> {
    pub from_node: usize,
    pub to_node: usize,
    pub row: usize,
    pub stride: usize,
    candidates: Vec<CandidateOp<S>>,
}

impl<S: Element> MixedOp<S> {
    pub fn new(
        from_node: usize,
        to_node: usize,
        row: usize,
        channels: usize,
        stride: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let candidates = OpKind::ALL
            .iter()
            .map(|&kind| build_candidate(kind, channels, stride, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedOp { from_node, to_node, row, stride, candidates })
    }

    /// Weighted sum over candidates with weights = softmax of the edge's
    /// alpha row; differentiable in both alpha and candidate parameters.
    ///
    /// The `none` candidate maps everything to zero, so its term is skipped:
    /// the value is unchanged and its weight's gradient is exactly zero
    /// through that term (alpha still receives gradient through the softmax
    /// coupling with the other weights).
    pub fn forward(&self, alpha: &AlphaTable<S>, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let row = alpha.table.narrow(0, self.row, 1)?.reshape(&[NUM_OPS])?;
        let weights = softmax(&row, 0)?;
        let mut acc: Option<Tensor<S>> = None;
        let mut out_shape: Option<Vec<usize>> = None;
        for (k, cand) in self.candidates.iter().enumerate() {
            if matches!(cand, CandidateOp::Zero { .. }) {
                continue;
            }
            let y = cand.forward(x, train)?;
            if let Some(shape) = &out_shape {
                if shape != y.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "mixed_forward",
                        lhs: shape.clone(),
                        rhs: y.shape().to_vec(),
                    });
                }
            } else {
                out_shape = Some(y.shape().to_vec());
            }
            let term = scale_by(&y, &weights.narrow(0, k, 1)?)?;
            acc = Some(match acc {
                Some(a) => add(&a, &term)?,
                None => term,
            });
        }
        Ok(acc.expect("candidate set always contains non-none ops"))
    }

    /// The instantiated candidates in [`OpKind::ALL`] order.
    pub fn candidates(&self) -> &[CandidateOp<S>] {
        &self.candidates
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        self.candidates.iter().flat_map(|c| c.params()).collect()
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        for (k, cand) in self.candidates.iter().enumerate() {
            cand.named_state(&format!("{prefix}.{}", OpKind::ALL[k].name()), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_names_are_exact() {
        let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(
            names,
            vec![
                "max_pool_3x3",
                "avg_pool_3x3",
                "sep_conv_3x3",
                "sep_conv_5x5",
                "dil_conv_3x3",
                "dil_conv_5x5",
                "skip_connect",
                "none"
            ]
        );
        for k in OpKind::ALL {
            assert_eq!(OpKind::from_name(k.name()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!(OpKind::from_name("conv_7x7").is_err());
    }

    #[test]
    fn alpha_init_is_deterministic_and_shaped() {
        let t1: AlphaTable<f64> = alpha_init(&mut RngState::new(9), 14).unwrap();
        let t2: AlphaTable<f64> = alpha_init(&mut RngState::new(9), 14).unwrap();
        assert_eq!(t1.table.shape(), &[14, NUM_OPS]);
        assert_eq!(t1.table.to_vec(), t2.table.to_vec());
        assert!(t1.table.is_tracked());
    }

    #[test]
    fn alpha_init_scale_statistics() {
        // RMS magnitude of Normal(0, 1e-3) over 10_000 draws within 20%
        let t: AlphaTable<f64> = alpha_init(&mut RngState::new(1), 1250).unwrap();
        let v = t.table.to_vec();
        assert_eq!(v.len(), 10_000);
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms - 1e-3).abs() / 1e-3 < 0.2, "rms = {rms}");
    }

    #[test]
    fn invalid_alpha_sizes_error() {
        assert!(alpha_init::<f64>(&mut RngState::new(0), 0).is_err());
    }

    #[test]
    fn all_candidates_reduce_32x32_to_16x16() {
        let mut rng = RngState::new(3);
        let x = Tensor::<f32>::randn(&mut rng, &[1, 16, 32, 32], 1.0);
        for kind in OpKind::ALL {
            let cand: CandidateOp<f32> = build_candidate(kind, 16, 2, &mut rng).unwrap();
            let y = cand.forward(&x, false).unwrap();
            assert_eq!(y.shape(), &[1, 16, 16, 16], "{}", kind.name());
        }
    }

    #[test]
    fn skip_is_identity_and_none_is_zero() {
        let mut rng = RngState::new(4);
        let x = Tensor::<f64>::randn(&mut rng, &[1, 4, 8, 8], 1.0);
        let skip: CandidateOp<f64> = build_candidate(OpKind::SkipConnect, 4, 1, &mut rng).unwrap();
        assert_eq!(skip.forward(&x, false).unwrap().to_vec(), x.to_vec());

        let none: CandidateOp<f64> = build_candidate(OpKind::None, 4, 1, &mut rng).unwrap();
        let y = none.forward(&x, false).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.to_vec().iter().all(|v| *v == 0.0));

        let none2: CandidateOp<f64> = build_candidate(OpKind::None, 4, 2, &mut rng).unwrap();
        assert_eq!(none2.forward(&x, false).unwrap().shape(), &[1, 4, 4, 4]);
    }

    #[test]
    fn invalid_stride_errors() {
        let mut rng = RngState::new(5);
        assert!(build_candidate::<f64>(OpKind::SepConv3x3, 4, 3, &mut rng).is_err());
        assert!(build_candidate::<f64>(OpKind::SepConv3x3, 0, 1, &mut rng).is_err());
    }

    fn one_hot_row(hot: usize) -> Vec<f64> {
        (0..NUM_OPS).map(|j| if j == hot { 1e6 } else { -1e6 }).collect()
    }

    #[test]
    fn one_hot_alpha_selects_single_candidate() {
        let mut rng = RngState::new(6);
        let alpha: AlphaTable<f64> = alpha_init(&mut RngState::new(0), 1).unwrap();
        alpha.table.set_data(&one_hot_row(OpKind::SkipConnect.index()));
        let mix = MixedOp::new(0, 2, 0, 4, 1, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&mut rng, &[1, 4, 6, 6], 1.0);
        let y = mix.forward(&alpha, &x, false).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn uniform_alpha_is_mean_of_candidates() {
        let mut rng = RngState::new(7);
        let alpha: AlphaTable<f64> = alpha_init(&mut RngState::new(0), 1).unwrap();
        alpha.table.set_data(&vec![0.0; NUM_OPS]);
        let mix = MixedOp::new(0, 2, 0, 4, 1, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&mut rng, &[1, 4, 6, 6], 1.0);
        let y = mix.forward(&alpha, &x, false).unwrap();

        let mut manual = Tensor::<f64>::zeros(&[1, 4, 6, 6]);
        for cand in mix.candidates() {
            let o = cand.forward(&x, false).unwrap();
            manual = add(&manual, &o.scale(1.0 / NUM_OPS as f64)).unwrap();
        }
        for (a, b) in y.to_vec().iter().zip(manual.to_vec()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        use crate::tensor::grad_check::grad_check;
        let mut rng = RngState::new(8);
        let alpha: AlphaTable<f64> = alpha_init(&mut rng, 1).unwrap();
        let mix = MixedOp::new(0, 2, 0, 2, 1, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&mut rng, &[1, 2, 4, 4], 1.0);
        // eval mode: batch-statistic normalization inside candidates is
        // independent of alpha either way, eval just keeps probes cheap
        let err = grad_check(
            |_| Ok(mix.forward(&alpha, &x, false)?.mean()),
            &alpha.table,
            1e-3,
        )
        .unwrap();
        assert!(err <= 1e-4, "alpha grad err {err}");
    }

    #[test]
    fn mixing_is_linear_in_weights() {
        // mix(lambda*w + (1-lambda)*w') == lambda*mix(w) + (1-lambda)*mix(w')
        // with candidates fixed; softmax rows built directly
        let mut rng = RngState::new(9);
        let mix = MixedOp::new(0, 2, 0, 2, 1, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&mut rng, &[1, 2, 4, 4], 1.0);
        let outs: Vec<Vec<f64>> = mix
            .candidates()
            .iter()
            .map(|c| c.forward(&x, false).unwrap().to_vec())
            .collect();
        let mix_with = |w: &[f64]| -> Vec<f64> {
            let mut acc = vec![0.0; outs[0].len()];
            for (k, o) in outs.iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(o) {
                    *a += w[k] * v;
                }
            }
            acc
        };
        let w1 = [0.3, 0.1, 0.05, 0.05, 0.2, 0.1, 0.15, 0.05];
        let w2 = [0.05, 0.25, 0.1, 0.2, 0.05, 0.15, 0.1, 0.1];
        let lambda = 0.37;
        let blended: Vec<f64> =
            w1.iter().zip(&w2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let lhs = mix_with(&blended);
        let (m1, m2) = (mix_with(&w1), mix_with(&w2));
        for i in 0..lhs.len() {
            let rhs = lambda * m1[i] + (1.0 - lambda) * m2[i];
            assert!((lhs[i] - rhs).abs() <= 1e-5);
        }
    }
}
