//! Concrete layers behind each candidate operation.

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Pool2d, PoolKind};
use crate::rng::RngState;
use crate::tensor::ops::concat;
use crate::tensor::{Element, Tensor};

use super::OpKind;

/// ReLU -> conv -> batch norm, the unit every convolutional candidate is
/// built from. Also used for cell input preprocessing (1x1).
pub struct ReluConvBn<S: Element> {
    conv: Conv2d<S>,
    bn: BatchNorm2d<S>,
}

impl<S: Element> ReluConvBn<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(ReluConvBn {
            conv: Conv2d::new(
                in_ch,
                out_ch,
                (kernel, kernel),
                (stride, stride),
                (padding, padding),
                (1, 1),
                1,
                false,
                rng,
            )?,
            bn: BatchNorm2d::new(out_ch),
        })
    }

    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        self.bn.forward(&self.conv.forward(&x.relu())?, train)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = self.conv.params();
        p.extend(self.bn.params());
        p
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.conv.named_params(&format!("{prefix}.conv"), out);
        self.bn.named_state(&format!("{prefix}.bn"), out);
    }
}

/// Separable convolution: ReLU -> depthwise -> BN -> ReLU -> pointwise -> BN.
/// A dilation of 2 gives the dilated variants; padding keeps stride-1
/// candidates shape-preserving (`pad = d*(k-1)/2`).
pub struct SepConv<S: Element> {
    dw: Conv2d<S>,
    bn_dw: BatchNorm2d<S>,
    pw: Conv2d<S>,
    bn_pw: BatchNorm2d<S>,
}

impl<S: Element> SepConv<S> {
    pub fn new(channels: usize, kernel: usize, stride: usize, dilation: usize, rng: &mut RngState) -> Result<Self> {
        let padding = dilation * (kernel - 1) / 2;
        Ok(SepConv {
            dw: Conv2d::new(
                channels,
                channels,
                (kernel, kernel),
                (stride, stride),
                (padding, padding),
                (dilation, dilation),
                channels,
                false,
                rng,
            )?,
            bn_dw: BatchNorm2d::new(channels),
            pw: Conv2d::new(channels, channels, (1, 1), (1, 1), (0, 0), (1, 1), 1, false, rng)?,
            bn_pw: BatchNorm2d::new(channels),
        })
    }

    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let y = self.bn_dw.forward(&self.dw.forward(&x.relu())?, train)?;
        self.bn_pw.forward(&self.pw.forward(&y.relu())?, train)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = self.dw.params();
        p.extend(self.bn_dw.params());
        p.extend(self.pw.params());
        p.extend(self.bn_pw.params());
        p
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.dw.named_params(&format!("{prefix}.dw"), out);
        self.bn_dw.named_state(&format!("{prefix}.bn_dw"), out);
        self.pw.named_params(&format!("{prefix}.pw"), out);
        self.bn_pw.named_state(&format!("{prefix}.bn_pw"), out);
    }
}

/// Stride-2 identity: ReLU, two offset 1x1 stride-2 convs whose outputs
/// concatenate to the full width, then BN. Halves each spatial extent.
pub struct FactorizedReduce<S: Element> {
    conv_a: Conv2d<S>,
    conv_b: Conv2d<S>,
    bn: BatchNorm2d<S>,
}

impl<S: Element> FactorizedReduce<S> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut RngState) -> Result<Self> {
        let half_a = out_ch - out_ch / 2;
        let half_b = out_ch / 2;
        if half_b == 0 {
            return Err(Error::invalid("factorized_reduce", format!("out channels {out_ch} too small to split")));
        }
        Ok(FactorizedReduce {
            conv_a: Conv2d::new(in_ch, half_a, (1, 1), (2, 2), (0, 0), (1, 1), 1, false, rng)?,
            conv_b: Conv2d::new(in_ch, half_b, (1, 1), (2, 2), (0, 0), (1, 1), 1, false, rng)?,
            bn: BatchNorm2d::new(out_ch),
        })
    }

    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let x = x.relu();
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let a = self.conv_a.forward(&x)?;
        // second path offset by one pixel so the two strided grids interleave
        let shifted = x.narrow(2, 1, h - 1)?.narrow(3, 1, w - 1)?;
        let b = self.conv_b.forward(&shifted)?;
        self.bn.forward(&concat(1, &[a, b])?, train)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = self.conv_a.params();
        p.extend(self.conv_b.params());
        p.extend(self.bn.params());
        p
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.conv_a.named_params(&format!("{prefix}.conv_a"), out);
        self.conv_b.named_params(&format!("{prefix}.conv_b"), out);
        self.bn.named_state(&format!("{prefix}.bn"), out);
    }
}

/// A single instantiated candidate at a fixed channel width and stride.
pub enum CandidateOp<S: Element> {
    /// 3x3 pool followed by batch norm.
    Pool { pool: Pool2d, bn: BatchNorm2d<S> },
    /// Separable or dilated-separable convolution.
    Conv(SepConv<S>),
    /// Stride-1 skip connection.
    Identity,
    /// Stride-2 skip connection.
    Reduce(FactorizedReduce<S>),
    /// The `none` op: a zero map (spatially reduced at stride 2).
    Zero { stride: usize },
}

/// Instantiate `kind` for a mixed edge: input and output widths are both
/// `channels`, spatial extent is preserved at stride 1 and halved at
/// stride 2.
pub fn build_candidate<S: Element>(
    kind: OpKind,
    channels: usize,
    stride: usize,
    rng: &mut RngState,
) -> Result<CandidateOp<S>> {
    if !(stride == 1 || stride == 2) {
        return Err(Error::invalid("build_candidate", format!("stride must be 1 or 2, got {stride}")));
    }
    if channels == 0 {
        return Err(Error::invalid("build_candidate", "channels must be >= 1"));
    }
    Ok(match kind {
        OpKind::MaxPool3x3 => CandidateOp::Pool {
            pool: Pool2d::new(PoolKind::Max, (3, 3), (stride, stride), (1, 1)),
            bn: BatchNorm2d::new(channels),
        },
        OpKind::AvgPool3x3 => CandidateOp::Pool {
            pool: Pool2d::new(PoolKind::Avg, (3, 3), (stride, stride), (1, 1)),
            bn: BatchNorm2d::new(channels),
        },
        OpKind::SepConv3x3 => CandidateOp::Conv(SepConv::new(channels, 3, stride, 1, rng)?),
        OpKind::SepConv5x5 => CandidateOp::Conv(SepConv::new(channels, 5, stride, 1, rng)?),
        OpKind::DilConv3x3 => CandidateOp::Conv(SepConv::new(channels, 3, stride, 2, rng)?),
        OpKind::DilConv5x5 => CandidateOp::Conv(SepConv::new(channels, 5, stride, 2, rng)?),
        OpKind::SkipConnect => {
            if stride == 1 {
                CandidateOp::Identity
            } else {
                CandidateOp::Reduce(FactorizedReduce::new(channels, channels, rng)?)
            }
        }
        OpKind::None => CandidateOp::Zero { stride },
    })
}

impl<S: Element> CandidateOp<S> {
    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        match self {
            CandidateOp::Pool { pool, bn } => bn.forward(&pool.forward(x)?, train),
            CandidateOp::Conv(conv) => conv.forward(x, train),
            CandidateOp::Identity => Ok(x.clone()),
            CandidateOp::Reduce(red) => red.forward(x, train),
            CandidateOp::Zero { stride } => {
                let s = x.shape();
                let out = [
                    s[0],
                    s[1],
                    (s[2] + stride - 1) / stride,
                    (s[3] + stride - 1) / stride,
                ];
                Ok(Tensor::zeros(&out))
            }
        }
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        match self {
            CandidateOp::Pool { bn, .. } => bn.params(),
            CandidateOp::Conv(conv) => conv.params(),
            CandidateOp::Identity | CandidateOp::Zero { .. } => Vec::new(),
            CandidateOp::Reduce(red) => red.params(),
        }
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        match self {
            CandidateOp::Pool { bn, .. } => bn.named_state(&format!("{prefix}.bn"), out),
            CandidateOp::Conv(conv) => conv.named_state(prefix, out),
            CandidateOp::Identity | CandidateOp::Zero { .. } => {}
            CandidateOp::Reduce(red) => red.named_state(prefix, out),
        }
    }
}
