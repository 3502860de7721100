//! Model assembly: the searched CNN + LSTM classifier and the three
//! hand-engineered baselines, behind one bundle type the training loops and
//! CLI drive.

use crate::cell::{Genotype, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::nn::{AttentionPool, Conv2d, Dropout, ForwardCtx, Linear, Lstm, Pool2d, PoolKind};
use crate::optim::{SearchModel, TrainableModel};
use crate::rng::RngState;
use crate::tensor::ops::softmax;
use crate::tensor::{Element, Tensor};

mod checkpoint;

pub use checkpoint::{apply_state, load_checkpoint, save_checkpoint, CheckpointHeader, ParamMeta};

/// Number of emotion classes every classifier ends in.
pub const NUM_CLASSES: usize = 4;

/// Classifier head configuration for the searched model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub lstm_units: usize,
    pub bidirectional: bool,
    pub use_attention: bool,
    /// Dense widths; the final entry must be the 4 output units.
    pub dense: Vec<usize>,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec { lstm_units: 256, bidirectional: false, use_attention: false, dense: vec![256, NUM_CLASSES] }
    }
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_units == 0 {
            return Err(Error::invalid("head_spec", "lstm_units must be >= 1"));
        }
        if self.dense.last() != Some(&NUM_CLASSES) {
            return Err(Error::invalid(
                "head_spec",
                format!("dense widths must end in {NUM_CLASSES} output units, got {:?}", self.dense),
            ));
        }
        Ok(())
    }
}

/// Baseline hyperparameters the paper leaves open.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub conv_channels: usize,
    pub dense: Vec<usize>,
    pub dropout: f64,
    pub lstm_units: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec { conv_channels: 8, dense: vec![256, NUM_CLASSES], dropout: 0.3, lstm_units: 128 }
    }
}

// ── Shared pieces ───────────────────────────────────────────────────

/// Dense stack with ReLU between layers and raw logits out.
struct DenseStack<S: Element> {
    layers: Vec<Linear<S>>,
}

impl<S: Element> DenseStack<S> {
    fn new(mut in_features: usize, widths: &[usize], rng: &mut RngState) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        for &w in widths {
            layers.push(Linear::new(in_features, w, rng));
            in_features = w;
        }
        DenseStack { layers }
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur)?;
            if i + 1 < self.layers.len() {
                cur = cur.relu();
            }
        }
        Ok(cur)
    }

    fn params(&self) -> Vec<Tensor<S>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.named_params(&format!("{prefix}.{i}"), out);
        }
    }
}

/// LSTM head over a CNN feature map: the width axis becomes time, features
/// per step are channels x height.
struct SequenceHead<S: Element> {
    lstm: Lstm<S>,
    attention: Option<AttentionPool<S>>,
    dense: DenseStack<S>,
}

impl<S: Element> SequenceHead<S> {
    fn new(
        step_features: usize,
        lstm_units: usize,
        bidirectional: bool,
        use_attention: bool,
        dense: &[usize],
        rng: &mut RngState,
    ) -> Self {
        let lstm = Lstm::new(step_features, lstm_units, bidirectional, rng);
        let out_features = lstm.output_features();
        SequenceHead {
            lstm,
            attention: use_attention.then(|| AttentionPool::new(out_features, rng)),
            dense: DenseStack::new(out_features, dense, rng),
        }
    }

    /// `[B,C,H,W] -> [B,W,C*H] -> LSTM -> pool -> dense`.
    fn forward(&self, features: &Tensor<S>) -> Result<Tensor<S>> {
        let s = features.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::invalid("sequence_head", format!("expected [B,C,H,W], got {s:?}")));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let seq = features.permute(&[0, 3, 1, 2])?.reshape(&[b, w, c * h])?;
        let out = self.lstm.forward(&seq)?;
        let pooled = match &self.attention {
            Some(att) => att.forward(&out)?,
            None => out.narrow(1, w - 1, 1)?.reshape(&[b, self.lstm.output_features()])?,
        };
        self.dense.forward(&pooled)
    }

    fn params(&self) -> Vec<Tensor<S>> {
        let mut p = self.lstm.params();
        if let Some(att) = &self.attention {
            p.extend(att.params());
        }
        p.extend(self.dense.params());
        p
    }

    fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.lstm.named_params(&format!("{prefix}.lstm"), out);
        if let Some(att) = &self.attention {
            att.named_params(&format!("{prefix}.attention"), out);
        }
        self.dense.named_state(&format!("{prefix}.dense"), out);
    }
}

// ── Model variants ──────────────────────────────────────────────────

struct DartsModel<S: Element> {
    network: Network<S>,
    head: SequenceHead<S>,
}

struct CnnBaseline<S: Element> {
    conv: Conv2d<S>,
    pool: Pool2d,
    dropout: Dropout,
    dense: DenseStack<S>,
}

struct CnnLstmBaseline<S: Element> {
    conv: Conv2d<S>,
    pool: Pool2d,
    dropout: Dropout,
    lstm: Lstm<S>,
    attention: Option<AttentionPool<S>>,
    dense: DenseStack<S>,
}

enum ModelImpl<S: Element> {
    Darts(DartsModel<S>),
    Cnn(CnnBaseline<S>),
    CnnLstm(CnnLstmBaseline<S>),
}

/// Which architecture a bundle wraps; names appear in checkpoints and CLI
/// flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Darts,
    DartsSearch,
    CnnBaseline,
    CnnLstmBaseline,
    CnnLstmAttentionBaseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Darts => "darts",
            ModelKind::DartsSearch => "darts_search",
            ModelKind::CnnBaseline => "cnn",
            ModelKind::CnnLstmBaseline => "cnn_lstm",
            ModelKind::CnnLstmAttentionBaseline => "cnn_lstm_attention",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [
            ModelKind::Darts,
            ModelKind::DartsSearch,
            ModelKind::CnnBaseline,
            ModelKind::CnnLstmBaseline,
            ModelKind::CnnLstmAttentionBaseline,
        ]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::invalid("model_kind", format!("unknown model {name:?}")))
    }
}

/// A built model: feature extractor plus head, with its genotype (when
/// searched) and a caller-set config fingerprint.
pub struct ModelBundle<S: Element> {
    pub kind: ModelKind,
    pub genotype: Option<Genotype>,
    pub fingerprint: String,
    model: ModelImpl<S>,
}

/// Discrete searched CNN fused with the LSTM head.
pub fn build_darts_model<S: Element>(
    genotype: &Genotype,
    cfg: &NetworkConfig,
    head: &HeadSpec,
    rng: &mut RngState,
) -> Result<ModelBundle<S>> {
    head.validate()?;
    let network = Network::discrete(cfg.clone(), genotype, rng)?;
    let (c, h, _w) = cfg.feature_shape(cfg.input_hw);
    let head = SequenceHead::new(c * h, head.lstm_units, head.bidirectional, head.use_attention, &head.dense, rng);
    Ok(ModelBundle {
        kind: ModelKind::Darts,
        genotype: Some(genotype.clone()),
        fingerprint: String::new(),
        model: ModelImpl::Darts(DartsModel { network, head }),
    })
}

/// Continuous supernet with the same head, for architecture search.
pub fn build_darts_search_model<S: Element>(
    cfg: &NetworkConfig,
    head: &HeadSpec,
    rng: &mut RngState,
) -> Result<ModelBundle<S>> {
    head.validate()?;
    let network = Network::search(cfg.clone(), rng)?;
    let (c, h, _w) = cfg.feature_shape(cfg.input_hw);
    let head = SequenceHead::new(c * h, head.lstm_units, head.bidirectional, head.use_attention, &head.dense, rng);
    Ok(ModelBundle {
        kind: ModelKind::DartsSearch,
        genotype: None,
        fingerprint: String::new(),
        model: ModelImpl::Darts(DartsModel { network, head }),
    })
}

/// CNN baseline: Conv(k=2,s=2,p=2) -> MaxPool(k=2,s=2) -> dropout 0.3 ->
/// two dense layers -> 4 logits.
pub fn build_cnn_baseline<S: Element>(spec: &BaselineSpec, rng: &mut RngState) -> Result<ModelBundle<S>> {
    let conv = Conv2d::new(1, spec.conv_channels, (2, 2), (2, 2), (2, 2), (1, 1), 1, true, rng)?;
    let pool = Pool2d::new(PoolKind::Max, (2, 2), (2, 2), (0, 0));
    let dropout = Dropout::new(spec.dropout)?;
    // 128 -> conv 66 -> pool 33
    let dense_in = spec.conv_channels * 33 * 33;
    let dense = DenseStack::new(dense_in, &spec.dense, rng);
    Ok(ModelBundle {
        kind: ModelKind::CnnBaseline,
        genotype: None,
        fingerprint: String::new(),
        model: ModelImpl::Cnn(CnnBaseline { conv, pool, dropout, dense }),
    })
}

/// CNN+LSTM baseline: the CNN trunk up to pooling, width-as-time sequence
/// reshape, bidirectional LSTM, optional additive attention, dense head.
pub fn build_cnn_lstm_baseline<S: Element>(
    attention: bool,
    spec: &BaselineSpec,
    rng: &mut RngState,
) -> Result<ModelBundle<S>> {
    let conv = Conv2d::new(1, spec.conv_channels, (2, 2), (2, 2), (2, 2), (1, 1), 1, true, rng)?;
    let pool = Pool2d::new(PoolKind::Max, (2, 2), (2, 2), (0, 0));
    let dropout = Dropout::new(spec.dropout)?;
    let step_features = spec.conv_channels * 33;
    let lstm = Lstm::new(step_features, spec.lstm_units, true, rng);
    let lstm_out = lstm.output_features();
    let att = attention.then(|| AttentionPool::new(lstm_out, rng));
    let dense = DenseStack::new(lstm_out, &spec.dense, rng);
    Ok(ModelBundle {
        kind: if attention { ModelKind::CnnLstmAttentionBaseline } else { ModelKind::CnnLstmBaseline },
        genotype: None,
        fingerprint: String::new(),
        model: ModelImpl::CnnLstm(CnnLstmBaseline { conv, pool, dropout, lstm, attention: att, dense }),
    })
}

impl<S: Element> ModelBundle<S> {
    /// Total trainable parameter count (alpha tables included for search
    /// bundles).
    pub fn param_count(&self) -> usize {
        self.weight_params().iter().map(|p| p.numel()).sum::<usize>()
            + self.alpha_params().iter().map(|p| p.numel()).sum::<usize>()
    }

    /// The continuous network's alpha tables, empty otherwise.
    pub fn alpha_params(&self) -> Vec<Tensor<S>> {
        match &self.model {
            ModelImpl::Darts(m) => m.network.alpha_params(),
            _ => Vec::new(),
        }
    }

    /// Alpha tables of a search bundle.
    pub fn alphas(&self) -> Option<&crate::cell::Alphas<S>> {
        match &self.model {
            ModelImpl::Darts(m) => m.network.alphas(),
            _ => None,
        }
    }

    /// Trainable parameters plus batch-norm running buffers, for
    /// checkpointing. Names are stable across builds of the same config.
    pub fn named_state(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        match &self.model {
            ModelImpl::Darts(m) => {
                m.network.named_state("network", &mut out);
                m.head.named_state("head", &mut out);
            }
            ModelImpl::Cnn(m) => {
                m.conv.named_params("conv", &mut out);
                m.dense.named_state("dense", &mut out);
            }
            ModelImpl::CnnLstm(m) => {
                m.conv.named_params("conv", &mut out);
                m.lstm.named_params("lstm", &mut out);
                if let Some(att) = &m.attention {
                    att.named_params("attention", &mut out);
                }
                m.dense.named_state("dense", &mut out);
            }
        }
        out
    }
}

impl<S: Element> TrainableModel<S> for ModelBundle<S> {
    fn logits(&self, x: &Tensor<S>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<S>> {
        let train = ctx.is_train();
        match &self.model {
            ModelImpl::Darts(m) => {
                let features = m.network.forward(x, train)?;
                m.head.forward(&features)
            }
            ModelImpl::Cnn(m) => {
                let y = m.pool.forward(&m.conv.forward(x)?)?;
                let y = m.dropout.forward(&y, ctx)?;
                let b = y.shape()[0];
                let flat = y.reshape(&[b, y.numel() / b])?;
                m.dense.forward(&flat)
            }
            ModelImpl::CnnLstm(m) => {
                let y = m.pool.forward(&m.conv.forward(x)?)?;
                let s = y.shape().to_vec();
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                let seq = y.permute(&[0, 3, 1, 2])?.reshape(&[b, w, c * h])?;
                let out = m.lstm.forward(&seq)?;
                let pooled = match &m.attention {
                    Some(att) => att.forward(&out)?,
                    None => out.narrow(1, w - 1, 1)?.reshape(&[b, m.lstm.output_features()])?,
                };
                let pooled = m.dropout.forward(&pooled, ctx)?;
                m.dense.forward(&pooled)
            }
        }
    }

    fn weight_params(&self) -> Vec<Tensor<S>> {
        match &self.model {
            ModelImpl::Darts(m) => {
                let mut p = m.network.weight_params();
                p.extend(m.head.params());
                p
            }
            ModelImpl::Cnn(m) => {
                let mut p = m.conv.params();
                p.extend(m.dense.params());
                p
            }
            ModelImpl::CnnLstm(m) => {
                let mut p = m.conv.params();
                p.extend(m.lstm.params());
                if let Some(att) = &m.attention {
                    p.extend(att.params());
                }
                p.extend(m.dense.params());
                p
            }
        }
    }
}

impl<S: Element> SearchModel<S> for ModelBundle<S> {
    fn alpha_params(&self) -> Vec<Tensor<S>> {
        ModelBundle::alpha_params(self)
    }
}

/// Class predictions and probabilities for a batch (eval mode). Ties take
/// the lowest class index; probability rows sum to one.
pub fn predict<S: Element>(model: &ModelBundle<S>, x: &Tensor<S>) -> Result<(Vec<usize>, Tensor<S>)> {
    crate::tensor::no_grad(|| {
        let logits = model.logits(x, &mut ForwardCtx::Eval)?;
        let probs = softmax(&logits, 1)?;
        let classes = probs.argmax_rows()?;
        Ok((classes, probs))
    })
}

#[cfg(test)]
mod tests;
