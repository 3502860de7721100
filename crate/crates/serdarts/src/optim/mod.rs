//! Optimizers, the cosine learning-rate schedule, and the training loops.
//!
//! Network weights train with SGD + momentum under cosine annealing;
//! architecture weights train with an adaptive-moment (Adam) update. The
//! bilevel search alternates single steps of each: alpha from search-split
//! batches, weights from train-split batches (first-order approximation).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::rng::RngState;
use crate::tensor::ops::cross_entropy;
use crate::tensor::{zero_grads, Element, Tensor};

// ── Configuration ───────────────────────────────────────────────────

/// SGD + momentum settings for network weights, including the cosine
/// schedule endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Schedule length (epochs).
    pub total_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr_max: 0.025, lr_min: 1e-3, momentum: 0.9, weight_decay: 3e-4, total_epochs: 300 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(Error::invalid("sgd_config", "need 0 <= lr_min <= lr_max"));
        }
        if self.total_epochs == 0 {
            return Err(Error::invalid("sgd_config", "total_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Adaptive-moment settings for the alpha tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaOptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for AlphaOptConfig {
    fn default() -> Self {
        AlphaOptConfig { lr: 3e-4, beta1: 0.5, beta2: 0.999, weight_decay: 1e-3 }
    }
}

impl AlphaOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::invalid("alpha_opt_config", "lr must be >= 0"));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("alpha_opt_config", "betas must be in [0,1)"));
            }
        }
        Ok(())
    }
}

/// Search-loop shape: epochs, batch size, clipping, seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for SearchLoopConfig {
    fn default() -> Self {
        SearchLoopConfig { epochs: 300, batch_size: 16, grad_clip: 5.0, seed: 0 }
    }
}

impl SearchLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("search_loop_config", "epochs and batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Cosine annealing: `lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2`.
/// Monotonically non-increasing on `0..=T`.
pub fn cosine_lr(cfg: &SgdConfig, epoch: usize) -> Result<f64> {
    cfg.validate()?;
    if epoch > cfg.total_epochs {
        return Err(Error::invalid(
            "cosine_lr",
            format!("epoch {epoch} past schedule end {}", cfg.total_epochs),
        ));
    }
    let progress = epoch as f64 / cfg.total_epochs as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

// ── Optimizers ──────────────────────────────────────────────────────

fn finite_grads<S: Element>(params: &[Tensor<S>], context: &str) -> Result<()> {
    for p in params {
        if let Some(g) = p.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("{context}: gradient of tensor {}", p.id()) });
            }
        }
    }
    Ok(())
}

/// SGD with momentum and L2 weight decay. Velocity state is keyed by tensor
/// identity and persists across steps.
pub struct Sgd<S: Element> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<u64, Vec<S>>,
}

impl<S: Element> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: HashMap::new() }
    }

    pub fn from_config(cfg: &SgdConfig) -> Self {
        Self::new(cfg.momentum, cfg.weight_decay)
    }

    /// `v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v`.
    /// Aborts (no mutation) when any populated gradient is non-finite.
    pub fn step(&mut self, params: &[Tensor<S>], lr: f64) -> Result<()> {
        finite_grads(params, "sgd_step")?;
        let mu = S::from_f64(self.momentum);
        let wd = S::from_f64(self.weight_decay);
        let lr = S::from_f64(lr);
        for p in params {
            let Some(grad) = p.grad() else { continue };
            let v = self.velocity.entry(p.id()).or_insert_with(|| vec![S::zero(); grad.len()]);
            p.map_data_mut(|data| {
                for i in 0..data.len() {
                    v[i] = mu * v[i] + (grad[i] + wd * data[i]);
                    data[i] = data[i] - lr * v[i];
                }
            });
        }
        Ok(())
    }
}

/// Adam with bias correction, used for the alpha tables.
pub struct AdamOpt<S: Element> {
    pub cfg: AlphaOptConfig,
    m: HashMap<u64, Vec<S>>,
    v: HashMap<u64, Vec<S>>,
    t: u32,
}

impl<S: Element> AdamOpt<S> {
    pub fn new(cfg: AlphaOptConfig) -> Self {
        AdamOpt { cfg, m: HashMap::new(), v: HashMap::new(), t: 0 }
    }

    pub fn step(&mut self, params: &[Tensor<S>]) -> Result<()> {
        finite_grads(params, "alpha_step")?;
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        let (b1s, b2s) = (S::from_f64(b1), S::from_f64(b2));
        let wd = S::from_f64(self.cfg.weight_decay);
        let eps = S::from_f64(1e-8);
        for p in params {
            let Some(grad) = p.grad() else { continue };
            let m = self.m.entry(p.id()).or_insert_with(|| vec![S::zero(); grad.len()]);
            let v = self.v.entry(p.id()).or_insert_with(|| vec![S::zero(); grad.len()]);
            p.map_data_mut(|data| {
                for i in 0..data.len() {
                    let g = grad[i] + wd * data[i];
                    m[i] = b1s * m[i] + (S::one() - b1s) * g;
                    v[i] = b2s * v[i] + (S::one() - b2s) * g * g;
                    let m_hat = Element::to_f64(m[i]) / bias1;
                    let v_hat = Element::to_f64(v[i]) / bias2;
                    data[i] = data[i]
                        - S::from_f64(self.cfg.lr * m_hat / (v_hat.sqrt() + Element::to_f64(eps)));
                }
            });
        }
        Ok(())
    }
}

/// Scale all gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<S: Element>(params: &[Tensor<S>], max_norm: f64) -> f64 {
    let mut total = 0.0f64;
    for p in params {
        if let Some(g) = p.grad() {
            for v in g {
                let x = Element::to_f64(v);
                total += x * x;
            }
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for p in params {
            p.accumulate_grad(|g| {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            });
        }
    }
    norm
}

// ── Datasets and batching ───────────────────────────────────────────

/// One labelled example: flat features plus the per-example shape the model
/// expects (e.g. `[1,128,128]`).
#[derive(Debug, Clone)]
pub struct Example<S> {
    pub features: Vec<S>,
    pub shape: Vec<usize>,
    pub label: usize,
}

/// Stack examples along a new leading batch axis.
pub fn make_batch<S: Element>(examples: &[&Example<S>]) -> Result<(Tensor<S>, Vec<usize>)> {
    let first = examples.first().ok_or_else(|| Error::invalid("make_batch", "empty batch"))?;
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(&first.shape);
    let mut data = Vec::with_capacity(examples.len() * first.features.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.shape != first.shape {
            return Err(Error::ShapeMismatch {
                op: "make_batch",
                lhs: first.shape.clone(),
                rhs: ex.shape.clone(),
            });
        }
        data.extend_from_slice(&ex.features);
        labels.push(ex.label);
    }
    Ok((Tensor::from_vec(&shape, data)?, labels))
}

// ── Model traits ────────────────────────────────────────────────────

/// Anything that maps a batch to class logits and exposes its trainable
/// network weights.
pub trait TrainableModel<S: Element> {
    fn logits(&self, x: &Tensor<S>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<S>>;
    fn weight_params(&self) -> Vec<Tensor<S>>;
}

/// A model that additionally carries architecture weights.
pub trait SearchModel<S: Element>: TrainableModel<S> {
    fn alpha_params(&self) -> Vec<Tensor<S>>;
}

// ── Metrics ─────────────────────────────────────────────────────────

/// Loss plus weighted accuracy (overall fraction correct) and unweighted
/// accuracy (mean of per-class recalls over classes present).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub wa: f64,
    pub ua: f64,
}

#[derive(Default)]
struct MetricAccum {
    loss_sum: f64,
    seen: usize,
    correct: usize,
    per_class_total: HashMap<usize, usize>,
    per_class_correct: HashMap<usize, usize>,
}

impl MetricAccum {
    fn update(&mut self, loss: f64, predictions: &[usize], labels: &[usize]) {
        self.loss_sum += loss * labels.len() as f64;
        self.seen += labels.len();
        for (&p, &y) in predictions.iter().zip(labels) {
            *self.per_class_total.entry(y).or_default() += 1;
            if p == y {
                self.correct += 1;
                *self.per_class_correct.entry(y).or_default() += 1;
            }
        }
    }

    fn finish(self) -> Metrics {
        let mut recalls = Vec::new();
        for (class, &total) in &self.per_class_total {
            let correct = self.per_class_correct.get(class).copied().unwrap_or(0);
            recalls.push(correct as f64 / total as f64);
        }
        Metrics {
            loss: self.loss_sum / self.seen.max(1) as f64,
            wa: self.correct as f64 / self.seen.max(1) as f64,
            ua: recalls.iter().sum::<f64>() / recalls.len().max(1) as f64,
        }
    }
}

/// Per-epoch search metrics, one set per split.
#[derive(Debug, Clone, Copy)]
pub struct SearchEpochMetrics {
    pub search: Metrics,
    pub train: Metrics,
}

// ── Loops ───────────────────────────────────────────────────────────

fn batch_indices(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn forward_batch<S: Element, M: TrainableModel<S> + ?Sized>(
    model: &M,
    examples: &[Example<S>],
    idx: &[usize],
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Tensor<S>, Vec<usize>, Vec<usize>)> {
    let refs: Vec<&Example<S>> = idx.iter().map(|&i| &examples[i]).collect();
    let (x, labels) = make_batch(&refs)?;
    let logits = model.logits(&x, ctx)?;
    let loss = cross_entropy(&logits, &labels)?;
    let loss_val = Element::to_f64(loss.item());
    if !loss_val.is_finite() {
        return Err(Error::NonFinite { context: "batch loss".into() });
    }
    let preds = logits.argmax_rows()?;
    Ok((loss, preds, labels))
}

fn grads_all_zero<S: Element>(params: &[Tensor<S>]) -> bool {
    params.iter().all(|p| match p.grad() {
        None => true,
        Some(g) => g.iter().all(|v| *v == S::zero()),
    })
}

/// One epoch of first-order alternating bilevel search.
///
/// For each search-split batch (paired with a train-split batch, cycling):
/// (1) backprop the search-batch loss and update only the alpha tables;
/// (2) backprop the train-batch loss, clip the weight gradient norm, and
/// update only the network weights. Returns mean losses/accuracies of both
/// splits as observed during the epoch.
pub fn search_epoch<S: Element, M: SearchModel<S>>(
    model: &M,
    search_split: &[Example<S>],
    train_split: &[Example<S>],
    weight_opt: &mut Sgd<S>,
    weight_lr: f64,
    alpha_opt: &mut AdamOpt<S>,
    cfg: &SearchLoopConfig,
    rng: &mut RngState,
) -> Result<SearchEpochMetrics> {
    cfg.validate()?;
    if search_split.is_empty() || train_split.is_empty() {
        return Err(Error::Dataset("search_epoch: empty split".into()));
    }
    let weights = model.weight_params();
    let alphas = model.alpha_params();

    let search_batches = batch_indices(search_split.len(), cfg.batch_size, rng);
    let train_batches = batch_indices(train_split.len(), cfg.batch_size, rng);

    let mut search_acc = MetricAccum::default();
    let mut train_acc = MetricAccum::default();

    for (i, sbatch) in search_batches.iter().enumerate() {
        // (1) alpha step from the search split
        zero_grads(&weights);
        zero_grads(&alphas);
        let (loss, preds, labels) = forward_batch(model, search_split, sbatch, &mut ForwardCtx::Train(rng))?;
        search_acc.update(Element::to_f64(loss.item()), &preds, &labels);
        loss.backward()?;
        zero_grads(&weights);
        debug_assert!(grads_all_zero(&weights), "weight grads must be zero before alpha step");
        alpha_opt.step(&alphas)?;

        // (2) weight step from the train split
        let tbatch = &train_batches[i % train_batches.len()];
        zero_grads(&weights);
        zero_grads(&alphas);
        let (loss, preds, labels) = forward_batch(model, train_split, tbatch, &mut ForwardCtx::Train(rng))?;
        train_acc.update(Element::to_f64(loss.item()), &preds, &labels);
        loss.backward()?;
        zero_grads(&alphas);
        debug_assert!(grads_all_zero(&alphas), "alpha grads must be zero before weight step");
        clip_grad_norm(&weights, cfg.grad_clip);
        weight_opt.step(&weights, weight_lr)?;
    }

    Ok(SearchEpochMetrics { search: search_acc.finish(), train: train_acc.finish() })
}

/// One SGD epoch over a discrete model.
pub fn train_epoch<S: Element, M: TrainableModel<S>>(
    model: &M,
    data: &[Example<S>],
    opt: &mut Sgd<S>,
    lr: f64,
    batch_size: usize,
    grad_clip: f64,
    rng: &mut RngState,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Dataset("train_epoch: empty dataset".into()));
    }
    let weights = model.weight_params();
    let mut acc = MetricAccum::default();
    for batch in batch_indices(data.len(), batch_size, rng) {
        zero_grads(&weights);
        let (loss, preds, labels) = forward_batch(model, data, &batch, &mut ForwardCtx::Train(rng))?;
        acc.update(Element::to_f64(loss.item()), &preds, &labels);
        loss.backward()?;
        clip_grad_norm(&weights, grad_clip);
        opt.step(&weights, lr)?;
    }
    Ok(acc.finish())
}

/// Loss/WA/UA over a dataset in eval mode; no state is mutated and no graph
/// is recorded.
pub fn evaluate<S: Element, M: TrainableModel<S> + ?Sized>(
    model: &M,
    data: &[Example<S>],
    batch_size: usize,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Dataset("evaluate: empty dataset".into()));
    }
    let mut acc = MetricAccum::default();
    let batches: Vec<Vec<usize>> =
        (0..data.len()).collect::<Vec<_>>().chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    crate::tensor::no_grad(|| -> Result<()> {
        for batch in &batches {
            let (loss, preds, labels) = forward_batch(model, data, batch, &mut ForwardCtx::Eval)?;
            acc.update(Element::to_f64(loss.item()), &preds, &labels);
        }
        Ok(())
    })?;
    Ok(acc.finish())
}
