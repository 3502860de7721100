//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) to a shape, a flat data
//! buffer, and an optional gradient buffer. Operations on tracked tensors
//! record the producing op and its inputs on the value itself; calling
//! [`Tensor::backward`] on a scalar loss linearizes the reachable graph into
//! a [`Tape`] and replays the gradient rules in reverse, accumulating into
//! each tensor's `grad` buffer once per use.
//!
//! Element type is generic: `f32` for training and search, `f64` for
//! gradient verification. Execution is single-threaded per graph; individual
//! primitives may parallelize across output elements with a fixed reduction
//! order, so results are bit-stable for a given seed.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod grad_check;
pub mod ops;

/// Scalar element of a tensor: `f32` (default arithmetic) or `f64`
/// (verification headroom).
pub trait Element:
    num_traits::Float
    + num_traits::NumAssignOps
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static RECORDING: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let v = c.get();
        c.set(v + 1);
        v
    })
}

/// True when ops record gradient rules (the default).
pub fn is_recording() -> bool {
    RECORDING.with(|c| c.get())
}

/// Run `f` without recording gradient rules. Used for evaluation passes so
/// no graph is retained.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard(bool);
    impl Drop for Guard {
        fn drop(&mut self) {
            RECORDING.with(|c| c.set(self.0));
        }
    }
    let _guard = RECORDING.with(|c| {
        let prev = c.get();
        c.set(false);
        Guard(prev)
    });
    f()
}

/// Gradient rule context: the output's gradient and value plus handles to the
/// op's inputs. Rules accumulate into the inputs' gradient buffers.
pub(crate) struct OpCtx<'a, S: Element> {
    pub out_grad: &'a [S],
    pub out_data: &'a [S],
    pub parents: &'a [Tensor<S>],
}

type GradRule<S> = Box<dyn Fn(&OpCtx<'_, S>)>;

struct Inner<S: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    tracked: bool,
    parents: Vec<Tensor<S>>,
    rule: Option<GradRule<S>>,
}

/// Handle to a tensor value. Cloning is cheap and aliases the same buffers.
pub struct Tensor<S: Element> {
    inner: Rc<Inner<S>>,
}

impl<S: Element> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<S: Element> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("tracked", &self.inner.tracked)
            .finish()
    }
}

impl<S: Element> Tensor<S> {
    // ── Construction ────────────────────────────────────────────────

    fn new_leaf(shape: Vec<usize>, data: Vec<S>, tracked: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked,
                parents: Vec::new(),
                rule: None,
            }),
        }
    }

    /// Untracked leaf from explicit data. Errors when the element count does
    /// not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "from_vec",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self::new_leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![S::zero(); numel], false)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: S) -> Self {
        Self::new_leaf(vec![1], vec![value], false)
    }

    /// Leaf with entries drawn i.i.d. Normal(0, std^2).
    pub fn randn(rng: &mut crate::rng::RngState, shape: &[usize], std: f64) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| S::from_f64(rng.normal(std))).collect();
        Self::new_leaf(shape.to_vec(), data, false)
    }

    /// Leaf with entries drawn uniformly from `[lo, hi)`.
    pub fn rand_uniform(rng: &mut crate::rng::RngState, shape: &[usize], lo: f64, hi: f64) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| S::from_f64(rng.uniform(lo, hi))).collect();
        Self::new_leaf(shape.to_vec(), data, false)
    }

    /// Mark this value as a differentiable leaf. Returns a new handle; the
    /// data buffer is moved, not copied.
    pub fn tracked(self) -> Self {
        if self.inner.tracked {
            return self;
        }
        let data = self.inner.data.borrow().clone();
        Self::new_leaf(self.inner.shape.clone(), data, true)
    }

    /// Output of an op. Records parents and the gradient rule only when
    /// recording is on and some input is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        rule: impl Fn(&OpCtx<'_, S>) + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = is_recording() && parents.iter().any(|p| p.inner.tracked);
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked: track,
                parents: if track { parents } else { Vec::new() },
                rule: if track { Some(Box::new(rule)) } else { None },
            }),
        }
    }

    // ── Introspection ───────────────────────────────────────────────

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.tracked
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.inner.shape.len() <= 1
    }

    /// Two handles referring to the same underlying buffers.
    pub fn same_as(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    // ── Data access ─────────────────────────────────────────────────

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value. Panics when the tensor is not a scalar.
    pub fn item(&self) -> S {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.inner.shape);
        self.inner.data.borrow()[0]
    }

    /// Overwrite the value in place (same length required). Used by
    /// optimizers and checkpoint loading; does not touch the graph.
    pub fn set_data(&self, values: &[S]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    pub(crate) fn map_data_mut(&self, f: impl FnOnce(&mut [S])) {
        f(&mut self.inner.data.borrow_mut());
    }

    // ── Gradients ───────────────────────────────────────────────────

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    /// Gradient buffer, treating "never touched" as zeros.
    pub fn grad_or_zeros(&self) -> Vec<S> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![S::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate into the gradient buffer, lazily zero-initialized.
    /// No-op for untracked tensors.
    pub(crate) fn accumulate_grad(&self, f: impl FnOnce(&mut [S])) {
        if !self.inner.tracked {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![S::zero(); self.numel()]);
        f(buf);
    }

    /// Reverse-mode differentiation from a tracked scalar. Every tracked
    /// tensor reachable from `self` receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() || !self.inner.tracked {
            return Err(Error::BackwardNonScalar {
                shape: self.inner.shape.clone(),
                tracked: self.inner.tracked,
            });
        }
        self.accumulate_grad(|g| g[0] += S::one());
        Tape::record(self).replay();
        Ok(())
    }
}

/// Ordered record of the primitive ops reachable from a loss: entry inputs
/// are always produced by earlier entries or are leaves. Replaying rules in
/// reverse order performs exactly one accumulation per tensor use.
pub struct Tape<S: Element> {
    entries: Vec<Tensor<S>>,
}

impl<S: Element> Tape<S> {
    /// Linearize the tracked graph below `root` in execution order.
    pub fn record(root: &Tensor<S>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut entries = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.inner.tracked || !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                stack.push(p.clone());
            }
            entries.push(t);
        }
        // Creation ids are assigned in execution order, so sorting restores
        // a topological order regardless of DFS visit order.
        entries.sort_by_key(|t| t.inner.id);
        Tape { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Node ids in tape order (ascending execution order).
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|t| t.inner.id).collect()
    }

    /// For each entry, the ids of its recorded inputs.
    pub fn parent_ids(&self) -> Vec<Vec<u64>> {
        self.entries
            .iter()
            .map(|t| t.inner.parents.iter().map(|p| p.inner.id).collect())
            .collect()
    }

    fn replay(&self) {
        for t in self.entries.iter().rev() {
            let Some(rule) = t.inner.rule.as_ref() else { continue };
            let grad = t.inner.grad.borrow();
            let Some(out_grad) = grad.as_ref() else { continue };
            let out_data = t.inner.data.borrow();
            rule(&OpCtx { out_grad, out_data: &out_data, parents: &t.inner.parents });
        }
    }
}

/// Zero the gradient buffers of a parameter group.
pub fn zero_grads<S: Element>(params: &[Tensor<S>]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn leaf_shape_data_agree() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.numel(), 4);
    }

    #[test]
    fn backward_rejects_non_scalar_and_untracked() {
        let v = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().tracked();
        assert!(matches!(v.backward(), Err(Error::BackwardNonScalar { .. })));
        let s = Tensor::<f64>::scalar(3.0);
        assert!(s.backward().is_err());
    }

    #[test]
    fn loss_grad_wrt_itself_is_one() {
        let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().tracked();
        let loss = ops::mul(&w, &w).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(loss.grad().unwrap(), vec![1.0]);
        // d/dw sum(w*w) = 2w
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn unreached_leaf_grad_is_zeros() {
        let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().tracked();
        let other = Tensor::<f64>::from_vec(&[2], vec![5.0, 6.0]).unwrap().tracked();
        let loss = ops::mul(&w, &w).unwrap().sum();
        loss.backward().unwrap();
        assert!(other.grad().is_none());
        assert_eq!(other.grad_or_zeros(), vec![0.0, 0.0]);
    }

    #[test]
    fn fanout_accumulates_once_per_use() {
        // y = x + x: two uses of x in one op
        let x = Tensor::<f64>::scalar(3.0).tracked();
        let y = ops::add(&x, &x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);

        // two separate consumers
        let w = Tensor::<f64>::scalar(2.0).tracked();
        let a = ops::mul(&w, &w).unwrap(); // w^2
        let b = w.scale(3.0); // 3w
        let loss = ops::add(&a, &b).unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0 * 2.0 + 3.0]);
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().tracked();
        let y = ops::mul(&x, &x).unwrap();
        let z = ops::add(&y, &x).unwrap();
        let loss = z.sum();
        let tape = Tape::record(&loss);
        assert_eq!(tape.len(), 4);
        let ids = tape.ids();
        let parents = tape.parent_ids();
        let pos = |id: u64| ids.iter().position(|&i| i == id);
        for (entry_idx, ps) in parents.iter().enumerate() {
            for pid in ps {
                match pos(*pid) {
                    Some(pi) => assert!(pi < entry_idx, "input after consumer in tape"),
                    None => {} // untracked leaf
                }
            }
        }
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let w = Tensor::<f64>::scalar(2.0).tracked();
        let y = no_grad(|| ops::mul(&w, &w).unwrap());
        assert!(!y.is_tracked());
    }

    #[test]
    fn eval_twice_is_pure() {
        let w = Tensor::<f32>::from_vec(&[2], vec![0.5, -0.25]).unwrap().tracked();
        let f = || no_grad(|| ops::mul(&w, &w).unwrap().sum().item());
        assert_eq!(f(), f());
    }
}
