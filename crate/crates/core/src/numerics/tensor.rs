use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::scalar::Scalar;
use crate::error::{dim_err, Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording gradient history (inference, sampling).
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward rule of one recorded op: maps the output gradient to one optional
/// gradient per input. The mask says which inputs need one.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>>>;

pub(crate) struct GradFn<S: Scalar> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<S>>,
    pub backward: BackwardFn<S>,
}

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<S>>>,
    grad_fn: Option<GradFn<S>>,
}

/// Dense row-major tensor with optional gradient record.
///
/// Cloning is shallow: clones share storage, which is how modules and the
/// parameter ledger refer to the same trainable weight.
pub struct Tensor<S: Scalar = f32>(Rc<Inner<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let head: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &S::NAME)
            .field("requires_grad", &self.0.requires_grad.get())
            .field("head", &head)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(dim_err!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Self::raw(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        Ok(Self::from_vec(data, shape)?.with_requires_grad(true))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| S::of(v)).collect(), shape)
    }

    pub fn scalar(v: S) -> Self {
        Self::raw(vec![v], vec![], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Self::raw(vec![v; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::raw(data, shape.to_vec(), false, None)
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| S::of(rng.gen_range(lo..hi)))
            .collect();
        Self::raw(data, shape.to_vec(), false, None)
    }

    pub(crate) fn raw(
        data: Vec<S>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn<S>>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(requires_grad),
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Builds an op output, recording `backward` only when an input needs it.
    pub(crate) fn from_op(
        name: &'static str,
        data: Vec<S>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<S>>,
        backward: impl Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + 'static,
    ) -> Self {
        if grad_enabled() && inputs.iter().any(|t| t.requires_grad()) {
            let grad_fn = GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            };
            Self::raw(data, shape, true, Some(grad_fn))
        } else {
            Self::raw(data, shape, false, None)
        }
    }

    pub fn with_requires_grad(self, requires_grad: bool) -> Self {
        let data = self.0.data.borrow().clone();
        Self::raw(data, self.0.shape.clone(), requires_grad, None)
    }

    /// Copy of the values with no gradient history.
    pub fn detach(&self) -> Self {
        self.clone().with_requires_grad(false)
    }

    pub fn deep_clone(&self) -> Self {
        let data = self.0.data.borrow().clone();
        Self::raw(data, self.0.shape.clone(), self.requires_grad(), None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Marks a leaf as trainable (or frozen). Shared handles see the change.
    pub fn set_requires_grad(&self, on: bool) {
        assert!(self.is_leaf(), "set_requires_grad on a non-leaf tensor");
        self.0.requires_grad.set(on);
        if !on {
            self.zero_grad();
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.to_f64c()).collect()
    }

    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(dim_err!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.0.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_norm(&self) -> f64 {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| g.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place update of a leaf's storage. Used by optimizers and loaders only.
    pub fn update_data(&self, f: impl FnOnce(&mut [S])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// Copy of this leaf in another precision, keeping the grad flag.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .0
            .data
            .borrow()
            .iter()
            .map(|v| T::of(v.to_f64c()))
            .collect();
        Tensor::raw(data, self.0.shape.clone(), self.requires_grad(), None)
    }

    pub(crate) fn grad_fn_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    fn accumulate_grad(&self, g: &[S]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss; leaves that require grad receive
    /// (accumulated) gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let tape = GradTape::record(self);
        tape.run(self, vec![S::one()]);
        Ok(())
    }
}

/// Ordered list of the differentiable ops reachable from a loss, latest first.
pub struct GradTape<S: Scalar> {
    nodes: Vec<Tensor<S>>,
}

impl<S: Scalar> GradTape<S> {
    pub fn record(root: &Tensor<S>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.inputs.iter().filter(|i| i.requires_grad()).cloned());
            }
            nodes.push(t);
        }
        // Ids grow with creation time, so this is reverse execution order.
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded ops (leaves excluded), in traversal order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(|t| t.grad_fn_name()).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.nodes.iter().map(|t| t.id()).collect()
    }

    fn run(&self, root: &Tensor<S>, seed: Vec<S>) {
        let mut pending: std::collections::HashMap<u64, Vec<S>> = Default::default();
        pending.insert(root.id(), seed);
        for node in &self.nodes {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&g),
                Some(gf) => {
                    let mask: Vec<bool> = gf.inputs.iter().map(|t| t.requires_grad()).collect();
                    let grads = (gf.backward)(&g, &mask);
                    debug_assert_eq!(grads.len(), gf.inputs.len(), "{}", gf.name);
                    for (input, grad) in gf.inputs.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), input.numel(), "{}", gf.name);
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(input.id(), grad);
                            }
                        }
                    }
                }
            }
        }
    }
}
