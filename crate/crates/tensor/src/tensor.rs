//! The [`Tensor`] handle and the reverse-mode graph behind it.
//!
//! Every op that consumes a tensor with `requires_grad` set records a
//! backward closure together with its parents. [`Tensor::backward`] walks
//! that graph in reverse topological order and accumulates gradients into
//! the leaf tensors that asked for them. Intermediate gradients live only
//! for the duration of the walk.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::element::Element;
use crate::error::{config_err, Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether ops on this thread currently record a backward graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording any backward graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Maps the gradient of an op's output to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Element> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: RwLock<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Dense row-major n-dimensional array taking part in reverse-mode
/// differentiation. Cloning is cheap and shares storage.
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.inner.node.as_ref().map(|n| n.op).unwrap_or("leaf");
        write!(
            f,
            "Tensor<{}>(shape={:?}, op={}, requires_grad={})",
            T::NAME,
            self.inner.shape,
            op,
            self.inner.requires_grad
        )
    }
}

impl<T: Element> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: RwLock::new(None),
                requires_grad,
                node: None,
            }),
        }
    }

    /// Build the result of an op. A graph node is recorded only when grad
    /// mode is on and at least one parent requires gradients.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{op}");
        let requires_grad = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::leaf(data, shape, false);
        }
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: RwLock::new(None),
                requires_grad: true,
                node: Some(Node {
                    op,
                    parents,
                    backward,
                }),
            }),
        }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(config_err(
                "from_vec",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::from_f64c(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], Vec::new(), false)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64c(rng.random_range(lo..hi)))
            .collect();
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Standard normal samples.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = standard_normal_vec(n, rng)
            .into_iter()
            .map(T::from_f64c)
            .collect();
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Fresh trainable leaf holding a copy of this tensor's values.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::leaf(data, self.inner.shape.clone(), true)
    }

    /// Fresh non-trainable leaf holding a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.inner.shape.clone(), false)
    }

    /// Copy into a tensor of another element type (always a constant leaf).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64c(v.to_f64c()))
            .collect();
        Tensor::leaf(data, self.inner.shape.clone(), false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64c()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    /// Overwrite the values in place. Intended for leaves (optimizer
    /// updates, checkpoint loading, finite differences).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(config_err(
                "set_data",
                format!("shape {:?} needs {} values, got {}", self.shape(), self.numel(), data.len()),
            ));
        }
        *self.inner.data.write().expect("tensor data lock poisoned") = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        let mut guard = self.inner.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.read().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.write().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut guard = self.inner.grad.write().expect("grad lock poisoned");
        match guard.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *guard = Some(g.to_vec()),
        }
    }

    /// Parents first, `self` last. Only nodes that require grad are visited.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Reverse-mode sweep from this scalar. Gradients add onto whatever the
    /// leaves already hold; call `zero_grad` between independent sweeps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let Some(node) = &t.inner.node else {
                t.accumulate_grad(&g);
                continue;
            };
            let parent_grads = (node.backward)(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "{} gradient size", node.op);
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `n` independent standard normal draws.
pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
