//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are row-major, single-threaded, and generic over `f32`/`f64`.
//! Every operation records a backward closure when any input requires
//! gradients; [`Tensor::backward`] walks the graph in reverse topological
//! order. Gradients flow through interior nodes in a scratch map that is
//! rebuilt per backward pass, and accumulate persistently into leaves, so
//! calling backward twice on the same graph doubles leaf gradients.

pub mod gradcheck;
pub mod optim;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::rc::Rc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Element type for tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + 'static
{
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected} data elements for shape {shape:?}, got {got}")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of bounds for dimension of size {size}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("{op}: expected a 2-d tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NEXT_ID: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
    static NO_GRAD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` without recording any backward graph (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

/// Backward closure: given the gradient of this node's output, return one
/// gradient buffer per parent (`None` for parents that need no gradient).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    /// Persistent gradient, used for leaves only.
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A reference-counted handle to a tensor graph node.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(TensorError::DataLength {
                op: "from_vec",
                shape: shape.to_vec(),
                expected: numel(shape),
                got: data.len(),
            });
        }
        Ok(Self::new_node(shape.to_vec(), data, false, vec![], None))
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(TensorError::DataLength {
                op: "parameter",
                shape: shape.to_vec(),
                expected: numel(shape),
                got: data.len(),
            });
        }
        Ok(Self::new_node(shape.to_vec(), data, true, vec![], None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_node(shape.to_vec(), vec![T::zero(); numel(shape)], false, vec![], None)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_node(vec![1], vec![v], false, vec![], None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.data.borrow()[0]
    }

    /// Overwrite a leaf's data in place (optimizer updates).
    pub fn set_data(&self, data: &[T]) {
        assert!(self.is_leaf(), "set_data on non-leaf tensor");
        assert_eq!(data.len(), self.numel());
        self.node.data.borrow_mut().copy_from_slice(data);
    }

    /// Persistent (leaf) gradient, if any backward pass has reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn accumulate_leaf_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.node.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::NotMatrix {
                op,
                shape: self.node.shape.clone(),
            }),
        }
    }

    /// Reverse-mode backward pass from a scalar output.
    ///
    /// Interior gradients live in a per-call scratch map; leaf gradients
    /// accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() requires a scalar loss");
        let order = self.topo_order();
        let mut flow: HashMap<u64, Vec<T>> = HashMap::new();
        flow.insert(self.node.id, vec![T::one()]);
        for t in order {
            let Some(g) = flow.remove(&t.node.id) else {
                continue;
            };
            match &t.node.backward {
                Some(bf) => {
                    let parent_grads = bf(&g);
                    debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                    for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.node.requires_grad {
                            continue;
                        }
                        match flow.get_mut(&p.node.id) {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(pg) {
                                    *a = *a + b;
                                }
                            }
                            None => {
                                flow.insert(p.node.id, pg);
                            }
                        }
                    }
                }
                None => {
                    if t.node.requires_grad {
                        t.accumulate_leaf_grad(&g);
                    }
                }
            }
        }
    }

    /// Nodes reachable from `self`, outputs before inputs.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut post = Vec::new();
        // Iterative DFS; (node, child_index) frames.
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.node.id, ());
        while let Some((t, idx)) = stack.pop() {
            if idx < t.node.parents.len() {
                let child = t.node.parents[idx].clone();
                stack.push((t, idx + 1));
                if !visited.contains_key(&child.node.id) {
                    visited.insert(child.node.id, ());
                    stack.push((child, 0));
                }
            } else {
                post.push(t);
            }
        }
        post.reverse();
        post
    }
}

fn wants_grad<T: Scalar>(inputs: &[&Tensor<T>]) -> bool {
    grad_enabled() && inputs.iter().any(|t| t.node.requires_grad)
}

// ---------------------------------------------------------------------------
// Raw kernels (shared by forward and backward paths)
// ---------------------------------------------------------------------------

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
fn matmul_nt_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `aᵀ (k×m→m×k input) · b` where `a` is `m×k` and `b` is `m×n`.
fn matmul_tn_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let o_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_rows_raw<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let o = &mut out[i * cols..(i + 1) * cols];
        let mut denom = T::zero();
        for (oj, &xj) in o.iter_mut().zip(row) {
            let e = (xj - max).exp();
            *oj = e;
            denom = denom + e;
        }
        for oj in o.iter_mut() {
            *oj = *oj / denom;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

impl<T: Scalar> Tensor<T> {
    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.rows_cols("matmul")?;
        let (k2, n) = rhs.rows_cols("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out = matmul_raw(&self.data(), &rhs.data(), m, k, n);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, rhs]) {
            let a = self.clone();
            let b = rhs.clone();
            Some(Box::new(move |g: &[T]| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let da = matmul_nt_raw(g, &b.data(), m, n, k);
                let db = matmul_tn_raw(&a.data(), g, m, k, n);
                vec![Some(da), Some(db)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![m, n],
            out,
            backward.is_some(),
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, rhs]) {
            Some(Box::new(move |g: &[T]| {
                vec![Some(g.to_vec()), Some(g.to_vec())]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            backward.is_some(),
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Elementwise difference.
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, rhs]) {
            Some(Box::new(move |g: &[T]| {
                vec![
                    Some(g.to_vec()),
                    Some(g.iter().map(|&v| -v).collect()),
                ]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            backward.is_some(),
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, rhs]) {
            let a = self.clone();
            let b = rhs.clone();
            Some(Box::new(move |g: &[T]| {
                let da: Vec<T> = g.iter().zip(b.data().iter()).map(|(&g, &b)| g * b).collect();
                let db: Vec<T> = g.iter().zip(a.data().iter()).map(|(&g, &a)| g * a).collect();
                vec![Some(da), Some(db)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            backward.is_some(),
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&v| v * c).collect();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| {
                vec![Some(g.iter().map(|&v| v * c).collect())]
            }))
        } else {
            None
        };
        Tensor::new_node(
            self.shape().to_vec(),
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        )
    }

    /// Add a bias row-vector `[c]` to every row of a `[r × c]` matrix.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("add_bias")?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.data();
        let out: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        drop(bd);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, bias]) {
            Some(Box::new(move |g: &[T]| {
                let mut db = vec![T::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] = db[j] + g[i * c + j];
                    }
                }
                vec![Some(g.to_vec()), Some(db)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![r, c],
            out,
            backward.is_some(),
            vec![self.clone(), bias.clone()],
            backward,
        ))
    }

    /// 2-d transpose.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("transpose")?;
        let out = transpose_raw(&self.data(), r, c);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| {
                vec![Some(transpose_raw(g, c, r))]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![c, r],
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::DataLength {
                op: "reshape",
                shape: shape.to_vec(),
                expected: self.numel(),
                got: numel(shape),
            });
        }
        let out = self.to_vec();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| vec![Some(g.to_vec())]))
        } else {
            None
        };
        Ok(Tensor::new_node(
            shape.to_vec(),
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Rows `r0..r1` of a matrix.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("slice_rows")?;
        if r0 > r1 || r1 > r {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: r1,
                size: r,
            });
        }
        let out = self.data()[r0 * c..r1 * c].to_vec();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| {
                let mut dx = vec![T::zero(); r * c];
                dx[r0 * c..r1 * c].copy_from_slice(g);
                vec![Some(dx)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![r1 - r0, c],
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Columns `c0..c1` of a matrix.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("slice_cols")?;
        if c0 > c1 || c1 > c {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: c1,
                size: c,
            });
        }
        let w = c1 - c0;
        let data = self.data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&data[i * c + c0..i * c + c1]);
        }
        drop(data);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + c0..i * c + c1].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![Some(dx)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![r, w],
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Mean over rows of a `[r × c]` matrix, yielding `[1 × c]`.
    pub fn mean_rows(&self) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("mean_rows")?;
        if r == 0 {
            return Err(TensorError::Invalid {
                op: "mean_rows",
                msg: "empty matrix".into(),
            });
        }
        let inv = T::one() / T::from_f64c(r as f64);
        let data = self.data();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + data[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        drop(data);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j] * inv;
                    }
                }
                vec![Some(dx)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![1, c],
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Sum of all elements, yielding a scalar `[1]`.
    pub fn sum_all(&self) -> Tensor<T> {
        let total: T = self.data().iter().cloned().sum();
        let n = self.numel();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            Some(Box::new(move |g: &[T]| vec![Some(vec![g[0]; n])]))
        } else {
            None
        };
        Tensor::new_node(vec![1], vec![total], backward.is_some(), vec![self.clone()], backward)
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows) of a matrix.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        match axis {
            1 => self.softmax_rows(),
            0 => Ok(self.transpose()?.softmax_rows()?.transpose()?),
            _ => Err(TensorError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for a matrix"),
            }),
        }
    }

    /// Row-wise softmax with max-subtraction stabilization.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("softmax")?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let out = softmax_rows_raw(&self.data(), r, c);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            let y = out.clone();
            Some(Box::new(move |g: &[T]| {
                // dx = (g - <g, y>_row) ⊙ y
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..c {
                        dx[i * c + j] = (gr[j] - dot) * yr[j];
                    }
                }
                vec![Some(dx)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![r, c],
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64c((2.0 / std::f64::consts::PI).sqrt());
        let a = T::from_f64c(0.044715);
        let half = T::from_f64c(0.5);
        let three = T::from_f64c(3.0);
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&x| {
                let u = c * (x + a * x * x * x);
                half * x * (T::one() + u.tanh())
            })
            .collect();
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self]) {
            let xt = self.clone();
            Some(Box::new(move |g: &[T]| {
                let dx: Vec<T> = xt
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        let u = c * (x + a * x * x * x);
                        let t = u.tanh();
                        let sech2 = T::one() - t * t;
                        let du = c * (T::one() + three * a * x * x);
                        gv * (half * (T::one() + t) + half * x * sech2 * du)
                    })
                    .collect();
                vec![Some(dx)]
            }))
        } else {
            None
        };
        Tensor::new_node(
            self.shape().to_vec(),
            out,
            backward.is_some(),
            vec![self.clone()],
            backward,
        )
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let (r, c) = self.rows_cols("layer_norm")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let epst = T::from_f64c(eps);
        let inv_c = T::one() / T::from_f64c(c as f64);
        let data = self.data();
        let gd = gamma.data();
        let bd = beta.data();
        let mut out = vec![T::zero(); r * c];
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        for i in 0..r {
            let row = &data[i * c..(i + 1) * c];
            let mean: T = row.iter().cloned().sum::<T>() * inv_c;
            let var: T = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_c;
            let istd = T::one() / (var + epst).sqrt();
            inv_std[i] = istd;
            for j in 0..c {
                let xh = (row[j] - mean) * istd;
                xhat[i * c + j] = xh;
                out[i * c + j] = gd[j] * xh + bd[j];
            }
        }
        drop(data);
        drop(gd);
        drop(bd);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, gamma, beta]) {
            let gamma_t = gamma.clone();
            Some(Box::new(move |g: &[T]| {
                let gd = gamma_t.data();
                let mut dx = vec![T::zero(); r * c];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..r {
                    let xh = &xhat[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..c {
                        let dxh = gr[j] * gd[j];
                        mean_dxhat = mean_dxhat + dxh;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxh * xh[j];
                        dgamma[j] = dgamma[j] + gr[j] * xh[j];
                        dbeta[j] = dbeta[j] + gr[j];
                    }
                    mean_dxhat = mean_dxhat * inv_c;
                    mean_dxhat_xhat = mean_dxhat_xhat * inv_c;
                    for j in 0..c {
                        let dxh = gr[j] * gd[j];
                        dx[i * c + j] =
                            (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat) * inv_std[i];
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![r, c],
            out,
            backward.is_some(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            backward,
        ))
    }

    /// Squared Euclidean distances between all row pairs: `[m × p]` vs
    /// `[n × p]` gives `[m × n]`.
    pub fn pairwise_sqdist(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, p) = self.rows_cols("pairwise_sqdist")?;
        let (n, p2) = rhs.rows_cols("pairwise_sqdist")?;
        if p != p2 {
            return Err(TensorError::ShapeMismatch {
                op: "pairwise_sqdist",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &a[i * p..(i + 1) * p];
            for j in 0..n {
                let br = &b[j * p..(j + 1) * p];
                let mut acc = T::zero();
                for (&av, &bv) in ar.iter().zip(br) {
                    let d = av - bv;
                    acc = acc + d * d;
                }
                out[i * n + j] = acc;
            }
        }
        drop(a);
        drop(b);
        let backward: Option<BackwardFn<T>> = if wants_grad(&[self, rhs]) {
            let at = self.clone();
            let bt = rhs.clone();
            let two = T::from_f64c(2.0);
            Some(Box::new(move |g: &[T]| {
                let a = at.data();
                let b = bt.data();
                let mut da = vec![T::zero(); m * p];
                let mut db = vec![T::zero(); n * p];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv == T::zero() {
                            continue;
                        }
                        for l in 0..p {
                            let diff = a[i * p + l] - b[j * p + l];
                            da[i * p + l] = da[i * p + l] + two * gv * diff;
                            db[j * p + l] = db[j * p + l] - two * gv * diff;
                        }
                    }
                }
                vec![Some(da), Some(db)]
            }))
        } else {
            None
        };
        Ok(Tensor::new_node(
            vec![m, n],
            out,
            backward.is_some(),
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }
}

/// Concatenate matrices along `axis` (0 = stack rows, 1 = widen columns).
pub fn concat<T: Scalar>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(TensorError::Invalid {
            op: "concat",
            msg: "no tensors given".into(),
        });
    }
    let dims: Vec<(usize, usize)> = tensors
        .iter()
        .map(|t| t.rows_cols("concat"))
        .collect::<Result<_>>()?;
    match axis {
        0 => {
            let c = dims[0].1;
            if let Some(bad) = dims.iter().find(|(_, cc)| *cc != c) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![dims[0].0, c],
                    rhs: vec![bad.0, bad.1],
                });
            }
            let total_rows: usize = dims.iter().map(|(r, _)| r).sum();
            let mut out = Vec::with_capacity(total_rows * c);
            for t in tensors {
                out.extend_from_slice(&t.data());
            }
            let sizes: Vec<usize> = dims.iter().map(|(r, _)| r * c).collect();
            let backward: Option<BackwardFn<T>> =
                if grad_enabled() && tensors.iter().any(|t| t.requires_grad()) {
                    let sizes = sizes.clone();
                    Some(Box::new(move |g: &[T]| {
                        let mut offset = 0;
                        sizes
                            .iter()
                            .map(|&s| {
                                let piece = g[offset..offset + s].to_vec();
                                offset += s;
                                Some(piece)
                            })
                            .collect()
                    }))
                } else {
                    None
                };
            Ok(Tensor::new_node(
                vec![total_rows, c],
                out,
                backward.is_some(),
                tensors.to_vec(),
                backward,
            ))
        }
        1 => {
            let r = dims[0].0;
            if let Some(bad) = dims.iter().find(|(rr, _)| *rr != r) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r, dims[0].1],
                    rhs: vec![bad.0, bad.1],
                });
            }
            let total_cols: usize = dims.iter().map(|(_, c)| c).sum();
            let mut out = vec![T::zero(); r * total_cols];
            let mut col0 = 0;
            for (t, (_, c)) in tensors.iter().zip(&dims) {
                let data = t.data();
                for i in 0..r {
                    out[i * total_cols + col0..i * total_cols + col0 + c]
                        .copy_from_slice(&data[i * c..(i + 1) * c]);
                }
                col0 += c;
            }
            let widths: Vec<usize> = dims.iter().map(|(_, c)| *c).collect();
            let backward: Option<BackwardFn<T>> =
                if grad_enabled() && tensors.iter().any(|t| t.requires_grad()) {
                    let widths = widths.clone();
                    Some(Box::new(move |g: &[T]| {
                        let mut col0 = 0;
                        widths
                            .iter()
                            .map(|&w| {
                                let mut piece = vec![T::zero(); r * w];
                                for i in 0..r {
                                    piece[i * w..(i + 1) * w].copy_from_slice(
                                        &g[i * total_cols + col0..i * total_cols + col0 + w],
                                    );
                                }
                                col0 += w;
                                Some(piece)
                            })
                            .collect()
                    }))
                } else {
                    None
                };
            Ok(Tensor::new_node(
                vec![r, total_cols],
                out,
                backward.is_some(),
                tensors.to_vec(),
                backward,
            ))
        }
        _ => Err(TensorError::Invalid {
            op: "concat",
            msg: format!("axis {axis} out of range for a matrix"),
        }),
    }
}

/// Row lookup into an embedding table: ids select rows of `weights`.
///
/// Gradients flow only into the selected rows.
pub fn embedding<T: Scalar>(weights: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let (vocab, dim) = weights.rows_cols("embedding")?;
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(TensorError::IndexOutOfBounds {
            op: "embedding",
            index: bad,
            size: vocab,
        });
    }
    let data = weights.data();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        out.extend_from_slice(&data[id * dim..(id + 1) * dim]);
    }
    drop(data);
    let backward: Option<BackwardFn<T>> = if wants_grad(&[weights]) {
        let ids = ids.to_vec();
        Some(Box::new(move |g: &[T]| {
            let mut dw = vec![T::zero(); vocab * dim];
            for (pos, &id) in ids.iter().enumerate() {
                for j in 0..dim {
                    dw[id * dim + j] = dw[id * dim + j] + g[pos * dim + j];
                }
            }
            vec![Some(dw)]
        }))
    } else {
        None
    };
    Ok(Tensor::new_node(
        vec![ids.len(), dim],
        out,
        backward.is_some(),
        vec![weights.clone()],
        backward,
    ))
}

/// Mean cross-entropy of `logits [batch × classes]` against target indices.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    let (b, c) = logits.rows_cols("cross_entropy")?;
    if targets.len() != b {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("{b} logit rows but {} targets", targets.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(TensorError::IndexOutOfBounds {
            op: "cross_entropy",
            index: bad,
            size: c,
        });
    }
    let data = logits.data();
    if data.iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFinite { op: "cross_entropy" });
    }
    let probs = softmax_rows_raw(&data, b, c);
    let inv_b = T::one() / T::from_f64c(b as f64);
    let mut loss = T::zero();
    for (i, &t) in targets.iter().enumerate() {
        let row = &data[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse: T = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss = loss + (lse - row[t]);
    }
    loss = loss * inv_b;
    drop(data);
    let backward: Option<BackwardFn<T>> = if wants_grad(&[logits]) {
        let targets = targets.to_vec();
        Some(Box::new(move |g: &[T]| {
            let gv = g[0];
            let mut dx = vec![T::zero(); b * c];
            for i in 0..b {
                for j in 0..c {
                    let indicator = if targets[i] == j { T::one() } else { T::zero() };
                    dx[i * c + j] = gv * inv_b * (probs[i * c + j] - indicator);
                }
            }
            vec![Some(dx)]
        }))
    } else {
        None
    };
    Ok(Tensor::new_node(
        vec![1],
        vec![loss],
        backward.is_some(),
        vec![logits.clone()],
        backward,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::parameter(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = t(&[3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.to_vec(), a.to_vec());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "unexpected message: {msg}");
    }

    #[test]
    fn add_zero_is_identity() {
        let a = t(&[2, 2], &[1.0, -2.0, 3.5, 0.0]);
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(a.add(&z).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let x = t(&[1, 4], &[2.0, 2.0, 2.0, 2.0]);
        let y = x.softmax_rows().unwrap();
        for v in y.to_vec() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = t(&[1, 3], &[0.1, -1.4, 2.2]);
        let shifted = t(&[1, 3], &[0.1 + 7.0, -1.4 + 7.0, 2.2 + 7.0]);
        let a = x.softmax_rows().unwrap().to_vec();
        let b = shifted.softmax_rows().unwrap().to_vec();
        for (av, bv) in a.iter().zip(&b) {
            assert!((av - bv).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_known_value() {
        // softmax([0, ln 3]) = [1/4, 3/4]
        let x = t(&[1, 2], &[0.0, 3.0_f64.ln()]);
        let y = x.softmax_rows().unwrap().to_vec();
        assert!((y[0] - 0.25).abs() < 1e-12);
        assert!((y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[3, 5], &gradcheck::lcg_values(15, 9));
        let y = x.softmax_rows().unwrap();
        let d = y.to_vec();
        for i in 0..3 {
            let s: f64 = d[i * 5..(i + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(d[i * 5..(i + 1) * 5].iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = t(&[1, 2], &[f64::NAN, 0.0]);
        assert!(x.softmax_rows().is_err());
    }

    #[test]
    fn softmax_axis_zero_matches_transposed_rows() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cols = x.softmax(0).unwrap().to_vec();
        let via_t = x
            .transpose()
            .unwrap()
            .softmax_rows()
            .unwrap()
            .transpose()
            .unwrap()
            .to_vec();
        assert_eq!(cols, via_t);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        for c in [2usize, 3, 7] {
            let logits = t(&[1, c], &vec![0.3; c]);
            let loss = cross_entropy(&logits, &[0]).unwrap().item();
            assert!((loss - (c as f64).ln()).abs() < 1e-12, "C={c}: {loss}");
        }
    }

    #[test]
    fn cross_entropy_large_margin_tends_to_zero() {
        let logits = t(&[1, 3], &[50.0, 0.0, 0.0]);
        let loss = cross_entropy(&logits, &[0]).unwrap().item();
        assert!(loss < 1e-12, "loss = {loss}");
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let logits = t(&[1, 3], &[0.0, 0.0, 0.0]);
        assert!(cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_reference_batch() {
        // Independent scalar computation of mean −log softmax(logits)[target].
        let vals = gradcheck::lcg_values(12, 4);
        let targets = [2usize, 0, 3];
        let mut expect = 0.0;
        for (i, &tgt) in targets.iter().enumerate() {
            let row = &vals[i * 4..(i + 1) * 4];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[tgt].exp() / denom).ln();
        }
        expect /= 3.0;
        let loss = cross_entropy(&t(&[3, 4], &vals), &targets).unwrap().item();
        assert!((loss - expect).abs() < 1e-6, "{loss} vs {expect}");
    }

    #[test]
    fn backward_accumulates_and_doubles_after_two_passes() {
        let x = p(&[2], &[3.0, -1.0]);
        let loss = x.mul(&x).unwrap().sum_all();
        x.zero_grad();
        loss.backward();
        let g1 = x.grad().unwrap();
        loss.backward();
        let g2 = x.grad().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_builds_constant_graph() {
        let x = p(&[2], &[1.0, 2.0]);
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn shared_subexpression_accumulates_fanout() {
        // loss = sum(y) + sum(2y) where y = x ⇒ dloss/dx = 3.
        let x = p(&[2], &[1.0, 1.0]);
        let a = x.sum_all();
        let b = x.scale(2.0).sum_all();
        let loss = a.add(&b).unwrap();
        loss.backward();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn embedding_selects_rows_and_errors_out_of_vocab() {
        let w = t(&[3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
        let out = embedding(&w, &[2, 0, 2]).unwrap();
        assert_eq!(out.to_vec(), vec![20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        assert!(embedding(&w, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let wide = concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(wide.shape(), &[2, 5]);
        assert_eq!(wide.slice_cols(0, 2).unwrap().to_vec(), a.to_vec());
        assert_eq!(wide.slice_cols(2, 5).unwrap().to_vec(), b.to_vec());

        let c = t(&[1, 2], &[9.0, 9.5]);
        let tall = concat(&[a.clone(), c], 0).unwrap();
        assert_eq!(tall.shape(), &[3, 2]);
        assert_eq!(tall.slice_rows(0, 2).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn mean_rows_averages() {
        let a = t(&[2, 2], &[0.0, 4.0, 2.0, 0.0]);
        assert_eq!(a.mean_rows().unwrap().to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn pairwise_sqdist_zero_on_equal_rows() {
        let a = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let b = t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let d = a.pairwise_sqdist(&b).unwrap().to_vec();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_returns_beta() {
        let x = t(&[1, 4], &[3.0, 3.0, 3.0, 3.0]);
        let gamma = t(&[4], &[1.0, 1.0, 1.0, 1.0]);
        let beta = t(&[4], &[0.5, -0.5, 0.0, 2.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap().to_vec();
        for (yv, bv) in y.iter().zip(beta.to_vec()) {
            assert!((yv - bv).abs() < 1e-9);
        }
    }
}
