//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is either recording or inert. Operations on [`Var`]s always
//! compute their forward value; a node is appended to the tape only when the
//! tape is recording and at least one input depends on a parameter. The
//! same network and solver code therefore serves training (recorded) and
//! evaluation (inert) without duplication.
//!
//! ```
//! use neurint::autograd::Tape;
//! use neurint::tensor::Tensor;
//!
//! let tape = Tape::recording();
//! let w = tape.param(Tensor::matrix(1, 2, vec![1.0, -2.0]));
//! let loss = w.square().unwrap().sum().unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&w).unwrap().data(), &[2.0, -4.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::tensor::{Result, Tensor, TensorError};

pub type NodeId = usize;

/// Backward rule for operations defined outside this module.
///
/// `backward` receives the upstream gradient of the op's output and returns
/// one gradient per input, in input order.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, grad: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Square,
}

enum Op {
    Leaf,
    MatMul { a: Rc<Tensor>, b: Rc<Tensor> },
    Linear { x: Rc<Tensor>, w: Rc<Tensor> },
    Add { a_shape: Vec<usize>, b_shape: Vec<usize> },
    Sub { a_shape: Vec<usize>, b_shape: Vec<usize> },
    Mul { a: Rc<Tensor>, b: Rc<Tensor> },
    Scale(f64),
    Unary { kind: Unary, input: Rc<Tensor>, output: Rc<Tensor> },
    Clamp { input: Rc<Tensor>, lo: f64, hi: f64 },
    Sum { shape: Vec<usize>, axis: Option<usize>, scale: f64 },
    LinComb(Vec<f64>),
    ConcatCols(Vec<usize>),
    SliceCols { start: usize, cols: usize },
    ConcatRows(Vec<usize>),
    SelectRows { indices: Vec<usize>, rows: usize },
    Custom(Box<dyn CustomOp>),
}

struct Node {
    op: Op,
    inputs: Vec<Option<NodeId>>,
}

/// Append-only record of operations. Nodes only ever reference earlier
/// nodes, so a single reverse sweep visits each node once.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
    generation: Cell<u64>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("recording", &self.recording)
            .finish()
    }
}

impl Tape {
    pub fn recording() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            generation: Cell::new(0),
        }
    }

    /// A tape that never records; every `Var` it produces is a constant.
    pub fn inert() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
            generation: Cell::new(0),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let id = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                op: Op::Leaf,
                inputs: Vec::new(),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            tape: self,
            value: Rc::new(value),
            id,
            generation: self.generation.get(),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var {
            tape: self,
            value: Rc::new(value),
            id: None,
            generation: self.generation.get(),
        }
    }

    /// Param or constant depending on `trainable`.
    pub fn leaf(&self, value: Tensor, trainable: bool) -> Var<'_> {
        if trainable {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    fn push<'t>(&'t self, value: Tensor, inputs: &[&Var<'t>], op: impl FnOnce() -> Op) -> Result<Var<'t>> {
        let generation = self.generation.get();
        let mut ids = Vec::with_capacity(inputs.len());
        let mut tracked = false;
        for v in inputs {
            if v.id.is_some() {
                if v.generation != generation {
                    return Err(TensorError::Invalid {
                        op: "record",
                        msg: "input belongs to a cleared record".into(),
                    });
                }
                tracked = true;
            }
            ids.push(v.id);
        }
        let id = if self.recording && tracked {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { op: op(), inputs: ids });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Ok(Var {
            tape: self,
            value: Rc::new(value),
            id,
            generation,
        })
    }

    /// Replays the record backwards from a scalar `loss` and clears it.
    ///
    /// Only leaves created with [`Tape::param`] appear in the result.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if !self.recording {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: "inert record".into(),
            });
        }
        if !loss.value.is_scalar() {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", loss.value.shape()),
            });
        }
        let generation = self.generation.get();
        let Some(root) = loss.id else {
            return Ok(Gradients::default());
        };
        if loss.generation != generation {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: "loss belongs to a cleared record".into(),
            });
        }

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::full(loss.value.shape(), 1.0));
        let mut leaves = HashMap::new();

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Op::Leaf = node.op {
                leaves.insert(i, g);
                continue;
            }
            let input_grads = node.op.backward(&g, &node.inputs)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(ig)) = (input, ig) else { continue };
                match &mut grads[*j] {
                    Some(acc) => acc.axpy_in_place(1.0, &ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        drop(nodes);
        self.nodes.borrow_mut().clear();
        self.generation.set(generation + 1);
        Ok(Gradients {
            map: leaves,
            generation,
        })
    }
}

/// Gradients of one backward pass, keyed by parameter leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
    generation: u64,
}

impl Gradients {
    /// Gradient for `param`, or `None` if the loss did not depend on it.
    pub fn get(&self, param: &Var<'_>) -> Option<&Tensor> {
        let id = param.id?;
        if param.generation != self.generation {
            return None;
        }
        self.map.get(&id)
    }

    /// Gradient for `param`, zeros when the loss did not touch it.
    pub fn get_or_zeros(&self, param: &Var<'_>) -> Tensor {
        self.get(param).cloned().unwrap_or_else(|| param.value.zeros_like())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A value on a tape, optionally tracked for gradients.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    value: Rc<Tensor>,
    id: Option<NodeId>,
    generation: u64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &*self.value)
            .finish()
    }
}

fn guard(value: Tensor, op: &'static str) -> Result<Tensor> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn broadcast_ok(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() == b.shape() || a.is_scalar() || b.is_scalar() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Whether gradients can flow back through this value.
    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the record.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value).clone())
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = guard(self.value.matmul(&other.value)?, "matmul")?;
        self.tape.push(out, &[self, other], || Op::MatMul {
            a: self.value.clone(),
            b: other.value.clone(),
        })
    }

    /// Affine map `self · w + b` with `b` a `[1, out]` row added to every row.
    pub fn linear(&self, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        let mut out = self.value.matmul(&w.value)?;
        let cols = out.cols();
        if b.value.shape() != [1, cols] {
            return Err(TensorError::ShapeMismatch {
                op: "linear bias",
                left: out.shape().to_vec(),
                right: b.value.shape().to_vec(),
            });
        }
        let bias = b.value.data();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let out = guard(out, "linear")?;
        self.tape.push(out, &[self, w, b], || Op::Linear {
            x: self.value.clone(),
            w: w.value.clone(),
        })
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        broadcast_ok(&self.value, &other.value, "add")?;
        let out = guard(self.value.add(&other.value)?, "add")?;
        self.tape.push(out, &[self, other], || Op::Add {
            a_shape: self.shape().to_vec(),
            b_shape: other.shape().to_vec(),
        })
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        broadcast_ok(&self.value, &other.value, "sub")?;
        let out = guard(self.value.sub(&other.value)?, "sub")?;
        self.tape.push(out, &[self, other], || Op::Sub {
            a_shape: self.shape().to_vec(),
            b_shape: other.shape().to_vec(),
        })
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        broadcast_ok(&self.value, &other.value, "mul")?;
        let out = guard(self.value.mul(&other.value)?, "mul")?;
        self.tape.push(out, &[self, other], || Op::Mul {
            a: self.value.clone(),
            b: other.value.clone(),
        })
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let out = guard(self.value.scale(c), "scale")?;
        self.tape.push(out, &[self], || Op::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        let c = self.tape.constant(Tensor::scalar(c));
        self.add(&c)
    }

    fn unary(&self, kind: Unary, f: impl Fn(f64) -> f64, op: &'static str) -> Result<Var<'t>> {
        let out = guard(self.value.map(f), op)?;
        let out_rc = Rc::new(out.clone());
        self.tape.push(out, &[self], || Op::Unary {
            kind,
            input: self.value.clone(),
            output: out_rc,
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'t>> {
        self.unary(Unary::LeakyRelu(slope), |x| if x > 0.0 { x } else { slope * x }, "leaky_relu")
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh, f64::tanh, "tanh")
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid, sigmoid, "sigmoid")
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Unary::Exp, f64::exp, "exp")
    }

    /// Natural log; non-positive inputs are rejected rather than producing NaN.
    pub fn log(&self) -> Result<Var<'t>> {
        if self.value.data().iter().any(|&x| x <= 0.0) {
            return Err(TensorError::Domain { op: "log" });
        }
        self.unary(Unary::Log, f64::ln, "log")
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Unary::Square, |x| x * x, "square")
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let out = guard(self.value.map(|x| x.clamp(lo, hi)), "clamp")?;
        self.tape.push(out, &[self], || Op::Clamp {
            input: self.value.clone(),
            lo,
            hi,
        })
    }

    /// Sum of all elements as a single-element tensor.
    pub fn sum(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value.sum());
        self.tape.push(out, &[self], || Op::Sum {
            shape: self.shape().to_vec(),
            axis: None,
            scale: 1.0,
        })
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value.len() as f64;
        let out = Tensor::scalar(self.value.sum() / n);
        self.tape.push(out, &[self], || Op::Sum {
            shape: self.shape().to_vec(),
            axis: None,
            scale: 1.0 / n,
        })
    }

    /// Sum along `axis`, keeping it as an extent-1 dimension.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let out = self.value.sum_axis(axis)?;
        self.tape.push(out, &[self], || Op::Sum {
            shape: self.shape().to_vec(),
            axis: Some(axis),
            scale: 1.0,
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let n = *self.shape().get(axis).ok_or(TensorError::AxisOutOfRange {
            op: "mean_axis",
            axis,
            rank: self.value.rank(),
        })? as f64;
        let out = self.value.sum_axis(axis)?.scale(1.0 / n);
        self.tape.push(out, &[self], || Op::Sum {
            shape: self.shape().to_vec(),
            axis: Some(axis),
            scale: 1.0 / n,
        })
    }

    /// `Σ cᵢ·xᵢ` over equal-shape inputs, recorded as a single node.
    pub fn lincomb(terms: &[(f64, &Var<'t>)]) -> Result<Var<'t>> {
        let (c0, first) = terms.first().ok_or(TensorError::Invalid {
            op: "lincomb",
            msg: "no terms".into(),
        })?;
        let mut out = first.value.scale(*c0);
        for (c, v) in &terms[1..] {
            out.axpy_in_place(*c, &v.value).map_err(|_| TensorError::ShapeMismatch {
                op: "lincomb",
                left: first.shape().to_vec(),
                right: v.shape().to_vec(),
            })?;
        }
        let out = guard(out, "lincomb")?;
        let vars: Vec<&Var<'t>> = terms.iter().map(|(_, v)| *v).collect();
        first
            .tape
            .push(out, &vars, || Op::LinComb(terms.iter().map(|(c, _)| *c).collect()))
    }

    pub fn concat_cols(parts: &[&Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<&Tensor> = parts.iter().map(|p| &*p.value).collect();
        let out = Tensor::concat_cols(&values)?;
        parts[0]
            .tape
            .push(out, parts, || Op::ConcatCols(values.iter().map(|v| v.cols()).collect()))
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let out = self.value.slice_cols(start, width)?;
        let cols = self.value.cols();
        self.tape.push(out, &[self], || Op::SliceCols { start, cols })
    }

    pub fn concat_rows(parts: &[&Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<&Tensor> = parts.iter().map(|p| &*p.value).collect();
        let out = Tensor::concat_rows(&values)?;
        parts[0]
            .tape
            .push(out, parts, || Op::ConcatRows(values.iter().map(|v| v.rows()).collect()))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let out = self.value.select_rows(indices)?;
        let rows = self.value.rows();
        self.tape.push(out, &[self], || Op::SelectRows {
            indices: indices.to_vec(),
            rows,
        })
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(inputs: &[&Var<'t>], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var<'t>> {
        let name = op.name();
        let value = guard(value, name)?;
        inputs[0].tape.push(value, inputs, || Op::Custom(op))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reduces a broadcast gradient back to the shape of a scalar operand.
fn unbroadcast(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g.clone()
    } else {
        Tensor::full(shape, g.sum())
    }
}

impl Op {
    fn backward(&self, g: &Tensor, inputs: &[Option<NodeId>]) -> Result<Vec<Option<Tensor>>> {
        let need = |i: usize| inputs[i].is_some();
        Ok(match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b } => vec![
                need(0).then(|| g.matmul_nt(b)).transpose()?,
                need(1).then(|| a.matmul_tn(g)).transpose()?,
            ],
            Op::Linear { x, w } => vec![
                need(0).then(|| g.matmul_nt(w)).transpose()?,
                need(1).then(|| x.matmul_tn(g)).transpose()?,
                need(2).then(|| g.sum_axis(0)).transpose()?,
            ],
            Op::Add { a_shape, b_shape } => vec![
                need(0).then(|| unbroadcast(g, a_shape)),
                need(1).then(|| unbroadcast(g, b_shape)),
            ],
            Op::Sub { a_shape, b_shape } => vec![
                need(0).then(|| unbroadcast(g, a_shape)),
                need(1).then(|| unbroadcast(&g.scale(-1.0), b_shape)),
            ],
            Op::Mul { a, b } => vec![
                need(0).then(|| g.mul(b).map(|t| unbroadcast(&t, a.shape()))).transpose()?,
                need(1).then(|| g.mul(a).map(|t| unbroadcast(&t, b.shape()))).transpose()?,
            ],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::Unary { kind, input, output } => {
                let local = match *kind {
                    Unary::LeakyRelu(slope) => input.map(|x| if x > 0.0 { 1.0 } else { slope }),
                    Unary::Tanh => output.map(|y| 1.0 - y * y),
                    Unary::Sigmoid => output.map(|y| y * (1.0 - y)),
                    Unary::Exp => (**output).clone(),
                    Unary::Log => input.map(|x| 1.0 / x),
                    Unary::Square => input.scale(2.0),
                };
                vec![Some(g.mul(&local)?)]
            }
            Op::Clamp { input, lo, hi } => {
                let mask = input.map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::Sum { shape, axis, scale } => {
                let grad = match axis {
                    None => Tensor::full(shape, g.item() * scale),
                    Some(ax) => g.expand_axis(*ax, shape[*ax])?.scale(*scale),
                };
                vec![Some(grad)]
            }
            Op::LinComb(coeffs) => coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| need(i).then(|| g.scale(*c)))
                .collect(),
            Op::ConcatCols(widths) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(widths.len());
                for (i, &w) in widths.iter().enumerate() {
                    out.push(need(i).then(|| g.slice_cols(start, w)).transpose()?);
                    start += w;
                }
                out
            }
            Op::SliceCols { start, cols } => {
                let rows = g.rows();
                let width = g.cols();
                let mut full = Tensor::zeros(&[rows, *cols]);
                for r in 0..rows {
                    full.row_mut(r)[*start..start + width].copy_from_slice(g.row(r));
                }
                vec![Some(full)]
            }
            Op::ConcatRows(heights) => {
                let cols = g.cols();
                let mut start = 0;
                let mut out = Vec::with_capacity(heights.len());
                for (i, &h) in heights.iter().enumerate() {
                    out.push(need(i).then(|| {
                        Tensor::matrix(h, cols, g.data()[start * cols..(start + h) * cols].to_vec())
                    }));
                    start += h;
                }
                out
            }
            Op::SelectRows { indices, rows } => {
                let cols = g.cols();
                let mut full = Tensor::zeros(&[*rows, cols]);
                for (k, &i) in indices.iter().enumerate() {
                    for (f, &v) in full.row_mut(i).iter_mut().zip(g.row(k)) {
                        *f += v;
                    }
                }
                vec![Some(full)]
            }
            Op::Custom(op) => {
                let grads = op.backward(g)?;
                grads
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| need(i).then_some(t))
                    .collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_definitions() {
        let tape = Tape::inert();
        let x = tape.constant(Tensor::scalar(-1.0));
        assert!((x.leaky_relu(0.2).unwrap().value().item() + 0.2).abs() < 1e-15);
        let zero = tape.constant(Tensor::scalar(0.0));
        assert_eq!(zero.tanh().unwrap().value().item(), 0.0);
        assert_eq!(zero.sigmoid().unwrap().value().item(), 0.5);
    }

    #[test]
    fn reductions() {
        let tape = Tape::inert();
        let x = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]));
        assert_eq!(x.sum().unwrap().value().item(), 6.0);
        let z = tape.constant(Tensor::zeros(&[4, 2]));
        assert_eq!(z.mean().unwrap().value().item(), 0.0);
        assert!(matches!(
            x.sum_axis(3),
            Err(TensorError::AxisOutOfRange { axis: 3, rank: 2, .. })
        ));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::recording();
        let w = tape.param(Tensor::matrix(2, 3, vec![0.3; 6]));
        let loss = w.sum().unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&w).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient_is_analytic() {
        let tape = Tape::recording();
        let w = tape.param(Tensor::matrix(1, 2, vec![1.0, -2.0]));
        let loss = w.square().unwrap().sum().unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_inert() {
        let tape = Tape::recording();
        let w = tape.param(Tensor::ones(&[2, 2]));
        let y = w.square().unwrap();
        assert!(tape.backward(&y).is_err());

        let inert = Tape::inert();
        let c = inert.param(Tensor::scalar(1.0));
        assert!(inert.backward(&c).is_err());
    }

    #[test]
    fn backward_clears_the_record() {
        let tape = Tape::recording();
        let w = tape.param(Tensor::scalar(2.0));
        let loss = w.square().unwrap();
        assert!(!tape.is_empty());
        tape.backward(&loss).unwrap();
        assert!(tape.is_empty());
        assert!(tape.backward(&loss).is_err());
        assert!(w.square().is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::inert();
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn exp_overflow_is_rejected() {
        let tape = Tape::inert();
        let x = tape.constant(Tensor::scalar(1000.0));
        assert!(matches!(x.exp(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn constants_are_not_recorded() {
        let tape = Tape::recording();
        let a = tape.constant(Tensor::ones(&[3, 3]));
        let b = a.tanh().unwrap().matmul(&a).unwrap();
        assert!(!b.is_tracked());
        assert_eq!(tape.len(), 0);
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx (x·x + x) = 2x + 1
        let tape = Tape::recording();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().item(), 7.0);
    }
}
