use std::collections::HashMap;

use super::{matmul_dims, matmul_into, strides_of, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vector-Jacobian product of one recorded operation.
///
/// Called with the upstream gradient, the input values and the output value;
/// returns one entry per input (`None` for inputs that get no gradient).
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Mean,
    Sum,
    Max,
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    trainable_leaf: bool,
}

/// Single-use record of a forward pass.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in exact
/// reverse order, accumulating gradients additively where a value fans out.
/// After one backward pass the tape refuses further use.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of the trainable leaves reached by a backward pass.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(&var)
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let trainable = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            inputs: Vec::new(),
            backward: None,
            needs_grad: trainable,
            trainable_leaf: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Records an operation with a caller-supplied backward rule.
    ///
    /// Fails if `value` contains NaN or infinity.
    pub fn custom(&mut self, op: &str, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: value.with_grad(false),
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: needs_grad.then_some(backward),
            needs_grad,
            trainable_leaf: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        let mut out = HashMap::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            if node.trainable_leaf {
                out.insert(Var(id), grad);
                continue;
            }
            let Some(backward) = &node.backward else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads = backward(&grad, &inputs, &node.value);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input].needs_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[input].value.shape());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op.is_binary(), b) {
            (true, Some(b)) => self.binary(op, a, b),
            (false, None) => self.unary(op, a),
            (true, None) => Err(Error::InvalidArgument(format!("{op:?} needs two operands"))),
            (false, Some(_)) => Err(Error::InvalidArgument(format!("{op:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Sigmoid, a)
    }

    fn unary(&mut self, op: ElementwiseOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (value, backward): (Tensor<T>, BackwardFn<T>) = match op {
            ElementwiseOp::Relu => (
                x.map(|v| v.max(T::zero())),
                Box::new(|g, ins, _| {
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(ins[0].data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    vec![Some(dx)]
                }),
            ),
            ElementwiseOp::Sigmoid => (
                x.map(sigmoid),
                Box::new(|g, _, out| {
                    let mut dx = g.clone();
                    for (d, &s) in dx.data_mut().iter_mut().zip(out.data()) {
                        *d *= s * (T::one() - s);
                    }
                    vec![Some(dx)]
                }),
            ),
            _ => unreachable!(),
        };
        let name = if op == ElementwiseOp::Relu { "relu" } else { "sigmoid" };
        self.custom(name, value, &[a], backward)
    }

    fn binary(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let f: fn(T, T) -> T = match op {
            ElementwiseOp::Add => |p, q| p + q,
            ElementwiseOp::Sub => |p, q| p - q,
            ElementwiseOp::Mul => |p, q| p * q,
            _ => unreachable!(),
        };
        let value = if x.shape() == y.shape() {
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(x.shape(), data)?
        } else if y.is_scalar() {
            let q = y.data()[0];
            x.map(|p| f(p, q))
        } else if x.is_scalar() {
            let p = x.data()[0];
            y.map(|q| f(p, q))
        } else {
            return Err(Error::shape(op_name(op), x.shape(), y.shape()));
        };

        let backward: BackwardFn<T> = Box::new(move |g, ins, _| {
            let (x, y) = (ins[0], ins[1]);
            // Gradient w.r.t. each operand before un-broadcasting.
            let (gx, gy): (Tensor<T>, Tensor<T>) = match op {
                ElementwiseOp::Add => (g.clone(), g.clone()),
                ElementwiseOp::Sub => (g.clone(), g.map(|v| -v)),
                ElementwiseOp::Mul => {
                    let pick = |t: &Tensor<T>, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
                    let mut gx = g.clone();
                    let mut gy = g.clone();
                    for i in 0..g.numel() {
                        gx.data_mut()[i] *= pick(y, i);
                        gy.data_mut()[i] *= pick(x, i);
                    }
                    (gx, gy)
                }
                _ => unreachable!(),
            };
            vec![Some(unbroadcast(gx, x)), Some(unbroadcast(gy, y))]
        });
        self.custom(op_name(op), value, &[a, b], backward)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (p, q, r) = matmul_dims(x.shape(), y.shape())?;
        let mut out = vec![T::zero(); p * r];
        matmul_into(x.data(), y.data(), &mut out, p, q, r);
        let value = Tensor::new(&[p, r], out)?;
        self.custom(
            "matmul",
            value,
            &[a, b],
            Box::new(move |g, ins, _| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let (x, y) = (ins[0], ins[1]);
                let mut da = vec![T::zero(); p * q];
                let yt = y.transpose().expect("rank-2");
                matmul_into(g.data(), yt.data(), &mut da, p, r, q);
                let mut db = vec![T::zero(); q * r];
                let xt = x.transpose().expect("rank-2");
                matmul_into(xt.data(), g.data(), &mut db, q, p, r);
                vec![
                    Some(Tensor::new(&[p, q], da).expect("shape")),
                    Some(Tensor::new(&[q, r], db).expect("shape")),
                ]
            }),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.custom(
            "transpose",
            value,
            &[a],
            Box::new(|g, _, _| vec![Some(g.transpose().expect("rank-2"))]),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.custom(
            "reshape",
            value,
            &[a],
            Box::new(|g, ins, _| vec![Some(g.reshape(ins[0].shape()).expect("same numel"))]),
        )
    }

    /// Reduces over `axes`, dropping them from the shape.
    ///
    /// `Max` routes the gradient to the first maximal element of each slice.
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axes: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let plan = ReducePlan::new(x.shape(), axes)?;
        let out_numel: usize = plan.out_shape.iter().product();
        let mut acc = vec![T::zero(); out_numel];
        let mut argmax: Vec<usize> = Vec::new();
        match op {
            ReduceOp::Sum => {
                for (i, &v) in x.data().iter().enumerate() {
                    acc[plan.target[i]] += v;
                }
            }
            ReduceOp::Mean => {
                // Running mean: exact when every element of a slice is equal.
                let mut seen = vec![0u32; out_numel];
                for (i, &v) in x.data().iter().enumerate() {
                    let o = plan.target[i];
                    seen[o] += 1;
                    let cur = acc[o];
                    acc[o] = cur + (v - cur) / T::of(seen[o] as f64);
                }
            }
            ReduceOp::Max => {
                let mut seen = vec![false; out_numel];
                argmax = vec![0; out_numel];
                for (i, &v) in x.data().iter().enumerate() {
                    let o = plan.target[i];
                    if !seen[o] || v > acc[o] {
                        seen[o] = true;
                        acc[o] = v;
                        argmax[o] = i;
                    }
                }
            }
        }
        let value = Tensor::new(&plan.out_shape, acc)?;
        let name = match op {
            ReduceOp::Mean => "reduce_mean",
            ReduceOp::Sum => "reduce_sum",
            ReduceOp::Max => "reduce_max",
        };
        self.custom(
            name,
            value,
            &[a],
            Box::new(move |g, ins, _| {
                let mut dx = Tensor::zeros(ins[0].shape());
                let gd = g.data();
                match op {
                    ReduceOp::Sum => {
                        for (i, d) in dx.data_mut().iter_mut().enumerate() {
                            *d = gd[plan.target[i]];
                        }
                    }
                    ReduceOp::Mean => {
                        let n = T::of(plan.count as f64);
                        for (i, d) in dx.data_mut().iter_mut().enumerate() {
                            *d = gd[plan.target[i]] / n;
                        }
                    }
                    ReduceOp::Max => {
                        for (o, &i) in argmax.iter().enumerate() {
                            dx.data_mut()[i] += gd[o];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Sum of every element; a scalar passes through unchanged.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(a).rank()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.reduce(ReduceOp::Sum, a, &axes)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(a).rank()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.reduce(ReduceOp::Mean, a, &axes)
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn op_name(op: ElementwiseOp) -> &'static str {
    match op {
        ElementwiseOp::Add => "add",
        ElementwiseOp::Sub => "sub",
        ElementwiseOp::Mul => "mul",
        ElementwiseOp::Relu => "relu",
        ElementwiseOp::Sigmoid => "sigmoid",
    }
}

/// Sums a full-shape gradient down to a scalar operand's shape.
fn unbroadcast<T: Scalar>(g: Tensor<T>, operand: &Tensor<T>) -> Tensor<T> {
    if operand.shape() == g.shape() {
        g
    } else {
        Tensor::scalar(g.data().iter().copied().sum())
    }
}

/// Precomputed input→output index map for a reduction.
struct ReducePlan {
    out_shape: Vec<usize>,
    target: Vec<usize>,
    count: usize,
}

impl ReducePlan {
    fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank || reduced[ax] {
                return Err(Error::Axis {
                    axes: axes.to_vec(),
                    rank,
                });
            }
            reduced[ax] = true;
        }
        if axes.is_empty() {
            return Err(Error::Axis { axes: Vec::new(), rank });
        }
        let out_shape: Vec<usize> = (0..rank).filter(|&i| !reduced[i]).map(|i| shape[i]).collect();
        let out_strides = strides_of(&out_shape);
        // Output stride contributed by each input axis (0 for reduced axes).
        let mut contrib = vec![0; rank];
        let mut k = 0;
        for i in 0..rank {
            if !reduced[i] {
                contrib[i] = out_strides[k];
                k += 1;
            }
        }
        let numel: usize = shape.iter().product();
        let mut target = Vec::with_capacity(numel);
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..numel {
            target.push(offset);
            for ax in (0..rank).rev() {
                index[ax] += 1;
                offset += contrib[ax];
                if index[ax] < shape[ax] {
                    break;
                }
                offset -= contrib[ax] * shape[ax];
                index[ax] = 0;
            }
        }
        let count = (0..rank).filter(|&i| reduced[i]).map(|i| shape[i]).product();
        Ok(ReducePlan {
            out_shape,
            target,
            count,
        })
    }
}
