//! Tape-based reverse-mode differentiation over [`Tensor4`] operations.
//!
//! A [`Tape`] records each differentiable operation as a node holding its
//! output value and the indices of its inputs. Nodes are appended in
//! execution order, so the node list is already a topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use flowad_core::autodiff::Tape;
//! use flowad_core::{Shape4, Tensor4};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor4::<f64>::full(Shape4::new(1, 1, 1, 3), 2.0));
//! let sq = tape.square(x);
//! let loss = tape.sum_all(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert!(grads.wrt(x).unwrap().data().iter().all(|&g| g == 4.0));
//! ```

use crate::error::{Error, Result};
use crate::tensor::{conv2d_grad_input, conv2d_grad_params, conv2d_raw, ChannelPerm, Scalar, Shape4, Tensor4};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    name: String,
    value: Tensor4<T>,
    grad: Tensor4<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor4<T>) -> Self {
        let grad = Tensor4::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor4<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor4<T> {
        &self.grad
    }

    /// Mutable access to value and gradient together (optimizer updates).
    pub fn value_and_grad_mut(&mut self) -> (&mut Tensor4<T>, &Tensor4<T>) {
        (&mut self.value, &self.grad)
    }

    pub fn set_value(&mut self, value: Tensor4<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "parameter {}: new value {} does not match {}",
                self.name,
                value.shape(),
                self.value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    pub fn accumulate_grad(&mut self, g: &Tensor4<T>) -> Result<()> {
        self.grad.add_assign(g)
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    SumChannels(Var),
    Narrow { input: Var, start: usize },
    Concat(Var, Var),
    Permute(Var, ChannelPerm),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
}

/// Recording of one forward pass. Consumed by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter. Bias vectors are `(1, c, 1, 1)` leaves.
    pub fn leaf(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, p: &Param<T>) -> Var {
        self.leaf(p.value().clone())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = {
            let b = self.value(bias);
            if b.shape().c != b.len() {
                return Err(Error::shape(format!("conv bias must be (1, c, 1, 1), got {}", b.shape())));
            }
            conv2d_raw(self.value(input), self.value(weight), b.data())?
        };
        Ok(self.push(out, Op::Conv2d { input, weight, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).exp();
        self.push(out, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).tanh();
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).add_scalar(s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).square();
        self.push(out, Op::Square(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor4::scalar(self.value(a).sum_all());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let out = Tensor4::scalar(self.value(a).mean_all());
        self.push(out, Op::MeanAll(a))
    }

    pub fn sum_over_channels(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_over_channels();
        self.push(out, Op::SumChannels(a))
    }

    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).narrow_channels(start, len)?;
        Ok(self.push(out, Op::Narrow { input: a, start }))
    }

    pub fn split_channels(&mut self, a: Var) -> Result<(Var, Var)> {
        let c = self.value(a).shape().c;
        if c % 2 != 0 {
            return Err(Error::shape(format!("cannot split odd channel count {c}")));
        }
        Ok((self.narrow_channels(a, 0, c / 2)?, self.narrow_channels(a, c / 2, c / 2)?))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor4::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn permute_channels(&mut self, a: Var, perm: &ChannelPerm) -> Result<Var> {
        let out = self.value(a).permute_channels(perm)?;
        Ok(self.push(out, Op::Permute(a, perm.clone())))
    }

    /// Reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage(format!("loss {loss:?} is not on this tape")))?;
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor4::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { input, weight, bias } => {
                    let w = &self.nodes[weight.0].value;
                    let x = &self.nodes[input.0].value;
                    let gi = conv2d_grad_input(&g, w, x.shape());
                    let (gw, gb) = conv2d_grad_params(&g, x, w.shape());
                    accumulate(&mut grads, *input, gi)?;
                    accumulate(&mut grads, *weight, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-T::one()))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.nodes[b.0].value)?;
                    let gb = g.mul(&self.nodes[a.0].value)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Exp(a) => {
                    let ga = g.mul(&node.value)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, "tanh backward", |g, y| g * (T::one() - y * y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&self.nodes[a.0].value, "relu backward", |g, x| {
                        if x > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::AddScalar(a) => accumulate(&mut grads, *a, g)?,
                Op::Square(a) => {
                    let ga = g.zip_map(&self.nodes[a.0].value, "square backward", |g, x| {
                        g * (x + x)
                    })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SumAll(a) => {
                    let s = self.nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Tensor4::full(s, g.data()[0]))?;
                }
                Op::MeanAll(a) => {
                    let s = self.nodes[a.0].value.shape();
                    let n = T::from_usize(s.numel()).expect("length fits");
                    accumulate(&mut grads, *a, Tensor4::full(s, g.data()[0] / n))?;
                }
                Op::SumChannels(a) => {
                    let s = self.nodes[a.0].value.shape();
                    let ga = Tensor4::from_fn(s, |n, _, y, x| g.get(n, 0, y, x));
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Narrow { input, start } => {
                    let s = self.nodes[input.0].value.shape();
                    let len = node.value.shape().c;
                    let ga = Tensor4::from_fn(s, |n, c, y, x| {
                        if c >= *start && c < start + len {
                            g.get(n, c - start, y, x)
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads, *input, ga)?;
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].value.shape().c;
                    let cb = self.nodes[b.0].value.shape().c;
                    accumulate(&mut grads, *a, g.narrow_channels(0, ca)?)?;
                    accumulate(&mut grads, *b, g.narrow_channels(ca, cb)?)?;
                }
                Op::Permute(a, perm) => {
                    let ga = g.permute_channels(&perm.inverse())?;
                    accumulate(&mut grads, *a, ga)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor4<T>>], v: Var, g: Tensor4<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the leaf does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradient for `v` into `param.grad`; a no-op when `v` is unused.
    pub fn accumulate_into(&self, v: Var, param: &mut Param<T>) -> Result<()> {
        match self.wrt(v) {
            Some(g) => param.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

/// Worst-case disagreement between reverse-mode and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric|`.
    pub max_abs: f64,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// elements where either side is nonzero.
    pub max_rel: f64,
    /// Per-element `(abs, rel)` errors.
    worst: Vec<(f64, f64)>,
    pub elements: usize,
}

impl GradCheckReport {
    /// True when every element is within `abs_tol` absolute or `rel_tol` relative error.
    pub fn passes(&self, abs_tol: f64, rel_tol: f64) -> bool {
        self.worst.iter().all(|&(a, r)| a <= abs_tol || r <= rel_tol)
    }
}

/// Compares [`Tape::backward`] against central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps` for every element of every parameter.
///
/// `f` builds the loss on a fresh tape from leaf handles for `params`, in order.
pub fn grad_check<F>(f: F, params: &[Tensor4<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor4<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut work: Vec<Tensor4<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_abs: 0.0,
        max_rel: 0.0,
        worst: Vec::new(),
        elements: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let zeros = Tensor4::zeros(params[pi].shape());
        let analytic = grads.wrt(*var).unwrap_or(&zeros).clone();
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[e];
            let abs = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs());
            let rel = if denom > 0.0 { abs / denom } else { 0.0 };
            report.max_abs = report.max_abs.max(abs);
            report.max_rel = report.max_rel.max(rel);
            report.worst.push((abs, rel));
            report.elements += 1;
        }
    }
    Ok(report)
}

/// Convenience: a `(1, c, 1, 1)` shape for bias leaves.
pub fn bias_shape(c: usize) -> Shape4 {
    Shape4::new(1, c, 1, 1)
}
