//! Reverse-mode automatic differentiation over a recorded op graph.
//!
//! A [`Tape`] lives for one forward/backward pass. Each [`Var`] is an index
//! into the tape; values are immutable once recorded.

use std::cell::RefCell;
use std::sync::Arc;

use super::ops;
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

type BackwardFn<T> =
    Box<dyn Fn(&Tensor4<T>, &[Arc<Tensor4<T>>], &Tensor4<T>, &[bool]) -> Result<Vec<Option<Tensor4<T>>>>>;

struct Node<T: Real> {
    value: Arc<Tensor4<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor4<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor4<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor4<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor4<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor4<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor4<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor4<T>, parents: &[usize], backward: BackwardFn<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            parents: parents.to_vec(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor4<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let seed = Tensor4::full(root.shape(), T::ONE);
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var<'_, T>, seed: Tensor4<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor4<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Arc<Tensor4<T>>> = node.parents.iter().map(|&p| Arc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &inputs, &node.value, &needs)?;
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor4<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    fn unary(self, value: Tensor4<T>, backward: BackwardFn<T>) -> Var<'t, T> {
        self.tape.push(value, &[self.id], backward)
    }

    fn same_shape(self, other: Var<'t, T>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        for (i, name) in ["batch", "channels", "height", "width"].into_iter().enumerate() {
            if a[i] != b[i] {
                return Err(Error::Shape {
                    op,
                    dim: name,
                    expected: a[i],
                    actual: b[i],
                });
            }
        }
        Ok(())
    }

    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let out = ops::conv2d(&self.value(), &kernel.value(), stride, padding)?;
        Ok(self.tape.push(
            out,
            &[self.id, kernel.id],
            Box::new(move |g, inp, _, need| {
                let (dx, dk) = ops::conv2d_backward(&inp[0], &inp[1], g, stride, padding, need[0], need[1])?;
                Ok(vec![dx, dk])
            }),
        ))
    }

    pub fn conv2d_transpose(self, kernel: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let out = ops::conv2d_transpose(&self.value(), &kernel.value(), stride, padding)?;
        Ok(self.tape.push(
            out,
            &[self.id, kernel.id],
            Box::new(move |g, inp, _, need| {
                let (dx, dk) =
                    ops::conv2d_transpose_backward(&inp[0], &inp[1], g, stride, padding, need[0], need[1])?;
                Ok(vec![dx, dk])
            }),
        ))
    }

    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = ops::add_channel_bias(&self.value(), &bias.value())?;
        Ok(self.tape.push(
            out,
            &[self.id, bias.id],
            Box::new(|g, _inp, _, need| {
                let db = need[1].then(|| ops::channel_sums(g));
                Ok(vec![need[0].then(|| g.clone()), db])
            }),
        ))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "add")?;
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.tape.push(
            out,
            &[self.id, other.id],
            Box::new(|g, _, _, need| Ok(vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())])),
        ))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "sub")?;
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.tape.push(
            out,
            &[self.id, other.id],
            Box::new(|g, _, _, need| Ok(vec![need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))])),
        ))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(other, "mul")?;
        let out = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.tape.push(
            out,
            &[self.id, other.id],
            Box::new(|g, inp, _, need| {
                Ok(vec![
                    need[0].then(|| g.zip_map(&inp[1], |a, b| a * b)),
                    need[1].then(|| g.zip_map(&inp[0], |a, b| a * b)),
                ])
            }),
        ))
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let st = T::from_f64(s);
        let out = self.value().map(|v| v * st);
        self.unary(out, Box::new(move |g, _, _, _| Ok(vec![Some(g.map(|v| v * st))])))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t, T> {
        let st = T::from_f64(s);
        let out = self.value().map(|v| v + st);
        self.unary(out, Box::new(|g, _, _, _| Ok(vec![Some(g.clone())])))
    }

    pub fn square(self) -> Var<'t, T> {
        let out = self.value().map(|v| v * v);
        self.unary(
            out,
            Box::new(|g, inp, _, _| Ok(vec![Some(g.zip_map(&inp[0], |a, x| a * (x + x)))])),
        )
    }

    pub fn abs(self) -> Var<'t, T> {
        let out = self.value().map(T::abs);
        self.unary(
            out,
            Box::new(|g, inp, _, _| {
                Ok(vec![Some(g.zip_map(&inp[0], |a, x| {
                    if x > T::ZERO {
                        a
                    } else if x < T::ZERO {
                        -a
                    } else {
                        T::ZERO
                    }
                }))])
            }),
        )
    }

    pub fn relu(self) -> Var<'t, T> {
        let out = ops::relu(&self.value());
        self.unary(
            out,
            Box::new(|g, inp, _, _| Ok(vec![Some(g.zip_map(&inp[0], |a, x| if x > T::ZERO { a } else { T::ZERO }))])),
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        let out = ops::leaky_relu(&self.value(), slope);
        let s = T::from_f64(slope);
        self.unary(
            out,
            Box::new(move |g, inp, _, _| Ok(vec![Some(g.zip_map(&inp[0], |a, x| if x > T::ZERO { a } else { a * s }))])),
        )
    }

    pub fn tanh(self) -> Var<'t, T> {
        let out = ops::tanh(&self.value());
        self.unary(
            out,
            Box::new(|g, _, y, _| Ok(vec![Some(g.zip_map(y, |a, t| a * (T::ONE - t * t)))])),
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = ops::sigmoid(&self.value());
        self.unary(
            out,
            Box::new(|g, _, y, _| Ok(vec![Some(g.zip_map(y, |a, s| a * s * (T::ONE - s)))])),
        )
    }

    pub fn softmax_channel(self) -> Var<'t, T> {
        let out = ops::softmax_channel(&self.value());
        self.unary(
            out,
            Box::new(|g, _, y, _| Ok(vec![Some(ops::softmax_channel_backward(y, g))])),
        )
    }

    pub fn instance_norm(self, eps: f64) -> Var<'t, T> {
        let (out, inv_std) = ops::instance_norm(&self.value(), eps);
        self.unary(
            out,
            Box::new(move |g, _, y, _| Ok(vec![Some(ops::instance_norm_backward(y, &inv_std, g))])),
        )
    }

    pub fn concat_channels(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = ops::concat_channels(&self.value(), &other.value())?;
        let first = self.shape()[1];
        Ok(self.tape.push(
            out,
            &[self.id, other.id],
            Box::new(move |g, _, _, _| {
                let (a, b) = ops::split_channels(g, first);
                Ok(vec![Some(a), Some(b)])
            }),
        ))
    }

    pub fn sum(self) -> Var<'t, T> {
        let shape = self.shape();
        let out = Tensor4::scalar(self.value().sum());
        self.unary(out, Box::new(move |g, _, _, _| Ok(vec![Some(Tensor4::full(shape, g.data()[0]))])))
    }

    pub fn mean(self) -> Var<'t, T> {
        let shape = self.shape();
        let n = shape.iter().product::<usize>() as f64;
        let out = Tensor4::scalar(self.value().mean());
        self.unary(
            out,
            Box::new(move |g, _, _, _| Ok(vec![Some(Tensor4::full(shape, g.data()[0] / T::from_f64(n)))])),
        )
    }

    /// Mean of `(x - target)²` for a constant target.
    pub fn mse_const(self, target: f64) -> Var<'t, T> {
        self.add_scalar(-target).square().mean()
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_logits_const(self, label: f64) -> Var<'t, T> {
        let x = self.value();
        let y = T::from_f64(label);
        let n = T::from_f64(x.len() as f64);
        // max(x,0) - x*y + ln(1 + exp(-|x|))
        let loss = x
            .data()
            .iter()
            .map(|&v| v.max(T::ZERO) - v * y + (T::ONE + (-v.abs()).exp()).ln())
            .sum::<T>()
            / n;
        self.unary(
            Tensor4::scalar(loss),
            Box::new(move |g, inp, _, _| {
                let scale = g.data()[0] / n;
                Ok(vec![Some(inp[0].map(|v| (ops::sigmoid_scalar(v) - y) * scale))])
            }),
        )
    }

    /// Records a fused op whose forward value and backward closure the caller
    /// supplies. Used for losses with hand-derived adjoints.
    pub fn custom_unary(
        self,
        value: Tensor4<T>,
        backward: impl Fn(&Tensor4<T>, &Tensor4<T>) -> Tensor4<T> + 'static,
    ) -> Var<'t, T> {
        self.unary(value, Box::new(move |g, inp, _, _| Ok(vec![Some(backward(g, &inp[0]))])))
    }
}
