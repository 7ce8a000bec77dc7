//! A small reverse-mode automatic differentiation engine.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] that the graph borrows; their values are never copied into
//! the tape. [`Graph::backward`] consumes the graph and returns one gradient
//! buffer per parameter, zero for parameters the loss does not reach.
//!
//! Every layer primitive is a fused node with a hand-written backward pass,
//! generic over `f32` (training) and `f64` (gradient checking).

mod adam;
mod gru;
mod kernels;
mod layers;
mod loss;
mod real;

use std::collections::HashMap;
use std::fmt;

pub use adam::{Adam, AdamConfig};
pub use gru::GruWeights;
pub use layers::{Activation, BatchMoments, RunningStats, BATCH_NORM_EPS};
pub use loss::BCE_CLAMP;
pub use real::{DType, Real};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(Real::to_f64(*v))).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named, uniquely keyed trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// No gradient recorded for any of `count` parameters.
    pub fn empty(count: usize) -> Self {
        Gradients {
            grads: vec![None; count],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<T>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) trait Operation<T: Real> {
    /// Adds this node's contribution to its inputs' gradients.
    fn backward(&self, graph: &Graph<'_, T>, output: &[T], upstream: &[T], grads: &mut GradBuffers<T>);
}

enum NodeValue<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<'p, T> {
    value: NodeValue<T>,
    op: Option<Box<dyn Operation<T> + 'p>>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
}

pub(crate) struct GradBuffers<T> {
    buffers: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
}

impl<T: Real> GradBuffers<T> {
    /// Gradient buffer for `var`, zero-initialised on first use.
    pub(crate) fn slot(&mut self, var: Var) -> &mut [T] {
        let size = self.sizes[var.0];
        self.buffers[var.0].get_or_insert_with(|| vec![T::zero(); size])
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: NodeValue::Owned(value),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: NodeValue::Param(id),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        Ok(self.param(id))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: impl Operation<T> + 'p) -> Var {
        self.nodes.push(Node {
            value: NodeValue::Owned(value),
            op: Some(Box::new(op)),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        match &self.nodes[var.0].value {
            NodeValue::Owned(t) => t,
            NodeValue::Param(id) => &self.params.get(*id).value,
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Contributions to a node used more than once are summed. Parameters the
    /// loss does not depend on receive all-zero gradients.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let sizes = (0..self.nodes.len())
            .map(|i| self.value(Var(i)).len())
            .collect();
        let mut grads = GradBuffers {
            buffers: vec![None; self.nodes.len()],
            sizes,
        };
        grads.slot(loss)[0] = T::one();

        let mut param_grads: Vec<Option<Vec<T>>> = vec![None; self.params.len()];
        for i in (0..=loss.0).rev() {
            let Some(upstream) = grads.buffers[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match (&node.value, &node.op) {
                (NodeValue::Param(id), _) => match &mut param_grads[id.0] {
                    Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, &g)| *a += g),
                    slot @ None => *slot = Some(upstream),
                },
                (NodeValue::Owned(out), Some(op)) => {
                    op.backward(&self, out.data(), &upstream, &mut grads)
                }
                (NodeValue::Owned(_), None) => {}
            }
        }

        let grads = param_grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| Some(g.unwrap_or_else(|| vec![T::zero(); self.params.params[i].value.len()])))
            .collect();
        Ok(Gradients { grads })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), SumOp { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, AddOp { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, MulOp { a, b }))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

struct SumOp {
    x: Var,
}

impl<T: Real> Operation<T> for SumOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let g = upstream[0];
        grads.slot(self.x).iter_mut().for_each(|v| *v += g);
    }
}

struct AddOp {
    a: Var,
    b: Var,
}

impl<T: Real> Operation<T> for AddOp {
    fn backward(&self, _: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        for v in [self.a, self.b] {
            grads.slot(v).iter_mut().zip(upstream).for_each(|(d, &g)| *d += g);
        }
    }
}

struct MulOp {
    a: Var,
    b: Var,
}

impl<T: Real> Operation<T> for MulOp {
    fn backward(&self, graph: &Graph<'_, T>, _: &[T], upstream: &[T], grads: &mut GradBuffers<T>) {
        let (av, bv) = (graph.value(self.a).data(), graph.value(self.b).data());
        {
            let da = grads.slot(self.a);
            for i in 0..upstream.len() {
                da[i] += upstream[i] * bv[i];
            }
        }
        let db = grads.slot(self.b);
        for i in 0..upstream.len() {
            db[i] += upstream[i] * av[i];
        }
    }
}
