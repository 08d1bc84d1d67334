use rand_distr::{Distribution, StandardNormal};

use super::tensor::{axis_split, broadcast_shape, unbroadcast, zip_broadcast};
use super::{DiffError, ParamId, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding applied by [`Graph::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length; odd leftovers go on the right.
    Same,
    /// No padding; output length is `w - k + 1`.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a @ b^T`
    MatMulNt(NodeId, NodeId),
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        padding: Padding,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Square(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    Mean(NodeId),
    MeanAxis(NodeId, usize),
    Max(NodeId),
    Min(NodeId),
    LogSumExp(NodeId),
    Gather {
        input: NodeId,
        axis: usize,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Reshape(NodeId, Vec<usize>),
    Transpose(NodeId),
    BroadcastTo(NodeId, Vec<usize>),
    GaussianSample {
        mean: NodeId,
        std: NodeId,
        seed: u64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Conv1d { .. } => "conv1d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Mean(..) => "mean",
            Op::MeanAxis(..) => "mean_axis",
            Op::Max(..) => "max",
            Op::Min(..) => "min",
            Op::LogSumExp(..) => "logsumexp",
            Op::Gather { .. } => "gather",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::BroadcastTo(..) => "broadcast",
            Op::GaussianSample { .. } => "gaussian_sample",
        }
    }
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    /// Auxiliary forward state needed by backward (reparameterization noise,
    /// arg-extremum index).
    aux: Option<Tensor>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in topological order. Leaves carry their values from
/// construction; every other node is evaluated by [`Graph::forward`], which
/// also reports shape errors naming the offending node. A graph is meant to
/// be built, evaluated and differentiated once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    evaluated: usize,
}

/// Gradients produced by [`Graph::backward`] for trainable leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    by_param: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    /// Gradient with respect to a trainable leaf, if it received any.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.by_node.get(node.0).and_then(Option::as_ref)
    }

    /// `(parameter, gradient)` for every parameter leaf that received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.by_param
            .iter()
            .filter_map(|&(p, n)| self.wrt(n).map(|g| (p, g)))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: None,
            aux: None,
            requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, trainable: bool, param: Option<ParamId>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(value),
            aux: None,
            requires_grad: trainable,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false, None)
    }

    /// Trainable leaf not tied to a parameter set.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true, None)
    }

    /// Trainable leaf holding a copy of parameter `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> NodeId {
        self.leaf(value.clone(), true, Some(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), &[a, b])
    }

    /// `a @ b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulNt(a, b), &[a, b])
    }

    /// Cross-correlation of `input: [batch, c_in, w]` with
    /// `kernel: [c_out, c_in, k]`, stride 1.
    pub fn conv1d(&mut self, input: NodeId, kernel: NodeId, padding: Padding) -> NodeId {
        self.push(
            Op::Conv1d {
                input,
                kernel,
                padding,
            },
            &[input, kernel],
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b), &[a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a), &[a])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c), &[a])
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Offset(a, c), &[a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a), &[a])
    }

    /// Rectifier; the derivative at exactly 0 is taken to be 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a), &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a), &[a])
    }

    /// Sum of all elements (scalar).
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), &[a])
    }

    /// Sum over `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::SumAxis(a, axis), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), &[a])
    }

    /// Mean over `axis`, keeping it with length 1.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::MeanAxis(a, axis), &[a])
    }

    /// Largest element (scalar); the gradient goes to the first arg-max.
    pub fn max(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Max(a), &[a])
    }

    /// Smallest element (scalar); the gradient goes to the first arg-min.
    pub fn min(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Min(a), &[a])
    }

    /// `log(sum(exp(a)))` over all elements, evaluated stably.
    pub fn logsumexp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExp(a), &[a])
    }

    /// Selects `indices` along `axis` (repeats allowed).
    pub fn gather(&mut self, input: NodeId, axis: usize, indices: Vec<usize>) -> NodeId {
        self.push(
            Op::Gather {
                input,
                axis,
                indices,
            },
            &[input],
        )
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> NodeId {
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(a, shape.to_vec()), &[a])
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a), &[a])
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::BroadcastTo(a, shape.to_vec()), &[a])
    }

    /// Reparameterized draw `mean + std * eps` with `eps` standard normal
    /// from `seed`. Gradients flow to both `mean` and `std`.
    pub fn gaussian_sample(&mut self, mean: NodeId, std: NodeId, seed: u64) -> NodeId {
        self.push(GaussianSampleOp::op(mean, std, seed), &[mean, std])
    }

    /// Value of an evaluated node.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs are evaluated before their consumers")
    }

    /// Evaluates every node up to and including `out`.
    pub fn forward(&mut self, out: NodeId) -> Result<&Tensor, DiffError> {
        if out.0 >= self.nodes.len() {
            return Err(DiffError::UnknownNode(out.0));
        }
        while self.evaluated <= out.0 {
            let id = self.evaluated;
            if self.nodes[id].value.is_none() {
                let (value, aux) = self.eval(id).map_err(|detail| DiffError::Shape {
                    node: id,
                    op: self.nodes[id].op.name(),
                    detail,
                })?;
                self.nodes[id].value = Some(value);
                self.nodes[id].aux = aux;
            }
            self.evaluated += 1;
        }
        Ok(self.val(out))
    }

    fn eval(&self, id: usize) -> Result<(Tensor, Option<Tensor>), String> {
        let op = &self.nodes[id].op;
        let t = match *op {
            Op::Leaf => unreachable!("leaves carry values"),
            Op::MatMul(a, b) => matmul(self.val(a), self.val(b))?,
            Op::MatMulNt(a, b) => matmul_nt(self.val(a), self.val(b))?,
            Op::Conv1d {
                input,
                kernel,
                padding,
            } => conv1d(self.val(input), self.val(kernel), padding)?,
            Op::Add(a, b) => zip_broadcast(self.val(a), self.val(b), |x, y| x + y)?,
            Op::Sub(a, b) => zip_broadcast(self.val(a), self.val(b), |x, y| x - y)?,
            Op::Mul(a, b) => zip_broadcast(self.val(a), self.val(b), |x, y| x * y)?,
            Op::Div(a, b) => zip_broadcast(self.val(a), self.val(b), |x, y| x / y)?,
            Op::Neg(a) => self.val(a).map(|x| -x),
            Op::Scale(a, c) => self.val(a).map(|x| x * c),
            Op::Offset(a, c) => self.val(a).map(|x| x + c),
            Op::Square(a) => self.val(a).map(|x| x * x),
            Op::Relu(a) => self.val(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid(a) => self.val(a).map(sigmoid),
            Op::Exp(a) => self.val(a).map(f64::exp),
            Op::Log(a) => self.val(a).map(f64::ln),
            Op::Softplus(a) => self.val(a).map(softplus),
            Op::Sum(a) => Tensor::scalar(self.val(a).sum()),
            Op::Mean(a) => {
                let v = self.val(a);
                if v.is_empty() {
                    return Err("mean of an empty tensor".into());
                }
                Tensor::scalar(v.sum() / v.len() as f64)
            }
            Op::SumAxis(a, axis) => reduce_axis(self.val(a), axis, 1.0)?,
            Op::MeanAxis(a, axis) => {
                let v = self.val(a);
                let n = *v.shape().get(axis).ok_or("axis out of range")?;
                reduce_axis(v, axis, 1.0 / n as f64)?
            }
            Op::Max(a) | Op::Min(a) => {
                let v = self.val(a);
                if v.is_empty() {
                    return Err("extremum of an empty tensor".into());
                }
                let want_max = matches!(op, Op::Max(_));
                let mut best = 0;
                for (i, &x) in v.data().iter().enumerate() {
                    let y = v.data()[best];
                    if (want_max && x > y) || (!want_max && x < y) {
                        best = i;
                    }
                }
                return Ok((
                    Tensor::scalar(v.data()[best]),
                    Some(Tensor::scalar(best as f64)),
                ));
            }
            Op::LogSumExp(a) => {
                let v = self.val(a);
                if v.is_empty() {
                    return Err("logsumexp of an empty tensor".into());
                }
                let m = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = v.data().iter().map(|x| (x - m).exp()).sum();
                Tensor::scalar(m + s.ln())
            }
            Op::Gather {
                input,
                axis,
                ref indices,
            } => gather(self.val(input), axis, indices)?,
            Op::Concat { ref inputs, axis } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&i| self.val(i)).collect();
                concat(&vals, axis)?
            }
            Op::Reshape(a, ref shape) => self
                .val(a)
                .clone()
                .reshaped(shape)
                .map_err(|e| e.to_string())?,
            Op::Transpose(a) => transpose(self.val(a))?,
            Op::BroadcastTo(a, ref shape) => {
                let v = self.val(a);
                if broadcast_shape(v.shape(), shape).as_deref() != Some(shape.as_slice()) {
                    return Err(format!("cannot broadcast {:?} to {shape:?}", v.shape()));
                }
                zip_broadcast(v, &Tensor::zeros(shape), |x, _| x)?
            }
            Op::GaussianSample { mean, std, seed } => {
                return GaussianSampleOp::eval(self.val(mean), self.val(std), seed);
            }
        };
        Ok((t, None))
    }

    /// Back-propagates `seed` (same shape as `out`) and returns gradients for
    /// every trainable leaf.
    pub fn backward(&self, out: NodeId, seed: Tensor) -> Result<Gradients, DiffError> {
        let node = self.nodes.get(out.0).ok_or(DiffError::UnknownNode(out.0))?;
        let value = node.value.as_ref().ok_or(DiffError::NotEvaluated(out.0))?;
        if value.shape() != seed.shape() {
            return Err(DiffError::Shape {
                node: out.0,
                op: "backward seed",
                detail: format!("seed {:?} vs output {:?}", seed.shape(), value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.backprop(id, g, &mut grads);
        }
        let mut by_param = Vec::new();
        for (id, n) in self.nodes.iter().enumerate().take(out.0 + 1) {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                grads[id] = None;
            } else if let Some(p) = n.param {
                by_param.push((p, NodeId(id)));
            }
        }
        Ok(Gradients {
            by_node: grads,
            by_param,
        })
    }

    fn backprop(&self, id: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = node.value.as_ref().expect("evaluated");
        let mut send = |target: NodeId, grad: Tensor| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        };
        let shape_of = |n: NodeId| self.val(n).shape().to_vec();
        let ew = |g: &Tensor, f: &dyn Fn(usize, f64) -> f64| -> Tensor {
            let mut r = g.clone();
            for (i, v) in r.data_mut().iter_mut().enumerate() {
                *v = f(i, *v);
            }
            r
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a.0].requires_grad {
                    send(a, matmul_nt(&g, vb).expect("shapes checked"));
                }
                if self.nodes[b.0].requires_grad {
                    send(b, matmul_tn(va, &g));
                }
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a.0].requires_grad {
                    send(a, matmul(&g, vb).expect("shapes checked"));
                }
                if self.nodes[b.0].requires_grad {
                    send(b, matmul_tn(&g, va));
                }
            }
            Op::Conv1d {
                input,
                kernel,
                padding,
            } => {
                let (gi, gk) = conv1d_backward(
                    self.val(input),
                    self.val(kernel),
                    padding,
                    &g,
                    self.nodes[input.0].requires_grad,
                    self.nodes[kernel.0].requires_grad,
                );
                if let Some(gi) = gi {
                    send(input, gi);
                }
                if let Some(gk) = gk {
                    send(kernel, gk);
                }
            }
            Op::Add(a, b) => {
                send(a, unbroadcast(g.clone(), &shape_of(a)));
                send(b, unbroadcast(g, &shape_of(b)));
            }
            Op::Sub(a, b) => {
                send(a, unbroadcast(g.clone(), &shape_of(a)));
                send(b, unbroadcast(g.map(|x| -x), &shape_of(b)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a.0].requires_grad {
                    let ga = zip_broadcast(&g, vb, |x, y| x * y).expect("shapes checked");
                    send(a, unbroadcast(ga, va.shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = zip_broadcast(&g, va, |x, y| x * y).expect("shapes checked");
                    send(b, unbroadcast(gb, vb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a.0].requires_grad {
                    let ga = zip_broadcast(&g, vb, |x, y| x / y).expect("shapes checked");
                    send(a, unbroadcast(ga, va.shape()));
                }
                if self.nodes[b.0].requires_grad {
                    // d(a/b)/db = -out / b
                    let t = zip_broadcast(&g, out, |x, y| -x * y).expect("shapes checked");
                    let gb = zip_broadcast(&t, vb, |x, y| x / y).expect("shapes checked");
                    send(b, unbroadcast(gb, vb.shape()));
                }
            }
            Op::Neg(a) => send(a, g.map(|x| -x)),
            Op::Scale(a, c) => send(a, g.map(|x| x * c)),
            Op::Offset(a, _) => send(a, g),
            Op::Square(a) => {
                let va = self.val(a);
                send(a, ew(&g, &|i, x| 2.0 * va.data()[i] * x));
            }
            Op::Relu(a) => {
                let va = self.val(a);
                send(a, ew(&g, &|i, x| if va.data()[i] > 0.0 { x } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                send(a, ew(&g, &|i, x| {
                    let s = out.data()[i];
                    x * s * (1.0 - s)
                }));
            }
            Op::Exp(a) => send(a, ew(&g, &|i, x| x * out.data()[i])),
            Op::Log(a) => {
                let va = self.val(a);
                send(a, ew(&g, &|i, x| x / va.data()[i]));
            }
            Op::Softplus(a) => {
                let va = self.val(a);
                send(a, ew(&g, &|i, x| x * sigmoid(va.data()[i])));
            }
            Op::Sum(a) => send(a, Tensor::full(self.val(a).shape(), g.item())),
            Op::Mean(a) => {
                let va = self.val(a);
                send(a, Tensor::full(va.shape(), g.item() / va.len() as f64));
            }
            Op::SumAxis(a, _) | Op::MeanAxis(a, _) => {
                let va = self.val(a);
                let scale = match node.op {
                    Op::MeanAxis(_, axis) => 1.0 / va.shape()[axis] as f64,
                    _ => 1.0,
                };
                let full = zip_broadcast(&g, &Tensor::zeros(va.shape()), |x, _| x * scale)
                    .expect("shapes checked");
                send(a, full);
            }
            Op::Max(a) | Op::Min(a) => {
                let idx = node.aux.as_ref().expect("extremum index").item() as usize;
                let mut ga = Tensor::zeros(self.val(a).shape());
                ga.data_mut()[idx] = g.item();
                send(a, ga);
            }
            Op::LogSumExp(a) => {
                let lse = out.item();
                send(a, self.val(a).map(|x| g.item() * (x - lse).exp()));
            }
            Op::Gather {
                input,
                axis,
                ref indices,
            } => {
                let shape = shape_of(input);
                let (outer, len, inner) = axis_split(&shape, axis);
                let mut gi = Tensor::zeros(&shape);
                let k = indices.len();
                let src = g.data();
                let dst = gi.data_mut();
                for o in 0..outer {
                    for (j, &ix) in indices.iter().enumerate() {
                        let s = (o * k + j) * inner;
                        let d = (o * len + ix) * inner;
                        for t in 0..inner {
                            dst[d + t] += src[s + t];
                        }
                    }
                }
                send(input, gi);
            }
            Op::Concat { ref inputs, axis } => {
                let out_shape = out.shape();
                let (outer, total, inner) = axis_split(out_shape, axis);
                let mut start = 0;
                for &inp in inputs {
                    let shape = shape_of(inp);
                    let len = shape[axis];
                    if self.nodes[inp.0].requires_grad {
                        let mut gi = Tensor::zeros(&shape);
                        let dst = gi.data_mut();
                        for o in 0..outer {
                            let s = (o * total + start) * inner;
                            let d = o * len * inner;
                            dst[d..d + len * inner]
                                .copy_from_slice(&g.data()[s..s + len * inner]);
                        }
                        send(inp, gi);
                    }
                    start += len;
                }
            }
            Op::Reshape(a, _) => {
                let shape = shape_of(a);
                send(a, g.reshaped(&shape).expect("same numel"));
            }
            Op::Transpose(a) => send(a, transpose(&g).expect("matrix")),
            Op::BroadcastTo(a, _) => {
                let shape = shape_of(a);
                send(a, unbroadcast(g, &shape));
            }
            Op::GaussianSample { mean, std, .. } => {
                let noise = node.aux.as_ref().expect("noise cached");
                send(std, ew(&g, &|i, x| x * noise.data()[i]));
                send(mean, g);
            }
        }
    }
}

struct GaussianSampleOp;

impl GaussianSampleOp {
    fn op(mean: NodeId, std: NodeId, seed: u64) -> Op {
        Op::GaussianSample { mean, std, seed }
    }

    fn eval(mean: &Tensor, std: &Tensor, seed: u64) -> Result<(Tensor, Option<Tensor>), String> {
        if mean.shape() != std.shape() {
            return Err(format!(
                "mean {:?} and std {:?} differ",
                mean.shape(),
                std.shape()
            ));
        }
        if let Some(s) = std.data().iter().find(|s| !(**s >= 0.0)) {
            return Err(format!("standard deviation must be non-negative, got {s}"));
        }
        let mut rng = crate::rng::rng(seed);
        let noise: Vec<f64> = (0..mean.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let noise = Tensor::new(mean.shape().to_vec(), noise).expect("same numel");
        let data = mean
            .data()
            .iter()
            .zip(std.data())
            .zip(noise.data())
            .map(|((m, s), e)| if *s == 0.0 { *m } else { m + s * e })
            .collect();
        let value = Tensor::new(mean.shape().to_vec(), data).expect("same numel");
        Ok((value, Some(noise)))
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

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn dims2(t: &Tensor) -> Result<(usize, usize), String> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(format!("expected a matrix, got shape {s:?}")),
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, String> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return Err(format!("inner dimensions {k} and {k2} differ"));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::new(vec![m, n], out).expect("m*n"))
}

fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, String> {
    let (m, k) = dims2(a)?;
    let (n, k2) = dims2(b)?;
    if k != k2 {
        return Err(format!("inner dimensions {k} and {k2} differ"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    Ok(Tensor::new(vec![m, n], out).expect("m*n"))
}

/// `a^T @ b` for `a: [k, m]`, `b: [k, n]`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = dims2(a).expect("matrix");
    let (_, n) = dims2(b).expect("matrix");
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("m*n")
}

fn transpose(a: &Tensor) -> Result<Tensor, String> {
    let (r, c) = dims2(a)?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Ok(Tensor::new(vec![c, r], out).expect("r*c"))
}

struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    w_in: usize,
    w_out: usize,
    pad_left: usize,
}

fn conv_geometry(x: &Tensor, kern: &Tensor, padding: Padding) -> Result<ConvGeom, String> {
    let [batch, c_in, w_in] = *x.shape() else {
        return Err(format!("conv1d input must be [batch, c, w], got {:?}", x.shape()));
    };
    let [c_out, kc, k] = *kern.shape() else {
        return Err(format!(
            "conv1d kernel must be [c_out, c_in, k], got {:?}",
            kern.shape()
        ));
    };
    if kc != c_in {
        return Err(format!("kernel expects {kc} input channels, input has {c_in}"));
    }
    if k == 0 {
        return Err("empty kernel".into());
    }
    let (w_out, pad_left) = match padding {
        Padding::Same => (w_in, (k - 1) / 2),
        Padding::Valid => {
            if w_in < k {
                return Err(format!("input width {w_in} shorter than kernel {k}"));
            }
            (w_in - k + 1, 0)
        }
    };
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        k,
        w_in,
        w_out,
        pad_left,
    })
}

/// Output positions `w` for which input position `w + shift` is in range.
fn valid_range(shift: isize, w_out: usize, w_in: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (w_in as isize - shift).clamp(0, w_out as isize) as usize;
    (lo, hi.max(lo))
}

fn conv1d(x: &Tensor, kern: &Tensor, padding: Padding) -> Result<Tensor, String> {
    let g = conv_geometry(x, kern, padding)?;
    let mut out = vec![0.0; g.batch * g.c_out * g.w_out];
    let (xd, kd) = (x.data(), kern.data());
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let orow = &mut out[(b * g.c_out + o) * g.w_out..][..g.w_out];
            for i in 0..g.c_in {
                let xrow = &xd[(b * g.c_in + i) * g.w_in..][..g.w_in];
                for t in 0..g.k {
                    let kv = kd[(o * g.c_in + i) * g.k + t];
                    let shift = t as isize - g.pad_left as isize;
                    let (lo, hi) = valid_range(shift, g.w_out, g.w_in);
                    let src = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (dst, s) in orow[lo..hi].iter_mut().zip(src) {
                        *dst += kv * s;
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![g.batch, g.c_out, g.w_out], out).expect("numel"))
}

fn conv1d_backward(
    x: &Tensor,
    kern: &Tensor,
    padding: Padding,
    gout: &Tensor,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let g = conv_geometry(x, kern, padding).expect("checked in forward");
    let (xd, kd, gd) = (x.data(), kern.data(), gout.data());
    let mut gx = want_input.then(|| vec![0.0; xd.len()]);
    let mut gk = want_kernel.then(|| vec![0.0; kd.len()]);
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let grow = &gd[(b * g.c_out + o) * g.w_out..][..g.w_out];
            for i in 0..g.c_in {
                let xoff = (b * g.c_in + i) * g.w_in;
                for t in 0..g.k {
                    let kidx = (o * g.c_in + i) * g.k + t;
                    let shift = t as isize - g.pad_left as isize;
                    let (lo, hi) = valid_range(shift, g.w_out, g.w_in);
                    let s0 = xoff + (lo as isize + shift) as usize;
                    let s1 = xoff + (hi as isize + shift) as usize;
                    if let Some(gx) = gx.as_mut() {
                        let kv = kd[kidx];
                        for (dst, gv) in gx[s0..s1].iter_mut().zip(&grow[lo..hi]) {
                            *dst += kv * gv;
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[kidx] += dot(&xd[s0..s1], &grow[lo..hi]);
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("numel")),
        gk.map(|d| Tensor::new(kern.shape().to_vec(), d).expect("numel")),
    )
}

fn reduce_axis(v: &Tensor, axis: usize, scale: f64) -> Result<Tensor, String> {
    if axis >= v.shape().len() {
        return Err(format!("axis {axis} out of range for {:?}", v.shape()));
    }
    let (outer, len, inner) = axis_split(v.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let src = &v.data()[(o * len + a) * inner..][..inner];
            for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    if scale != 1.0 {
        out.iter_mut().for_each(|x| *x *= scale);
    }
    let mut shape = v.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::new(shape, out).expect("numel"))
}

fn gather(v: &Tensor, axis: usize, indices: &[usize]) -> Result<Tensor, String> {
    if axis >= v.shape().len() {
        return Err(format!("axis {axis} out of range for {:?}", v.shape()));
    }
    let (outer, len, inner) = axis_split(v.shape(), axis);
    if let Some(bad) = indices.iter().find(|&&i| i >= len) {
        return Err(format!("index {bad} out of range for axis of length {len}"));
    }
    let mut out = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &ix in indices {
            out.extend_from_slice(&v.data()[(o * len + ix) * inner..][..inner]);
        }
    }
    let mut shape = v.shape().to_vec();
    shape[axis] = indices.len();
    Ok(Tensor::new(shape, out).expect("numel"))
}

fn concat(vals: &[&Tensor], axis: usize) -> Result<Tensor, String> {
    let first = vals.first().ok_or("concat of nothing")?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(format!("axis {axis} out of range for {:?}", first.shape()));
    }
    for v in vals {
        let ok = v.shape().len() == rank
            && v
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(format!(
                "cannot concatenate {:?} with {:?} on axis {axis}",
                v.shape(),
                first.shape()
            ));
        }
    }
    let total: usize = vals.iter().map(|v| v.shape()[axis]).sum();
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in vals {
            let len = v.shape()[axis];
            out.extend_from_slice(&v.data()[o * len * inner..][..len * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::new(shape, out).expect("numel"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.forward(y).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![0.0, 1.0]));
        let y = g.relu(x);
        let s = g.sum(y);
        g.forward(s).unwrap();
        let grads = g.backward(s, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 1], &[1.0]));
        let b = g.constant(t(&[1, 1], &[5.0]));
        let c = g.matmul(a, b);
        assert_eq!(g.forward(c).unwrap().data(), &[5.0]);
    }

    #[test]
    fn conv1d_same_padding_matches_direct_sum() {
        // Direct correlation sum with the extra pad on the right:
        // out[w] = x[w] * k0 + x[w + 1] * k1, x[3] = 0.
        let x = [1.0, 2.0, 3.0];
        let k = [1.0, 1.0];
        let expected: Vec<f64> = (0..3)
            .map(|w| {
                (0..2)
                    .map(|t| x.get(w + t).copied().unwrap_or(0.0) * k[t])
                    .sum()
            })
            .collect();
        assert_eq!(expected, vec![3.0, 5.0, 3.0]);
        let mut g = Graph::new();
        let xi = g.constant(t(&[1, 1, 3], &x));
        let ki = g.constant(t(&[1, 1, 2], &k));
        let y = g.conv1d(xi, ki, Padding::Same);
        assert_eq!(g.forward(y).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn conv1d_delta_kernel_is_identity() {
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut g = Graph::new();
        let xi = g.constant(t(&[1, 1, 10], &x));
        let ki = g.constant(t(&[1, 1, 5], &[0.0, 0.0, 1.0, 0.0, 0.0]));
        let y = g.conv1d(xi, ki, Padding::Same);
        assert_eq!(g.forward(y).unwrap().data(), x.as_slice());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.forward(s).unwrap();
        let grads = g.backward(s, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[2, 3], &[0.0; 6]));
        let c = g.matmul(a, b);
        match g.forward(c) {
            Err(DiffError::Shape { node, op, .. }) => {
                assert_eq!(node, c.index());
                assert_eq!(op, "matmul");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.exp(x);
        assert!(matches!(
            g.backward(y, Tensor::scalar(1.0)),
            Err(DiffError::NotEvaluated(_))
        ));
    }

    #[test]
    fn gaussian_sample_contracts() {
        let mean = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut g = Graph::new();
        let m = g.constant(mean.clone());
        let s = g.constant(Tensor::zeros(&[3]));
        let z = g.gaussian_sample(m, s, 11);
        assert_eq!(g.forward(z).unwrap(), &mean);

        let draw = |seed| {
            let mut g = Graph::new();
            let m = g.constant(Tensor::zeros(&[4]));
            let s = g.constant(Tensor::full(&[4], 1.0));
            let z = g.gaussian_sample(m, s, seed);
            g.forward(z).unwrap().clone()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));

        let mut g = Graph::new();
        let m = g.constant(Tensor::zeros(&[1]));
        let s = g.constant(Tensor::full(&[1], -0.1));
        let z = g.gaussian_sample(m, s, 0);
        assert!(g.forward(z).is_err());
    }

    #[test]
    fn gaussian_sample_law_of_large_numbers() {
        let n = 100_000;
        let mut g = Graph::new();
        let m = g.constant(Tensor::full(&[n], 2.0));
        let s = g.constant(Tensor::full(&[n], 1.0));
        let z = g.gaussian_sample(m, s, 2024);
        let avg = g.forward(z).unwrap().sum() / n as f64;
        assert!((avg - 2.0).abs() < 2e-2, "sample mean {avg}");
    }

    #[test]
    fn logsumexp_is_stable() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.logsumexp(x);
        let v = g.forward(y).unwrap().item();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
