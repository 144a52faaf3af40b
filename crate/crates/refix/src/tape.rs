//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records operations as they execute (define-by-run) and replays
//! them in reverse to accumulate gradients. Recorded values are immutable
//! snapshots, a tape belongs to a single training step on a single thread,
//! and `backward` visits every node exactly once, so the same tape always
//! produces bit-identical gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Matmul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    Relu(NodeId),
    LogSoftmax {
        input: NodeId,
        axis: usize,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
        axis: usize,
    },
    Gather {
        input: NodeId,
        indices: Arc<Vec<usize>>,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Arc<Vec<usize>>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    StopGradient,
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradient of the loss with respect to every recorded node.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `id`, or `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, densified to zeros when the node is unreachable
    /// from the loss.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor<S> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

/// Operation recorder. All graph construction goes through its methods; each
/// method computes the forward value eagerly and stores what the backward
/// sweep will need.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input (parameter, data batch, or constant).
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let v = ops::scale(self.value(a), c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let v = ops::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = ops::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn log_softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let v = ops::log_softmax(self.value(input), axis)?;
        Ok(self.push(v, Op::LogSoftmax { input, axis }))
    }

    pub fn bias_add(&mut self, input: NodeId, bias: NodeId, axis: usize) -> Result<NodeId> {
        let v = ops::bias_add(self.value(input), self.value(bias), axis)?;
        Ok(self.push(v, Op::BiasAdd { input, bias, axis }))
    }

    pub fn gather_rows(&mut self, input: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let v = ops::gather_rows(self.value(input), &indices)?;
        Ok(self.push(
            v,
            Op::Gather {
                input,
                indices: Arc::new(indices),
            },
        ))
    }

    pub fn max_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        let (v, argmax) = ops::max_pool2(self.value(input))?;
        Ok(self.push(
            v,
            Op::MaxPool2 {
                input,
                argmax: Arc::new(argmax),
            },
        ))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(input).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(input)))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = ops::sum_all(self.value(input));
        self.push(v, Op::Sum(input))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        let v = ops::mean_all(self.value(input))?;
        Ok(self.push(v, Op::Mean(input)))
    }

    /// Forwards the value unchanged and blocks gradient flow through it.
    pub fn stop_gradient(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input).clone();
        self.push(v, Op::StopGradient)
    }

    /// Reverse sweep from a scalar loss node. Returns the gradient of the
    /// loss with respect to every node; nodes the loss does not reach report
    /// `None` (densified to zeros by [`Gradients::get_or_zeros`]).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        lv.ensure_finite("loss is not finite; aborting backward")?;

        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));

        // Nodes only reference earlier nodes, so one reverse pass visits each
        // node exactly once with its output gradient fully accumulated.
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone())?;
                    self.accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone())?;
                    self.accumulate(&mut grads, *b, ops::scale(&g, -S::one()))?;
                }
                Op::Mul(a, b) => {
                    let da = ops::mul(&g, self.value(*b))?;
                    let db = ops::mul(&g, self.value(*a))?;
                    self.accumulate(&mut grads, *a, da)?;
                    self.accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => {
                    self.accumulate(&mut grads, *a, ops::scale(&g, *c))?;
                }
                Op::Matmul(a, b) => {
                    let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), &g)?;
                    self.accumulate(&mut grads, *a, da)?;
                    self.accumulate(&mut grads, *b, db)?;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (di, dk) = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &g,
                        *stride,
                        *padding,
                    )?;
                    self.accumulate(&mut grads, *input, di)?;
                    self.accumulate(&mut grads, *kernel, dk)?;
                }
                Op::Relu(a) => {
                    let da = ops::relu_backward(self.value(*a), &g);
                    self.accumulate(&mut grads, *a, da)?;
                }
                Op::LogSoftmax { input, axis } => {
                    let da = ops::log_softmax_backward(&self.nodes[i].value, &g, *axis)?;
                    self.accumulate(&mut grads, *input, da)?;
                }
                Op::BiasAdd { input, bias, axis } => {
                    let db = ops::bias_add_backward_bias(&g, *axis)?;
                    self.accumulate(&mut grads, *input, g.clone())?;
                    self.accumulate(&mut grads, *bias, db)?;
                }
                Op::Gather { input, indices } => {
                    let da = ops::gather_rows_backward(self.value(*input).shape(), indices, &g)?;
                    self.accumulate(&mut grads, *input, da)?;
                }
                Op::MaxPool2 { input, argmax } => {
                    let da = ops::max_pool2_backward(self.value(*input).shape(), argmax, &g)?;
                    self.accumulate(&mut grads, *input, da)?;
                }
                Op::Reshape(a) => {
                    let da = g.reshape(self.value(*a).shape().to_vec())?;
                    self.accumulate(&mut grads, *a, da)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    let da = Tensor::full(self.value(*a).shape(), gv);
                    self.accumulate(&mut grads, *a, da)?;
                }
                Op::Mean(a) => {
                    let n = S::from_usize(self.value(*a).numel()).unwrap();
                    let gv = g.item()? / n;
                    let da = Tensor::full(self.value(*a).shape(), gv);
                    self.accumulate(&mut grads, *a, da)?;
                }
                Op::StopGradient => {}
            }
            // The gradient was moved out to satisfy the borrow checker while
            // accumulating into earlier nodes; keep it in the result.
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<S>>],
        id: NodeId,
        g: Tensor<S>,
    ) -> Result<()> {
        grads[id.0] = Some(match grads[id.0].take() {
            Some(acc) => ops::add(&acc, &g)?,
            None => g,
        });
        Ok(())
    }
}
