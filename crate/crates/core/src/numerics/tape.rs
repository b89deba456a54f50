use super::{ParamId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Local backward rule: given the output gradient, the parent values, the
/// output value and a mask of which parents need a gradient, returns one
/// gradient buffer per parent (`None` where not needed).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[&Tensor<T>], &Tensor<T>, &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// One tape covers a single forward/backward pass; build a fresh tape per
/// step. Values are stored eagerly, so a forward pass can be inspected
/// without ever calling [`Tape::backward`].
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf_node("constant", value, false, None)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.leaf_node("leaf", value, true, None)
    }

    /// Gradient-tracked leaf bound to a model parameter.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.leaf_node("param", value, true, Some(id))
    }

    fn leaf_node(&mut self, op: &'static str, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { op, value, parents: vec![], backward: None, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Records an op result. Rejects non-finite outputs.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {op}")));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let contributions = rule(&g, &inputs, &node.value, &needs);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for ((&p, contrib), need) in node.parents.iter().zip(contributions).zip(needs) {
                let (Some(c), true) = (contrib, need) else { continue };
                debug_assert_eq!(c.len(), self.nodes[p].value.len(), "grad of {}", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(c),
                }
            }
        }
        let params =
            self.nodes.iter().enumerate().take(loss.0 + 1).filter_map(|(i, n)| n.param.map(|id| (id, i))).collect();
        let shapes = self.nodes[..=loss.0].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes, params })
    }
}

/// Result of [`Tape::backward`]: gradients of the loss w.r.t. every leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a leaf; zeros if the leaf is unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes.get(v.0)?;
        let data = match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); shape.iter().product()],
        };
        Tensor::new(shape, data).ok()
    }

    /// `(parameter, gradient)` pairs for every parameter bound on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[T]>)> + '_ {
        self.params.iter().map(|&(id, node)| (id, self.grads[node].as_deref()))
    }
}
