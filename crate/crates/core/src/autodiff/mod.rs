//! Dense tensors and reverse-mode differentiation.
//!
//! The engine is deliberately small: it supports exactly the operations a
//! toy convolutional classifier and its attacks need, in 64-bit precision.

pub mod check;
mod graph;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;
pub(crate) use tensor::argmax;

use crate::error::{shape_err, Error, Result};

/// A differentiable function of a single tensor input.
///
/// Implementors record their computation on the supplied graph and return
/// the output node. Weights are inserted as constants or variables depending
/// on whether the caller wants their gradients.
pub trait Function {
    fn build(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId>;
}

/// Chooses a scalar from a function's output for differentiation.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    /// The output itself must hold exactly one value.
    Scalar,
    /// `Σ wᵢ·outᵢ`; the weight vector must match the output length.
    Weighted(Vec<f64>),
}

/// Evaluates `f` at `input`.
pub fn forward<F: Function + ?Sized>(f: &F, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let out = f.build(&mut g, x)?;
    Ok(g.value(out).clone())
}

/// Returns the selected scalar and its gradient with respect to `input`.
pub fn value_and_grad<F: Function + ?Sized>(
    f: &F,
    input: &Tensor,
    selector: &Selector,
) -> Result<(f64, Tensor)> {
    let mut g = Graph::new();
    let x = g.variable(input.clone());
    let out = f.build(&mut g, x)?;
    let scalar = select(&mut g, out, selector)?;
    let value = g.value(scalar).data()[0];
    let grads = g.backward(scalar)?;
    Ok((value, grads.get_or_zeros(x)))
}

/// `∂(selected output)/∂(input)`, shaped like `input`.
pub fn grad_wrt_input<F: Function + ?Sized>(
    f: &F,
    input: &Tensor,
    selector: &Selector,
) -> Result<Tensor> {
    value_and_grad(f, input, selector).map(|(_, g)| g)
}

fn select(g: &mut Graph, out: NodeId, selector: &Selector) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    match selector {
        Selector::Scalar => {
            if g.value(out).numel() != 1 {
                return Err(Error::NotScalar(shape));
            }
            Ok(out)
        }
        Selector::Weighted(w) => {
            if w.len() != g.value(out).numel() {
                return Err(shape_err(
                    "select",
                    format!("{} weights for output shape {:?}", w.len(), shape),
                ));
            }
            let wt = g.constant(Tensor::new(w.clone(), shape)?);
            let prod = g.mul(out, wt)?;
            Ok(g.sum(prod))
        }
    }
}

impl<F: Fn(&mut Graph, NodeId) -> Result<NodeId>> Function for F {
    fn build(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        self(graph, input)
    }
}
