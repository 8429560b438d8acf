//! Central finite-difference verification of backward passes.

use rand::Rng;

use super::{Graph, NodeId, Tensor};
use crate::error::Result;
use crate::seeding::{derive_seed, rng_from};

/// Records a computation on leaf nodes and returns its output node.
pub type Build = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Sync;

/// A named computation and the shapes of its leaves.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub build: Box<Build>,
}

/// `Σ w ∘ build(leaves)`.
fn eval(build: &Build, leaves: &[Tensor], w: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    Ok(g.value(out).data().iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Largest relative error between backward and central differences of
/// `Σ w ∘ build(leaves)` over every leaf entry. Relative errors use the
/// larger magnitude of the two, floored at `1e-6`.
pub fn max_relative_error(build: &Build, leaves: &[Tensor], w_seed: u64, step: f64) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let shape = g.value(out).shape().to_vec();
    let mut rng = rng_from(w_seed);
    let w: Vec<f64> = (0..g.value(out).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wn = g.constant(Tensor::new(w.clone(), shape)?);
    let p = g.mul(out, wn)?;
    let s = g.sum(p);
    let grads = g.backward(s)?;

    let mut worst: f64 = 0.0;
    for (li, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id);
        for j in 0..leaves[li].numel() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[j] += step;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[j] -= step;
            let numeric = (eval(build, &plus, &w)? - eval(build, &minus, &w)?) / (2.0 * step);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Random entries with magnitudes in `[0.05, 1)`, so ReLU kinks at zero are
/// never within one differencing step.
pub fn random_leaf(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(data, shape.to_vec()).expect("shape matches data")
}

/// Worst relative error of `case` over `trials` random draws.
pub fn check_case(case: &OpCase, trials: u64, seed: u64, step: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = rng_from(derive_seed(seed, &[t]));
        let leaves: Vec<_> = case.shapes.iter().map(|s| random_leaf(&mut rng, s)).collect();
        worst = worst.max(max_relative_error(&*case.build, &leaves, derive_seed(seed, &[t, 1]), step)?);
    }
    Ok(worst)
}

fn case(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Sync + 'static) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        build: Box::new(build),
    }
}

/// One case per supported operation (convolution with several paddings),
/// plus a small convolutional ReLU network.
pub fn op_suite() -> Vec<OpCase> {
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], |g, x| g.matmul(x[0], x[1])),
        case("conv2d pad 0", &[&[2, 5, 6], &[3, 2, 3, 3]], |g, x| g.conv2d(x[0], x[1], 0)),
        case("conv2d pad 1", &[&[2, 4, 4], &[2, 2, 3, 3]], |g, x| g.conv2d(x[0], x[1], 1)),
        case("conv2d 1x1 pad 2", &[&[1, 3, 3], &[2, 1, 1, 1]], |g, x| g.conv2d(x[0], x[1], 2)),
        case("bias_add channels", &[&[3, 2, 2], &[3]], |g, x| g.bias_add(x[0], x[1], 0)),
        case("bias_add columns", &[&[2, 5], &[5]], |g, x| g.bias_add(x[0], x[1], 1)),
        case("relu", &[&[4, 3]], |g, x| Ok(g.relu(x[0]))),
        case("mul", &[&[2, 3], &[2, 3]], |g, x| g.mul(x[0], x[1])),
        case("sum", &[&[5]], |g, x| Ok(g.sum(x[0]))),
        // Random draws tie with probability zero, and gaps between entries
        // far exceed the differencing step.
        case("max", &[&[6]], |g, x| g.max(x[0])),
        case("softmax_cross_entropy", &[&[4]], |g, x| g.softmax_cross_entropy(x[0], 2)),
        case("reshape", &[&[2, 3], &[6]], |g, x| {
            let r = g.reshape(x[0], &[6])?;
            g.mul(r, x[1])
        }),
        case("conv relu dense network", &[&[1, 3, 3], &[2, 1, 3, 3], &[18, 3]], |g, x| {
            let h = g.conv2d(x[0], x[1], 1)?;
            let h = g.relu(h);
            let f = g.reshape(h, &[1, 18])?;
            let o = g.matmul(f, x[2])?;
            let o = g.reshape(o, &[3])?;
            g.softmax_cross_entropy(o, 0)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // `x·x` built from a constant copy differentiates only one factor.
        let build: Box<Build> = Box::new(|g: &mut Graph, x: &[NodeId]| {
            let c = g.constant(g.value(x[0]).clone());
            g.mul(x[0], c)
        });
        let leaves = [Tensor::new(vec![0.5, -0.7], vec![2]).unwrap()];
        assert!(max_relative_error(&*build, &leaves, 0, 1e-5).unwrap() > 0.1);
    }
}
