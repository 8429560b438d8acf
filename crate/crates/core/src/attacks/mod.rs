//! Masked targeted attacks, untargeted PGD and border extension.
//!
//! A [`Mask`] restricts which pixels an attack may change. Every attack keeps
//! the perturbation exactly zero off-mask and the perturbed image inside the
//! unit box.

mod bim;
mod cw;
mod extend;
mod pgd;

pub use bim::{attack_linf_masked, LinfAttackConfig};
pub use cw::{attack_l2_masked, L2AttackConfig};
pub use extend::{extend_image, ExtendedImage, FillMode};
pub use pgd::{pgd_untargeted, PgdConfig};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Result};

/// Which `Lp` norm measures perturbation size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    Linf,
}

impl NormKind {
    pub fn norm(self, t: &Tensor) -> f64 {
        match self {
            NormKind::L2 => t.l2_norm(),
            NormKind::Linf => t.linf_norm(),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

/// Binary perturbation mask with the same shape as the image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<bool>,
    shape: Vec<usize>,
}

impl Mask {
    pub fn new(bits: Vec<bool>, shape: &[usize]) -> Result<Self> {
        if bits.len() != shape.iter().product::<usize>() {
            return Err(shape_err(
                "mask",
                format!("{} bits for shape {:?}", bits.len(), shape),
            ));
        }
        Ok(Self {
            bits,
            shape: shape.to_vec(),
        })
    }

    pub fn full(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            bits: vec![true; n],
            shape: shape.to_vec(),
        }
    }

    pub fn empty(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            bits: vec![false; n],
            shape: shape.to_vec(),
        }
    }

    /// Mask with exactly the listed flat indices set.
    pub fn from_indices(shape: &[usize], indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut m = Self::empty(shape);
        for i in indices {
            if i >= m.bits.len() {
                return Err(shape_err("mask", format!("index {i} out of range")));
            }
            m.bits[i] = true;
        }
        Ok(m)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other.shape())?;
        Ok(Mask {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
            shape: self.shape.clone(),
        })
    }

    /// `true` when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Zeroes every entry of `t` where the mask is unset.
    pub fn apply_in_place(&self, t: &mut Tensor) {
        for (v, &b) in t.data_mut().iter_mut().zip(&self.bits) {
            if !b {
                *v = 0.0;
            }
        }
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.check_shape(t.shape())?;
        let mut out = t.clone();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err(
                "mask",
                format!("mask {:?} vs tensor {:?}", self.shape, shape),
            ));
        }
        Ok(())
    }
}

/// Outcome of one masked attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Zero wherever the mask is unset.
    pub delta: Tensor,
    /// `‖delta‖₂` for L2; the smallest successful bound `ε` for L∞.
    pub cost: f64,
    pub success: bool,
    pub iterations_used: usize,
    pub norm: NormKind,
}

/// `δ ← clamp(x + δ, 0, 1) − x`, then re-mask.
pub(crate) fn project_box(x: &Tensor, delta: &mut Tensor, mask: &Mask) {
    for ((d, &xv), &b) in delta.data_mut().iter_mut().zip(x.data()).zip(mask.bits()) {
        *d = if b { (xv + *d).clamp(0.0, 1.0) - xv } else { 0.0 };
    }
}

/// Gradient weights of the margin `max_{i≠t} Z_i − Z_t` (zero once clipped).
pub(crate) fn margin_weights(z: &[f64], target: usize, threshold: f64) -> Vec<f64> {
    let mut w = vec![0.0; z.len()];
    let (j, zj) = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    if j != usize::MAX && zj - z[target] > -threshold {
        w[j] = 1.0;
        w[target] = -1.0;
    }
    w
}

pub(crate) fn is_target(z: &[f64], target: usize) -> bool {
    crate::autodiff::argmax(z) == Some(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_basics() {
        let m = Mask::from_indices(&[1, 2, 2], [0, 3]).unwrap();
        assert_eq!(m.count(), 2);
        let t = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![1, 2, 2]).unwrap();
        assert_eq!(m.apply(&t).unwrap().data(), &[1.0, 0.0, 0.0, 4.0]);
        assert!(m.is_subset_of(&Mask::full(&[1, 2, 2])));
        assert!(!Mask::full(&[1, 2, 2]).is_subset_of(&m));
        assert!(Mask::from_indices(&[2], [2]).is_err());
    }

    #[test]
    fn box_projection_remasks() {
        let x = Tensor::new(vec![0.9, 0.1, 0.5], vec![3]).unwrap();
        let mut d = Tensor::new(vec![0.5, -0.5, 0.3], vec![3]).unwrap();
        let m = Mask::new(vec![true, true, false], &[3]).unwrap();
        project_box(&x, &mut d, &m);
        assert!((d.data()[0] - 0.1).abs() < 1e-15);
        assert!((d.data()[1] + 0.1).abs() < 1e-15);
        assert_eq!(d.data()[2], 0.0);
    }

    #[test]
    fn margin_weights_pick_runner_up() {
        assert_eq!(margin_weights(&[1.0, 3.0, 2.0], 2, 0.0), vec![0.0, 1.0, -1.0]);
        assert_eq!(margin_weights(&[1.0, 0.0, 2.0], 2, 0.0), vec![0.0; 3]);
    }
}
