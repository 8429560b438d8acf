//! Masked targeted L∞ attack: iterative signed-gradient steps inside an
//! `ε` box, with the cost defined as the smallest successful `ε`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{is_target, margin_weights, project_box, AttackResult, Mask, NormKind};
use crate::autodiff::Tensor;
use crate::error::{invalid, Result};
use crate::model::Classifier;
use crate::seeding::{derive_seed, rng_from};

/// Budget of [`attack_linf_masked`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinfAttackConfig {
    /// Iterations per bound.
    pub steps: usize,
    /// Step size as a fraction of the bound.
    pub step_fraction: f64,
    /// Bounds are searched on the grid `k / levels`, `k = 0..=levels`.
    pub levels: u32,
    /// Start each run from a uniform point in the box instead of zero.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for LinfAttackConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            step_fraction: 0.25,
            levels: 255,
            random_start: false,
            seed: 0,
        }
    }
}

/// One BIM run at bound `eps`; returns the first successful iterate.
fn bim_run(
    classifier: &Classifier,
    image: &Tensor,
    target: usize,
    mask: &Mask,
    eps: f64,
    config: &LinfAttackConfig,
    level: u32,
    iterations: &mut usize,
) -> Result<(bool, Tensor)> {
    let mut delta = Tensor::zeros(image.shape());
    if config.random_start {
        let mut rng = rng_from(derive_seed(config.seed, &[level as u64]));
        for d in delta.data_mut() {
            *d = rng.gen_range(-eps..=eps);
        }
        project_box(image, &mut delta, mask);
    }
    let alpha = eps * config.step_fraction;
    for step in 0..=config.steps {
        let adv = image.add(&delta)?;
        let (z, grad) = classifier.logits_and_grad(&adv, |z| margin_weights(z, target, 0.0))?;
        if is_target(&z, target) {
            return Ok((true, delta));
        }
        if step == config.steps {
            break;
        }
        *iterations += 1;
        for ((d, g), &m) in delta.data_mut().iter_mut().zip(grad.data()).zip(mask.bits()) {
            if m {
                let s = if *g > 0.0 {
                    1.0
                } else if *g < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *d = (*d - alpha * s).clamp(-eps, eps);
            }
        }
        project_box(image, &mut delta, mask);
    }
    Ok((false, delta))
}

/// Binary search for the smallest grid bound at which BIM reaches `target`.
///
/// `cost` is that bound, which can exceed `‖δ‖∞` when the successful
/// iterate does not saturate the box. If even `ε = 1` fails, `success` is
/// false and `cost` is `‖δ‖∞` of the final `ε = 1` iterate.
pub fn attack_linf_masked(
    classifier: &Classifier,
    image: &Tensor,
    target: usize,
    mask: &Mask,
    config: &LinfAttackConfig,
) -> Result<AttackResult> {
    classifier.check_class(target)?;
    mask.check_shape(image.shape())?;
    if config.levels == 0 || config.step_fraction <= 0.0 {
        return Err(invalid("L∞ attack needs levels ≥ 1 and a positive step"));
    }
    let mut iterations = 0;
    let result = |delta: Tensor, cost: f64, success: bool, iterations: usize| AttackResult {
        delta,
        cost,
        success,
        iterations_used: iterations,
        norm: NormKind::Linf,
    };
    if is_target(&classifier.logits(image)?, target) {
        return Ok(result(Tensor::zeros(image.shape()), 0.0, true, 0));
    }
    let levels = config.levels;
    let eps_of = |k: u32| k as f64 / levels as f64;
    let (ok, top) = bim_run(classifier, image, target, mask, 1.0, config, levels, &mut iterations)?;
    if !ok {
        let cost = top.linf_norm();
        return Ok(result(top, cost, false, iterations));
    }
    let (mut lo, mut hi, mut best) = (0u32, levels, top);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (ok, d) = bim_run(classifier, image, target, mask, eps_of(mid), config, mid, &mut iterations)?;
        if ok {
            hi = mid;
            best = d;
        } else {
            lo = mid;
        }
    }
    Ok(result(best, eps_of(hi), true, iterations))
}
