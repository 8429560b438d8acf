//! Masked targeted L2 attack in the style of Carlini and Wagner.

use serde::{Deserialize, Serialize};

use super::{is_target, margin_weights, project_box, AttackResult, Mask, NormKind};
use crate::autodiff::Tensor;
use crate::error::{invalid, Result};
use crate::model::Classifier;
use crate::optim::Adam;

/// Budget of [`attack_l2_masked`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L2AttackConfig {
    /// Trade-off constants tried in order, warm-starting each from the last.
    pub lambdas: Vec<f64>,
    pub steps_per_lambda: usize,
    /// Extra steps at the first successful constant, spent shrinking `δ`.
    pub refine_steps: usize,
    pub learning_rate: f64,
    /// Confidence `κ` in `max(max_{i≠t} Z_i − Z_t, −κ)`.
    pub threshold: f64,
}

impl Default for L2AttackConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.1, 1.0, 10.0, 100.0],
            steps_per_lambda: 100,
            refine_steps: 100,
            learning_rate: 0.01,
            threshold: 0.0,
        }
    }
}

/// Minimizes `‖δ∘M‖₂² + λ·f(x + δ∘M)` over the λ schedule.
///
/// Success means `argmax g(x + δ∘M) = target`. The returned `δ` is the
/// smallest successful iterate seen; on failure it is the last iterate and
/// `success` is false.
pub fn attack_l2_masked(
    classifier: &Classifier,
    image: &Tensor,
    target: usize,
    mask: &Mask,
    config: &L2AttackConfig,
) -> Result<AttackResult> {
    classifier.check_class(target)?;
    mask.check_shape(image.shape())?;
    if config.lambdas.is_empty() || config.learning_rate <= 0.0 {
        return Err(invalid("L2 attack needs a non-empty λ schedule and positive step"));
    }
    let mut delta = Tensor::zeros(image.shape());
    let mut best: Option<Tensor> = None;
    let mut iterations = 0;

    // `step` evaluates at the current δ, records success, then descends.
    let run = |delta: &mut Tensor, lambda: f64, steps: usize, opt: &mut Adam,
                   best: &mut Option<Tensor>, iterations: &mut usize|
     -> Result<()> {
        for _ in 0..steps {
            let adv = image.add(delta)?;
            let (z, grad) = classifier
                .logits_and_grad(&adv, |z| margin_weights(z, target, config.threshold))?;
            if is_target(&z, target) {
                let better = best.as_ref().map_or(true, |b| delta.l2_norm() < b.l2_norm());
                if better {
                    *best = Some(delta.clone());
                }
            }
            let g: Vec<f64> = delta
                .data()
                .iter()
                .zip(grad.data())
                .zip(mask.bits())
                .map(|((d, gr), &m)| if m { 2.0 * d + lambda * gr } else { 0.0 })
                .collect();
            opt.update(&mut [delta.data_mut()], &[&g]);
            project_box(image, delta, mask);
            *iterations += 1;
        }
        Ok(())
    };

    if is_target(&classifier.logits(image)?, target) {
        return Ok(AttackResult {
            delta,
            cost: 0.0,
            success: true,
            iterations_used: 0,
            norm: NormKind::L2,
        });
    }
    if mask.count() > 0 {
        for &lambda in &config.lambdas {
            let mut opt = Adam::new(config.learning_rate, &[delta.numel()]);
            run(&mut delta, lambda, config.steps_per_lambda, &mut opt, &mut best, &mut iterations)?;
            if best.is_some() {
                run(&mut delta, lambda, config.refine_steps, &mut opt, &mut best, &mut iterations)?;
                break;
            }
        }
        // The last update has not been checked yet.
        if is_target(&classifier.logits(&image.add(&delta)?)?, target)
            && best.as_ref().map_or(true, |b| delta.l2_norm() < b.l2_norm())
        {
            best = Some(delta.clone());
        }
    }
    let success = best.is_some();
    let delta = best.unwrap_or(delta);
    Ok(AttackResult {
        cost: delta.l2_norm(),
        delta,
        success,
        iterations_used: iterations,
        norm: NormKind::L2,
    })
}
