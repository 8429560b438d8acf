//! Untargeted projected gradient ascent on the cross-entropy loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NormKind;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::model::Classifier;

/// Settings for [`pgd_untargeted`]. The step size is `eps · step_fraction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub eps: f64,
    pub norm: NormKind,
    pub steps: usize,
    pub step_fraction: f64,
    pub random_start: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            norm: NormKind::Linf,
            steps: 7,
            step_fraction: 0.25,
            random_start: true,
        }
    }
}

fn project(delta: &mut Tensor, x: &Tensor, cfg: &PgdConfig) {
    match cfg.norm {
        NormKind::Linf => {
            for d in delta.data_mut() {
                *d = d.clamp(-cfg.eps, cfg.eps);
            }
        }
        NormKind::L2 => {
            let n = delta.l2_norm();
            if n > cfg.eps {
                let s = cfg.eps / n;
                for d in delta.data_mut() {
                    *d *= s;
                }
            }
        }
    }
    for (d, &xv) in delta.data_mut().iter_mut().zip(x.data()) {
        *d = (xv + *d).clamp(0.0, 1.0) - xv;
    }
}

/// Returns `x′` with `‖x′ − x‖ ≤ eps` that approximately maximizes the loss
/// of `label`. With `eps = 0` the result equals `x` exactly.
pub fn pgd_untargeted(
    classifier: &Classifier,
    x: &Tensor,
    label: usize,
    cfg: &PgdConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let mut delta = Tensor::zeros(x.shape());
    if cfg.random_start {
        match cfg.norm {
            NormKind::Linf => {
                for d in delta.data_mut() {
                    *d = cfg.eps * rng.gen_range(-1.0..=1.0);
                }
            }
            NormKind::L2 => {
                for d in delta.data_mut() {
                    *d = rng.sample(StandardNormal);
                }
                let n = delta.l2_norm();
                let r = cfg.eps * rng.gen::<f64>();
                if n > 0.0 {
                    delta = delta.scale(r / n);
                }
            }
        }
        project(&mut delta, x, cfg);
    }
    let alpha = cfg.eps * cfg.step_fraction;
    for _ in 0..cfg.steps {
        let (_, g) = classifier.loss_and_input_grad(&x.add(&delta)?, label)?;
        match cfg.norm {
            NormKind::Linf => {
                for (d, gv) in delta.data_mut().iter_mut().zip(g.data()) {
                    if *gv != 0.0 {
                        *d += alpha * gv.signum();
                    }
                }
            }
            NormKind::L2 => {
                let n = g.l2_norm();
                if n > 0.0 {
                    for (d, gv) in delta.data_mut().iter_mut().zip(g.data()) {
                        *d += alpha * gv / n;
                    }
                }
            }
        }
        project(&mut delta, x, cfg);
    }
    x.add(&delta)
}
