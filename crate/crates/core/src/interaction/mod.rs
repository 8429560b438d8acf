//! Rewards of perturbation units, sub-pixel Taylor estimates of their
//! Shapley values, and interactions among them.
//!
//! A *unit* is the smallest toggled piece of the perturbation (a pixel or a
//! super-pixel). Rewards are functions of per-unit amounts `a ∈ [0, 1]`: the
//! input is `x + Σ_u a_u·(δ∘M_u)`. Set games are the corners `a ∈ {0, 1}`;
//! the sub-pixel scheme visits the grid `a ∈ {0, 1/K, …, 1}`.

mod batched;
mod subpixel;
mod taylor;

pub use batched::{batched_candidate_rewards, evaluate_batch, nearest_components, plan_batches, BatchConfig};
pub use subpixel::{MultilinearExtension, SubPixelGame};
pub use taylor::{
    component_reward_taylor, group_shapley_taylor, interaction_taylor, pixel_rewards_taylor,
    TaylorConfig, TaylorEstimate,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::model::Classifier;
use crate::shapley::{shapley_exact, shapley_merged, Coalition, Game, MAX_PLAYERS};

/// A reward that is differentiable in per-unit amounts.
pub trait AmountReward: Sync {
    fn num_units(&self) -> usize;
    fn value(&self, amounts: &[f64]) -> Result<f64>;
    /// Value and `∂value/∂a_u` for every unit.
    fn value_and_grad(&self, amounts: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `z = g_t − g_ℓ` at `x + Σ_u a_u·(δ∘M_u)`.
pub struct PixelGameContext<'a> {
    classifier: &'a Classifier,
    image: Tensor,
    delta: Tensor,
    true_class: usize,
    target_class: usize,
    units: Vec<Vec<usize>>,
    centers: Vec<(f64, f64)>,
}

/// Disjoint square blocks of side `size` tiling an `h × w` image, row-major;
/// trailing blocks are cut short. Returns flat indices over all channels
/// and each block's `(row, col)` center.
pub fn super_pixel_units(
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
) -> Result<(Vec<Vec<usize>>, Vec<(f64, f64)>)> {
    if size == 0 {
        return Err(invalid("super-pixel size must be positive"));
    }
    let mut units = Vec::new();
    let mut centers = Vec::new();
    for r0 in (0..h).step_by(size) {
        for c0 in (0..w).step_by(size) {
            let (r1, c1) = ((r0 + size).min(h), (c0 + size).min(w));
            let mut u = Vec::new();
            for ch in 0..channels {
                for r in r0..r1 {
                    for c in c0..c1 {
                        u.push((ch * h + r) * w + c);
                    }
                }
            }
            units.push(u);
            centers.push(((r0 + r1 - 1) as f64 / 2.0, (c0 + c1 - 1) as f64 / 2.0));
        }
    }
    Ok((units, centers))
}

impl<'a> PixelGameContext<'a> {
    /// `units` are disjoint lists of flat indices into the image tensor;
    /// `centers` give each unit's spatial position for nearest-neighbor queries.
    pub fn new(
        classifier: &'a Classifier,
        image: Tensor,
        delta: Tensor,
        true_class: usize,
        target_class: usize,
        units: Vec<Vec<usize>>,
        centers: Vec<(f64, f64)>,
    ) -> Result<Self> {
        classifier.check_class(true_class)?;
        classifier.check_class(target_class)?;
        if true_class == target_class {
            return Err(invalid("true and target class must differ"));
        }
        if image.shape() != delta.shape() || image.shape() != classifier.input_shape().dims() {
            return Err(shape_err(
                "pixel_game",
                format!("image {:?}, delta {:?}, classifier {:?}", image.shape(), delta.shape(), classifier.input_shape().dims()),
            ));
        }
        if units.len() != centers.len() || units.is_empty() {
            return Err(invalid("need one center per unit and at least one unit"));
        }
        let mut seen = vec![false; image.numel()];
        for u in &units {
            if u.is_empty() {
                return Err(invalid("empty unit"));
            }
            for &i in u {
                if i >= seen.len() || seen[i] {
                    return Err(invalid(format!("unit index {i} out of range or shared")));
                }
                seen[i] = true;
            }
        }
        Ok(Self {
            classifier,
            image,
            delta,
            true_class,
            target_class,
            units,
            centers,
        })
    }

    /// Context whose units are `size × size` super-pixels over the full image.
    pub fn with_super_pixels(
        classifier: &'a Classifier,
        image: Tensor,
        delta: Tensor,
        true_class: usize,
        target_class: usize,
        size: usize,
    ) -> Result<Self> {
        let s = image.shape().to_vec();
        if s.len() != 3 {
            return Err(shape_err("pixel_game", format!("expected [C, H, W], got {s:?}")));
        }
        let (units, centers) = super_pixel_units(s[0], s[1], s[2], size)?;
        Self::new(classifier, image, delta, true_class, target_class, units, centers)
    }

    pub fn classifier(&self) -> &Classifier {
        self.classifier
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta
    }

    pub fn true_class(&self) -> usize {
        self.true_class
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn units(&self) -> &[Vec<usize>] {
        &self.units
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    /// `x + Σ_u a_u·(δ∘M_u)`.
    pub fn input_at(&self, amounts: &[f64]) -> Result<Tensor> {
        if amounts.len() != self.units.len() {
            return Err(shape_err("pixel_game", format!("{} amounts for {} units", amounts.len(), self.units.len())));
        }
        let mut x = self.image.clone();
        let (xd, dd) = (x.data_mut(), self.delta.data());
        for (u, &a) in self.units.iter().zip(amounts) {
            if a != 0.0 {
                for &i in u {
                    xd[i] += a * dd[i];
                }
            }
        }
        Ok(x)
    }

    /// Scores at the amounts `a`, as `(g_ℓ, g_t)`.
    pub fn scores_at(&self, amounts: &[f64]) -> Result<(f64, f64)> {
        let z = self.classifier.logits(&self.input_at(amounts)?)?;
        Ok((z[self.true_class], z[self.target_class]))
    }
}

impl AmountReward for PixelGameContext<'_> {
    fn num_units(&self) -> usize {
        self.units.len()
    }

    fn value(&self, amounts: &[f64]) -> Result<f64> {
        let (l, t) = self.scores_at(amounts)?;
        Ok(t - l)
    }

    fn value_and_grad(&self, amounts: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = self.input_at(amounts)?;
        let (z, gx) = self.classifier.score_diff_and_grad(&x, self.target_class, self.true_class)?;
        let (g, d) = (gx.data(), self.delta.data());
        let grad = self
            .units
            .iter()
            .map(|u| u.iter().map(|&i| g[i] * d[i]).sum())
            .collect();
        Ok((z, grad))
    }
}

/// `z(S)` with the units of `subset` fully on and all others off.
pub fn reward_z<R: AmountReward + ?Sized>(reward: &R, subset: &[usize]) -> Result<f64> {
    let mut a = vec![0.0; reward.num_units()];
    for &u in subset {
        if u >= a.len() {
            return Err(invalid(format!("unit {u} out of range")));
        }
        a[u] = 1.0;
    }
    reward.value(&a)
}

/// The set game over units induced by an amount reward.
pub struct PixelGame<'r, R: ?Sized> {
    reward: &'r R,
}

impl<'r, R: AmountReward + ?Sized> PixelGame<'r, R> {
    pub fn new(reward: &'r R) -> Result<Self> {
        if reward.num_units() > MAX_PLAYERS {
            return Err(invalid(format!("at most {MAX_PLAYERS} units form a set game")));
        }
        Ok(Self { reward })
    }
}

impl<R: AmountReward + ?Sized> Game for PixelGame<'_, R> {
    fn num_players(&self) -> usize {
        self.reward.num_units()
    }

    fn reward(&self, c: Coalition) -> Result<f64> {
        let a: Vec<f64> = (0..self.reward.num_units())
            .map(|u| if c.contains(u) { 1.0 } else { 0.0 })
            .collect();
        self.reward.value(&a)
    }
}

/// `I[S] = φ′_S − Σ_{i∈S} φᵢ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionValue {
    /// Player (or component) indices of `S`.
    pub coalition: Vec<usize>,
    pub phi_merged: f64,
    pub phi_sum: f64,
    pub interaction: f64,
}

impl InteractionValue {
    pub fn new(coalition: Vec<usize>, phi_merged: f64, phi_sum: f64) -> Self {
        Self {
            coalition,
            phi_merged,
            phi_sum,
            interaction: phi_merged - phi_sum,
        }
    }
}

/// Interaction of `coalition` by exact enumeration of both games.
pub fn interaction_exact<G: Game + ?Sized>(game: &G, coalition: Coalition) -> Result<InteractionValue> {
    let phi = shapley_exact(game)?.values;
    let merged = shapley_merged(game, coalition)?;
    let sum = coalition.players().map(|p| phi[p]).sum();
    Ok(InteractionValue::new(coalition.players().collect(), merged, sum))
}
