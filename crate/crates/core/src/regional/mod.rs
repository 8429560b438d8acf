//! Shapley attribution of image regions to the decrease of attacking cost,
//! and the map comparisons built on it.
//!
//! Regions are the cells of an `L × L` grid over the interior of an extended
//! image. The border is always perturbable, so the empty coalition measures
//! the cost of attacking through the border alone. The reward of a coalition
//! is the negated cost, so a positive attribution means that unlocking the
//! region makes the attack cheaper.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    attack_l2_masked, attack_linf_masked, AttackResult, ExtendedImage, L2AttackConfig,
    LinfAttackConfig, Mask, NormKind,
};
use crate::autodiff::Tensor;
use crate::error::{invalid, shape_err, Error, Result};
use crate::model::Classifier;
use crate::seeding::derive_seed;
use crate::shapley::{shapley_exact, shapley_sampled, Coalition, Game, MemoGame, ShapleyEstimate};

/// Row or column boundaries `⌊k·dim/L⌋`, `k = 0..=L`.
fn cuts(dim: usize, l: usize) -> Vec<usize> {
    (0..=l).map(|k| k * dim / l).collect()
}

/// Cells of an `L × L` floor partition of an `h × w` grid, row-major, each a
/// list of `(row, col)` positions.
pub fn grid_cells(h: usize, w: usize, l: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    if l == 0 || l > h || l > w {
        return Err(invalid(format!("grid side {l} does not fit a {h}×{w} image")));
    }
    let (rc, cc) = (cuts(h, l), cuts(w, l));
    let mut cells = Vec::with_capacity(l * l);
    for u in 0..l {
        for v in 0..l {
            cells.push(
                (rc[u]..rc[u + 1])
                    .flat_map(|r| (cc[v]..cc[v + 1]).map(move |c| (r, c)))
                    .collect(),
            );
        }
    }
    Ok(cells)
}

/// Region and border pixel sets over an extended image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub l: usize,
    /// Flat indices into the extended tensor, one list per cell, row-major.
    pub regions: Vec<Vec<usize>>,
    pub extended_border: Vec<usize>,
    shape: Vec<usize>,
}

impl GridPartition {
    pub fn new(ext: &ExtendedImage, l: usize) -> Result<Self> {
        if l * l > 64 {
            return Err(invalid(format!("L² must be at most 64, got L = {l}")));
        }
        let (h, w) = ext.extent;
        let cells = grid_cells(h, w, l)?;
        let regions = cells
            .iter()
            .map(|cell| {
                (0..ext.channels())
                    .flat_map(|ch| cell.iter().map(move |&(r, c)| ext.flat_index(ch, r, c)))
                    .collect()
            })
            .collect();
        let border = ext.border_mask();
        let extended_border = border
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            l,
            regions,
            extended_border,
            shape: ext.pixels.shape().to_vec(),
        })
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Border plus every region in `coalition`.
    pub fn mask(&self, coalition: Coalition) -> Mask {
        let idx = self
            .extended_border
            .iter()
            .copied()
            .chain(coalition.players().flat_map(|p| self.regions[p].iter().copied()));
        Mask::from_indices(&self.shape, idx).expect("partition indices are in range")
    }
}

/// How Shapley values over regions are computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ShapleyMethod {
    Exact,
    Sampled { samples_t: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionalConfig {
    pub norm: NormKind,
    pub l: usize,
    pub method: ShapleyMethod,
    pub l2: L2AttackConfig,
    pub linf: LinfAttackConfig,
    pub seed: u64,
}

/// Regional attributions and the endpoint costs they distribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub l: usize,
    /// `L × L`, row-major.
    pub phi: Vec<f64>,
    pub norm: NormKind,
    /// Cost with every region perturbable.
    pub cost_full: f64,
    /// Cost with only the border perturbable.
    pub cost_empty: f64,
    pub samples_t: usize,
    pub estimate: ShapleyEstimate,
    /// Masked attacks that failed and were charged the maximum cost.
    pub failed_attacks: usize,
    /// Full-mask perturbation restricted to the interior.
    pub delta_full: Tensor,
}

/// Attack-cost game over grid regions.
pub struct RegionGame<'a> {
    classifier: &'a Classifier,
    ext: &'a ExtendedImage,
    target: usize,
    partition: GridPartition,
    config: RegionalConfig,
    failure_cost: f64,
    failures: AtomicUsize,
}

/// Largest L2 distance from `x` to any point of the unit box.
pub fn max_feasible_l2(x: &Tensor) -> f64 {
    x.data().iter().map(|v| v.max(1.0 - v).powi(2)).sum::<f64>().sqrt()
}

impl<'a> RegionGame<'a> {
    pub fn new(
        classifier: &'a Classifier,
        ext: &'a ExtendedImage,
        target: usize,
        config: RegionalConfig,
    ) -> Result<Self> {
        ext.check_classifier(classifier)?;
        classifier.predict(&ext.pixels)?;
        let partition = GridPartition::new(ext, config.l)?;
        let failure_cost = match config.norm {
            NormKind::L2 => max_feasible_l2(&ext.pixels),
            NormKind::Linf => 1.0,
        };
        Ok(Self {
            classifier,
            ext,
            target,
            partition,
            config,
            failure_cost,
            failures: AtomicUsize::new(0),
        })
    }

    pub fn partition(&self) -> &GridPartition {
        &self.partition
    }

    /// Runs the masked attack for `coalition` (border always included).
    pub fn attack(&self, coalition: Coalition) -> Result<AttackResult> {
        let mask = self.partition.mask(coalition);
        match self.config.norm {
            NormKind::L2 => attack_l2_masked(self.classifier, &self.ext.pixels, self.target, &mask, &self.config.l2),
            NormKind::Linf => {
                let cfg = LinfAttackConfig {
                    seed: derive_seed(self.config.seed, &[coalition.0]),
                    ..self.config.linf.clone()
                };
                attack_linf_masked(self.classifier, &self.ext.pixels, self.target, &mask, &cfg)
            }
        }
    }

    /// Attack cost, or the failure cost if the attack does not succeed.
    pub fn cost(&self, coalition: Coalition) -> Result<f64> {
        let r = self.attack(coalition)?;
        if r.success {
            Ok(r.cost)
        } else {
            self.failures.fetch_add(1, Ordering::Relaxed);
            Ok(self.failure_cost)
        }
    }
}

impl Game for RegionGame<'_> {
    fn num_players(&self) -> usize {
        self.partition.num_regions()
    }

    fn reward(&self, coalition: Coalition) -> Result<f64> {
        Ok(-self.cost(coalition)?)
    }
}

/// Shapley attribution of `L × L` interior regions to the decrease of the
/// attacking cost on `ext`.
///
/// Errors if the border-only attack fails: the empty coalition would then
/// have no meaningful cost.
pub fn regional_attribution(
    classifier: &Classifier,
    ext: &ExtendedImage,
    target: usize,
    config: &RegionalConfig,
) -> Result<AttributionMap> {
    let game = RegionGame::new(classifier, ext, target, config.clone())?;
    let baseline = game.attack(Coalition::EMPTY)?;
    if !baseline.success {
        return Err(Error::BaselineAttackFailed {
            border: ext.offset.0.min(ext.offset.1),
        });
    }
    let n = game.num_players();
    let full = game.attack(Coalition::full(n))?;
    let memo = MemoGame::new(game);
    let (estimate, samples_t) = match config.method {
        ShapleyMethod::Exact => (shapley_exact(&memo)?, 0),
        ShapleyMethod::Sampled { samples_t } => (shapley_sampled(&memo, samples_t, config.seed)?, samples_t),
    };
    let cost_full = -memo.reward(Coalition::full(n))?;
    let cost_empty = -memo.reward(Coalition::EMPTY)?;
    Ok(AttributionMap {
        l: config.l,
        phi: estimate.values.clone(),
        norm: config.norm,
        cost_full,
        cost_empty,
        samples_t,
        estimate,
        failed_attacks: memo.inner().failures.load(Ordering::Relaxed),
        delta_full: ext.crop(&full.delta)?,
    })
}

/// Per-region L2 norm of an interior-shaped `[C, h, w]` perturbation.
pub fn regional_magnitude(delta: &Tensor, l: usize) -> Result<Vec<f64>> {
    let (c, h, w) = match *delta.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err("regional_magnitude", format!("expected [C, H, W], got {s:?}"))),
    };
    let cells = grid_cells(h, w, l)?;
    Ok(cells
        .iter()
        .map(|cell| {
            let mut s = 0.0;
            for ch in 0..c {
                for &(r, col) in cell {
                    let v = delta.data()[(ch * h + r) * w + col];
                    s += v * v;
                }
            }
            s.sqrt()
        })
        .collect())
}

/// Affine rescale to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_map(map: &[f64]) -> Vec<f64> {
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// `Σ min(a, b) / Σ max(a, b)` over normalized maps.
pub fn iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err("iou", format!("{} vs {} cells", a.len(), b.len())));
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| x.min(*y)).sum();
    let den: f64 = a.iter().zip(b).map(|(x, y)| x.max(*y)).sum();
    if den == 0.0 {
        return Err(invalid("IoU of two all-zero maps is undefined"));
    }
    Ok(num / den)
}
