//! Per-component effects on the two class scores and their aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::interaction::PixelGameContext;

/// Which score a component mainly moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    /// Removing the component raises `g_ℓ` more than it lowers `g_t`.
    SuppressTrue,
    PromoteTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub level: usize,
    /// Fraction of the component's pixels inside the foreground mask.
    pub foreground_ratio: f64,
    pub foreground: bool,
    /// `|g_ℓ(x + δ) − g_ℓ(x + δ with the component removed)|`.
    pub dy_true: f64,
    /// The same for the target score `g_t`.
    pub dy_target: f64,
    pub utility: Utility,
}

/// Stats of the component made of `units` (indices into `ctx.units()`).
///
/// `foreground` marks spatial locations, row-major over `h × w`; every
/// channel of a location shares its flag.
pub fn component_stats(
    ctx: &PixelGameContext<'_>,
    units: &[usize],
    level: usize,
    foreground: &[bool],
) -> Result<ComponentStats> {
    let s = ctx.image().shape();
    let plane = s[1] * s[2];
    if foreground.len() != plane {
        return Err(invalid(format!("foreground mask has {} entries for {plane} locations", foreground.len())));
    }
    if units.is_empty() || units.iter().any(|&u| u >= ctx.units().len()) {
        return Err(invalid("component units must be nonempty and in range"));
    }
    let full = vec![1.0; ctx.units().len()];
    let mut without = full.clone();
    units.iter().for_each(|&u| without[u] = 0.0);
    let (l_full, t_full) = ctx.scores_at(&full)?;
    let (l_wo, t_wo) = ctx.scores_at(&without)?;
    let (mut inside, mut total) = (0usize, 0usize);
    for &u in units {
        for &i in &ctx.units()[u] {
            total += 1;
            inside += foreground[i % plane] as usize;
        }
    }
    let ratio = inside as f64 / total as f64;
    let (dy_true, dy_target) = ((l_full - l_wo).abs(), (t_full - t_wo).abs());
    Ok(ComponentStats {
        level,
        foreground_ratio: ratio,
        foreground: ratio > 0.5,
        dy_true,
        dy_target,
        utility: if dy_true > dy_target {
            Utility::SuppressTrue
        } else {
            Utility::PromoteTarget
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub images_used: usize,
    /// Images that had no component of level one or more.
    pub images_skipped: usize,
    pub components: usize,
    /// Share of counted components lying mainly on the foreground.
    pub foreground_ratio: f64,
    /// Share of counted components whose main effect is suppressing `g_ℓ`.
    pub suppress_true_ratio: f64,
}

/// Pools components of level one or more across images.
pub fn aggregate_ratios(per_image: &[Vec<ComponentStats>]) -> RatioSummary {
    let (mut used, mut skipped, mut n, mut fg, mut sup) = (0, 0, 0, 0, 0);
    for stats in per_image {
        let merged: Vec<&ComponentStats> = stats.iter().filter(|s| s.level >= 1).collect();
        if merged.is_empty() {
            skipped += 1;
            continue;
        }
        used += 1;
        n += merged.len();
        fg += merged.iter().filter(|s| s.foreground).count();
        sup += merged.iter().filter(|s| s.utility == Utility::SuppressTrue).count();
    }
    let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    RatioSummary {
        images_used: used,
        images_skipped: skipped,
        components: n,
        foreground_ratio: share(fg),
        suppress_true_ratio: share(sup),
    }
}
