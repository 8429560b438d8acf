//! Joint evaluation of several merge candidates per Taylor run.
//!
//! Disjoint candidates are merged simultaneously into single players, and
//! one run of the estimator yields `φ′` for each of them. Components outside
//! the chosen candidates stay ordinary players.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::taylor::{group_shapley_taylor, TaylorConfig};
use super::AmountReward;
use crate::error::{invalid, Result};
use crate::seeding::{derive_seed, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Components merged per run (`m̃`); rounded down to a multiple of the
    /// candidate size, and at least one candidate.
    pub m_tilde: usize,
    /// Hold each member's nearest non-chosen component fully on.
    pub pin_nearest: bool,
}

/// Candidates per run for a given `m̃` and candidate size `q`.
pub fn candidates_per_set(m_tilde: usize, q: usize) -> usize {
    (m_tilde / q.max(1)).max(1)
}

/// Splits candidate indices into runs of at most `per_set` pairwise
/// disjoint candidates, visiting candidates in a seeded random order.
/// Every candidate lands in exactly one run.
pub fn plan_batches(candidates: &[Vec<usize>], per_set: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng_from(seed));
    let mut sets = Vec::new();
    while !order.is_empty() {
        let mut chosen: Vec<usize> = Vec::new();
        let mut rest = Vec::new();
        for c in order {
            let clash = chosen
                .iter()
                .any(|&o| candidates[o].iter().any(|m| candidates[c].contains(m)));
            if chosen.len() < per_set && !clash {
                chosen.push(c);
            } else {
                rest.push(c);
            }
        }
        sets.push(chosen);
        order = rest;
    }
    sets
}

/// For each of `members`, the closest component (by center distance) for
/// which `excluded` is false; ties go to the lowest index.
pub fn nearest_components(centers: &[(f64, f64)], members: &[usize], excluded: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    for &m in members {
        let (r, c) = centers[m];
        let best = (0..centers.len())
            .filter(|&j| !excluded[j])
            .map(|j| (j, (centers[j].0 - r).powi(2) + (centers[j].1 - c).powi(2)))
            .fold(None, |acc: Option<(usize, f64)>, (j, d)| match acc {
                Some((_, bd)) if d >= bd => acc,
                _ => Some((j, d)),
            });
        if let Some((j, _)) = best {
            if !out.contains(&j) {
                out.push(j);
            }
        }
    }
    out
}

/// `φ′` of each candidate in `set`, from one Taylor run in which all of them
/// are merged at once.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_batch<R: AmountReward + ?Sized>(
    reward: &R,
    components: &[Vec<usize>],
    centers: &[(f64, f64)],
    candidates: &[Vec<usize>],
    set: &[usize],
    pin_nearest: bool,
    taylor: &TaylorConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if centers.len() != components.len() {
        return Err(invalid("need one center per component"));
    }
    let mut chosen = vec![false; components.len()];
    let mut groups = Vec::new();
    for &c in set {
        let cand = candidates.get(c).ok_or_else(|| invalid("candidate index out of range"))?;
        let mut g = Vec::new();
        for &m in cand {
            if m >= components.len() || chosen[m] {
                return Err(invalid("candidates in a run must be disjoint and in range"));
            }
            chosen[m] = true;
            g.extend_from_slice(&components[m]);
        }
        groups.push(g);
    }
    let pinned_components = if pin_nearest {
        let members: Vec<usize> = set.iter().flat_map(|&c| candidates[c].iter().copied()).collect();
        nearest_components(centers, &members, &chosen)
    } else {
        Vec::new()
    };
    let mut pinned_flag = vec![false; components.len()];
    pinned_components.iter().for_each(|&j| pinned_flag[j] = true);
    let pinned: Vec<usize> = pinned_components.iter().flat_map(|&j| components[j].iter().copied()).collect();
    groups.extend(
        (0..components.len())
            .filter(|&j| !chosen[j] && !pinned_flag[j])
            .map(|j| components[j].clone()),
    );
    let est = group_shapley_taylor(reward, &groups, &pinned, taylor, seed)?;
    Ok(est.values[..set.len()].to_vec())
}

/// `φ′` of every candidate, evaluating up to `m̃/q` candidates per run.
///
/// Returns `None` only for candidates that no run covered, which cannot
/// happen with the full plan but keeps the shape shared with partial plans.
#[allow(clippy::too_many_arguments)]
pub fn batched_candidate_rewards<R: AmountReward + ?Sized>(
    reward: &R,
    components: &[Vec<usize>],
    centers: &[(f64, f64)],
    candidates: &[Vec<usize>],
    q: usize,
    batch: &BatchConfig,
    taylor: &TaylorConfig,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let per_set = candidates_per_set(batch.m_tilde, q);
    let plan = plan_batches(candidates, per_set, derive_seed(seed, &[0]));
    let mut out = vec![None; candidates.len()];
    for (k, set) in plan.iter().enumerate() {
        let vals = evaluate_batch(
            reward,
            components,
            centers,
            candidates,
            set,
            batch.pin_nearest,
            taylor,
            derive_seed(seed, &[1, k as u64]),
        )?;
        for (&c, v) in set.iter().zip(vals) {
            out[c] = Some(v);
        }
    }
    Ok(out)
}
