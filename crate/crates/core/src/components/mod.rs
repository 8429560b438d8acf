//! Hierarchical extraction of perturbation components.
//!
//! Units sit on a `rows × cols` grid. A level-`ℓ` component is a square of
//! `s^ℓ × s^ℓ` units with `q = s²`. Each round proposes every `s × s`
//! arrangement of adjacent same-level squares, estimates its interaction,
//! and greedily merges the strongest candidates above a threshold `γ`.

mod stats;

pub use stats::{aggregate_ratios, component_stats, ComponentStats, RatioSummary, Utility};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::interaction::{
    evaluate_batch, group_shapley_taylor, plan_batches, AmountReward, TaylorConfig,
};
use crate::seeding::derive_seed;

/// How the merge threshold is chosen each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GammaSchedule {
    /// `γ` is the quantile of the round's `|I|` values above which the given
    /// fraction lies: `first` in round one, `later` afterwards.
    Quantile { first: f64, later: f64 },
    Absolute { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Components per candidate; must be a perfect square.
    pub q: usize,
    pub gamma: GammaSchedule,
    /// Largest component, in units.
    pub max_size: usize,
    /// Stop evaluating candidates once this fraction of eligible components
    /// is covered; `1.0` or more evaluates every candidate.
    pub coverage_stop: f64,
    /// Safety cap on rounds.
    pub max_rounds: usize,
    /// `m̃` as a fraction of the current component count.
    pub m_tilde_fraction: f64,
    pub pin_nearest: bool,
    pub taylor: TaylorConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            q: 4,
            gamma: GammaSchedule::Quantile {
                first: 0.2,
                later: 0.5,
            },
            max_size: 64,
            coverage_stop: 0.9,
            max_rounds: 8,
            m_tilde_fraction: 0.5,
            pin_nearest: true,
            taylor: TaylorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: usize,
    /// Unit indices, row-major over the unit grid.
    pub units: Vec<usize>,
    pub level: usize,
    /// Top-left unit `(row, col)`.
    pub origin: (usize, usize),
    /// Side length in units.
    pub side: usize,
    /// Taylor-estimated Shapley value among the final components.
    pub reward: f64,
}

/// A scored merge candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub origin: (usize, usize),
    pub members: Vec<usize>,
    pub interaction: f64,
    pub merged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub gamma: f64,
    pub candidates_total: usize,
    pub candidates: Vec<CandidateRecord>,
    pub merges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub rows: usize,
    pub cols: usize,
    pub components: Vec<Component>,
    pub rounds: Vec<RoundLog>,
}

impl Extraction {
    /// Component id of every unit, row-major.
    pub fn label_grid(&self) -> Vec<usize> {
        let mut g = vec![0; self.rows * self.cols];
        for c in &self.components {
            for &u in &c.units {
                g[u] = c.id;
            }
        }
        g
    }
}

/// Linear-interpolation quantile of `values` at `p ∈ [0, 1]`.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn square_units(cols: usize, origin: (usize, usize), side: usize) -> Vec<usize> {
    (origin.0..origin.0 + side)
        .flat_map(|r| (origin.1..origin.1 + side).map(move |c| r * cols + c))
        .collect()
}

fn center(c: &Component) -> (f64, f64) {
    let h = (c.side as f64 - 1.0) / 2.0;
    (c.origin.0 as f64 + h, c.origin.1 as f64 + h)
}

fn integer_sqrt(q: usize) -> Option<usize> {
    (1..=q).find(|s| s * s == q)
}

/// Runs the merge rounds over units on a `rows × cols` grid.
pub fn extract_components<R: AmountReward + ?Sized>(
    reward: &R,
    rows: usize,
    cols: usize,
    config: &ExtractionConfig,
    seed: u64,
) -> Result<Extraction> {
    if rows * cols != reward.num_units() {
        return Err(invalid(format!("{rows}×{cols} grid for {} units", reward.num_units())));
    }
    let s = integer_sqrt(config.q)
        .filter(|&s| s >= 2)
        .ok_or_else(|| invalid(format!("q = {} must be a square ≥ 4", config.q)))?;
    let mut comps: Vec<Component> = (0..rows * cols)
        .map(|u| Component {
            id: u,
            units: vec![u],
            level: 0,
            origin: (u / cols, u % cols),
            side: 1,
            reward: 0.0,
        })
        .collect();
    let mut rounds = Vec::new();

    for round in 0..config.max_rounds {
        let side = comps.iter().filter(|c| c.level == round).map(|c| c.side).next();
        let Some(side) = side else { break };
        if (side * s).pow(2) > config.max_size {
            break;
        }
        let by_origin: HashMap<(usize, usize), usize> = comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.level == round)
            .map(|(i, c)| (c.origin, i))
            .collect();
        let eligible = by_origin.len();
        let mut cands: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for &(r, c) in by_origin.keys() {
            let members: Option<Vec<usize>> = (0..s)
                .flat_map(|i| (0..s).map(move |j| (r + i * side, c + j * side)))
                .map(|o| by_origin.get(&o).copied())
                .collect();
            if let Some(m) = members {
                cands.push(((r, c), m));
            }
        }
        if cands.is_empty() {
            break;
        }
        cands.sort();

        let groups: Vec<Vec<usize>> = comps.iter().map(|c| c.units.clone()).collect();
        let centers: Vec<(f64, f64)> = comps.iter().map(center).collect();
        let round_seed = derive_seed(seed, &[round as u64]);
        let phi = group_shapley_taylor(reward, &groups, &[], &config.taylor, derive_seed(round_seed, &[0]))?.values;

        let m_tilde = (config.m_tilde_fraction * comps.len() as f64).floor() as usize;
        let per_set = (m_tilde / config.q).max(1);
        let members: Vec<Vec<usize>> = cands.iter().map(|(_, m)| m.clone()).collect();
        let plan = plan_batches(&members, per_set, derive_seed(round_seed, &[1]));
        let mut inter: Vec<Option<f64>> = vec![None; cands.len()];
        let mut covered = vec![false; comps.len()];
        let mut n_covered = 0;
        for (k, set) in plan.iter().enumerate() {
            if config.coverage_stop < 1.0 && n_covered as f64 >= config.coverage_stop * eligible as f64 {
                break;
            }
            let vals = evaluate_batch(
                reward,
                &groups,
                &centers,
                &members,
                set,
                config.pin_nearest,
                &config.taylor,
                derive_seed(round_seed, &[2, k as u64]),
            )?;
            for (&ci, v) in set.iter().zip(vals) {
                let sum: f64 = members[ci].iter().map(|&m| phi[m]).sum();
                inter[ci] = Some(v - sum);
                for &m in &members[ci] {
                    if !covered[m] {
                        covered[m] = true;
                        n_covered += 1;
                    }
                }
            }
        }

        let abs: Vec<f64> = inter.iter().flatten().map(|v| v.abs()).collect();
        let gamma = match config.gamma {
            GammaSchedule::Absolute { gamma } => gamma,
            GammaSchedule::Quantile { first, later } => {
                let f = if round == 0 { first } else { later };
                quantile(&abs, 1.0 - f).unwrap_or(f64::INFINITY)
            }
        };
        let mut order: Vec<usize> = (0..cands.len()).filter(|&i| inter[i].is_some()).collect();
        order.sort_by(|&a, &b| {
            let (ia, ib) = (inter[a].unwrap().abs(), inter[b].unwrap().abs());
            ib.total_cmp(&ia).then(cands[a].0.cmp(&cands[b].0))
        });
        let mut taken = vec![false; comps.len()];
        let mut accepted = Vec::new();
        for &i in &order {
            let v = inter[i].unwrap().abs();
            if v > gamma && members[i].iter().all(|&m| !taken[m]) {
                members[i].iter().for_each(|&m| taken[m] = true);
                accepted.push(i);
            }
        }
        let records = order
            .iter()
            .map(|&i| CandidateRecord {
                origin: cands[i].0,
                members: members[i].clone(),
                interaction: inter[i].unwrap(),
                merged: accepted.contains(&i),
            })
            .collect();
        rounds.push(RoundLog {
            round,
            gamma,
            candidates_total: cands.len(),
            candidates: records,
            merges: accepted.len(),
        });
        if accepted.is_empty() {
            break;
        }
        let mut next: Vec<Component> = comps
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(_, c)| c.clone())
            .collect();
        for &i in &accepted {
            let origin = cands[i].0;
            next.push(Component {
                id: 0,
                units: square_units(cols, origin, side * s),
                level: round + 1,
                origin,
                side: side * s,
                reward: 0.0,
            });
        }
        next.sort_by_key(|c| c.origin);
        comps = next;
    }

    for (i, c) in comps.iter_mut().enumerate() {
        c.id = i;
    }
    let groups: Vec<Vec<usize>> = comps.iter().map(|c| c.units.clone()).collect();
    let final_phi = group_shapley_taylor(reward, &groups, &[], &config.taylor, derive_seed(seed, &[u64::MAX]))?.values;
    for (c, v) in comps.iter_mut().zip(final_phi) {
        c.reward = v;
    }
    Ok(Extraction {
        rows,
        cols,
        components: comps,
        rounds,
    })
}
