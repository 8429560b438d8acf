//! First-order sub-pixel estimator of Shapley values over unit groups.
//!
//! Each player (a group of units) is split into `K` identical sub-players.
//! For a sampled sub-player coalition `S`, the marginal of adding one more
//! sub-player of group `p` is approximated by `G_p(S)/K`, where `G_p` is the
//! gradient of the reward along the group's full perturbation at the
//! `S`-induced input. One gradient evaluation thus yields a marginal sample
//! for every sub-player outside `S` at once.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AmountReward, InteractionValue};
use crate::error::{invalid, Result};
use crate::seeding::{derive_seed, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaylorConfig {
    /// Sub-players per player.
    pub k: usize,
    /// Coalitions drawn per stratum.
    pub samples_t: usize,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self { k: 4, samples_t: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorEstimate {
    /// One value per group.
    pub values: Vec<f64>,
    /// Gradient evaluations performed.
    pub gradient_evals: u64,
    /// Strata that produced no sample for some group and were skipped for it.
    pub empty_strata: u64,
}

/// Validates that `groups` and `pinned` are disjoint, nonempty and in range.
pub(crate) fn check_groups(num_units: usize, groups: &[Vec<usize>], pinned: &[usize]) -> Result<()> {
    if groups.is_empty() {
        return Err(invalid("need at least one player group"));
    }
    let mut owner = vec![false; num_units];
    for u in groups.iter().flatten().chain(pinned) {
        if *u >= num_units {
            return Err(invalid(format!("unit {u} out of range ({num_units} units)")));
        }
        if owner[*u] {
            return Err(invalid(format!("unit {u} belongs to more than one group")));
        }
        owner[*u] = true;
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(invalid("empty player group"));
    }
    Ok(())
}

/// Shapley values of unit groups under `reward`, estimated with `K`
/// sub-players per group and `T` draws per coalition size.
///
/// Units in `pinned` are held fully on and take no part in the game; all
/// other units outside `groups` stay off.
pub fn group_shapley_taylor<R: AmountReward + ?Sized>(
    reward: &R,
    groups: &[Vec<usize>],
    pinned: &[usize],
    config: &TaylorConfig,
    seed: u64,
) -> Result<TaylorEstimate> {
    check_groups(reward.num_units(), groups, pinned)?;
    if config.k == 0 || config.samples_t == 0 {
        return Err(invalid("K and samples_T must be at least 1"));
    }
    let (p, k) = (groups.len(), config.k);
    let n_sub = p * k;

    let strata: Vec<(Vec<f64>, Vec<f64>)> = (0..n_sub)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_from(derive_seed(seed, &[s as u64]));
            let mut num = vec![0.0; p];
            let mut den = vec![0.0; p];
            let mut amounts = vec![0.0; reward.num_units()];
            for _ in 0..config.samples_t {
                let mut counts = vec![0usize; p];
                for j in sample(&mut rng, n_sub, s) {
                    counts[j / k] += 1;
                }
                amounts.iter_mut().for_each(|a| *a = 0.0);
                for &u in pinned {
                    amounts[u] = 1.0;
                }
                for (g, &c) in groups.iter().zip(&counts) {
                    let a = c as f64 / k as f64;
                    for &u in g {
                        amounts[u] = a;
                    }
                }
                let (_, grad) = reward.value_and_grad(&amounts)?;
                for (q, g) in groups.iter().enumerate() {
                    let missing = k - counts[q];
                    if missing > 0 {
                        let gp: f64 = g.iter().map(|&u| grad[u]).sum();
                        num[q] += missing as f64 * gp / k as f64;
                        den[q] += missing as f64;
                    }
                }
            }
            Ok((num, den))
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; p];
    let mut empty = 0u64;
    for (q, v) in values.iter_mut().enumerate() {
        let (mut total, mut used) = (0.0, 0usize);
        for (num, den) in &strata {
            if den[q] > 0.0 {
                total += num[q] / den[q];
                used += 1;
            } else {
                empty += 1;
            }
        }
        // φ of one sub-player is the stratum average; the group holds K of them.
        *v = if used > 0 { k as f64 * total / used as f64 } else { 0.0 };
    }
    Ok(TaylorEstimate {
        values,
        gradient_evals: (n_sub * config.samples_t) as u64,
        empty_strata: empty,
    })
}

/// Taylor-estimated Shapley value of every unit as its own player.
pub fn pixel_rewards_taylor<R: AmountReward + ?Sized>(
    reward: &R,
    config: &TaylorConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let groups: Vec<Vec<usize>> = (0..reward.num_units()).map(|u| vec![u]).collect();
    Ok(group_shapley_taylor(reward, &groups, &[], config, seed)?.values)
}

/// Taylor-estimated `φ′` of `components[target]` among all `components`.
pub fn component_reward_taylor<R: AmountReward + ?Sized>(
    reward: &R,
    components: &[Vec<usize>],
    target: usize,
    config: &TaylorConfig,
    seed: u64,
) -> Result<f64> {
    if target >= components.len() {
        return Err(invalid("target component out of range"));
    }
    Ok(group_shapley_taylor(reward, components, &[], config, seed)?.values[target])
}

/// `I[S]` for `S` a union of `components[coalition]`: the Taylor `φ′` of the
/// merged coalition minus the Taylor values of its members, both estimated
/// with the same seed.
pub fn interaction_taylor<R: AmountReward + ?Sized>(
    reward: &R,
    components: &[Vec<usize>],
    coalition: &[usize],
    config: &TaylorConfig,
    seed: u64,
) -> Result<InteractionValue> {
    if coalition.is_empty() || coalition.iter().any(|&c| c >= components.len()) {
        return Err(invalid("coalition must name existing components"));
    }
    let phi = group_shapley_taylor(reward, components, &[], config, seed)?.values;
    let mut in_s = vec![false; components.len()];
    coalition.iter().for_each(|&c| in_s[c] = true);
    let mut merged_groups = vec![coalition.iter().flat_map(|&c| components[c].iter().copied()).collect::<Vec<_>>()];
    merged_groups.extend((0..components.len()).filter(|&c| !in_s[c]).map(|c| components[c].clone()));
    let merged = group_shapley_taylor(reward, &merged_groups, &[], config, seed)?.values[0];
    let mut members = coalition.to_vec();
    members.sort_unstable();
    members.dedup();
    let sum = members.iter().map(|&c| phi[c]).sum();
    Ok(InteractionValue::new(members, merged, sum))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `z(a) = Σ wᵤ·aᵤ`.
    struct Linear(Vec<f64>);

    impl AmountReward for Linear {
        fn num_units(&self) -> usize {
            self.0.len()
        }
        fn value(&self, a: &[f64]) -> Result<f64> {
            Ok(self.0.iter().zip(a).map(|(w, a)| w * a).sum())
        }
        fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.value(a)?, self.0.clone()))
        }
    }

    #[test]
    fn linear_rewards_are_exact() {
        let r = Linear(vec![0.5, -1.25, 2.0, 0.0]);
        for k in [1, 3] {
            let v = pixel_rewards_taylor(&r, &TaylorConfig { k, samples_t: 2 }, 9).unwrap();
            for (a, b) in v.iter().zip(&r.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let c = component_reward_taylor(&r, &[vec![0, 2], vec![1], vec![3]], 0, &TaylorConfig { k: 2, samples_t: 3 }, 1).unwrap();
        assert!((c - 2.5).abs() < 1e-12);
        let i = interaction_taylor(&r, &[vec![0], vec![1], vec![2, 3]], &[0, 2], &TaylorConfig::default(), 4).unwrap();
        assert!(i.interaction.abs() < 1e-12);
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let r = Linear(vec![1.0; 3]);
        assert!(group_shapley_taylor(&r, &[vec![0, 1], vec![1]], &[], &TaylorConfig::default(), 0).is_err());
        assert!(group_shapley_taylor(&r, &[vec![0]], &[0], &TaylorConfig::default(), 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        struct Quad;
        impl AmountReward for Quad {
            fn num_units(&self) -> usize {
                3
            }
            fn value(&self, a: &[f64]) -> Result<f64> {
                Ok(a[0] * a[1] + a[2] * a[2])
            }
            fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((self.value(a)?, vec![a[1], a[0], 2.0 * a[2]]))
            }
        }
        let cfg = TaylorConfig { k: 3, samples_t: 7 };
        let a = pixel_rewards_taylor(&Quad, &cfg, 5).unwrap();
        assert_eq!(a, pixel_rewards_taylor(&Quad, &cfg, 5).unwrap());
        assert_ne!(a, pixel_rewards_taylor(&Quad, &cfg, 6).unwrap());
    }
}
