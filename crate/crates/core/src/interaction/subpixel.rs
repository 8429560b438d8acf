//! Exact sub-pixel games, used to check the sub-pixel construction on small
//! instances.

use super::AmountReward;
use crate::error::{invalid, Result};
use crate::shapley::{reward_table, Coalition, Game, MAX_PLAYERS};

/// The game whose players are `K` equal slices of every unit of `reward`.
///
/// Player `j` is slice `j mod K` of unit `j / K`; a coalition turns each
/// unit on by the fraction of its slices present.
pub struct SubPixelGame<'r, R: ?Sized> {
    reward: &'r R,
    k: usize,
}

impl<'r, R: AmountReward + ?Sized> SubPixelGame<'r, R> {
    pub fn new(reward: &'r R, k: usize) -> Result<Self> {
        if k == 0 || reward.num_units() * k > MAX_PLAYERS {
            return Err(invalid(format!(
                "{} units × K = {k} sub-players exceeds {MAX_PLAYERS}",
                reward.num_units()
            )));
        }
        Ok(Self { reward, k })
    }

    /// Sums sub-player values back to one value per unit.
    pub fn fold_values(&self, sub_values: &[f64]) -> Vec<f64> {
        sub_values.chunks(self.k).map(|c| c.iter().sum()).collect()
    }
}

impl<R: AmountReward + ?Sized> Game for SubPixelGame<'_, R> {
    fn num_players(&self) -> usize {
        self.reward.num_units() * self.k
    }

    fn reward(&self, c: Coalition) -> Result<f64> {
        let mut a = vec![0.0; self.reward.num_units()];
        for j in c.players() {
            a[j / self.k] += 1.0;
        }
        a.iter_mut().for_each(|v| *v /= self.k as f64);
        self.reward.value(&a)
    }
}

/// `f(a) = Σ_S v(S) Π_{i∈S} aᵢ Π_{i∉S} (1 − aᵢ)` for a set game `v`.
pub struct MultilinearExtension {
    n: usize,
    table: Vec<f64>,
}

impl MultilinearExtension {
    pub fn new<G: Game + ?Sized>(game: &G) -> Result<Self> {
        Ok(Self {
            n: game.num_players(),
            table: reward_table(game)?,
        })
    }

    fn weight(&self, m: usize, a: &[f64], skip: Option<usize>) -> f64 {
        let mut w = 1.0;
        for (i, &ai) in a.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            w *= if m >> i & 1 == 1 { ai } else { 1.0 - ai };
        }
        w
    }
}

impl AmountReward for MultilinearExtension {
    fn num_units(&self) -> usize {
        self.n
    }

    fn value(&self, a: &[f64]) -> Result<f64> {
        if a.len() != self.n {
            return Err(invalid("amount vector length mismatch"));
        }
        Ok((0..self.table.len()).map(|m| self.table[m] * self.weight(m, a, None)).sum())
    }

    fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.value(a)?;
        let grad = (0..self.n)
            .map(|i| {
                (0..self.table.len())
                    .filter(|m| m >> i & 1 == 0)
                    .map(|m| (self.table[m | 1 << i] - self.table[m]) * self.weight(m, a, Some(i)))
                    .sum()
            })
            .collect();
        Ok((v, grad))
    }
}
