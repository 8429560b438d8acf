//! Cooperative games and their Shapley values.
//!
//! Players are indexed `0..n` and coalitions are bitmasks, which caps games
//! at 64 players. Exact enumeration is further limited to
//! [`MAX_EXACT_PLAYERS`].

mod memo;

pub use memo::MemoGame;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seeding::{derive_seed, rng_from};

pub const MAX_EXACT_PLAYERS: usize = 20;
pub const MAX_PLAYERS: usize = 64;

/// A set of players as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    /// All of `0..n`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub fn from_players(players: impl IntoIterator<Item = usize>) -> Self {
        Coalition(players.into_iter().fold(0, |m, p| m | (1u64 << p)))
    }

    pub fn contains(self, p: usize) -> bool {
        self.0 >> p & 1 == 1
    }

    pub fn with(self, p: usize) -> Self {
        Coalition(self.0 | (1u64 << p))
    }

    pub fn without(self, p: usize) -> Self {
        Coalition(self.0 & !(1u64 << p))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Coalition) -> Self {
        Coalition(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn players(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |&p| bits >> p & 1 == 1)
    }
}

/// A transferable-utility game. Rewards must be deterministic per coalition
/// and safe to request from several threads at once.
pub trait Game: Sync {
    fn num_players(&self) -> usize;
    fn reward(&self, coalition: Coalition) -> Result<f64>;
}

impl<G: Game + ?Sized> Game for &G {
    fn num_players(&self) -> usize {
        (**self).num_players()
    }

    fn reward(&self, coalition: Coalition) -> Result<f64> {
        (**self).reward(coalition)
    }
}

/// A game given by a closure.
pub struct FnGame<F> {
    n: usize,
    f: F,
}

impl<F: Fn(Coalition) -> f64 + Sync> FnGame<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(Coalition) -> f64 + Sync> Game for FnGame<F> {
    fn num_players(&self) -> usize {
        self.n
    }

    fn reward(&self, coalition: Coalition) -> Result<f64> {
        Ok((self.f)(coalition))
    }
}

/// A game given by its full reward table, indexed by coalition bitmask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableGame {
    pub n: usize,
    pub table: Vec<f64>,
}

impl TableGame {
    pub fn new(n: usize, table: Vec<f64>) -> Result<Self> {
        if n > MAX_EXACT_PLAYERS || table.len() != 1 << n {
            return Err(invalid(format!("table of {} entries for {n} players", table.len())));
        }
        Ok(Self { n, table })
    }
}

impl Game for TableGame {
    fn num_players(&self) -> usize {
        self.n
    }

    fn reward(&self, coalition: Coalition) -> Result<f64> {
        Ok(self.table[coalition.0 as usize])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub values: Vec<f64>,
    pub method: Method,
    /// Marginal contributions evaluated (`n · n · T` when sampled, `n · 2ⁿ⁻¹` when exact).
    pub samples_used: u64,
    /// `Σφᵢ − (r(N) − r(∅))`.
    pub efficiency_residual: f64,
}

fn check_players(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("a game needs at least one player"));
    }
    if n > MAX_PLAYERS {
        return Err(invalid(format!("at most {MAX_PLAYERS} players are supported, got {n}")));
    }
    Ok(())
}

/// `s!(n−s−1)!/n!` for `s = 0..n`.
fn shapley_weights(n: usize) -> Vec<f64> {
    // w(s) = 1 / (n · C(n−1, s)), built by the ratio C(n−1, s+1)/C(n−1, s).
    let mut w = Vec::with_capacity(n);
    let mut binom = 1.0f64;
    for s in 0..n {
        w.push(1.0 / (n as f64 * binom));
        binom *= (n - 1 - s) as f64 / (s + 1) as f64;
    }
    w
}

/// Every coalition's reward, by bitmask. Evaluated in parallel.
pub fn reward_table<G: Game + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.num_players();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    (0..1u64 << n)
        .into_par_iter()
        .map(|m| game.reward(Coalition(m)))
        .collect()
}

/// Shapley values by full enumeration of all `2ⁿ` coalitions.
pub fn shapley_exact<G: Game + ?Sized>(game: &G) -> Result<ShapleyEstimate> {
    let n = game.num_players();
    check_players(n)?;
    let table = reward_table(game)?;
    let w = shapley_weights(n);
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for m in 0..table.len() {
            if m & bit == 0 {
                acc += w[m.count_ones() as usize] * (table[m | bit] - table[m]);
            }
        }
        *v = acc;
    }
    let total = table[table.len() - 1] - table[0];
    Ok(ShapleyEstimate {
        efficiency_residual: values.iter().sum::<f64>() - total,
        values,
        method: Method::Exact,
        samples_used: (n as u64) << (n - 1),
    })
}

/// Size-stratified Monte-Carlo Shapley values.
///
/// For every player `i` and every size `s = 0..n`, `T` coalitions of size `s`
/// are drawn uniformly from the other players and the marginal contribution
/// of `i` is averaged; strata are weighted equally. Each `(i, s)` stratum has
/// its own derived seed, so the result does not depend on thread scheduling.
pub fn shapley_sampled<G: Game + ?Sized>(game: &G, samples_t: usize, seed: u64) -> Result<ShapleyEstimate> {
    let n = game.num_players();
    check_players(n)?;
    if samples_t == 0 {
        return Err(invalid("samples_T must be at least 1"));
    }
    let strata: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |s| (i, s))).collect();
    let means: Vec<f64> = strata
        .par_iter()
        .map(|&(i, s)| {
            let others: Vec<usize> = (0..n).filter(|&p| p != i).collect();
            let mut rng = rng_from(derive_seed(seed, &[i as u64, s as u64]));
            let mut acc = 0.0;
            for _ in 0..samples_t {
                let c = Coalition::from_players(sample(&mut rng, n - 1, s).into_iter().map(|k| others[k]));
                acc += game.reward(c.with(i))? - game.reward(c)?;
            }
            Ok(acc / samples_t as f64)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = means.chunks(n).map(|m| m.iter().sum::<f64>() / n as f64).collect();
    let total = game.reward(Coalition::full(n))? - game.reward(Coalition::EMPTY)?;
    Ok(ShapleyEstimate {
        efficiency_residual: values.iter().sum::<f64>() - total,
        values,
        method: Method::Sampled,
        samples_used: (n * n * samples_t) as u64,
    })
}

/// The game in which `coalition` acts as one player.
///
/// Player 0 of the quotient is the merged coalition; players `1..` are the
/// remaining original players in increasing order.
pub struct QuotientGame<G> {
    inner: G,
    merged: Coalition,
    rest: Vec<usize>,
}

impl<G: Game> QuotientGame<G> {
    pub fn new(inner: G, merged: Coalition) -> Result<Self> {
        let n = inner.num_players();
        if merged.is_empty() {
            return Err(invalid("merged coalition must be nonempty"));
        }
        if !merged.is_subset_of(Coalition::full(n)) {
            return Err(invalid("merged coalition has players outside the game"));
        }
        let rest = (0..n).filter(|&p| !merged.contains(p)).collect();
        Ok(Self { inner, merged, rest })
    }

    /// Maps a quotient coalition back to original players.
    pub fn expand(&self, c: Coalition) -> Coalition {
        let mut out = if c.contains(0) { self.merged } else { Coalition::EMPTY };
        for (k, &p) in self.rest.iter().enumerate() {
            if c.contains(k + 1) {
                out = out.with(p);
            }
        }
        out
    }
}

impl<G: Game> Game for QuotientGame<G> {
    fn num_players(&self) -> usize {
        self.rest.len() + 1
    }

    fn reward(&self, c: Coalition) -> Result<f64> {
        self.inner.reward(self.expand(c))
    }
}

/// Exact Shapley value `φ′_S` of `coalition` as a single player among the
/// `n − |S| + 1` players of the quotient game.
pub fn shapley_merged<G: Game + ?Sized>(game: &G, coalition: Coalition) -> Result<f64> {
    let q = QuotientGame::new(game, coalition)?;
    Ok(shapley_exact(&q)?.values[0])
}

/// Sampled counterpart of [`shapley_merged`]; only the merged player's
/// strata are drawn.
pub fn shapley_merged_sampled<G: Game + ?Sized>(
    game: &G,
    coalition: Coalition,
    samples_t: usize,
    seed: u64,
) -> Result<f64> {
    let q = QuotientGame::new(game, coalition)?;
    player_value_sampled(&q, 0, samples_t, seed)
}

/// Sampled Shapley value of one player, using the same strata and seeds as
/// [`shapley_sampled`].
pub fn player_value_sampled<G: Game + ?Sized>(game: &G, i: usize, samples_t: usize, seed: u64) -> Result<f64> {
    let n = game.num_players();
    check_players(n)?;
    if i >= n || samples_t == 0 {
        return Err(invalid("player out of range or samples_T = 0"));
    }
    let others: Vec<usize> = (0..n).filter(|&p| p != i).collect();
    let means: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_from(derive_seed(seed, &[i as u64, s as u64]));
            let mut acc = 0.0;
            for _ in 0..samples_t {
                let c = Coalition::from_players(sample(&mut rng, n - 1, s).into_iter().map(|k| others[k]));
                acc += game.reward(c.with(i))? - game.reward(c)?;
            }
            Ok(acc / samples_t as f64)
        })
        .collect::<Result<_>>()?;
    Ok(means.iter().sum::<f64>() / n as f64)
}
