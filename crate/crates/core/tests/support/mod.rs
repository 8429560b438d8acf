//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use advshap::components::{ExtractionConfig, GammaSchedule};
use advshap::interaction::{AmountReward, TaylorConfig};
use advshap::Result;

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub const SIDE: usize = 8;

/// `z(a) = Σᵤ wᵤ·aᵤ + Σ_T d·Π_{u∈T} aᵤ`, each `T` holding the main diagonals
/// of two non-adjacent aligned 2×2 blocks.
///
/// Only terms with at least two but not all members inside a candidate
/// contribute to its interaction. An aligned block holds two of the four
/// members of its term (`I = −d/6`); any other 2×2 window holds at most one
/// member of every term (`I = 0`).
pub struct Planted {
    linear: Vec<f64>,
    terms: Vec<Vec<usize>>,
    d: f64,
}

fn diagonal(br: usize, bc: usize) -> [usize; 2] {
    let (r, c) = (2 * br, 2 * bc);
    [r * SIDE + c, (r + 1) * SIDE + c + 1]
}

impl Planted {
    pub fn new(d: f64) -> Self {
        let mut terms = Vec::new();
        for br in 0..4 {
            for bc in 0..2 {
                let mut t = diagonal(br, bc).to_vec();
                t.extend(diagonal(br, bc + 2));
                terms.push(t);
            }
        }
        let linear = (0..SIDE * SIDE).map(|u| 0.05 * ((u * 7 % 11) as f64 - 5.0)).collect();
        Self { linear, terms, d }
    }
}

impl AmountReward for Planted {
    fn num_units(&self) -> usize {
        SIDE * SIDE
    }

    fn value(&self, a: &[f64]) -> Result<f64> {
        let lin: f64 = self.linear.iter().zip(a).map(|(w, a)| w * a).sum();
        let prod: f64 = self.terms.iter().map(|t| t.iter().map(|&u| a[u]).product::<f64>()).sum();
        Ok(lin + self.d * prod)
    }

    fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = self.linear.clone();
        for t in &self.terms {
            for &u in t {
                g[u] += self.d * t.iter().filter(|&&v| v != u).map(|&v| a[v]).product::<f64>();
            }
        }
        Ok((self.value(a)?, g))
    }
}

/// The aligned 2×2 blocks of the grid, each sorted, in sorted order.
pub fn planted_blocks() -> Vec<Vec<usize>> {
    let mut blocks: Vec<Vec<usize>> = (0..4)
        .flat_map(|br| {
            (0..4).map(move |bc| {
                let (r, c) = (2 * br, 2 * bc);
                vec![r * SIDE + c, r * SIDE + c + 1, (r + 1) * SIDE + c, (r + 1) * SIDE + c + 1]
            })
        })
        .collect();
    blocks.sort();
    blocks
}

/// Absolute `γ`, one candidate per run, no pinning, every candidate
/// evaluated, a single round.
pub fn planted_config(gamma: f64) -> ExtractionConfig {
    ExtractionConfig {
        gamma: GammaSchedule::Absolute { gamma },
        max_size: 4,
        coverage_stop: 1.0,
        m_tilde_fraction: 0.0,
        pin_nearest: false,
        taylor: TaylorConfig { k: 4, samples_t: 200 },
        ..ExtractionConfig::default()
    }
}
