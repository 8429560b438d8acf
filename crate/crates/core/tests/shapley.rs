//! Axioms, sampling convergence and interactions of the Shapley layer.

use advshap::interaction::interaction_exact;
use advshap::seeding::rng_from;
use advshap::shapley::*;
use rand::Rng;

fn random_table(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn exact_values_satisfy_the_axioms() {
    let mut rng = rng_from(11);
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let mut t = random_table(n, &mut rng);
        // Player 0 is a dummy contributing `d`; players 1 and 2 (if present)
        // are made symmetric.
        let d = rng.gen_range(-1.0..1.0);
        for m in 0..t.len() {
            if m & 1 == 1 {
                t[m] = t[m ^ 1] + d;
            }
        }
        if n >= 3 {
            for m in 0..t.len() {
                if m & 0b110 == 0b010 {
                    t[m] = t[m ^ 0b110];
                }
            }
        }
        let g = TableGame::new(n, t.clone()).unwrap();
        let phi = shapley_exact(&g).unwrap().values;
        let total = t[(1 << n) - 1] - t[0];
        assert!((phi.iter().sum::<f64>() - total).abs() <= 1e-9);
        assert!((phi[0] - d).abs() <= 1e-9);
        if n >= 3 {
            assert!((phi[1] - phi[2]).abs() <= 1e-9);
        }

        let u = random_table(n, &mut rng);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mix: Vec<f64> = t.iter().zip(&u).map(|(x, y)| a * x + b * y).collect();
        let pu = shapley_exact(&TableGame::new(n, u).unwrap()).unwrap().values;
        let pm = shapley_exact(&TableGame::new(n, mix).unwrap()).unwrap().values;
        for i in 0..n {
            assert!((pm[i] - (a * phi[i] + b * pu[i])).abs() <= 1e-9);
        }
    }
}

fn majority() -> FnGame<impl Fn(Coalition) -> f64 + Sync> {
    FnGame::new(3, |c: Coalition| (c.len() >= 2) as u8 as f64)
}

#[test]
fn sampled_majority_approaches_one_third() {
    let est = shapley_sampled(&majority(), 2000, 3).unwrap();
    for v in &est.values {
        assert!((v - 1.0 / 3.0).abs() < 0.05, "{v}");
    }
}

#[test]
fn sampled_error_shrinks_with_more_samples() {
    // A 6-player weighted voting game, where sampling has real variance.
    let w = [3.0, 2.0, 2.0, 1.0, 1.0, 1.0];
    let g = FnGame::new(6, move |c: Coalition| (c.players().map(|p| w[p]).sum::<f64>() > 5.0) as u8 as f64);
    let exact = shapley_exact(&g).unwrap().values;
    let mut prev = f64::INFINITY;
    for t in [10, 100, 1000] {
        let err: f64 = (0..20)
            .map(|seed| {
                let v = shapley_sampled(&g, t, seed).unwrap().values;
                v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .sum::<f64>()
            / 20.0;
        assert!(err <= prev, "T = {t}: {err} > {prev}");
        prev = err;
    }
}

#[test]
fn majority_pair_interaction_is_one_third() {
    let v = interaction_exact(&majority(), Coalition::from_players([1, 2])).unwrap();
    assert!((v.interaction - 1.0 / 3.0).abs() <= 1e-9);
}

#[test]
fn additive_games_have_no_interaction() {
    let mut rng = rng_from(5);
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c0 = rng.gen_range(-1.0..1.0);
        let g = FnGame::new(n, move |c: Coalition| c0 + c.players().map(|p| w[p]).sum::<f64>());
        for m in 1..(1u64 << n) {
            let v = interaction_exact(&g, Coalition(m)).unwrap();
            assert!(v.interaction.abs() <= 1e-12, "{m}: {}", v.interaction);
        }
    }
}

#[test]
fn too_many_players_for_exact() {
    let g = FnGame::new(MAX_EXACT_PLAYERS + 1, |_| 0.0);
    assert!(shapley_exact(&g).is_err());
}
