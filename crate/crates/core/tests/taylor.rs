//! Sub-pixel Taylor estimates against exact oracles.

mod support;

use advshap::attacks::{attack_l2_masked, L2AttackConfig, Mask};
use advshap::autodiff::Tensor;
use advshap::interaction::*;
use advshap::model::{synth_dataset, Classifier, InputShape};
use advshap::seeding::rng_from;
use advshap::shapley::{shapley_exact, TableGame};
use advshap::Result;
use rand::Rng;
use support::spearman;

#[test]
fn linear_model_pixel_rewards_match_closed_form() {
    let (h, w, t) = (4, 4, 3);
    let mut rng = rng_from(2);
    let weight: Vec<f64> = (0..h * w * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clf = Classifier::linear(
        InputShape::gray(h, w),
        Tensor::new(weight.clone(), vec![h * w, t]).unwrap(),
        Tensor::new(vec![0.1, -0.2, 0.3], vec![t]).unwrap(),
    )
    .unwrap();
    let x = Tensor::new((0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect(), vec![1, h, w]).unwrap();
    let d = Tensor::new((0..h * w).map(|_| rng.gen_range(-0.3..0.3)).collect(), vec![1, h, w]).unwrap();
    let (l, tg) = (0, 2);
    let ctx = PixelGameContext::with_super_pixels(&clf, x, d.clone(), l, tg, 1).unwrap();
    for (k, samples_t) in [(1, 1), (2, 5), (4, 50), (7, 3)] {
        let phi = pixel_rewards_taylor(&ctx, &TaylorConfig { k, samples_t }, k as u64).unwrap();
        for i in 0..h * w {
            let closed = (weight[i * t + tg] - weight[i * t + l]) * d.data()[i];
            assert!((phi[i] - closed).abs() <= 1e-9, "K={k} pixel {i}: {} vs {closed}", phi[i]);
        }
    }
}

#[test]
fn toy_relu_model_tracks_the_exact_masked_game() {
    let data = synth_dataset(4, 8, 12, 3).unwrap();
    let clf = Classifier::toy(InputShape::gray(12, 12), 3, 9).unwrap();
    let mut worst_rho: f64 = 1.0;
    let mut worst_err: f64 = 0.0;
    for i in 0..2 {
        let x = &data.images[i];
        let pred = clf.predict(x).unwrap();
        let target = (pred + 1) % 3;
        let full = Mask::full(x.shape());
        let atk = attack_l2_masked(&clf, x, target, &full, &L2AttackConfig::default()).unwrap();
        assert!(atk.success);
        let ctx = PixelGameContext::with_super_pixels(&clf, x.clone(), atk.delta.clone(), pred, target, 4).unwrap();
        assert_eq!(ctx.num_units(), 9);
        let exact = shapley_exact(&PixelGame::new(&ctx).unwrap()).unwrap().values;
        let taylor = pixel_rewards_taylor(&ctx, &TaylorConfig::default(), 17).unwrap();
        let rho = spearman(&taylor, &exact);
        let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = taylor.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        println!("image {i}: rho {rho:.4} max rel err {err:.4}\n exact {exact:?}\n taylor {taylor:?}");
        worst_rho = worst_rho.min(rho);
        worst_err = worst_err.max(err);
    }
    assert!(worst_rho >= 0.9, "Spearman {worst_rho}");
    // Worst observed over four images was 0.025.
    assert!(worst_err < 0.08, "max relative error {worst_err}");
}

#[test]
fn sub_pixel_values_fold_back_to_pixel_values() {
    let mut rng = rng_from(8);
    for n in 1..=3 {
        for k in 1..=3 {
            for _ in 0..5 {
                let table: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let game = TableGame::new(n, table).unwrap();
                let phi = shapley_exact(&game).unwrap().values;
                let ext = MultilinearExtension::new(&game).unwrap();
                let sub = SubPixelGame::new(&ext, k).unwrap();
                let folded = sub.fold_values(&shapley_exact(&sub).unwrap().values);
                for (a, b) in folded.iter().zip(&phi) {
                    assert!((a - b).abs() <= 1e-9, "n={n} K={k}: {a} vs {b}");
                }
            }
        }
    }
}

/// `z(a) = tanh(w·a) + 0.5·(u·a)²`, smooth and non-linear.
struct Smooth {
    w: Vec<f64>,
    u: Vec<f64>,
}

impl AmountReward for Smooth {
    fn num_units(&self) -> usize {
        self.w.len()
    }
    fn value(&self, a: &[f64]) -> Result<f64> {
        let s: f64 = self.w.iter().zip(a).map(|(w, a)| w * a).sum();
        let t: f64 = self.u.iter().zip(a).map(|(u, a)| u * a).sum();
        Ok(s.tanh() + 0.5 * t * t)
    }
    fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s: f64 = self.w.iter().zip(a).map(|(w, a)| w * a).sum();
        let t: f64 = self.u.iter().zip(a).map(|(u, a)| u * a).sum();
        let ds = 1.0 - s.tanh().powi(2);
        let g = self.w.iter().zip(&self.u).map(|(w, u)| ds * w + t * u).collect();
        Ok((s.tanh() + 0.5 * t * t, g))
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values of the `K`-sub-pixel game folded per unit, by
/// enumerating how many slices of each unit are present.
fn exact_sub_pixel(r: &Smooth, k: usize) -> Vec<f64> {
    let n = r.num_units();
    let big_n = n * k;
    let states = (k + 1).pow(n as u32);
    let counts = |mut m: usize| -> Vec<usize> {
        (0..n)
            .map(|_| {
                let c = m % (k + 1);
                m /= k + 1;
                c
            })
            .collect()
    };
    let value = |c: &[usize]| r.value(&c.iter().map(|&c| c as f64 / k as f64).collect::<Vec<_>>()).unwrap();
    (0..n)
        .map(|i| {
            let mut phi = 0.0;
            for m in 0..states {
                let c = counts(m);
                if c[i] == k {
                    continue;
                }
                let s: usize = c.iter().sum();
                let ways: f64 = (0..n)
                    .map(|j| if j == i { binom(k - 1, c[j]) } else { binom(k, c[j]) })
                    .product();
                let mut up = c.clone();
                up[i] += 1;
                phi += ways / (big_n as f64 * binom(big_n - 1, s)) * (value(&up) - value(&c));
            }
            k as f64 * phi
        })
        .collect()
}

#[test]
fn taylor_error_against_exact_sub_pixel_game_shrinks_with_k() {
    let r = Smooth {
        w: vec![1.5, -0.8, 1.1, 0.6],
        u: vec![0.9, 0.7, -0.4, 1.2],
    };
    let groups: Vec<Vec<usize>> = (0..4).map(|u| vec![u]).collect();
    let mut prev = f64::INFINITY;
    for k in [1, 4, 16] {
        let exact = exact_sub_pixel(&r, k);
        let est = group_shapley_taylor(&r, &groups, &[], &TaylorConfig { k, samples_t: 2000 }, 3).unwrap().values;
        let err = est.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("K={k}: max error {err:.6}");
        assert!(err < prev, "K={k}: {err} >= {prev}");
        prev = err;
    }
}
