//! Acceptance criteria 1–11, run in order inside one test so that runtime
//! bounds are measured without other tests competing for the CPU. Each
//! criterion prints one PASS or FAIL line; the test fails if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use advshap::attacks::*;
use advshap::autodiff::check::{check_case, op_suite};
use advshap::autodiff::Tensor;
use advshap::components::extract_components;
use advshap::interaction::*;
use advshap::model::*;
use advshap::regional::*;
use advshap::seeding::rng_from;
use advshap::shapley::*;
use advshap_cli::commands::{cmd_attribute, cmd_decompose, cmd_train, ADVERSARIAL_CHECKPOINT, NORMAL_CHECKPOINT};
use advshap_cli::Config;
use rand::seq::SliceRandom;
use rand::Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Normally trained toy model and its test split at base and extended size.
struct Toy {
    clf: Classifier,
    test: ToyDataset,
    test_ext: ToyDataset,
    accuracy: f64,
}

fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let cfg = Config::default();
        let (train_set, test) = advshap_cli::commands::datasets(&cfg).unwrap();
        let train_ext = extend_dataset(&train_set, cfg.extend.beta, cfg.extend.fill).unwrap();
        let test_ext = extend_dataset(&test, cfg.extend.beta, cfg.extend.fill).unwrap();
        let shape = InputShape::gray(test_ext.height, test_ext.width);
        let init = Classifier::toy(shape, cfg.data.num_classes, 1).unwrap();
        let (clf, _) = train(&init, &train_ext, &TrainMode::Normal, &cfg.train_config()).unwrap();
        let accuracy = advshap::model::accuracy(&clf, &test_ext).unwrap();
        Toy { clf, test, test_ext, accuracy }
    })
}

fn majority() -> FnGame<impl Fn(Coalition) -> f64 + Sync> {
    FnGame::new(3, |c: Coalition| (c.len() >= 2) as u8 as f64)
}

fn ac1() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_from(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let mut t: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = rng.gen_range(-1.0..1.0);
        for m in (0..t.len()).filter(|m| m & 1 == 1) {
            t[m] = t[m ^ 1] + d;
        }
        let sym = n >= 3;
        if sym {
            for m in (0..t.len()).filter(|m| m & 0b110 == 0b010) {
                t[m] = t[m ^ 0b110];
            }
        }
        let phi = ok(shapley_exact(&ok(TableGame::new(n, t.clone()))?))?.values;
        let total = t[(1 << n) - 1] - t[0];
        worst = worst.max((phi.iter().sum::<f64>() - total).abs());
        worst = worst.max((phi[0] - d).abs());
        if sym {
            worst = worst.max((phi[1] - phi[2]).abs());
        }
        let u: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mix: Vec<f64> = t.iter().zip(&u).map(|(x, y)| a * x + b * y).collect();
        let pu = ok(shapley_exact(&ok(TableGame::new(n, u))?))?.values;
        let pm = ok(shapley_exact(&ok(TableGame::new(n, mix))?))?.values;
        for i in 0..n {
            worst = worst.max((pm[i] - (a * phi[i] + b * pu[i])).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max axiom residual {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("100 games, max residual {worst:.1e}, {secs:.2} s"))
}

fn ac2() -> Verdict {
    let est = ok(shapley_sampled(&majority(), 2000, 1))?.values;
    let dev = est.iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    ensure(dev < 0.05, || format!("T=2000 max deviation {dev}"))?;
    // Majority marginals are constant within each coalition size, so the
    // decay with T is measured on a weighted voting game instead.
    let weights = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0];
    let voting = FnGame::new(6, move |c: Coalition| (c.players().map(|p| weights[p]).sum::<f64>() >= 8.0) as u8 as f64);
    let exact = ok(shapley_exact(&voting))?.values;
    let mut errs = Vec::new();
    for t in [10, 100, 1000] {
        let mut total = 0.0;
        for seed in 0..20 {
            let v = ok(shapley_sampled(&voting, t, seed))?.values;
            total += v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / 6.0;
        }
        errs.push(total / 20.0);
    }
    ensure(errs.windows(2).all(|w| w[1] < w[0]), || format!("mean errors {errs:?}"))?;
    Ok(format!("majority T=2000 max |φ−1/3| {dev:.4}; weighted voting mean error at T=10,100,1000: {errs:.4?}"))
}

fn ac3() -> Verdict {
    let v = ok(interaction_exact(&majority(), Coalition::from_players([1, 2])))?;
    ensure((v.interaction - 1.0 / 3.0).abs() <= 1e-9, || format!("majority I = {}", v.interaction))?;
    let mut rng = rng_from(303);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c0 = rng.gen_range(-1.0..1.0);
        let g = FnGame::new(n, move |c: Coalition| c0 + c.players().map(|p| w[p]).sum::<f64>());
        for m in 1..(1u64 << n) {
            worst = worst.max(ok(interaction_exact(&g, Coalition(m)))?.interaction.abs());
        }
    }
    ensure(worst <= 1e-12, || format!("additive max |I| {worst:e}"))?;
    Ok(format!("majority I = {:.12}; additive games max |I| {worst:.1e}", v.interaction))
}

fn ac4() -> Verdict {
    let mut worst: (f64, &str) = (0.0, "");
    for (i, case) in op_suite().iter().enumerate() {
        let e = ok(check_case(case, 50, 4000 + i as u64, 1e-5))?;
        if e > worst.0 {
            worst = (e, case.name);
        }
    }
    ensure(worst.0 < 1e-4, || format!("{}: relative error {:e}", worst.1, worst.0))?;
    Ok(format!("{} cases × 50 trials, worst relative error {:.1e} ({})", op_suite().len(), worst.0, worst.1))
}

fn ac5() -> Verdict {
    // Linear model: closed form for any K and T.
    let (h, w, t) = (4, 4, 3);
    let mut rng = rng_from(505);
    let weight: Vec<f64> = (0..h * w * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lin = ok(Classifier::linear(
        InputShape::gray(h, w),
        ok(Tensor::new(weight.clone(), vec![h * w, t]))?,
        ok(Tensor::new(vec![0.0; t], vec![t]))?,
    ))?;
    let x = ok(Tensor::new((0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect(), vec![1, h, w]))?;
    let d = ok(Tensor::new((0..h * w).map(|_| rng.gen_range(-0.3..0.3)).collect(), vec![1, h, w]))?;
    let ctx = ok(PixelGameContext::with_super_pixels(&lin, x, d.clone(), 0, 2, 1))?;
    let mut lin_err: f64 = 0.0;
    for (k, samples_t) in [(1, 1), (3, 7), (4, 500)] {
        let phi = ok(pixel_rewards_taylor(&ctx, &TaylorConfig { k, samples_t }, k as u64))?;
        for i in 0..h * w {
            lin_err = lin_err.max((phi[i] - (weight[i * t + 2] - weight[i * t]) * d.data()[i]).abs());
        }
    }
    ensure(lin_err <= 1e-9, || format!("linear closed-form error {lin_err:e}"))?;

    // Trained toy model, 3×3 super-pixels of 4×4, against the exact masked game.
    let toy = toy();
    let (mut rho_min, mut err_max): (f64, f64) = (1.0, 0.0);
    for i in 0..3 {
        let x = &toy.test_ext.images[i];
        let (l, tg) = (toy.test.labels[i], toy.test.default_target(i));
        let atk = ok(attack_l2_masked(&toy.clf, x, tg, &Mask::full(x.shape()), &L2AttackConfig::default()))?;
        ensure(atk.success, || format!("image {i}: attack failed"))?;
        let ctx = ok(PixelGameContext::with_super_pixels(&toy.clf, x.clone(), atk.delta, l, tg, 4))?;
        ensure(ctx.num_units() == 9, || format!("{} super-pixels", ctx.num_units()))?;
        let exact = ok(shapley_exact(&ok(PixelGame::new(&ctx))?))?.values;
        let est = ok(pixel_rewards_taylor(&ctx, &TaylorConfig::default(), 50 + i as u64))?;
        let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        rho_min = rho_min.min(support::spearman(&est, &exact));
        err_max = err_max.max(est.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    ensure(rho_min >= 0.9, || format!("Spearman {rho_min:.4}"))?;
    ensure(err_max < 0.08, || format!("max error {err_max:.4} of max|φ|"))?;
    Ok(format!(
        "linear error {lin_err:.1e}; toy model min Spearman {rho_min:.4}, max error {err_max:.4}·max|φ| (tolerance 0.08)"
    ))
}

fn ac6() -> Verdict {
    let mut rng = rng_from(606);
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        for k in 1..=3 {
            for _ in 0..5 {
                let table: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let game = ok(TableGame::new(n, table))?;
                let phi = ok(shapley_exact(&game))?.values;
                let ext = ok(MultilinearExtension::new(&game))?;
                let sub = ok(SubPixelGame::new(&ext, k))?;
                let folded = sub.fold_values(&ok(shapley_exact(&sub))?.values);
                worst = folded.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("n ≤ 3, K ≤ 3: max |Σ_k φ_(i,k) − φ_i| {worst:.1e}"))
}

fn ac7() -> Verdict {
    let toy = toy();
    let n = 40;
    let mut succ = 0;
    let mut rng = rng_from(707);
    for i in 0..n {
        let x = &toy.test_ext.images[i];
        let tg = toy.test.default_target(i);
        let full = Mask::full(x.shape());
        let r = ok(attack_l2_masked(&toy.clf, x, tg, &full, &L2AttackConfig::default()))?;
        succ += r.success as usize;
        let mut idx: Vec<usize> = (0..x.numel()).collect();
        idx.shuffle(&mut rng);
        let mask = ok(Mask::from_indices(x.shape(), idx[..x.numel() / 2].iter().copied()))?;
        for r in [
            ok(attack_l2_masked(&toy.clf, x, tg, &mask, &L2AttackConfig::default()))?,
            ok(attack_linf_masked(&toy.clf, x, tg, &mask, &LinfAttackConfig::default()))?,
        ] {
            for ((&d, &m), &xv) in r.delta.data().iter().zip(mask.bits()).zip(x.data()) {
                ensure(m || d == 0.0, || format!("image {i}: nonzero δ off-mask"))?;
                ensure((0.0..=1.0).contains(&(xv + d)), || format!("image {i}: box violated"))?;
            }
        }
    }
    let rate = succ as f64 / n as f64;
    ensure(rate >= 0.95, || format!("success rate {rate}"))?;
    let mut chains = Vec::new();
    for c in 0..5 {
        let x = &toy.test_ext.images[c];
        let tg = toy.test.default_target(c);
        let mut idx: Vec<usize> = (0..x.numel()).collect();
        idx.shuffle(&mut rng);
        let mut costs = Vec::new();
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let k = (frac * x.numel() as f64) as usize;
            let mask = ok(Mask::from_indices(x.shape(), idx[..k].iter().copied()))?;
            let r = ok(attack_linf_masked(&toy.clf, x, tg, &mask, &LinfAttackConfig::default()))?;
            costs.push(if r.success { r.cost } else { 1.0 });
        }
        ensure(costs.windows(2).all(|w| w[1] <= w[0]), || format!("chain {c}: L∞ costs {costs:?}"))?;
        chains.push(costs);
    }
    Ok(format!(
        "toy accuracy {:.3}; L2 success {succ}/{n}; masks and box respected; 5 nested chains monotone",
        toy.accuracy
    ))
}

fn ac8() -> Verdict {
    let start = Instant::now();
    let toy = toy();
    let x = &toy.test.images[0];
    let ext = ok(extend_image(x, 1.0 / 6.0, FillMode::Replicate))?;
    let tg = toy.test.default_target(0);
    let cfg = |l, method| RegionalConfig {
        norm: NormKind::L2,
        l,
        method,
        l2: L2AttackConfig::default(),
        linf: LinfAttackConfig::default(),
        seed: 8,
    };
    let exact = ok(regional_attribution(&toy.clf, &ext, tg, &cfg(2, ShapleyMethod::Exact)))?;
    let again = ok(regional_attribution(&toy.clf, &ext, tg, &cfg(2, ShapleyMethod::Exact)))?;
    ensure(exact == again, || "L=2 attribution not reproducible".into())?;
    let diff = exact.cost_empty - exact.cost_full;
    let res2 = (exact.phi.iter().sum::<f64>() - diff).abs();
    ensure(res2 <= 1e-9 * diff.abs().max(1.0), || format!("L=2 residual {res2:e}"))?;
    let sampled = ok(regional_attribution(&toy.clf, &ext, tg, &cfg(4, ShapleyMethod::Sampled { samples_t: 4 })))?;
    let d4 = sampled.cost_empty - sampled.cost_full;
    let rel = (sampled.phi.iter().sum::<f64>() - d4).abs() / d4.abs();
    ensure(rel < 0.05, || format!("L=4 relative residual {rel:.4}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "L=2 exact residual {res2:.1e} (reproducible); L=4 sampled T=4 relative residual {rel:.4}, {} failed attacks; {:.0} s",
        sampled.failed_attacks,
        elapsed.as_secs_f64()
    ))
}

fn ac9() -> Verdict {
    let reward = support::Planted::new(1.0);
    let side = support::SIDE;
    let out = ok(extract_components(&reward, side, side, &support::planted_config(1.0 / 12.0), 21))?;
    let round = &out.rounds[0];
    let aligned = |o: (usize, usize)| o.0 % 2 == 0 && o.1 % 2 == 0;
    let noise = round.candidates.iter().filter(|c| !aligned(c.origin)).map(|c| c.interaction.abs()).fold(0.0, f64::max);
    let gap = round.candidates.iter().filter(|c| aligned(c.origin)).map(|c| c.interaction.abs()).fold(f64::INFINITY, f64::min);
    ensure(gap >= 10.0 * noise, || format!("gap {gap} below 10× noise {noise}"))?;
    let mut found: Vec<Vec<usize>> = out
        .components
        .iter()
        .map(|c| {
            let mut u = c.units.clone();
            u.sort();
            u
        })
        .collect();
    found.sort();
    ensure(found == support::planted_blocks(), || "recovered partition differs from the planted blocks".into())?;
    Ok(format!("16 planted blocks recovered; gap {gap:.4} vs noise {noise:.1e}"))
}

/// Small config for the end-to-end runs.
fn e2e_config() -> Config {
    let mut cfg = Config::default();
    cfg.seed = 11;
    cfg.data.train_count = 150;
    cfg.data.test_count = 30;
    cfg.train.epochs = 3;
    cfg.attribute.l = 2;
    cfg.decompose.super_pixel = 2;
    cfg.decompose.samples_t = 20;
    cfg
}

fn ensure_unit(v: f64, what: &str) -> Result<(), String> {
    ensure((0.0..=1.0).contains(&v), || format!("{what} = {v} outside [0, 1]"))
}

fn ac10(dir: &Path) -> Verdict {
    let cfg = e2e_config();
    ok(cmd_train(&cfg, dir))?;
    let images: Vec<String> = ["0", "1"].map(String::from).to_vec();
    let attr = ok(cmd_attribute(&cfg, &dir.join(NORMAL_CHECKPOINT), &images, dir))?;
    for r in attr.images.iter().filter(|r| r.skipped.is_none()) {
        ensure_unit(r.iou_attribution.ok_or("missing attribution IoU")?, "IoU(attributions)")?;
        ensure_unit(r.iou_magnitude.ok_or("missing magnitude IoU")?, "IoU(magnitudes)")?;
    }
    ensure(attr.summary.images_analyzed > 0, || "no image analyzed".into())?;
    let ckpts = [dir.join(NORMAL_CHECKPOINT), dir.join(ADVERSARIAL_CHECKPOINT)];
    let dec = ok(cmd_decompose(&cfg, &ckpts, &images, &dir.join("run1")))?;
    let names: Vec<&str> = dec.models.iter().map(|m| m.name.as_str()).collect();
    ensure(names == ["normal", "adversarial"], || format!("model rows {names:?}"))?;
    for m in &dec.models {
        ensure_unit(m.ratios.foreground_ratio, "foreground ratio")?;
        ensure_unit(m.ratios.suppress_true_ratio, "suppress-true ratio")?;
    }
    let s = &attr.summary;
    Ok(format!(
        "published full-scale IoU and ratio figures are not reproduced (need pretrained large models and benchmark data); \
         toy run: mean IoU(attr) {:?}, IoU(mag) {:?}; fg/suppress ratios normal {:.3}/{:.3}, adversarial {:.3}/{:.3}",
        s.mean_iou_attribution,
        s.mean_iou_magnitude,
        dec.models[0].ratios.foreground_ratio,
        dec.models[0].ratios.suppress_true_ratio,
        dec.models[1].ratios.foreground_ratio,
        dec.models[1].ratios.suppress_true_ratio
    ))
}

fn ac11(dir: &Path) -> Verdict {
    let cfg = e2e_config();
    let images: Vec<String> = ["0", "1"].map(String::from).to_vec();
    let ckpts = [dir.join(NORMAL_CHECKPOINT), dir.join(ADVERSARIAL_CHECKPOINT)];
    if !ckpts[0].exists() {
        ok(cmd_train(&cfg, dir))?;
        ok(cmd_decompose(&cfg, &ckpts, &images, &dir.join("run1")))?;
    }
    ok(cmd_decompose(&cfg, &ckpts, &images, &dir.join("run2")))?;
    let file = format!("decompose-seed{}.json", cfg.seed);
    let a = ok(std::fs::read(dir.join("run1").join(&file)))?;
    let b = ok(std::fs::read(dir.join("run2").join(&file)))?;
    ensure(a == b, || "decompose reports differ between identical runs".into())?;
    let merged: usize = serde_json::from_slice::<serde_json::Value>(&a)
        .ok()
        .and_then(|v| v["models"].as_array().map(|m| m.iter().map(|m| m["ratios"]["components"].as_u64().unwrap_or(0) as usize).sum()))
        .unwrap_or(0);
    Ok(format!("two decompose runs byte-identical ({} bytes, {merged} merged components)", a.len()))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let line = match &verdict {
        Ok(d) => format!("AC{n} PASS {name}: {d} [{secs:.1} s]\n"),
        Err(d) => format!("AC{n} FAIL {name}: {d} [{secs:.1} s]\n"),
    };
    // Written to the handle directly so the verdicts show without --nocapture.
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).unwrap();
    verdict.is_ok()
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let results = [
        run(1, "Shapley axioms", ac1),
        run(2, "sampled vs exact", ac2),
        run(3, "interaction oracle", ac3),
        run(4, "gradient correctness", ac4),
        run(5, "Taylor approximation", ac5),
        run(6, "sub-pixel equivalence", ac6),
        run(7, "attack correctness", ac7),
        run(8, "regional attribution efficiency", ac8),
        run(9, "component recovery", ac9),
        run(10, "toy-scale figures well-formed", || ac10(dir.path())),
        run(11, "end-to-end determinism", || ac11(dir.path())),
    ];
    let failed: Vec<usize> = (1..=11).filter(|i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
