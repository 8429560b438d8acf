//! The `train`, `attribute`, `decompose` and `compare` subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use advshap::attacks::{attack_l2_masked, extend_image, ExtendedImage, Mask, NormKind};
use advshap::autodiff::Tensor;
use advshap::components::{aggregate_ratios, component_stats, extract_components};
use advshap::interaction::PixelGameContext;
use advshap::model::{
    accuracy, extend_dataset, robust_accuracy, synth_dataset, train, Classifier, InputShape, ToyDataset, TrainMode,
};
use advshap::regional::{iou, normalize_map, regional_attribution, regional_magnitude, RegionalConfig, ShapleyMethod};
use advshap::seeding::derive_seed;

use crate::config::{Config, Stage};
use crate::error::{CliError, Result};
use crate::render;
use crate::report::*;

/// Heatmap and overlay upscaling.
pub const RENDER_SCALE: usize = 16;

pub const NORMAL_CHECKPOINT: &str = "normal.ckpt";
pub const ADVERSARIAL_CHECKPOINT: &str = "adversarial.ckpt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Train and test splits at base size; the test split is the tail.
pub fn datasets(cfg: &Config) -> Result<(ToyDataset, ToyDataset)> {
    let d = &cfg.data;
    let all = synth_dataset(cfg.stage_seed(Stage::Data), d.train_count + d.test_count, d.size, d.num_classes)?;
    Ok(all.split_tail(d.test_count))
}

fn extended_shape(cfg: &Config) -> Result<InputShape> {
    let probe = Tensor::zeros(&[1, cfg.data.size, cfg.data.size]);
    let (h, w) = extend_image(&probe, cfg.extend.beta, cfg.extend.fill)?.size();
    Ok(InputShape::gray(h, w))
}

fn seeds(cfg: &Config, stage: Stage) -> Seeds {
    Seeds {
        master: cfg.seed,
        stage: cfg.stage_seed(stage),
    }
}

/// Trains the normal and adversarially trained models from one
/// initialization and writes both checkpoints plus a report.
pub fn cmd_train(cfg: &Config, out_dir: &Path) -> Result<TrainRunReport> {
    create_dir(out_dir)?;
    let (train_set, test_set) = datasets(cfg)?;
    let train_ext = extend_dataset(&train_set, cfg.extend.beta, cfg.extend.fill)?;
    let test_ext = extend_dataset(&test_set, cfg.extend.beta, cfg.extend.fill)?;
    let init = Classifier::toy(extended_shape(cfg)?, cfg.data.num_classes, cfg.stage_seed(Stage::Init))?;
    let tc = cfg.train_config();
    let pgd = cfg.train.adversarial.clone();
    let eval_seed = derive_seed(cfg.stage_seed(Stage::Train), &[99]);

    let mut models = Vec::new();
    for (name, file, mode) in [
        ("normal", NORMAL_CHECKPOINT, TrainMode::Normal),
        ("adversarial", ADVERSARIAL_CHECKPOINT, TrainMode::Adversarial(pgd.clone())),
    ] {
        let (model, training) = train(&init, &train_ext, &mode, &tc)?;
        let bytes = model.to_checkpoint_bytes()?;
        let path = out_dir.join(file);
        std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        let test_accuracy = accuracy(&model, &test_ext)?;
        let robust = robust_accuracy(&model, &test_ext, &pgd, eval_seed)?;
        println!("{name}: test accuracy {test_accuracy:.4}, robust accuracy {robust:.4}");
        models.push(ModelRecord {
            name: name.to_string(),
            checkpoint_file: file.to_string(),
            checkpoint_sha256: sha256_hex(&bytes),
            training,
            test_accuracy,
            robust_accuracy: robust,
        });
    }
    let report = TrainRunReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        seeds: seeds(cfg, Stage::Train),
        models,
    };
    write_report(out_dir, &format!("train-seed{}.json", cfg.seed), "train", &report)?;
    Ok(report)
}

/// A checkpoint and the SHA-256 of its bytes.
pub fn load_checkpoint(path: &Path) -> Result<(Classifier, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((Classifier::from_checkpoint_bytes(&bytes)?, sha256_hex(&bytes)))
}

/// An image to analyze, with its classes and (for dataset images) its
/// foreground mask.
pub struct Subject {
    pub source: String,
    pub image: Tensor,
    pub true_class: usize,
    pub target_class: usize,
    pub foreground: Option<Vec<bool>>,
}

/// Resolves `--images` entries: test-split indices, or image files whose
/// predicted class stands in for the label.
pub fn subjects(cfg: &Config, entries: &[String], classifier: &Classifier) -> Result<Vec<Subject>> {
    let (_, test) = datasets(cfg)?;
    let t = classifier.num_classes();
    entries
        .iter()
        .map(|e| {
            if let Ok(i) = e.parse::<usize>() {
                if i >= test.len() {
                    return Err(CliError::Usage(format!("image index {i} outside the {}-image test split", test.len())));
                }
                Ok(Subject {
                    source: i.to_string(),
                    image: test.images[i].clone(),
                    true_class: test.labels[i],
                    target_class: test.default_target(i),
                    foreground: Some(test.foreground_masks[i].clone()),
                })
            } else {
                let path = PathBuf::from(e);
                let image = render::load_gray(&path)?;
                let ext = extend_image(&image, cfg.extend.beta, cfg.extend.fill)?;
                let pred = classifier.predict(&ext.pixels)?;
                let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(Subject {
                    source,
                    image,
                    true_class: pred,
                    target_class: (pred + 1) % t,
                    foreground: None,
                })
            }
        })
        .collect()
}

fn extend_for(cfg: &Config, classifier: &Classifier, image: &Tensor) -> Result<ExtendedImage> {
    let ext = extend_image(image, cfg.extend.beta, cfg.extend.fill)?;
    ext.check_classifier(classifier)?;
    Ok(ext)
}

fn attribute_one(cfg: &Config, clf: &Classifier, s: &Subject, dir: &Path, stem: &str) -> Result<AttributeImage> {
    let a = &cfg.attribute;
    let ext = extend_for(cfg, clf, &s.image)?;
    let players = a.l * a.l;
    let method = if players <= a.exact_max_players {
        ShapleyMethod::Exact
    } else {
        ShapleyMethod::Sampled { samples_t: a.samples_t }
    };
    let mut maps = Vec::new();
    for &norm in &a.norms {
        let rc = RegionalConfig {
            norm,
            l: a.l,
            method,
            l2: cfg.attack.l2.clone(),
            linf: cfg.attack.linf.clone(),
            seed: derive_seed(cfg.stage_seed(Stage::Attribute), &[norm as u64]),
        };
        let map = match regional_attribution(clf, &ext, s.target_class, &rc) {
            Ok(m) => m,
            Err(e @ advshap::Error::BaselineAttackFailed { .. }) => {
                return Ok(AttributeImage {
                    source: s.source.clone(),
                    true_class: s.true_class,
                    target_class: s.target_class,
                    maps: Vec::new(),
                    iou_attribution: None,
                    iou_magnitude: None,
                    skipped: Some(format!("{norm}: {e}")),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let heatmap_file = format!("{stem}/img{}_{norm}.png", s.source);
        render::render_heatmap(&map.phi, a.l, a.l, RENDER_SCALE, &dir.join(&heatmap_file))?;
        let total = map.cost_empty - map.cost_full;
        maps.push(NormAttribution {
            norm,
            method,
            efficiency_residual: map.phi.iter().sum::<f64>() - total,
            magnitude: regional_magnitude(&map.delta_full, a.l)?,
            phi: map.phi,
            cost_empty: map.cost_empty,
            cost_full: map.cost_full,
            failed_attacks: map.failed_attacks,
            heatmap_file,
        });
    }
    let find = |n: NormKind| maps.iter().find(|m| m.norm == n);
    let pair_iou = |f: fn(&NormAttribution) -> &Vec<f64>| -> Option<f64> {
        let (x, y) = (find(NormKind::L2)?, find(NormKind::Linf)?);
        iou(&normalize_map(f(x)), &normalize_map(f(y))).ok()
    };
    Ok(AttributeImage {
        source: s.source.clone(),
        true_class: s.true_class,
        target_class: s.target_class,
        iou_attribution: pair_iou(|m| &m.phi),
        iou_magnitude: pair_iou(|m| &m.magnitude),
        maps,
        skipped: None,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Regional attributions of each image under every configured norm, with
/// heatmaps and IoU comparisons.
pub fn cmd_attribute(cfg: &Config, checkpoint: &Path, images: &[String], out_dir: &Path) -> Result<AttributeRunReport> {
    let (clf, sha) = load_checkpoint(checkpoint)?;
    let subjects = subjects(cfg, images, &clf)?;
    let stem = format!("attribute-seed{}", cfg.seed);
    create_dir(&out_dir.join(&stem))?;
    let records: Vec<AttributeImage> = subjects
        .par_iter()
        .map(|s| attribute_one(cfg, &clf, s, out_dir, &stem))
        .collect::<Result<_>>()?;
    for r in &records {
        match &r.skipped {
            Some(why) => println!("image {}: skipped ({why})", r.source),
            None => {
                for m in &r.maps {
                    println!(
                        "image {} {}: cost(∅) {:.6} cost(Λ) {:.6} efficiency residual {:.3e}",
                        r.source, m.norm, m.cost_empty, m.cost_full, m.efficiency_residual
                    );
                }
                if let (Some(a), Some(b)) = (r.iou_attribution, r.iou_magnitude) {
                    println!("image {}: IoU attributions {a:.4}, IoU magnitudes {b:.4}", r.source);
                }
            }
        }
    }
    let analyzed: Vec<&AttributeImage> = records.iter().filter(|r| r.skipped.is_none()).collect();
    let summary = AttributeSummary {
        images_analyzed: analyzed.len(),
        images_skipped: records.len() - analyzed.len(),
        mean_iou_attribution: mean(analyzed.iter().filter_map(|r| r.iou_attribution)),
        mean_iou_magnitude: mean(analyzed.iter().filter_map(|r| r.iou_magnitude)),
    };
    let report = AttributeRunReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        seeds: seeds(cfg, Stage::Attribute),
        checkpoint_sha256: sha,
        images: records,
        summary,
    };
    write_report(out_dir, &format!("{stem}.json"), "attribute", &report)?;
    Ok(report)
}

fn decompose_one(
    cfg: &Config,
    clf: &Classifier,
    s: &Subject,
    seed: u64,
    dir: &Path,
    overlay_file: String,
) -> Result<DecomposeImage> {
    let ext = extend_for(cfg, clf, &s.image)?;
    let mut record = DecomposeImage {
        source: s.source.clone(),
        true_class: s.true_class,
        target_class: s.target_class,
        attack_cost: 0.0,
        grid_rows: 0,
        grid_cols: 0,
        labels: Vec::new(),
        components: Vec::new(),
        rounds: Vec::new(),
        overlay_file: String::new(),
        skipped: None,
    };
    let full = Mask::full(ext.pixels.shape());
    let atk = attack_l2_masked(clf, &ext.pixels, s.target_class, &full, &cfg.attack.l2)?;
    record.attack_cost = atk.cost;
    if !atk.success {
        record.skipped = Some("full-mask L2 attack failed".into());
        return Ok(record);
    }
    if s.true_class == s.target_class {
        record.skipped = Some("true and target class coincide".into());
        return Ok(record);
    }
    let sp = cfg.decompose.super_pixel;
    let (h, w) = ext.size();
    let ctx = PixelGameContext::with_super_pixels(clf, ext.pixels.clone(), atk.delta, s.true_class, s.target_class, sp)?;
    let (rows, cols) = (h.div_ceil(sp), w.div_ceil(sp));
    let out = extract_components(&ctx, rows, cols, &cfg.extraction_config(), seed)?;
    let foreground = match &s.foreground {
        Some(m) => ext.extend_bool_map(m)?,
        None => vec![false; h * w],
    };
    for c in &out.components {
        let stats = component_stats(&ctx, &c.units, c.level, &foreground)?;
        record.components.push(ComponentRecord {
            id: c.id,
            level: c.level,
            units: c.units.clone(),
            reward: c.reward,
            stats,
        });
    }
    let mut pixel_labels = vec![None; h * w];
    for c in out.components.iter().filter(|c| c.level >= 1) {
        for &u in &c.units {
            for &i in &ctx.units()[u] {
                pixel_labels[i % (h * w)] = Some(c.id);
            }
        }
    }
    render::overlay(&ext.pixels, &pixel_labels, RENDER_SCALE)?.save(dir.join(&overlay_file))?;
    record.grid_rows = rows;
    record.grid_cols = cols;
    record.labels = out.label_grid();
    record.rounds = out.rounds;
    record.overlay_file = overlay_file;
    Ok(record)
}

fn checkpoint_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.trim_end_matches(".ckpt").to_string()
}

/// Hierarchical component extraction for each image under each checkpoint,
/// with pooled foreground and utility ratios per checkpoint.
pub fn cmd_decompose(cfg: &Config, checkpoints: &[PathBuf], images: &[String], out_dir: &Path) -> Result<DecomposeRunReport> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("decompose needs at least one checkpoint".into()));
    }
    let stem = format!("decompose-seed{}", cfg.seed);
    create_dir(&out_dir.join(&stem))?;
    let mut models = Vec::new();
    for (mi, path) in checkpoints.iter().enumerate() {
        let (clf, sha) = load_checkpoint(path)?;
        let name = checkpoint_name(path);
        let subjects = subjects(cfg, images, &clf)?;
        let model_seed = derive_seed(cfg.stage_seed(Stage::Decompose), &[mi as u64]);
        let records: Vec<DecomposeImage> = subjects
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let overlay = format!("{stem}/{name}_img{}.png", s.source);
                decompose_one(cfg, &clf, s, derive_seed(model_seed, &[k as u64]), out_dir, overlay)
            })
            .collect::<Result<_>>()?;
        let stats: Vec<Vec<_>> = records
            .iter()
            .filter(|r| r.skipped.is_none())
            .map(|r| r.components.iter().map(|c| c.stats.clone()).collect())
            .collect();
        let ratios = aggregate_ratios(&stats);
        println!(
            "{name}: {} merged components over {} images ({} without merges); foreground ratio {:.4}, suppress-true ratio {:.4}",
            ratios.components, ratios.images_used, ratios.images_skipped, ratios.foreground_ratio, ratios.suppress_true_ratio
        );
        models.push(DecomposeModel {
            name,
            checkpoint_sha256: sha,
            images: records,
            ratios,
        });
    }
    let report = DecomposeRunReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        seeds: seeds(cfg, Stage::Decompose),
        models,
    };
    write_report(out_dir, &format!("{stem}.json"), "decompose", &report)?;
    Ok(report)
}

/// One row per model of every attribute or decompose report given.
pub fn cmd_compare(reports: &[PathBuf], out_dir: &Path) -> Result<CompareRunReport> {
    create_dir(out_dir)?;
    let mut rows = Vec::new();
    for path in reports {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let report = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Ok(a) = serde_json::from_str::<AttributeRunReport>(&text) {
            rows.push(CompareRow {
                report,
                model: a.checkpoint_sha256[..12].to_string(),
                images: a.summary.images_analyzed,
                mean_iou_attribution: a.summary.mean_iou_attribution,
                mean_iou_magnitude: a.summary.mean_iou_magnitude,
                foreground_ratio: None,
                suppress_true_ratio: None,
            });
        } else if let Ok(d) = serde_json::from_str::<DecomposeRunReport>(&text) {
            for m in d.models {
                rows.push(CompareRow {
                    report: report.clone(),
                    model: m.name,
                    images: m.ratios.images_used,
                    mean_iou_attribution: None,
                    mean_iou_magnitude: None,
                    foreground_ratio: Some(m.ratios.foreground_ratio),
                    suppress_true_ratio: Some(m.ratios.suppress_true_ratio),
                });
            }
        } else {
            return Err(CliError::Usage(format!("{}: not an attribute or decompose report", path.display())));
        }
    }
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("{:<28} {:<14} {:>6} {:>9} {:>9} {:>9} {:>9}", "report", "model", "images", "iou_attr", "iou_mag", "fg", "suppress");
    for r in &rows {
        println!(
            "{:<28} {:<14} {:>6} {:>9} {:>9} {:>9} {:>9}",
            r.report,
            r.model,
            r.images,
            show(r.mean_iou_attribution),
            show(r.mean_iou_magnitude),
            show(r.foreground_ratio),
            show(r.suppress_true_ratio)
        );
    }
    let report = CompareRunReport {
        tool_version: TOOL_VERSION.to_string(),
        rows,
    };
    write_report(out_dir, "compare.json", "compare", &report)?;
    Ok(report)
}
