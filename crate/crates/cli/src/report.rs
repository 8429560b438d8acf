//! Structured run reports and the per-directory index.
//!
//! Reports hold no paths or timestamps: identical configs and seeds yield
//! byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use advshap::attacks::NormKind;
use advshap::components::{ComponentStats, RatioSummary, RoundLog};
use advshap::model::TrainReport;
use advshap::regional::ShapleyMethod;

use crate::config::Config;
use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub stage: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    pub checkpoint_file: String,
    pub checkpoint_sha256: String,
    pub training: TrainReport,
    pub test_accuracy: f64,
    pub robust_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub tool_version: String,
    pub config: Config,
    pub seeds: Seeds,
    pub models: Vec<ModelRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormAttribution {
    pub norm: NormKind,
    pub method: ShapleyMethod,
    /// `L × L`, row-major.
    pub phi: Vec<f64>,
    pub cost_empty: f64,
    pub cost_full: f64,
    /// `Σφ − (cost(∅) − cost(Λ))`.
    pub efficiency_residual: f64,
    pub failed_attacks: usize,
    /// Per-region L2 norm of the full-mask perturbation.
    pub magnitude: Vec<f64>,
    pub heatmap_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeImage {
    /// Test-split index, or the file name of a supplied image.
    pub source: String,
    pub true_class: usize,
    pub target_class: usize,
    pub maps: Vec<NormAttribution>,
    /// IoU of the normalized L2 and L∞ attribution maps.
    pub iou_attribution: Option<f64>,
    /// IoU of the normalized L2 and L∞ magnitude maps.
    pub iou_magnitude: Option<f64>,
    /// Why the image was skipped, if it was.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub images_analyzed: usize,
    pub images_skipped: usize,
    pub mean_iou_attribution: Option<f64>,
    pub mean_iou_magnitude: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRunReport {
    pub tool_version: String,
    pub config: Config,
    pub seeds: Seeds,
    pub checkpoint_sha256: String,
    pub images: Vec<AttributeImage>,
    pub summary: AttributeSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: usize,
    pub level: usize,
    /// Super-pixel indices, row-major over the unit grid.
    pub units: Vec<usize>,
    pub reward: f64,
    pub stats: ComponentStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeImage {
    pub source: String,
    pub true_class: usize,
    pub target_class: usize,
    pub attack_cost: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Component id per unit, row-major.
    pub labels: Vec<usize>,
    pub components: Vec<ComponentRecord>,
    pub rounds: Vec<RoundLog>,
    pub overlay_file: String,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeModel {
    pub name: String,
    pub checkpoint_sha256: String,
    pub images: Vec<DecomposeImage>,
    pub ratios: RatioSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeRunReport {
    pub tool_version: String,
    pub config: Config,
    pub seeds: Seeds,
    pub models: Vec<DecomposeModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub report: String,
    pub model: String,
    pub images: usize,
    pub mean_iou_attribution: Option<f64>,
    pub mean_iou_magnitude: Option<f64>,
    pub foreground_ratio: Option<f64>,
    pub suppress_true_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRunReport {
    pub tool_version: String,
    pub rows: Vec<CompareRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub command: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub runs: Vec<IndexEntry>,
}

/// Writes `report` as pretty JSON to `dir/file` and records it in
/// `dir/index.json`, replacing an earlier entry for the same file.
pub fn write_report<T: Serialize>(dir: &Path, file: &str, command: &str, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    let path = dir.join(file);
    std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;

    let index_path = dir.join("index.json");
    let mut index: Index = match std::fs::read_to_string(&index_path) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
        Err(e) => return Err(CliError::io(&index_path, e)),
    };
    index.runs.retain(|r| r.file != file);
    index.runs.push(IndexEntry {
        file: file.to_string(),
        command: command.to_string(),
        sha256: sha256_hex(text.as_bytes()),
    });
    index.runs.sort_by(|a, b| a.file.cmp(&b.file));
    let mut out = serde_json::to_string_pretty(&index)?;
    out.push('\n');
    std::fs::write(&index_path, out).map_err(|e| CliError::io(&index_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_replaces_entries_per_file() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), "b.json", "train", &1).unwrap();
        write_report(dir.path(), "a.json", "compare", &2).unwrap();
        write_report(dir.path(), "b.json", "train", &3).unwrap();
        let idx: Index = serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
        let files: Vec<&str> = idx.runs.iter().map(|r| r.file.as_str()).collect();
        assert_eq!(files, ["a.json", "b.json"]);
        assert_eq!(idx.runs[1].sha256, sha256_hex(b"3\n"));
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
