use std::path::{Path, PathBuf};

use evpan_core::evidential::{probabilities_and_uncertainty, Activation};
use evpan_core::synth::{generate_scene, synthesize_predictions, SceneConfig};
use evpan_core::ClassSplit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::evaluate::{PANOPTIC_SUFFIX, UNCERTAINTY_SUFFIX};
use crate::instance_set::write_instance_set;
use crate::report::TOOL;
use crate::tensor::{write_tensor, Tensor};

pub const LOGITS_SUFFIX: &str = ".logits.upst";
pub const LABELS_SUFFIX: &str = ".labels.upst";
pub const CLASSES_FILE: &str = "classes.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub stem: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Base configuration; scene `i` uses `seed + i`.
    pub config: SceneConfig,
    pub classes: ClassSplit,
    pub scenes: Vec<SceneEntry>,
}

pub fn scene_stem(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Seed of scene `i` in a run started from `base`.
pub fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn write_scene(out: &Path, stem: &str, cfg: &SceneConfig) -> Result<(), CliError> {
    let (gt, labels) = generate_scene(cfg)?;
    let (logits, instances) = synthesize_predictions(&gt, cfg)?;
    let (_, uncertainty) = probabilities_and_uncertainty(&logits, Activation::Softplus)?;
    let gt_dir = out.join("gt");
    let in_dir = out.join("inputs");
    write_tensor(&gt_dir.join(format!("{stem}{PANOPTIC_SUFFIX}")), &Tensor::from_panoptic(&gt))?;
    write_tensor(&gt_dir.join(format!("{stem}{LABELS_SUFFIX}")), &Tensor::from_labels(&labels))?;
    write_tensor(&in_dir.join(format!("{stem}{LOGITS_SUFFIX}")), &Tensor::from_dense(&logits))?;
    write_tensor(&in_dir.join(format!("{stem}{UNCERTAINTY_SUFFIX}")), &Tensor::from_dense(&uncertainty))?;
    write_instance_set(&in_dir, stem, gt.height(), gt.width(), &instances)
}

/// Writes `count` scenes under `out`:
///
/// - `manifest.json` and `classes.json`
/// - `gt/<stem>.panoptic.upst`, `gt/<stem>.labels.upst`
/// - `inputs/<stem>.logits.upst`, `inputs/<stem>.uncertainty.upst`,
///   `inputs/<stem>.instances.json` with masks in `inputs/<stem>.masks/`
pub fn synthesize(out: &Path, base: &SceneConfig, count: usize) -> Result<Manifest, CliError> {
    base.validate()?;
    let dirs = if count == 0 { vec![out.to_path_buf()] } else { vec![out.to_path_buf(), out.join("gt"), out.join("inputs")] };
    for dir in dirs {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let scenes: Vec<SceneEntry> =
        (0..count).map(|i| SceneEntry { stem: scene_stem(i), seed: scene_seed(base.seed, i) }).collect();
    scenes
        .par_iter()
        .map(|s| write_scene(out, &s.stem, &SceneConfig { seed: s.seed, ..base.clone() }))
        .collect::<Result<Vec<()>, CliError>>()?;

    let manifest = Manifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: base.clone(),
        classes: base.split(),
        scenes,
    };
    let classes_path = out.join(CLASSES_FILE);
    let text = serde_json::to_string_pretty(&manifest.classes).expect("classes serialize");
    std::fs::write(&classes_path, text).map_err(|e| CliError::io(&classes_path, e))?;
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| CliError::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(path, e))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join(MANIFEST_FILE)
}
