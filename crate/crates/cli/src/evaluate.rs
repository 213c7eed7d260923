use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use evpan_core::metrics::{EvalAccumulator, EvalConfig, ImageSummary};
use evpan_core::ClassSplit;
use rayon::prelude::*;

use crate::error::CliError;
use crate::report::{ImageEntry, ReportFile, TOOL};
use crate::tensor::{read_dense, read_panoptic};

pub const PANOPTIC_SUFFIX: &str = ".panoptic.upst";
pub const UNCERTAINTY_SUFFIX: &str = ".uncertainty.upst";
pub const PROBS_SUFFIX: &str = ".probs.upst";

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub classes: PathBuf,
    pub bins: usize,
    pub per_image: bool,
}

pub fn read_classes(path: &Path) -> Result<ClassSplit, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let split: ClassSplit = serde_json::from_str(&text).map_err(|e| CliError::invalid(path, e))?;
    split.validate().map_err(|e| CliError::invalid(path, e))?;
    Ok(split)
}

/// Stems of every `<stem>.panoptic.upst` in `dir`, sorted.
pub fn panoptic_stems(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut stems = BTreeSet::new();
    for entry in entries {
        let name = entry.map_err(|e| CliError::io(dir, e))?.file_name();
        if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(PANOPTIC_SUFFIX)) {
            stems.insert(stem.to_string());
        }
    }
    Ok(stems)
}

fn evaluate_image(cfg: &EvalConfig, opts: &EvaluateOptions, stem: &str) -> Result<(EvalAccumulator, ImageSummary), CliError> {
    let gt_path = opts.gt_dir.join(format!("{stem}{PANOPTIC_SUFFIX}"));
    let pred_path = opts.pred_dir.join(format!("{stem}{PANOPTIC_SUFFIX}"));
    let unc_path = opts.pred_dir.join(format!("{stem}{UNCERTAINTY_SUFFIX}"));
    let probs_path = opts.pred_dir.join(format!("{stem}{PROBS_SUFFIX}"));
    if !unc_path.exists() {
        return Err(CliError::invalid(&unc_path, format!("missing uncertainty for '{stem}'")));
    }
    let gt = read_panoptic(&gt_path)?;
    let pred = read_panoptic(&pred_path)?;
    let unc = read_dense(&unc_path)?;
    let probs = probs_path.exists().then(|| read_dense(&probs_path)).transpose()?;
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(CliError::invalid(
            &pred_path,
            format!("{}x{} prediction against {}x{} ground truth", pred.height(), pred.width(), gt.height(), gt.width()),
        ));
    }
    let mut acc = EvalAccumulator::new(cfg.clone());
    let summary = acc.add_image(&pred, &gt, &unc, probs.as_ref()).map_err(|e| CliError::invalid(&pred_path, e))?;
    Ok((acc, summary))
}

pub fn evaluate(opts: &EvaluateOptions) -> Result<ReportFile, CliError> {
    let split = read_classes(&opts.classes)?;
    let cfg = EvalConfig::new(split, opts.bins)?;
    let gt_stems = panoptic_stems(&opts.gt_dir)?;
    let pred_stems = panoptic_stems(&opts.pred_dir)?;
    if gt_stems.is_empty() {
        return Err(CliError::invalid(&opts.gt_dir, "no *.panoptic.upst files"));
    }
    if let Some(stem) = gt_stems.difference(&pred_stems).next() {
        return Err(CliError::invalid(&opts.pred_dir.join(format!("{stem}{PANOPTIC_SUFFIX}")), "missing prediction"));
    }
    if let Some(stem) = pred_stems.difference(&gt_stems).next() {
        return Err(CliError::invalid(&opts.gt_dir.join(format!("{stem}{PANOPTIC_SUFFIX}")), "missing ground truth"));
    }
    let stems: Vec<String> = gt_stems.into_iter().collect();
    let results: Vec<_> = stems.par_iter().map(|s| evaluate_image(&cfg, opts, s)).collect();

    let mut total = EvalAccumulator::new(cfg.clone());
    let mut per_image = Vec::with_capacity(stems.len());
    for (stem, r) in stems.iter().zip(results) {
        let (acc, summary) = r?;
        total.merge(&acc)?;
        per_image.push(ImageEntry {
            stem: stem.clone(),
            pq: summary.pq,
            pece: summary.pece,
            uece: summary.uece,
            matches: summary.matches.len(),
        });
    }
    Ok(ReportFile {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg,
        stems,
        metrics: total.report(),
        per_image: opts.per_image.then_some(per_image),
    })
}
