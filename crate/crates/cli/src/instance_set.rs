//! JSON instance sets: one document per image, masks stored as separate
//! tensor files referenced by path relative to the document.

use std::path::Path;

use evpan_core::fusion::InstancePrediction;
use evpan_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::tensor::{read_dense, write_tensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub bbox: [usize; 4],
    pub class_id: u32,
    pub class_prob: f64,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSetFile {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstanceEntry>,
}

pub fn read_instance_set(path: &Path) -> Result<(InstanceSetFile, Vec<InstancePrediction>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let set: InstanceSetFile = serde_json::from_str(&text).map_err(|e| CliError::invalid(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(set.instances.len());
    for (i, e) in set.instances.iter().enumerate() {
        let [x0, y0, x1, y1] = e.bbox;
        let bbox = BBox::new(x0, y0, x1, y1, set.height, set.width)
            .map_err(|err| CliError::invalid(path, format!("instance {i}: {err}")))?;
        if !(0.0..=1.0).contains(&e.class_prob) {
            return Err(CliError::invalid(path, format!("instance {i}: class_prob {} outside [0, 1]", e.class_prob)));
        }
        let mask_path = base.join(&e.mask);
        let mask_logits = read_dense(&mask_path)?;
        if mask_logits.channels() != 1 {
            return Err(CliError::invalid(&mask_path, "mask logits must have one channel"));
        }
        out.push(InstancePrediction { bbox, class_id: e.class_id, class_prob: e.class_prob, mask_logits });
    }
    Ok((set, out))
}

/// Writes `<dir>/<stem>.instances.json` with masks under `<dir>/<stem>.masks/`.
pub fn write_instance_set(
    dir: &Path,
    stem: &str,
    height: usize,
    width: usize,
    instances: &[InstancePrediction],
) -> Result<(), CliError> {
    let mask_dir_name = format!("{stem}.masks");
    let mask_dir = dir.join(&mask_dir_name);
    std::fs::create_dir_all(&mask_dir).map_err(|e| CliError::io(&mask_dir, e))?;
    let mut entries = Vec::with_capacity(instances.len());
    for (k, inst) in instances.iter().enumerate() {
        let name = format!("{k:04}.upst");
        write_tensor(&mask_dir.join(&name), &Tensor::from_dense(&inst.mask_logits))?;
        entries.push(InstanceEntry {
            bbox: inst.bbox.as_array(),
            class_id: inst.class_id,
            class_prob: inst.class_prob,
            mask: format!("{mask_dir_name}/{name}"),
        });
    }
    let set = InstanceSetFile { image_id: stem.to_string(), height, width, instances: entries };
    let path = dir.join(format!("{stem}.instances.json"));
    let text = serde_json::to_string_pretty(&set).expect("instance set serializes");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}
