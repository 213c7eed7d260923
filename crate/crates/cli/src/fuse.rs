use std::path::{Path, PathBuf};

use evpan_core::evidential::{probabilities_and_uncertainty, Activation};
use evpan_core::fusion::{fuse, FusionConfig, PanopticResult};
use evpan_core::ClassSplit;

use crate::error::CliError;
use crate::evaluate::{PANOPTIC_SUFFIX, PROBS_SUFFIX, UNCERTAINTY_SUFFIX};
use crate::instance_set::read_instance_set;
use crate::tensor::{read_dense, write_tensor, Tensor};

#[derive(Debug, Clone)]
pub struct FuseOptions {
    pub semantic: PathBuf,
    pub instances: PathBuf,
    pub stuff: Vec<u32>,
    pub thing: Vec<u32>,
    pub out: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Fuses one image and writes `<out>.panoptic.upst`, `<out>.uncertainty.upst`
/// and the semantic class probabilities as `<out>.probs.upst`.
pub fn fuse_files(opts: &FuseOptions) -> Result<PanopticResult, CliError> {
    let split = ClassSplit::new(opts.stuff.clone(), opts.thing.clone())?;
    let logits = read_dense(&opts.semantic)?;
    if logits.channels() != split.num_classes {
        return Err(CliError::invalid(
            &opts.semantic,
            format!("{} channels for {} classes", logits.channels(), split.num_classes),
        ));
    }
    let (set, instances) = read_instance_set(&opts.instances)?;
    if (set.height, set.width) != (logits.height(), logits.width()) {
        return Err(CliError::invalid(
            &opts.instances,
            format!("{}x{} instance set for {}x{} logits", set.height, set.width, logits.height(), logits.width()),
        ));
    }
    let result = fuse(&logits, &instances, &FusionConfig::new(split)).map_err(|e| CliError::invalid(&opts.instances, e))?;
    let (probs, _) = probabilities_and_uncertainty(&logits, Activation::Softplus)?;

    if let Some(dir) = opts.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_tensor(&with_suffix(&opts.out, PANOPTIC_SUFFIX), &Tensor::from_panoptic(&result.panoptic))?;
    write_tensor(&with_suffix(&opts.out, UNCERTAINTY_SUFFIX), &Tensor::from_dense(&result.uncertainty))?;
    write_tensor(&with_suffix(&opts.out, PROBS_SUFFIX), &Tensor::from_dense(&probs))?;
    Ok(result)
}
