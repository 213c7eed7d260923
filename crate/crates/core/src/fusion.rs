//! Probabilistic panoptic fusion.
//!
//! Instance predictions are filtered by class probability, their mask logits
//! are pasted into the image, overlapping masks are suppressed, and the
//! remaining instances compete per pixel with the semantic probabilities.
//! Instance probability/uncertainty fields are the average of the mask-head
//! Dirichlet fields and the semantic fields cropped to the instance box.

use crate::classes::ClassSplit;
use crate::error::{Error, Result};
use crate::evidential::{probabilities_and_uncertainty, softplus, Activation};
use crate::grid::{argmax, iou, resize_bilinear, BBox, DenseGrid, Mask, PanopticGrid, OFFSET};

pub const DEFAULT_CLASS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
/// Side length of the mask-head output.
pub const MASK_SIZE: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub bbox: BBox,
    pub class_id: u32,
    pub class_prob: f64,
    /// Foreground logits of the predicted class, `MASK_SIZE × MASK_SIZE × 1` by default.
    pub mask_logits: DenseGrid,
}

/// An instance with its mask logits resized to the box and its binary mask
/// in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterizedInstance {
    pub instance: InstancePrediction,
    /// Logits over the box only (`bbox.height() × bbox.width() × 1`).
    /// Pixels outside the box carry no foreground evidence.
    pub box_logits: DenseGrid,
    pub mask: Mask,
}

impl RasterizedInstance {
    /// Foreground logit at an image pixel, `None` outside the box.
    pub fn logit_at(&self, y: usize, x: usize) -> Option<f64> {
        let b = &self.instance.bbox;
        b.contains(y, x).then(|| self.box_logits.get(y - b.y0, x - b.x0, 0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedInstance {
    pub instance: InstancePrediction,
    /// `P_F`, `H×W×1`.
    pub probability: DenseGrid,
    /// `U_F`, `H×W×1`.
    pub uncertainty: DenseGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanopticResult {
    pub panoptic: PanopticGrid,
    pub uncertainty: DenseGrid,
    /// Instances that own at least one pixel, in the order their instance
    /// indices were assigned.
    pub instances_kept: Vec<InstancePrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub split: ClassSplit,
    pub class_threshold: f64,
    pub overlap_threshold: f64,
}

impl FusionConfig {
    pub fn new(split: ClassSplit) -> Self {
        Self { split, class_threshold: DEFAULT_CLASS_THRESHOLD, overlap_threshold: DEFAULT_OVERLAP_THRESHOLD }
    }
}

/// Keeps instances with `class_prob >= threshold`, sorted by decreasing
/// probability. The sort is stable.
pub fn filter_instances(instances: &[InstancePrediction], threshold: f64) -> Vec<InstancePrediction> {
    let mut kept: Vec<_> = instances.iter().filter(|i| i.class_prob >= threshold).cloned().collect();
    kept.sort_by(|a, b| b.class_prob.total_cmp(&a.class_prob));
    kept
}

pub fn rasterize_instance(inst: &InstancePrediction, height: usize, width: usize) -> Result<RasterizedInstance> {
    inst.bbox.validate(height, width)?;
    if inst.mask_logits.channels() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "1 mask channel".into(),
            actual: format!("{} channels", inst.mask_logits.channels()),
        });
    }
    let b = inst.bbox;
    let box_logits = resize_bilinear(&inst.mask_logits, b.height(), b.width())?;
    let mut mask = Mask::empty(height, width);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            // sigmoid(l) > 0.5 <=> l > 0
            mask.set(y, x, box_logits.get(y - b.y0, x - b.x0, 0) > 0.0);
        }
    }
    Ok(RasterizedInstance { instance: inst.clone(), box_logits, mask })
}

/// Greedy suppression in the given (probability-descending) order: a
/// candidate is dropped when its mask IoU with an already kept mask exceeds
/// `overlap_threshold`.
pub fn resolve_overlaps(rasterized: Vec<RasterizedInstance>, overlap_threshold: f64) -> Vec<RasterizedInstance> {
    let mut kept: Vec<RasterizedInstance> = Vec::with_capacity(rasterized.len());
    for cand in rasterized {
        let clash = kept
            .iter()
            .any(|k| iou(&k.mask, &cand.mask).expect("masks share image dims") > overlap_threshold);
        if !clash {
            kept.push(cand);
        }
    }
    kept
}

/// `P_I` and `U_I` from a two-channel Dirichlet per pixel: foreground
/// `alpha = softplus(logit) + 1`, background `alpha = 1`. Outside the box
/// `P_I = 0` and `U_I = 1`.
pub fn instance_uncertainty_fields(r: &RasterizedInstance) -> (DenseGrid, DenseGrid) {
    let (h, w) = (r.mask.height(), r.mask.width());
    let mut p = vec![0.0; h * w];
    let mut u = vec![1.0; h * w];
    let b = r.instance.bbox;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            let fg = softplus(r.box_logits.get(y - b.y0, x - b.x0, 0)) + 1.0;
            let s = fg + 1.0;
            p[y * w + x] = fg / s;
            u[y * w + x] = 2.0 / s;
        }
    }
    (
        DenseGrid::new(h, w, 1, p).expect("finite"),
        DenseGrid::new(h, w, 1, u).expect("finite"),
    )
}

/// `P_SI`, `U_SI`: the semantic probability of the instance class and the
/// semantic uncertainty inside the box; 0 and 1 outside it.
pub fn semantic_instance_fields(
    p_s: &DenseGrid,
    u_s: &DenseGrid,
    inst: &InstancePrediction,
) -> Result<(DenseGrid, DenseGrid)> {
    let (h, w, c) = p_s.shape();
    if u_s.shape() != (h, w, 1) {
        return Err(Error::ShapeMismatch { expected: format!("({h}, {w}, 1)"), actual: format!("{:?}", u_s.shape()) });
    }
    if inst.class_id as usize >= c {
        return Err(Error::LabelOutOfRange { label: inst.class_id, classes: c });
    }
    inst.bbox.validate(h, w)?;
    let b = inst.bbox;
    let mut p = vec![0.0; h * w];
    let mut u = vec![1.0; h * w];
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            p[y * w + x] = p_s.get(y, x, inst.class_id as usize);
            u[y * w + x] = u_s.get(y, x, 0);
        }
    }
    Ok((DenseGrid::new(h, w, 1, p)?, DenseGrid::new(h, w, 1, u)?))
}

fn mean(a: &DenseGrid, b: &DenseGrid) -> Result<DenseGrid> {
    a.same_shape(b)?;
    let (h, w, c) = a.shape();
    DenseGrid::new(h, w, c, a.data().iter().zip(b.data()).map(|(x, y)| (x + y) / 2.0).collect())
}

/// `P_F = (P_I + P_SI) / 2`, `U_F = (U_I + U_SI) / 2`.
pub fn fuse_fields(
    p_i: &DenseGrid,
    p_si: &DenseGrid,
    u_i: &DenseGrid,
    u_si: &DenseGrid,
) -> Result<(DenseGrid, DenseGrid)> {
    Ok((mean(p_i, p_si)?, mean(u_i, u_si)?))
}

/// Per-pixel argmax over the semantic channels followed by one channel per
/// fused instance (ties go to the earlier channel). Instance winners keep
/// their instance id and `U_F`; every other pixel takes the best stuff class
/// and `U_S`.
pub fn panoptic_merge(
    p_s: &DenseGrid,
    u_s: &DenseGrid,
    fused: &[FusedInstance],
    split: &ClassSplit,
) -> Result<PanopticResult> {
    let (h, w, c) = p_s.shape();
    if split.stuff.is_empty() {
        return Err(Error::InvalidClassConfig("no stuff classes to fall back on".into()));
    }
    if split.num_classes != c {
        return Err(Error::InvalidClassConfig(format!("{} classes configured, semantic grid has {c}", split.num_classes)));
    }
    if u_s.shape() != (h, w, 1) {
        return Err(Error::ShapeMismatch { expected: format!("({h}, {w}, 1)"), actual: format!("{:?}", u_s.shape()) });
    }
    for f in fused {
        f.probability.same_shape(u_s)?;
        f.uncertainty.same_shape(u_s)?;
    }
    let mut stuff = split.stuff.clone();
    stuff.sort_unstable();

    // winning instance per pixel, if any
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    let mut area = vec![0usize; fused.len()];
    for (i, px) in p_s.pixel_iter().enumerate() {
        let mut best = argmax(px).1;
        for (k, f) in fused.iter().enumerate() {
            let v = f.probability.data()[i];
            if v > best {
                best = v;
                owner[i] = Some(k);
            }
        }
        if let Some(k) = owner[i] {
            area[k] += 1;
        }
    }

    let mut next_index = vec![1u32; c];
    let mut ids = vec![0u32; fused.len()];
    let mut instances_kept = Vec::new();
    for (k, f) in fused.iter().enumerate() {
        if area[k] == 0 {
            continue;
        }
        let cls = f.instance.class_id;
        let idx = next_index[cls as usize];
        if idx >= OFFSET {
            return Err(Error::InvalidParameter(format!("more than {} instances of class {cls}", OFFSET - 1)));
        }
        next_index[cls as usize] += 1;
        ids[k] = PanopticGrid::encode(cls, idx);
        instances_kept.push(f.instance.clone());
    }

    let mut panoptic = Vec::with_capacity(h * w);
    let mut uncertainty = Vec::with_capacity(h * w);
    for (i, px) in p_s.pixel_iter().enumerate() {
        match owner[i] {
            Some(k) => {
                panoptic.push(ids[k]);
                uncertainty.push(fused[k].uncertainty.data()[i]);
            }
            None => {
                let mut best = stuff[0];
                for &s in &stuff[1..] {
                    if px[s as usize] > px[best as usize] {
                        best = s;
                    }
                }
                panoptic.push(PanopticGrid::encode(best, 0));
                uncertainty.push(u_s.data()[i]);
            }
        }
    }
    Ok(PanopticResult {
        panoptic: PanopticGrid::new(h, w, panoptic)?,
        uncertainty: DenseGrid::new(h, w, 1, uncertainty)?,
        instances_kept,
    })
}

/// The whole pipeline from semantic logits and raw instance predictions.
pub fn fuse(semantic_logits: &DenseGrid, instances: &[InstancePrediction], cfg: &FusionConfig) -> Result<PanopticResult> {
    cfg.split.validate()?;
    let (h, w, _) = semantic_logits.shape();
    for inst in instances {
        if !cfg.split.is_thing(inst.class_id) {
            return Err(Error::InvalidClassConfig(format!("instance class {} is not a thing class", inst.class_id)));
        }
        if !(0.0..=1.0).contains(&inst.class_prob) {
            return Err(Error::InvalidParameter(format!("class probability {} outside [0, 1]", inst.class_prob)));
        }
        inst.bbox.validate(h, w)?;
    }
    let (p_s, u_s) = probabilities_and_uncertainty(semantic_logits, Activation::Softplus)?;

    let candidates = filter_instances(instances, cfg.class_threshold)
        .iter()
        .map(|inst| rasterize_instance(inst, h, w))
        .collect::<Result<Vec<_>>>()?;
    let survivors = resolve_overlaps(candidates, cfg.overlap_threshold);

    let fused = survivors
        .iter()
        .map(|r| {
            let (p_i, u_i) = instance_uncertainty_fields(r);
            let (p_si, u_si) = semantic_instance_fields(&p_s, &u_s, &r.instance)?;
            let (probability, uncertainty) = fuse_fields(&p_i, &p_si, &u_i, &u_si)?;
            Ok(FusedInstance { instance: r.instance.clone(), probability, uncertainty })
        })
        .collect::<Result<Vec<_>>>()?;
    panoptic_merge(&p_s, &u_s, &fused, &cfg.split)
}
