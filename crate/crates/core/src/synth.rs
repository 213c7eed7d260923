//! Seeded synthetic scenes and predictors with controllable calibration.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(cfg.seed)`.
//! Stream 0 drives the scene layout, stream 1 drives prediction noise, so
//! changing the noise settings never moves the ground truth.
//!
//! Scene draw order on stream 0:
//! 1. `2 * n_stuff` Voronoi sites, each `x = U[0,1) * width`, `y = U[0,1) * height`.
//!    Site `j` carries stuff class `j % n_stuff`; a pixel centre takes the
//!    nearest site, ties going to the lower index.
//! 2. For each instance: thing class `n_stuff + range(0..n_thing)`, then a
//!    bool (ellipse when true), then up to [`PLACEMENT_RETRIES`] attempts of
//!    `bw, bh, x0, y0`. An attempt is accepted when its box is disjoint from
//!    every earlier box. Instance ids count from 1 per class in placement order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classes::ClassSplit;
use crate::error::{Error, Result};
use crate::evidential::softplus_inverse;
use crate::fusion::{InstancePrediction, MASK_SIZE};
use crate::grid::{BBox, DenseGrid, LabelGrid, PanopticGrid, OFFSET, VOID};

pub const PLACEMENT_RETRIES: usize = 100;

const SCENE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Logit given to every class other than the predicted one.
pub const BACKGROUND_LOGIT: f64 = -30.0;

/// Confidences are capped here so the evidence stays finite.
const MAX_CONFIDENCE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// Every pixel gets confidence `target_confidence`; a `noise_level`
    /// fraction of pixels is forced to a wrong class.
    #[default]
    Fixed,
    /// Per-pixel confidence drawn around `target_confidence`; the pixel is
    /// correct with exactly that probability.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_stuff: usize,
    pub n_thing: usize,
    pub n_instances: usize,
    pub noise_level: f64,
    pub target_confidence: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: PredictorMode,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_stuff: 3,
            n_thing: 2,
            n_instances: 4,
            noise_level: 0.0,
            target_confidence: 0.9,
            seed: 0,
            mode: PredictorMode::Fixed,
        }
    }
}

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        self.n_stuff + self.n_thing
    }

    pub fn split(&self) -> ClassSplit {
        ClassSplit::contiguous(self.n_stuff, self.n_thing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidSize(format!("{}x{} scene", self.height, self.width)));
        }
        if self.n_stuff == 0 {
            return Err(Error::InvalidClassConfig("at least one stuff class required".into()));
        }
        if self.num_classes() < 2 {
            return Err(Error::TooFewClasses(self.num_classes()));
        }
        if self.n_instances > 0 && self.n_thing == 0 {
            return Err(Error::InvalidClassConfig("instances requested without thing classes".into()));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise_level {} must be >= 0", self.noise_level)));
        }
        if !(self.target_confidence > 0.0 && self.target_confidence <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_confidence {} outside (0, 1]",
                self.target_confidence
            )));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Inclusive range of box side lengths for an image side of `n` pixels.
pub fn box_side_range(n: usize) -> (usize, usize) {
    let lo = (n / 8).max(2).min(n);
    let hi = (n / 4).max(lo).min(n);
    (lo, hi)
}

fn in_ellipse(b: &BBox, y: usize, x: usize) -> bool {
    let rx = b.width() as f64 / 2.0;
    let ry = b.height() as f64 / 2.0;
    let dx = (x as f64 + 0.5 - (b.x0 as f64 + rx)) / rx;
    let dy = (y as f64 + 0.5 - (b.y0 as f64 + ry)) / ry;
    dx * dx + dy * dy <= 1.0
}

fn disjoint(a: &BBox, b: &BBox) -> bool {
    a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<(PanopticGrid, LabelGrid)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = cfg.rng(SCENE_STREAM);

    let sites: Vec<(f64, f64)> = (0..2 * cfg.n_stuff)
        .map(|_| (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64))
        .collect();
    let mut ids = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (j, &(sx, sy)) in sites.iter().enumerate() {
                let d = (px - sx).powi(2) + (py - sy).powi(2);
                if d < best.0 {
                    best = (d, j);
                }
            }
            ids[y * w + x] = (best.1 % cfg.n_stuff) as u32 * OFFSET;
        }
    }

    let (lo_w, hi_w) = box_side_range(w);
    let (lo_h, hi_h) = box_side_range(h);
    let mut boxes: Vec<BBox> = Vec::new();
    let mut next_id = vec![1u32; cfg.n_thing];
    for i in 0..cfg.n_instances {
        let t = rng.random_range(0..cfg.n_thing);
        let ellipse: bool = rng.random();
        let placed = (0..PLACEMENT_RETRIES).find_map(|_| {
            let bw = rng.random_range(lo_w..=hi_w);
            let bh = rng.random_range(lo_h..=hi_h);
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            let b = BBox { x0, y0, x1: x0 + bw, y1: y0 + bh };
            boxes.iter().all(|o| disjoint(o, &b)).then_some(b)
        });
        let b = placed.ok_or(Error::PlacementFailed(i))?;
        boxes.push(b);
        let id = PanopticGrid::encode((cfg.n_stuff + t) as u32, next_id[t]);
        next_id[t] += 1;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                if !ellipse || in_ellipse(&b, y, x) {
                    ids[y * w + x] = id;
                }
            }
        }
    }
    let gt = PanopticGrid::new(h, w, ids)?;
    let labels = gt.class_labels();
    Ok((gt, labels))
}

/// Logit whose softplus evidence gives Dirichlet confidence `1 - u = q`
/// on a `classes`-way pixel: `e = C q / (1 - q)`.
pub fn confident_logit(q: f64, classes: usize) -> f64 {
    let q = q.min(MAX_CONFIDENCE);
    softplus_inverse(classes as f64 * q / (1.0 - q))
}

/// Tight bounding boxes of every thing segment, in ascending id order.
pub fn segment_boxes(gt: &PanopticGrid, split: &ClassSplit) -> Vec<(u32, BBox)> {
    let mut boxes: std::collections::BTreeMap<u32, BBox> = Default::default();
    let w = gt.width();
    for (i, &id) in gt.data().iter().enumerate() {
        if id == VOID || !split.is_thing(id / OFFSET) {
            continue;
        }
        let (y, x) = (i / w, i % w);
        boxes
            .entry(id)
            .and_modify(|b| {
                b.x0 = b.x0.min(x);
                b.y0 = b.y0.min(y);
                b.x1 = b.x1.max(x + 1);
                b.y1 = b.y1.max(y + 1);
            })
            .or_insert(BBox { x0: x, y0: y, x1: x + 1, y1: y + 1 });
    }
    boxes.into_iter().collect()
}

fn jitter(rng: &mut ChaCha8Rng, lo: usize, hi: usize, extent: usize, noise: f64) -> (usize, usize) {
    let amp = noise * 0.25 * (hi - lo) as f64;
    let mut d = || (amp * rng.random_range(-1.0..=1.0)).round() as isize;
    let a = (lo as isize + d()).clamp(0, extent as isize - 1) as usize;
    let b = (hi as isize + d()).clamp(a as isize + 1, extent as isize) as usize;
    (a, b)
}

/// Semantic logits and instance predictions for a generated scene.
///
/// Stream 1 is consumed pixel by pixel in row-major order (one uniform for
/// the error decision in fixed mode, a confidence and a uniform in calibrated
/// mode, plus a class draw for wrong pixels), then per thing segment: class
/// probability, four box offsets.
pub fn synthesize_predictions(gt: &PanopticGrid, cfg: &SceneConfig) -> Result<(DenseGrid, Vec<InstancePrediction>)> {
    cfg.validate()?;
    let classes = cfg.num_classes();
    let (h, w) = (gt.height(), gt.width());
    let mut rng = cfg.rng(NOISE_STREAM);
    let t = cfg.target_confidence;
    let radius = (t - 0.01).max(0.0).min(1.0 - t);
    let error_rate = cfg.noise_level.min(1.0);

    let mut logits = vec![BACKGROUND_LOGIT; h * w * classes];
    for (i, &id) in gt.data().iter().enumerate() {
        let truth = if id == VOID { 0 } else { (id / OFFSET) as usize };
        if truth >= classes {
            return Err(Error::LabelOutOfRange { label: truth as u32, classes });
        }
        let (q, wrong) = match cfg.mode {
            PredictorMode::Fixed => (t, rng.random::<f64>() < error_rate),
            PredictorMode::Calibrated => {
                let q = if radius > 0.0 { rng.random_range(t - radius..=t + radius) } else { t };
                (q, rng.random::<f64>() >= q)
            }
        };
        let pred = if wrong { (truth + 1 + rng.random_range(0..classes - 1)) % classes } else { truth };
        logits[i * classes + pred] = confident_logit(q, classes);
    }
    let logits = DenseGrid::new(h, w, classes, logits)?;

    let fg = {
        let q = t.min(MAX_CONFIDENCE);
        softplus_inverse((2.0 * q / (1.0 - q)).max(1.0))
    };
    let mut instances = Vec::new();
    for (id, b) in segment_boxes(gt, &cfg.split()) {
        let class_prob = (0.95 - cfg.noise_level * rng.random::<f64>()).clamp(0.0, 1.0);
        let (x0, x1) = jitter(&mut rng, b.x0, b.x1, w, cfg.noise_level);
        let (y0, y1) = jitter(&mut rng, b.y0, b.y1, h, cfg.noise_level);
        let bbox = BBox { x0, y0, x1, y1 };
        let mask_logits = DenseGrid::from_fn(MASK_SIZE, MASK_SIZE, 1, |i, j, _| {
            let y = y0 + ((i as f64 + 0.5) * bbox.height() as f64 / MASK_SIZE as f64) as usize;
            let x = x0 + ((j as f64 + 0.5) * bbox.width() as f64 / MASK_SIZE as f64) as usize;
            if gt.get(y.min(h - 1), x.min(w - 1)) == id { fg } else { -fg }
        })?;
        instances.push(InstancePrediction { bbox, class_id: id / OFFSET, class_prob, mask_logits });
    }
    Ok((logits, instances))
}
