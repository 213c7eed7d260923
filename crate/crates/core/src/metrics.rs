//! Segment matching, panoptic quality and the calibration metrics
//! (ECE on max-probability, uECE on `1 - u`, per-segment pECE and uPQ).
//!
//! Dataset-level numbers come from [`EvalAccumulator`]s: one per image,
//! combined with [`merge_accumulators`]. Every running sum inside an
//! accumulator is an integer or an [`ExactSum`], so merging is exactly
//! associative and commutative and the merge order never changes a report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassKind, ClassSplit};
use crate::error::{Error, Result};
use crate::grid::{argmax, DenseGrid, LabelGrid, PanopticGrid, OFFSET, VOID};

pub const DEFAULT_BINS: usize = 10;

const FIXED_POINT_BITS: i32 = 96;

/// Order-independent sum of values in `[0, 1]`, kept in 96-bit fixed point.
///
/// Values are rounded to a multiple of 2^-96 on entry; up to 2^32 terms fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum(u128);

impl ExactSum {
    pub fn add(&mut self, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v), "ExactSum takes values in [0, 1], got {v}");
        self.0 += (v * 2f64.powi(FIXED_POINT_BITS)).round() as u128;
    }

    pub fn merge(&mut self, other: ExactSum) {
        self.0 += other.0;
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2f64.powi(FIXED_POINT_BITS)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinStats {
    pub count: u64,
    pub correct: u64,
    pub confidence: ExactSum,
}

/// Confidence histogram with `B` equal-width bins on `[0, 1]`; confidence
/// exactly 1 falls into the top bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationHistogram {
    bins: Vec<BinStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub center: f64,
    pub mean_confidence: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub count: u64,
}

pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64) as usize).min(bins - 1)
}

fn check_confidence(c: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("confidence {c} outside [0, 1]")))
    }
}

impl CalibrationHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter("at least one bin required".into()));
        }
        Ok(Self { bins: vec![BinStats::default(); bins] })
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[BinStats] {
        &self.bins
    }

    pub fn add(&mut self, confidence: f64, correct: bool) -> Result<()> {
        check_confidence(confidence)?;
        let i = bin_index(confidence, self.bins.len());
        let b = &mut self.bins[i];
        b.count += 1;
        b.correct += correct as u64;
        b.confidence.add(confidence);
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.bins.len() != other.bins.len() {
            return Err(Error::ConfigMismatch);
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
            a.correct += b.correct;
            a.confidence.merge(b.confidence);
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `Σ_b |b|/N · |acc(b) − conf(b)|` over non-empty bins.
    pub fn calibration_error(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::NoPixels);
        }
        let n = n as f64;
        Ok(self
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| {
                let cnt = b.count as f64;
                (cnt / n) * (b.correct as f64 / cnt - b.confidence.value() / cnt).abs()
            })
            .sum())
    }

    pub fn reliability(&self) -> Vec<ReliabilityBin> {
        let width = 1.0 / self.bins.len() as f64;
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| ReliabilityBin {
                center: (i as f64 + 0.5) * width,
                mean_confidence: (b.count > 0).then(|| b.confidence.value() / b.count as f64),
                mean_accuracy: (b.count > 0).then(|| b.correct as f64 / b.count as f64),
                count: b.count,
            })
            .collect()
    }
}

fn histogram_of(confidence: &DenseGrid, correct: &[bool], bins: usize) -> Result<CalibrationHistogram> {
    if confidence.channels() != 1 || confidence.pixels() != correct.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} single-channel confidences", correct.len()),
            actual: format!("{:?}", confidence.shape()),
        });
    }
    let mut h = CalibrationHistogram::new(bins)?;
    for (&c, &ok) in confidence.data().iter().zip(correct) {
        h.add(c, ok)?;
    }
    Ok(h)
}

/// uECE of a confidence field (`1 - u`) against per-pixel correctness.
pub fn uece(confidence: &DenseGrid, correct: &[bool], bins: usize) -> Result<f64> {
    histogram_of(confidence, correct, bins)?.calibration_error()
}

/// ECE using the maximum class probability as confidence, over non-VOID pixels.
pub fn ece_maxprob(probs: &DenseGrid, labels: &LabelGrid, bins: usize) -> Result<f64> {
    maxprob_histogram(probs, labels, bins)?.calibration_error()
}

fn maxprob_histogram(probs: &DenseGrid, labels: &LabelGrid, bins: usize) -> Result<CalibrationHistogram> {
    if (probs.height(), probs.width()) != (labels.height(), labels.width()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", probs.height(), probs.width()),
            actual: format!("{}x{}", labels.height(), labels.width()),
        });
    }
    let mut h = CalibrationHistogram::new(bins)?;
    for (px, &y) in probs.pixel_iter().zip(labels.data()) {
        if y == VOID {
            continue;
        }
        let (k, p) = argmax(px);
        h.add(p, k as u32 == y)?;
    }
    Ok(h)
}

pub fn reliability_curve(confidence: &DenseGrid, correct: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    let h = histogram_of(confidence, correct, bins)?;
    if h.total() == 0 {
        return Err(Error::NoPixels);
    }
    Ok(h.reliability())
}

/// A predicted segment matched to a ground-truth segment of the same class
/// with IoU above one half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub pred_id: u32,
    pub gt_id: u32,
    pub iou: f64,
}

impl SegmentMatch {
    pub fn class_id(&self) -> u32 {
        self.pred_id / OFFSET
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: ExactSum,
}

impl ClassCounts {
    pub fn merge(&mut self, o: &Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum.merge(o.iou_sum);
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticCounts {
    pub classes: Vec<ClassCounts>,
}

impl PanopticCounts {
    pub fn new(num_classes: usize) -> Self {
        Self { classes: vec![ClassCounts::default(); num_classes] }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.classes.len() != other.classes.len() {
            return Err(Error::ConfigMismatch);
        }
        self.classes.iter_mut().zip(&other.classes).for_each(|(a, b)| a.merge(b));
        Ok(())
    }
}

fn class_of(id: u32, num_classes: usize) -> Result<u32> {
    let c = id / OFFSET;
    if c as usize >= num_classes {
        return Err(Error::LabelOutOfRange { label: c, classes: num_classes });
    }
    Ok(c)
}

/// Matches predicted and ground-truth segments of equal class with IoU > 0.5.
///
/// Pixels that are VOID in the ground truth are left out of every IoU
/// denominator, and predicted segments lying more than half on VOID are
/// ignored instead of counted as false positives. VOID predicted pixels
/// belong to no segment.
pub fn match_segments(
    pred: &PanopticGrid,
    gt: &PanopticGrid,
    num_classes: usize,
) -> Result<(Vec<SegmentMatch>, PanopticCounts)> {
    pred.same_dims(gt)?;
    let mut pred_area: BTreeMap<u32, u64> = BTreeMap::new();
    let mut gt_area: BTreeMap<u32, u64> = BTreeMap::new();
    let mut pred_void: BTreeMap<u32, u64> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != VOID {
            class_of(p, num_classes)?;
            *pred_area.entry(p).or_default() += 1;
        }
        if g == VOID {
            if p != VOID {
                *pred_void.entry(p).or_default() += 1;
            }
            continue;
        }
        class_of(g, num_classes)?;
        *gt_area.entry(g).or_default() += 1;
        if p != VOID {
            *inter.entry((p, g)).or_default() += 1;
        }
    }

    let mut counts = PanopticCounts::new(num_classes);
    let mut matches = Vec::new();
    let mut pred_matched = BTreeMap::new();
    let mut gt_matched = BTreeMap::new();
    for (&(p, g), &i) in &inter {
        if p / OFFSET != g / OFFSET {
            continue;
        }
        let union = pred_area[&p] + gt_area[&g] - i - pred_void.get(&p).copied().unwrap_or(0);
        let iou = i as f64 / union as f64;
        if iou > 0.5 {
            matches.push(SegmentMatch { pred_id: p, gt_id: g, iou });
            pred_matched.insert(p, g);
            gt_matched.insert(g, p);
            let c = &mut counts.classes[(p / OFFSET) as usize];
            c.tp += 1;
            c.iou_sum.add(iou);
        }
    }
    for &g in gt_area.keys() {
        if !gt_matched.contains_key(&g) {
            counts.classes[(g / OFFSET) as usize].fn_ += 1;
        }
    }
    for (&p, &area) in &pred_area {
        if pred_matched.contains_key(&p) {
            continue;
        }
        let void = pred_void.get(&p).copied().unwrap_or(0);
        if 2 * void > area {
            continue;
        }
        counts.classes[(p / OFFSET) as usize].fp += 1;
    }
    Ok((matches, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// PQ, SQ and RQ of one class; `None` when the class has no segments at all.
pub fn class_quality(c: &ClassCounts) -> Option<Quality> {
    if c.is_empty() {
        return None;
    }
    let iou_sum = c.iou_sum.value();
    let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
    let sq = if c.tp == 0 { 0.0 } else { iou_sum / c.tp as f64 };
    Some(Quality { pq: iou_sum / denom, sq, rq: c.tp as f64 / denom })
}

/// Unweighted class mean of PQ/SQ/RQ over the classes selected by `include`
/// that have at least one segment. `None` if no class qualifies.
pub fn mean_quality(counts: &PanopticCounts, include: impl Fn(u32) -> bool) -> Option<Quality> {
    let qs: Vec<Quality> = counts
        .classes
        .iter()
        .enumerate()
        .filter(|(c, _)| include(*c as u32))
        .filter_map(|(_, cc)| class_quality(cc))
        .collect();
    if qs.is_empty() {
        return None;
    }
    let n = qs.len() as f64;
    Some(Quality {
        pq: qs.iter().map(|q| q.pq).sum::<f64>() / n,
        sq: qs.iter().map(|q| q.sq).sum::<f64>() / n,
        rq: qs.iter().map(|q| q.rq).sum::<f64>() / n,
    })
}

/// Per-class quality (`None` for absent classes) and the class-averaged total.
pub fn panoptic_quality(counts: &PanopticCounts) -> (Vec<Option<Quality>>, Option<Quality>) {
    (counts.classes.iter().map(class_quality).collect(), mean_quality(counts, |_| true))
}

fn check_panoptic_confidence(confidence: &DenseGrid, pred: &PanopticGrid, gt: &PanopticGrid) -> Result<()> {
    pred.same_dims(gt)?;
    if confidence.shape() != (pred.height(), pred.width(), 1) {
        return Err(Error::ShapeMismatch {
            expected: format!("({}, {}, 1)", pred.height(), pred.width()),
            actual: format!("{:?}", confidence.shape()),
        });
    }
    Ok(())
}

/// uECE restricted to the pixels of predicted segment `f` (excluding VOID
/// ground truth); a pixel is correct when it also belongs to `g`.
pub fn segment_uece(
    m: &SegmentMatch,
    confidence: &DenseGrid,
    pred: &PanopticGrid,
    gt: &PanopticGrid,
    bins: usize,
) -> Result<f64> {
    check_panoptic_confidence(confidence, pred, gt)?;
    let mut h = CalibrationHistogram::new(bins)?;
    for ((&p, &g), &c) in pred.data().iter().zip(gt.data()).zip(confidence.data()) {
        if p == m.pred_id && g != VOID {
            h.add(c, g == m.gt_id)?;
        }
    }
    h.calibration_error()
}

/// Mean per-segment uECE over matched pairs; 1 when nothing matched.
pub fn pece(
    matches: &[SegmentMatch],
    confidence: &DenseGrid,
    pred: &PanopticGrid,
    gt: &PanopticGrid,
    bins: usize,
) -> Result<f64> {
    check_panoptic_confidence(confidence, pred, gt)?;
    if matches.is_empty() {
        return Ok(1.0);
    }
    let mut sum = ExactSum::default();
    for m in matches {
        sum.add(segment_uece(m, confidence, pred, gt, bins)?);
    }
    Ok(sum.value() / matches.len() as f64)
}

/// `(1 - pECE) · PQ`.
pub fn upq(pq: f64, pece: f64) -> f64 {
    (1.0 - pece) * pq
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split: ClassSplit,
    pub bins: usize,
}

impl EvalConfig {
    pub fn new(split: ClassSplit, bins: usize) -> Result<Self> {
        split.validate()?;
        if bins == 0 {
            return Err(Error::InvalidParameter("at least one bin required".into()));
        }
        Ok(Self { split, bins })
    }
}

/// Mergeable evaluation state for one or more images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalAccumulator {
    config: EvalConfig,
    counts: PanopticCounts,
    /// uECE histograms keyed by ground-truth class.
    pixels: Vec<CalibrationHistogram>,
    /// Max-probability ECE histograms keyed by ground-truth class.
    maxprob: Vec<CalibrationHistogram>,
    pair_uece: Vec<ExactSum>,
    pairs: Vec<u64>,
    image_uece: ExactSum,
    images_with_pixels: u64,
    images: u64,
    images_with_probs: u64,
}

/// Per-image numbers returned alongside the accumulator update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub matches: Vec<SegmentMatch>,
    pub pq: Option<f64>,
    pub pece: f64,
    pub uece: Option<f64>,
}

impl EvalAccumulator {
    pub fn new(config: EvalConfig) -> Self {
        let c = config.split.num_classes;
        let hist = CalibrationHistogram::new(config.bins).expect("validated bins");
        Self {
            counts: PanopticCounts::new(c),
            pixels: vec![hist.clone(); c],
            maxprob: vec![hist; c],
            pair_uece: vec![ExactSum::default(); c],
            pairs: vec![0; c],
            image_uece: ExactSum::default(),
            images_with_pixels: 0,
            images: 0,
            images_with_probs: 0,
            config,
        }
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn counts(&self) -> &PanopticCounts {
        &self.counts
    }

    pub fn images(&self) -> u64 {
        self.images
    }

    /// Adds one image. `uncertainty` is the `H×W×1` predicted uncertainty;
    /// `probs` optionally carries semantic class probabilities for the
    /// max-probability ECE.
    pub fn add_image(
        &mut self,
        pred: &PanopticGrid,
        gt: &PanopticGrid,
        uncertainty: &DenseGrid,
        probs: Option<&DenseGrid>,
    ) -> Result<ImageSummary> {
        let classes = self.config.split.num_classes;
        let bins = self.config.bins;
        check_panoptic_confidence(uncertainty, pred, gt)?;
        if let Some(&u) = uncertainty.data().iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::InvalidParameter(format!("uncertainty {u} outside [0, 1]")));
        }
        let confidence = uncertainty.map(|u| 1.0 - u)?;
        let (matches, counts) = match_segments(pred, gt, classes)?;

        let mut image_hist = CalibrationHistogram::new(bins)?;
        let mut pixels = self.pixels.clone();
        for ((&p, &g), &c) in pred.data().iter().zip(gt.data()).zip(confidence.data()) {
            if g == VOID {
                continue;
            }
            let correct = p != VOID && p / OFFSET == g / OFFSET;
            pixels[(g / OFFSET) as usize].add(c, correct)?;
            image_hist.add(c, correct)?;
        }

        let mut maxprob = None;
        if let Some(probs) = probs {
            if probs.channels() != classes {
                return Err(Error::ShapeMismatch {
                    expected: format!("{classes} probability channels"),
                    actual: format!("{}", probs.channels()),
                });
            }
            let labels = gt.class_labels();
            let mut per_class = self.maxprob.clone();
            for (px, &y) in probs.pixel_iter().zip(labels.data()) {
                if y == VOID {
                    continue;
                }
                let (k, p) = argmax(px);
                per_class[y as usize].add(p, k as u32 == y)?;
            }
            maxprob = Some(per_class);
        }

        let mut pair_uece = self.pair_uece.clone();
        let mut pairs = self.pairs.clone();
        let mut image_pece = ExactSum::default();
        for m in &matches {
            let e = segment_uece(m, &confidence, pred, gt, bins)?;
            let c = m.class_id() as usize;
            pair_uece[c].add(e);
            pairs[c] += 1;
            image_pece.add(e);
        }

        // commit only after every fallible step succeeded
        self.counts.merge(&counts)?;
        self.pixels = pixels;
        self.pair_uece = pair_uece;
        self.pairs = pairs;
        if let Some(m) = maxprob {
            self.maxprob = m;
            self.images_with_probs += 1;
        }
        self.images += 1;
        let image_uece = image_hist.calibration_error().ok();
        if let Some(e) = image_uece {
            self.image_uece.add(e);
            self.images_with_pixels += 1;
        }
        Ok(ImageSummary {
            pq: mean_quality(&counts, |_| true).map(|q| q.pq),
            pece: if matches.is_empty() { 1.0 } else { image_pece.value() / matches.len() as f64 },
            uece: image_uece,
            matches,
        })
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch);
        }
        self.counts.merge(&other.counts)?;
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            a.merge(b)?;
        }
        for (a, b) in self.maxprob.iter_mut().zip(&other.maxprob) {
            a.merge(b)?;
        }
        for (a, b) in self.pair_uece.iter_mut().zip(&other.pair_uece) {
            a.merge(*b);
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            *a += b;
        }
        self.image_uece.merge(other.image_uece);
        self.images_with_pixels += other.images_with_pixels;
        self.images += other.images;
        self.images_with_probs += other.images_with_probs;
        Ok(())
    }

    fn merged_hist(hists: &[CalibrationHistogram], include: impl Fn(u32) -> bool, bins: usize) -> CalibrationHistogram {
        let mut h = CalibrationHistogram::new(bins).expect("validated bins");
        for (c, ch) in hists.iter().enumerate() {
            if include(c as u32) {
                h.merge(ch).expect("same bins");
            }
        }
        h
    }

    fn summary(&self, include: impl Fn(u32) -> bool + Copy) -> GroupSummary {
        let q = mean_quality(&self.counts, include);
        let mut sum = ExactSum::default();
        let mut m = 0;
        for c in 0..self.pairs.len() {
            if include(c as u32) {
                sum.merge(self.pair_uece[c]);
                m += self.pairs[c];
            }
        }
        let pece = if m == 0 { 1.0 } else { sum.value() / m as f64 };
        let pq = q.map_or(0.0, |q| q.pq);
        let pixels = Self::merged_hist(&self.pixels, include, self.config.bins);
        let ece = (self.images > 0 && self.images_with_probs == self.images)
            .then(|| Self::merged_hist(&self.maxprob, include, self.config.bins).calibration_error().ok())
            .flatten();
        GroupSummary {
            pq,
            sq: q.map_or(0.0, |q| q.sq),
            rq: q.map_or(0.0, |q| q.rq),
            pece,
            upq: upq(pq, pece),
            uece: pixels.calibration_error().ok(),
            ece,
            matches: m,
            pece_defaulted: m == 0,
            classes: self.counts.classes.iter().enumerate().filter(|(c, cc)| include(*c as u32) && !cc.is_empty()).count(),
        }
    }

    pub fn report(&self) -> MetricReport {
        let split = &self.config.split;
        let per_class = (0..split.num_classes)
            .map(|c| {
                let cc = &self.counts.classes[c];
                let q = class_quality(cc);
                let pece = if self.pairs[c] == 0 { 1.0 } else { self.pair_uece[c].value() / self.pairs[c] as f64 };
                let pq = q.map_or(0.0, |q| q.pq);
                ClassReport {
                    class_id: c as u32,
                    kind: split.kind(c as u32).expect("validated split"),
                    included: q.is_some(),
                    tp: cc.tp,
                    fp: cc.fp,
                    fn_: cc.fn_,
                    pq,
                    sq: q.map_or(0.0, |q| q.sq),
                    rq: q.map_or(0.0, |q| q.rq),
                    matches: self.pairs[c],
                    pece,
                    upq: upq(pq, pece),
                    uece: self.pixels[c].calibration_error().ok(),
                    pixels: self.pixels[c].total(),
                }
            })
            .collect();
        let all = Self::merged_hist(&self.pixels, |_| true, self.config.bins);
        let ece_ready = self.images > 0 && self.images_with_probs == self.images;
        MetricReport {
            bins: self.config.bins,
            images: self.images,
            overall: self.summary(|_| true),
            things: self.summary(|c| split.is_thing(c)),
            stuff: self.summary(|c| split.is_stuff(c)),
            uece_image_mean: (self.images_with_pixels > 0)
                .then(|| self.image_uece.value() / self.images_with_pixels as f64),
            per_class,
            reliability_uece: all.reliability(),
            reliability_ece: ece_ready.then(|| Self::merged_hist(&self.maxprob, |_| true, self.config.bins).reliability()),
        }
    }
}

/// Combines two accumulators built with the same configuration.
pub fn merge_accumulators(a: &EvalAccumulator, b: &EvalAccumulator) -> Result<EvalAccumulator> {
    let mut out = a.clone();
    out.merge(b)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pece: f64,
    pub upq: f64,
    /// Pixel-pooled uECE, `None` without evaluated pixels.
    pub uece: Option<f64>,
    /// Max-probability ECE, present only when every image supplied probabilities.
    pub ece: Option<f64>,
    pub matches: u64,
    /// Set when no segment matched and pECE fell back to 1.
    pub pece_defaulted: bool,
    /// Classes with at least one segment.
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub kind: ClassKind,
    /// Whether the class had any segment and enters the PQ averages.
    pub included: bool,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub matches: u64,
    pub pece: f64,
    pub upq: f64,
    pub uece: Option<f64>,
    pub pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bins: usize,
    pub images: u64,
    pub overall: GroupSummary,
    pub things: GroupSummary,
    pub stuff: GroupSummary,
    /// Mean of per-image uECE values.
    pub uece_image_mean: Option<f64>,
    pub per_class: Vec<ClassReport>,
    pub reliability_uece: Vec<ReliabilityBin>,
    pub reliability_ece: Option<Vec<ReliabilityBin>>,
}

impl MetricReport {
    /// Checks `upq = (1 - pece) · pq` on every entry.
    pub fn check_upq_identity(&self, tol: f64) -> bool {
        let ok = |s: &GroupSummary| (s.upq - (1.0 - s.pece) * s.pq).abs() <= tol;
        ok(&self.overall)
            && ok(&self.things)
            && ok(&self.stuff)
            && self.per_class.iter().all(|c| (c.upq - (1.0 - c.pece) * c.pq).abs() <= tol)
    }
}
