//! Dense multi-channel grids, label grids, panoptic grids and the geometric
//! primitives shared by every other module.
//!
//! All grids are row-major. Dense grids are channel-minor: the value of
//! channel `c` at `(y, x)` lives at `(y * width + x) * channels + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for pixels excluded from training and evaluation.
pub const VOID: u32 = u32::MAX;

/// Panoptic id encoding: `class_id * OFFSET + instance_index`.
pub const OFFSET: u32 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DenseGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}x{channels} ({expected} values)"),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a grid by evaluating `f(y, x, c)` for every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channel values of the pixel with flat index `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Applies `f` to every value. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Extracts a single channel as an `H×W×1` grid.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.pixel_iter().map(|p| p[c]).collect();
        Self { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape()),
                actual: format!("{:?}", other.shape()),
            });
        }
        Ok(())
    }
}

/// Per-pixel class ids with [`VOID`] as the ignore sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    /// Checks that every non-VOID id is below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l != VOID && l as usize >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }

    pub fn non_void(&self) -> usize {
        self.data.iter().filter(|&&l| l != VOID).count()
    }
}

/// Per-pixel panoptic ids `class_id * OFFSET + instance_index`, or [`VOID`].
///
/// Stuff pixels carry instance index 0, thing pixels 1 and up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticGrid {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl PanopticGrid {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn encode(class_id: u32, instance: u32) -> u32 {
        debug_assert!(instance < OFFSET);
        class_id * OFFSET + instance
    }

    /// Splits an id into `(class_id, instance_index)`; `None` for VOID.
    pub fn decode(id: u32) -> Option<(u32, u32)> {
        (id != VOID).then_some((id / OFFSET, id % OFFSET))
    }

    /// Class grid with VOID preserved.
    pub fn class_labels(&self) -> LabelGrid {
        let data = self.data.iter().map(|&id| if id == VOID { VOID } else { id / OFFSET }).collect();
        LabelGrid { height: self.height, width: self.width, data }
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", other.height, other.width),
            });
        }
        Ok(())
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Intersection over union of two masks; 0 when both are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.height, a.width),
            actual: format!("{}x{}", b.height, b.width),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Axis-aligned box with inclusive top-left and exclusive bottom-right corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    /// Validated box inside a `height × width` image.
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, height: usize, width: usize) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        b.validate(height, width)?;
        Ok(b)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::InvalidBBox([self.x0, self.y0, self.x1, self.y1], height, width))
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Source coordinate of output index `i` under corner-aligned sampling.
#[inline]
fn corner_aligned(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    if n_out == 1 || n_in == 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
    let lo = (pos.floor() as usize).min(n_in - 1);
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, pos - lo as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Per-channel bilinear resize with corner-aligned sampling: output corners
/// coincide with input corners.
pub fn resize_bilinear(grid: &DenseGrid, out_h: usize, out_w: usize) -> Result<DenseGrid> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidSize(format!("target size {out_h}x{out_w}")));
    }
    let (h, w, ch) = grid.shape();
    let cols: Vec<_> = (0..out_w).map(|x| corner_aligned(x, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for y in 0..out_h {
        let (y0, y1, ty) = corner_aligned(y, h, out_h);
        for &(x0, x1, tx) in &cols {
            for c in 0..ch {
                let top = lerp(grid.get(y0, x0, c), grid.get(y0, x1, c), tx);
                let bottom = lerp(grid.get(y1, x0, c), grid.get(y1, x1, c), tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    DenseGrid::new(out_h, out_w, ch, data)
}

/// Index of the maximal channel per pixel (ties to the lowest index) and the
/// value of that channel.
pub fn channel_argmax(grid: &DenseGrid) -> Result<(LabelGrid, DenseGrid)> {
    if grid.is_empty() || grid.channels() == 0 {
        return Err(Error::EmptyGrid);
    }
    let n = grid.pixels();
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for px in grid.pixel_iter() {
        let (idx, val) = argmax(px);
        labels.push(idx as u32);
        values.push(val);
    }
    Ok((
        LabelGrid::new(grid.height(), grid.width(), labels)?,
        DenseGrid::new(grid.height(), grid.width(), 1, values)?,
    ))
}

/// Argmax of a slice with ties broken to the lowest index.
#[inline]
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> Mask {
        let mut m = Mask::empty(h, w);
        for &i in on {
            m.data[i] = true;
        }
        m
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = mask(3, 3, &[0, 1, 2, 3, 4]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = mask(3, 3, &[5, 6]);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&Mask::empty(2, 2), &Mask::empty(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // |a| = 4, |b| = 4, two shared pixels
        let a = mask(4, 4, &[0, 1, 2, 3]);
        let b = mask(4, 4, &[2, 3, 4, 5]);
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn iou_dimension_mismatch() {
        assert!(iou(&Mask::empty(2, 2), &Mask::empty(2, 3)).is_err());
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let g = DenseGrid::from_fn(3, 5, 2, |y, x, c| (y * 7 + x * 3 + c) as f64 * 0.37 - 1.1).unwrap();
        assert_eq!(resize_bilinear(&g, 3, 5).unwrap(), g);
    }

    #[test]
    fn resize_constant() {
        let g = DenseGrid::filled(2, 3, 1, 3.0);
        let r = resize_bilinear(&g, 7, 4).unwrap();
        assert!(r.data().iter().all(|&v| v == 3.0));
    }

    /// Scalar bilinear evaluation straight from the definition.
    fn bilinear_oracle(src: &[[f64; 2]; 2], out: usize, y: usize, x: usize) -> f64 {
        let sy = y as f64 / (out - 1) as f64;
        let sx = x as f64 / (out - 1) as f64;
        src[0][0] * (1.0 - sy) * (1.0 - sx)
            + src[0][1] * (1.0 - sy) * sx
            + src[1][0] * sy * (1.0 - sx)
            + src[1][1] * sy * sx
    }

    #[test]
    fn resize_2x2_to_4x4_matches_oracle() {
        let src = [[0.0, 1.0], [0.0, 1.0]];
        let g = DenseGrid::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&g, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = bilinear_oracle(&src, 4, y, x);
                assert!((r.get(y, x, 0) - want).abs() < 1e-15);
            }
        }
        // columns are 0, 1/3, 2/3, 1
        assert!((r.get(2, 1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let g = DenseGrid::filled(2, 2, 1, 1.0);
        assert!(resize_bilinear(&g, 0, 3).is_err());
    }

    #[test]
    fn argmax_cases() {
        let g = DenseGrid::new(1, 2, 1, vec![5.0, -2.0]).unwrap();
        assert_eq!(channel_argmax(&g).unwrap().0.data(), &[0, 0]);

        let g = DenseGrid::new(1, 1, 3, vec![0.2, 0.7, 0.1]).unwrap();
        let (l, v) = channel_argmax(&g).unwrap();
        assert_eq!(l.data(), &[1]);
        assert_eq!(v.data(), &[0.7]);

        let g = DenseGrid::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(channel_argmax(&g).unwrap().0.data(), &[0]);
    }

    #[test]
    fn argmax_tie_exhaustive() {
        // every 3-channel pattern over {0, 1}: the winner is the first maximal index
        for bits in 0..8u32 {
            let px: Vec<f64> = (0..3).map(|c| ((bits >> c) & 1) as f64).collect();
            let max = px.iter().cloned().fold(f64::MIN, f64::max);
            let first = px.iter().position(|&v| v == max).unwrap();
            assert_eq!(argmax(&px).0, first);
        }
    }

    #[test]
    fn dense_grid_rejects_nan() {
        assert!(matches!(DenseGrid::new(1, 1, 1, vec![f64::NAN]), Err(Error::NonFinite(0))));
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0, 0, 2, 2, 2, 2).is_ok());
        assert!(BBox::new(1, 0, 1, 2, 2, 2).is_err());
        assert!(BBox::new(0, 0, 3, 2, 2, 2).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = DenseGrid> {
        (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(h, w, c)| {
            prop::collection::vec(-10.0f64..10.0, h * w * c)
                .prop_map(move |d| DenseGrid::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric(a in prop::collection::vec(any::<bool>(), 16), b in prop::collection::vec(any::<bool>(), 16)) {
            let a = Mask::new(4, 4, a).unwrap();
            let b = Mask::new(4, 4, b).unwrap();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            if a.area() > 0 {
                prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn resize_preserves_channel_bounds(g in grid_strategy(), oh in 1usize..9, ow in 1usize..9) {
            let r = resize_bilinear(&g, oh, ow).unwrap();
            for c in 0..g.channels() {
                let src = g.channel(c);
                let lo = src.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = src.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for &v in r.channel(c).data() {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn argmax_value_dominates(g in grid_strategy()) {
            let (labels, values) = channel_argmax(&g).unwrap();
            for i in 0..g.pixels() {
                let px = g.pixel(i);
                prop_assert_eq!(px[labels.data()[i] as usize], values.data()[i]);
                prop_assert!(px.iter().all(|&v| v <= values.data()[i]));
            }
        }
    }
}
