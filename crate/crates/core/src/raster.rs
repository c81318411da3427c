//! Raster types shared by every matching stage, plus the pixel-level
//! primitives built on them: shape extraction, label resizing, label
//! histograms, normalized hamming distance and category indicator sets.

use std::collections::HashMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Category value for pixels without a semantic label.
pub const UNLABELED: u16 = u16::MAX;

/// Descriptor value for cells that fall outside a frame. Never a valid
/// category id and never equal to [`UNLABELED`].
pub const BORDER: u16 = u16::MAX - 1;

/// Largest supported category count; ids run `0..MAX_CATEGORIES`.
pub const MAX_CATEGORIES: u16 = BORDER;

/// Per-pixel semantic category ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    num_categories: u16,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, num_categories: u16, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid(format!("label map must be non-empty, got {width}x{height}"));
        }
        if num_categories > MAX_CATEGORIES {
            return invalid(format!("at most {MAX_CATEGORIES} categories supported"));
        }
        if data.len() != width as usize * height as usize {
            return invalid(format!(
                "label data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|&&v| v != UNLABELED && v >= num_categories) {
            return invalid(format!("category id {bad} out of range (N_c = {num_categories})"));
        }
        Ok(Self { width, height, num_categories, data })
    }

    /// A map with every pixel set to `value`.
    pub fn filled(width: u32, height: u32, num_categories: u16, value: u16) -> Result<Self> {
        Self::new(width, height, num_categories, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        num_categories: u16,
        mut f: impl FnMut(u32, u32) -> u16,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, num_categories, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_categories(&self) -> u16 {
        self.num_categories
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Sets one pixel. `value` must be a valid category or [`UNLABELED`].
    pub fn set(&mut self, x: u32, y: u32, value: u16) -> Result<()> {
        if value != UNLABELED && value >= self.num_categories {
            return invalid(format!("category id {value} out of range"));
        }
        if x >= self.width || y >= self.height {
            return invalid(format!("pixel ({x}, {y}) outside {}x{}", self.width, self.height));
        }
        self.data[y as usize * self.width as usize + x as usize] = value;
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != UNLABELED).count()
    }

    pub fn same_size<T: Dimensions>(&self, other: &T) -> bool {
        self.width == other.dims().0 && self.height == other.dims().1
    }
}

/// Anything with raster dimensions.
pub trait Dimensions {
    fn dims(&self) -> (u32, u32);
}

impl Dimensions for LabelMap {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

impl Dimensions for InstanceMap {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

impl Dimensions for RgbImage {
    fn dims(&self) -> (u32, u32) {
        self.dimensions()
    }
}

/// Per-pixel instance ids, row-major; 0 means "no instance" (stuff).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl InstanceMap {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid(format!("instance map must be non-empty, got {width}x{height}"));
        }
        if data.len() != width as usize * height as usize {
            return invalid(format!(
                "instance data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![0; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, id: u16) {
        self.data[y as usize * self.width as usize + x as usize] = id;
    }

    pub fn max_id(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Checks the pairing invariants between a label map and its instance map.
pub fn validate_pair(labels: &LabelMap, instances: &InstanceMap) -> Result<()> {
    if !labels.same_size(instances) {
        return invalid(format!(
            "label map is {}x{} but instance map is {}x{}",
            labels.width, labels.height, instances.width, instances.height
        ));
    }
    let mut seen: HashMap<u16, u16> = HashMap::new();
    for (&cat, &inst) in labels.data.iter().zip(&instances.data) {
        if inst == 0 || cat == UNLABELED {
            continue;
        }
        let first = *seen.entry(inst).or_insert(cat);
        if first != cat {
            return invalid(format!("instance {inst} spans categories {first} and {cat}"));
        }
    }
    Ok(())
}

/// Tight axis-aligned bounding box, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row0: u32,
    pub col0: u32,
    pub rows: u32,
    pub cols: u32,
}

impl BBox {
    pub fn contains(&self, row: u32, col: u32) -> bool {
        row >= self.row0 && row < self.row0 + self.rows && col >= self.col0 && col < self.col0 + self.cols
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.rows > 0 && self.cols > 0 && self.row0 + self.rows <= height && self.col0 + self.cols <= width
    }
}

/// Binary bbox-local mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: u32,
    cols: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: u32, cols: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows as usize * cols as usize {
            return invalid("mask bit count does not match its dimensions");
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn empty(rows: u32, cols: u32) -> Self {
        Self { rows, cols, bits: vec![false; rows as usize * cols as usize] }
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.bits[row as usize * self.cols as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, on: bool) {
        self.bits[row as usize * self.cols as usize + col as usize] = on;
    }

    pub fn count(&self) -> u32 {
        self.bits.iter().filter(|&&b| b).count() as u32
    }

    /// Nearest-neighbor resample to `rows x cols`.
    pub fn resized(&self, rows: u32, cols: u32) -> Mask {
        let mut out = Mask::empty(rows, cols);
        for r in 0..rows {
            let sr = nearest_src(r, self.rows, rows);
            for c in 0..cols {
                let sc = nearest_src(c, self.cols, cols);
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeSource {
    Query,
    Exemplar(u32),
}

/// A connected labeled region: one thing instance or one 4-connected
/// component of a stuff category.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeInstance {
    pub shape_id: u32,
    /// Source instance id; 0 for stuff shapes.
    pub instance_id: u16,
    pub category: u16,
    pub bbox: BBox,
    pub mask: Mask,
    pub area: u32,
    pub source: ShapeSource,
}

impl ShapeInstance {
    pub fn is_thing(&self) -> bool {
        self.instance_id != 0
    }

    /// `true` when image pixel (`x`, `y`) belongs to the shape.
    pub fn covers(&self, x: u32, y: u32) -> bool {
        self.bbox.contains(y, x) && self.mask.get(y - self.bbox.row0, x - self.bbox.col0)
    }

    /// Bounding box width over height.
    pub fn aspect(&self) -> f64 {
        self.bbox.cols as f64 / self.bbox.rows as f64
    }
}

/// Splits a paired label/instance map into shapes.
///
/// Every nonzero instance id becomes one thing shape. Labeled pixels with
/// instance id 0 are split into 4-connected components per category, each
/// one a stuff shape. Shapes are ordered by category, then by the raster
/// position of their first pixel; `shape_id` is the index in that order.
pub fn extract_shapes(labels: &LabelMap, instances: &InstanceMap) -> Result<Vec<ShapeInstance>> {
    extract_shapes_from(labels, instances, ShapeSource::Query)
}

pub(crate) fn extract_shapes_from(
    labels: &LabelMap,
    instances: &InstanceMap,
    source: ShapeSource,
) -> Result<Vec<ShapeInstance>> {
    validate_pair(labels, instances)?;
    let w = labels.width as usize;
    let h = labels.height as usize;

    // component index per pixel, u32::MAX = unlabeled
    const NONE: u32 = u32::MAX;
    let mut comp = vec![NONE; w * h];
    struct Acc {
        category: u16,
        instance_id: u16,
        first: usize,
        min_r: usize,
        max_r: usize,
        min_c: usize,
        max_c: usize,
        area: u32,
    }
    let mut accs: Vec<Acc> = Vec::new();
    let mut by_instance: HashMap<u16, u32> = HashMap::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        let cat = labels.data[start];
        if cat == UNLABELED || comp[start] != NONE {
            continue;
        }
        let inst = instances.data[start];
        if inst != 0 {
            let idx = *by_instance.entry(inst).or_insert_with(|| {
                accs.push(Acc {
                    category: cat,
                    instance_id: inst,
                    first: start,
                    min_r: usize::MAX,
                    max_r: 0,
                    min_c: usize::MAX,
                    max_c: 0,
                    area: 0,
                });
                (accs.len() - 1) as u32
            });
            comp[start] = idx;
            continue;
        }
        let idx = accs.len() as u32;
        accs.push(Acc {
            category: cat,
            instance_id: 0,
            first: start,
            min_r: usize::MAX,
            max_r: 0,
            min_c: usize::MAX,
            max_c: 0,
            area: 0,
        });
        comp[start] = idx;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == NONE && labels.data[q] == cat && instances.data[q] == 0 {
                    comp[q] = idx;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
    }

    for (p, &ci) in comp.iter().enumerate() {
        if ci == NONE {
            continue;
        }
        let a = &mut accs[ci as usize];
        let (r, c) = (p / w, p % w);
        a.min_r = a.min_r.min(r);
        a.max_r = a.max_r.max(r);
        a.min_c = a.min_c.min(c);
        a.max_c = a.max_c.max(c);
        a.area += 1;
    }

    let mut masks: Vec<Mask> = accs
        .iter()
        .map(|a| Mask::empty((a.max_r - a.min_r + 1) as u32, (a.max_c - a.min_c + 1) as u32))
        .collect();
    for (p, &ci) in comp.iter().enumerate() {
        if ci == NONE {
            continue;
        }
        let a = &accs[ci as usize];
        let (r, c) = (p / w, p % w);
        masks[ci as usize].set((r - a.min_r) as u32, (c - a.min_c) as u32, true);
    }

    let mut shapes: Vec<(usize, ShapeInstance)> = accs
        .into_iter()
        .zip(masks)
        .map(|(a, mask)| {
            let bbox = BBox {
                row0: a.min_r as u32,
                col0: a.min_c as u32,
                rows: mask.rows(),
                cols: mask.cols(),
            };
            (
                a.first,
                ShapeInstance {
                    shape_id: 0,
                    instance_id: a.instance_id,
                    category: a.category,
                    bbox,
                    mask,
                    area: a.area,
                    source,
                },
            )
        })
        .collect();
    shapes.sort_by_key(|(first, s)| (s.category, *first));
    Ok(shapes
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut s))| {
            s.shape_id = i as u32;
            s
        })
        .collect())
}

/// Source index for center-of-cell nearest-neighbor sampling.
#[inline]
pub(crate) fn nearest_src(dst: u32, src_len: u32, dst_len: u32) -> u32 {
    (((2 * dst as u64 + 1) * src_len as u64) / (2 * dst_len as u64)) as u32
}

/// Nearest-neighbor resize. Labels are never blended.
pub fn resize_labels(map: &LabelMap, out_w: u32, out_h: u32) -> Result<LabelMap> {
    if out_w == 0 || out_h == 0 {
        return invalid(format!("resize target must be non-empty, got {out_w}x{out_h}"));
    }
    if out_w == map.width && out_h == map.height {
        return Ok(map.clone());
    }
    let xs: Vec<u32> = (0..out_w).map(|x| nearest_src(x, map.width, out_w)).collect();
    let mut data = Vec::with_capacity(out_w as usize * out_h as usize);
    for y in 0..out_h {
        let row = nearest_src(y, map.height, out_h) as usize * map.width as usize;
        data.extend(xs.iter().map(|&sx| map.data[row + sx as usize]));
    }
    Ok(LabelMap { width: out_w, height: out_h, num_categories: map.num_categories, data })
}

/// Nearest-neighbor resample of the `bbox` crop of `map` to `side x side`
/// values, row-major.
pub(crate) fn crop_resize_labels(map: &LabelMap, bbox: &BBox, out_w: u32, out_h: u32) -> Vec<u16> {
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize);
    let xs: Vec<u32> = (0..out_w).map(|x| bbox.col0 + nearest_src(x, bbox.cols, out_w)).collect();
    for y in 0..out_h {
        let sy = bbox.row0 + nearest_src(y, bbox.rows, out_h);
        let row = sy as usize * map.width as usize;
        out.extend(xs.iter().map(|&sx| map.data[row + sx as usize]));
    }
    out
}

/// Bilinear sample at continuous pixel coordinates (pixel centers sit on
/// integers). Coordinates are clamped to the image.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
        let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
        let v = top * (1.0 - fy) + bottom * fy;
        out[ch] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Continuous source coordinate of destination pixel `dst` when a span of
/// `src_len` pixels starting at `src0` is resized to `dst_len` pixels.
#[inline]
pub(crate) fn bilinear_src(dst: u32, src0: u32, src_len: u32, dst_len: u32) -> f64 {
    src0 as f64 + (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Bilinear resize of the whole image.
pub fn resize_rgb(img: &RgbImage, out_w: u32, out_h: u32) -> Result<RgbImage> {
    if out_w == 0 || out_h == 0 {
        return invalid(format!("resize target must be non-empty, got {out_w}x{out_h}"));
    }
    let (w, h) = img.dimensions();
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let bbox = BBox { row0: 0, col0: 0, rows: h, cols: w };
    Ok(crop_resize_rgb(img, &bbox, out_w, out_h))
}

/// Bilinear resize of the `bbox` crop of `img`.
pub fn crop_resize_rgb(img: &RgbImage, bbox: &BBox, out_w: u32, out_h: u32) -> RgbImage {
    RgbImage::from_fn(out_w, out_h, |x, y| {
        let sx = bilinear_src(x, bbox.col0, bbox.cols, out_w);
        let sy = bilinear_src(y, bbox.row0, bbox.rows, out_h);
        image::Rgb(sample_bilinear(img, sx, sy))
    })
}

/// Normalized per-category pixel fractions. Unlabeled pixels are ignored;
/// a fully unlabeled map yields the zero vector.
pub fn label_histogram(map: &LabelMap) -> Vec<f64> {
    let mut counts = vec![0u64; map.num_categories as usize];
    let mut total = 0u64;
    for &v in &map.data {
        if v != UNLABELED {
            counts[v as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Fraction of positions whose values differ. [`UNLABELED`] is compared
/// like any other value.
pub fn hamming_norm(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return invalid(format!(
            "hamming distance needs equal sizes, got {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        ));
    }
    let diff = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.data.len() as f64)
}

/// Set of category ids, stored as a bit vector of fixed length `N_c`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CategorySet {
    len: u16,
    words: Vec<u64>,
}

impl CategorySet {
    pub fn new(len: u16) -> Self {
        Self { len, words: vec![0; (len as usize).div_ceil(64)] }
    }

    pub fn from_words(len: u16, words: Vec<u64>) -> Result<Self> {
        if words.len() != (len as usize).div_ceil(64) {
            return invalid("category set word count does not match its length");
        }
        let set = Self { len, words };
        if let Some(&last) = set.words.last() {
            let used = len as usize % 64;
            if used != 0 && last >> used != 0 {
                return invalid("category set has bits past its length");
            }
        }
        Ok(set)
    }

    pub fn from_ids(len: u16, ids: impl IntoIterator<Item = u16>) -> Self {
        let mut set = Self::new(len);
        for id in ids {
            set.insert(id);
        }
        set
    }

    pub fn len(&self) -> u16 {
        self.len
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn insert(&mut self, id: u16) {
        assert!(id < self.len, "category {id} outside set of length {}", self.len);
        self.words[id as usize / 64] |= 1 << (id % 64);
    }

    pub fn contains(&self, id: u16) -> bool {
        id < self.len && self.words[id as usize / 64] & (1 << (id % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_subset_of(&self, other: &CategorySet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u16> + '_ {
        (0..self.len).filter(|&id| self.contains(id))
    }
}

/// Presence set of the categories in `map`. [`UNLABELED`] never appears.
pub fn indicator_vector(map: &LabelMap) -> CategorySet {
    let mut set = CategorySet::new(map.num_categories);
    for &v in &map.data {
        if v != UNLABELED {
            set.insert(v);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: u32, h: u32, n: u16, data: &[u16]) -> LabelMap {
        LabelMap::new(w, h, n, data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_out_of_range_category() {
        assert!(LabelMap::new(2, 1, 3, vec![0, 3]).is_err());
        assert!(LabelMap::new(2, 1, 3, vec![0, UNLABELED]).is_ok());
        assert!(LabelMap::new(0, 1, 3, vec![]).is_err());
    }

    #[test]
    fn single_thing_block() {
        let mut labels = LabelMap::filled(10, 10, 8, UNLABELED).unwrap();
        let mut inst = InstanceMap::empty(10, 10).unwrap();
        for y in 4..7 {
            for x in 2..5 {
                labels.set(x, y, 2).unwrap();
                inst.set(x, y, 1);
            }
        }
        let shapes = extract_shapes(&labels, &inst).unwrap();
        assert_eq!(shapes.len(), 1);
        let s = &shapes[0];
        assert_eq!((s.bbox.rows, s.bbox.cols, s.area), (3, 3, 9));
        assert_eq!((s.bbox.row0, s.bbox.col0), (4, 2));
        assert_eq!(s.instance_id, 1);
    }

    #[test]
    fn stuff_blobs_split_by_connectivity() {
        let mut labels = LabelMap::filled(10, 10, 8, UNLABELED).unwrap();
        let mut inst = InstanceMap::empty(10, 10).unwrap();
        for y in 4..7 {
            for x in 2..5 {
                labels.set(x, y, 2).unwrap();
                inst.set(x, y, 1);
            }
        }
        for (x0, y0) in [(0, 0), (7, 7)] {
            for y in y0..y0 + 2 {
                for x in x0..x0 + 2 {
                    labels.set(x, y, 5).unwrap();
                }
            }
        }
        let shapes = extract_shapes(&labels, &inst).unwrap();
        assert_eq!(shapes.len(), 3);
        let stuff: Vec<_> = shapes.iter().filter(|s| s.category == 5).collect();
        assert_eq!(stuff.len(), 2);
        assert!(stuff.iter().all(|s| s.area == 4 && !s.is_thing()));
        // ordered by category, then scan position
        assert_eq!(shapes[0].category, 2);
        assert_eq!(stuff[0].bbox.row0, 0);
        assert_eq!(stuff[1].bbox.row0, 7);
    }

    #[test]
    fn diagonal_touch_is_not_connected() {
        let labels = map(2, 2, 2, &[1, UNLABELED, UNLABELED, 1]);
        let inst = InstanceMap::empty(2, 2).unwrap();
        assert_eq!(extract_shapes(&labels, &inst).unwrap().len(), 2);
    }

    #[test]
    fn all_unlabeled_yields_nothing() {
        let labels = LabelMap::filled(5, 4, 3, UNLABELED).unwrap();
        let inst = InstanceMap::empty(5, 4).unwrap();
        assert!(extract_shapes(&labels, &inst).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let labels = LabelMap::filled(5, 4, 3, 0).unwrap();
        let inst = InstanceMap::empty(4, 5).unwrap();
        assert!(matches!(extract_shapes(&labels, &inst), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn instance_spanning_categories_is_rejected() {
        let labels = map(2, 1, 3, &[0, 1]);
        let inst = InstanceMap::new(2, 1, vec![4, 4]).unwrap();
        assert!(extract_shapes(&labels, &inst).is_err());
    }

    #[test]
    fn resize_cases() {
        let m = map(3, 2, 9, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(resize_labels(&m, 3, 2).unwrap(), m);

        let (a, b) = (1, 4);
        let m = map(2, 2, 9, &[a, a, b, b]);
        let r = resize_labels(&m, 1, 2).unwrap();
        assert_eq!(r.data(), &[a, b]);

        let m = LabelMap::filled(100, 100, 9, 7).unwrap();
        let r = resize_labels(&m, 37, 13).unwrap();
        assert!(r.data().iter().all(|&v| v == 7));
        assert!(resize_labels(&m, 0, 3).is_err());
    }

    #[test]
    fn histogram_cases() {
        let m = LabelMap::from_fn(100, 100, 4, |x, _| if x < 50 { 0 } else { 1 }).unwrap();
        assert_eq!(label_histogram(&m), vec![0.5, 0.5, 0.0, 0.0]);
        let m = LabelMap::filled(8, 8, 5, 3).unwrap();
        assert_eq!(label_histogram(&m), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let m = LabelMap::filled(8, 8, 5, UNLABELED).unwrap();
        assert_eq!(label_histogram(&m), vec![0.0; 5]);
    }

    #[test]
    fn hamming_cases() {
        let a = LabelMap::filled(4, 4, 3, 0).unwrap();
        let b = LabelMap::filled(4, 4, 3, 1).unwrap();
        let half = LabelMap::from_fn(4, 4, 3, |x, _| if x < 2 { 0 } else { 1 }).unwrap();
        assert_eq!(hamming_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming_norm(&a, &b).unwrap(), 1.0);
        assert_eq!(hamming_norm(&a, &half).unwrap(), 0.5);
        let c = LabelMap::filled(4, 5, 3, 0).unwrap();
        assert!(hamming_norm(&a, &c).is_err());
    }

    #[test]
    fn indicator_cases() {
        let m = LabelMap::from_fn(4, 1, 9, |x, _| [2, 7, UNLABELED, 2][x as usize]).unwrap();
        let set = indicator_vector(&m);
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![2, 7]);
        assert!(indicator_vector(&LabelMap::filled(3, 3, 9, UNLABELED).unwrap()).is_empty());
        let only0 = indicator_vector(&LabelMap::filled(3, 3, 9, 0).unwrap());
        assert_eq!(only0.iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn bilinear_identity_is_exact() {
        let img = RgbImage::from_fn(7, 5, |x, y| image::Rgb([x as u8 * 30, y as u8 * 40, 9]));
        assert_eq!(resize_rgb(&img, 7, 5).unwrap(), img);
        let bbox = BBox { row0: 1, col0: 2, rows: 3, cols: 4 };
        let crop = crop_resize_rgb(&img, &bbox, 4, 3);
        assert_eq!(crop.get_pixel(0, 0), img.get_pixel(2, 1));
        assert_eq!(crop.get_pixel(3, 2), img.get_pixel(5, 3));
    }

    fn small_map(n: u16) -> impl Strategy<Value = LabelMap> {
        (1u32..12, 1u32..12).prop_flat_map(move |(w, h)| {
            proptest::collection::vec(prop_oneof![0..n, Just(UNLABELED)], (w * h) as usize)
                .prop_map(move |d| LabelMap::new(w, h, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn shapes_partition_labeled_pixels(m in small_map(4), seed in any::<u64>()) {
            // random instance ids assigned per category so pairing holds
            let inst_data: Vec<u16> = m.data().iter().enumerate().map(|(i, &c)| {
                if c == UNLABELED || (seed >> (c % 60)) & 1 == 0 { 0 } else { c + 1 + ((i as u64 * 7 + seed) % 2) as u16 * 10 }
            }).collect();
            let inst = InstanceMap::new(m.width(), m.height(), inst_data).unwrap();
            let shapes = extract_shapes(&m, &inst).unwrap();
            let mut owner = vec![0usize; m.data().len()];
            for s in &shapes {
                prop_assert!(s.area >= 1);
                prop_assert_eq!(s.area, s.mask.count());
                // tight bbox
                prop_assert!((0..s.bbox.cols).any(|c| s.mask.get(0, c)));
                prop_assert!((0..s.bbox.cols).any(|c| s.mask.get(s.bbox.rows - 1, c)));
                prop_assert!((0..s.bbox.rows).any(|r| s.mask.get(r, 0)));
                prop_assert!((0..s.bbox.rows).any(|r| s.mask.get(r, s.bbox.cols - 1)));
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if s.covers(x, y) {
                            owner[(y * m.width() + x) as usize] += 1;
                            prop_assert_eq!(m.get(x, y), s.category);
                        }
                    }
                }
            }
            for (i, &v) in m.data().iter().enumerate() {
                prop_assert_eq!(owner[i], usize::from(v != UNLABELED));
            }
        }

        #[test]
        fn histogram_sums_to_one(m in small_map(6)) {
            let hist = label_histogram(&m);
            let sum: f64 = hist.iter().sum();
            if m.labeled_count() > 0 {
                prop_assert!((sum - 1.0).abs() <= 1e-9);
            } else {
                prop_assert_eq!(sum, 0.0);
            }
            let ind = indicator_vector(&m);
            for c in 0..6u16 {
                prop_assert_eq!(ind.contains(c), hist[c as usize] > 0.0);
            }
        }

        #[test]
        fn hamming_is_a_metric(
            d in proptest::collection::vec((0u16..3, 0u16..3, 0u16..3), 30)
        ) {
            let a = LabelMap::new(6, 5, 3, d.iter().map(|t| t.0).collect()).unwrap();
            let b = LabelMap::new(6, 5, 3, d.iter().map(|t| t.1).collect()).unwrap();
            let c = LabelMap::new(6, 5, 3, d.iter().map(|t| t.2).collect()).unwrap();
            let ab = hamming_norm(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming_norm(&b, &a).unwrap());
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ab <= hamming_norm(&a, &c).unwrap() + hamming_norm(&c, &b).unwrap() + 1e-12);
        }

        #[test]
        fn resize_adds_no_categories(m in small_map(5), w in 1u32..40, h in 1u32..40) {
            let r = resize_labels(&m, w, h).unwrap();
            let before: std::collections::HashSet<u16> = m.data().iter().copied().collect();
            prop_assert!(r.data().iter().all(|v| before.contains(v)));
        }
    }
}
