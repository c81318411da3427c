//! Edits on a paired label/instance map. Every edit returns the inverse
//! edit that restores the maps exactly.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::ExemplarLibrary;
use crate::raster::{extract_shapes, validate_pair, InstanceMap, LabelMap, Mask, UNLABELED};

/// Where an inserted shape comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum ShapeOrigin {
    Library { exemplar_id: u32, shape_id: u32 },
    Query { shape_id: u32 },
}

/// Prior label and instance ids of the pixels an edit overwrote.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPatch {
    /// `(x, y, label, instance)` per pixel.
    pub pixels: Vec<(u32, u32, u16, u16)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneEdit {
    /// Places a shape's mask scaled by `scale` with its top-left corner at
    /// (`left`, `top`); the part outside the image is clipped.
    InsertShape { origin: ShapeOrigin, top: i64, left: i64, scale: f64 },
    /// Clears a shape to unlabeled. With `restore`, the patch is written
    /// back first and only uncovered shape pixels are cleared.
    DeleteShape {
        shape_id: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restore: Option<RegionPatch>,
    },
    MoveShape { shape_id: u32, dx: i64, dy: i64 },
    /// Scales a shape about its bounding-box center.
    ScaleShape { shape_id: u32, factor: f64 },
    /// Paints every pixel whose center lies inside the polygon (even-odd
    /// rule). Vertices are `[x, y]`. `category` may be the unlabeled id.
    PaintLabel { polygon: Vec<[f64; 2]>, category: u16 },
    /// Writes the recorded pixels back; the inverse of non-insert edits.
    Restore { patch: RegionPatch },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub labels: LabelMap,
    pub instances: InstanceMap,
    /// Applying this to the outcome restores the input maps.
    pub inverse: SceneEdit,
    pub changed: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidEdit(msg.into())
}

struct Maps {
    labels: Vec<u16>,
    instances: Vec<u16>,
    width: u32,
    height: u32,
    patch: RegionPatch,
}

impl Maps {
    fn write(&mut self, x: u32, y: u32, label: u16, instance: u16) {
        let i = (y * self.width + x) as usize;
        self.patch.pixels.push((x, y, self.labels[i], self.instances[i]));
        self.labels[i] = label;
        self.instances[i] = instance;
    }

    /// Writes `mask` with top-left at (`left`, `top`), clipped. Returns the
    /// number of pixels that landed inside the image.
    fn stamp(&mut self, mask: &Mask, top: i64, left: i64, label: u16, instance: u16) -> usize {
        let mut n = 0;
        for r in 0..mask.rows() {
            for c in 0..mask.cols() {
                let (y, x) = (top + r as i64, left + c as i64);
                if mask.get(r, c) && x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
                    self.write(x as u32, y as u32, label, instance);
                    n += 1;
                }
            }
        }
        n
    }
}

fn scaled_side(side: u32, factor: f64) -> u32 {
    ((side as f64 * factor).round() as u32).max(1)
}

fn check_factor(f: f64) -> Result<()> {
    if f.is_finite() && f > 0.0 {
        Ok(())
    } else {
        Err(bad(format!("scale factor must be positive, got {f}")))
    }
}

fn apply_patch(m: &mut Maps, patch: &RegionPatch, n_c: u16) -> Result<()> {
    for &(x, y, label, inst) in &patch.pixels {
        if x >= m.width || y >= m.height {
            return Err(bad(format!("patch pixel ({x}, {y}) outside the image")));
        }
        if label != UNLABELED && label >= n_c {
            return Err(bad(format!("patch label {label} out of range")));
        }
        m.write(x, y, label, inst);
    }
    Ok(())
}

fn point_in_polygon(px: f64, py: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let ([xi, yi], [xj, yj]) = (poly[i], poly[j]);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn apply_edit(
    labels: &LabelMap,
    instances: &InstanceMap,
    edit: &SceneEdit,
    lib: Option<&ExemplarLibrary>,
) -> Result<EditOutcome> {
    validate_pair(labels, instances)?;
    let shapes = extract_shapes(labels, instances)?;
    let shape_at = |id: u32| shapes.get(id as usize).ok_or_else(|| bad(format!("unknown shape {id}")));
    let mut m = Maps {
        labels: labels.data().to_vec(),
        instances: instances.data().to_vec(),
        width: labels.width(),
        height: labels.height(),
        patch: RegionPatch::default(),
    };
    let n_c = labels.num_categories();

    // Some(id) when the edit created a new instance whose shape the inverse deletes.
    let mut created: Option<u16> = None;
    match edit {
        SceneEdit::InsertShape { origin, top, left, scale } => {
            check_factor(*scale)?;
            let src = match origin {
                ShapeOrigin::Query { shape_id } => shape_at(*shape_id)?,
                ShapeOrigin::Library { exemplar_id, shape_id } => lib
                    .ok_or_else(|| bad("no library to insert from"))?
                    .record(*exemplar_id)
                    .and_then(|r| r.shapes.get(*shape_id as usize))
                    .ok_or_else(|| bad(format!("unknown library shape {exemplar_id}/{shape_id}")))?,
            };
            if src.category >= n_c {
                return Err(bad(format!("category {} outside the query's {n_c}", src.category)));
            }
            let max = instances.max_id();
            if max == u16::MAX {
                return Err(bad("no free instance id"));
            }
            let fresh = max + 1;
            let mask = src.mask.resized(scaled_side(src.bbox.rows, *scale), scaled_side(src.bbox.cols, *scale));
            if m.stamp(&mask, *top, *left, src.category, fresh) == 0 {
                return Err(bad("inserted shape lies entirely outside the image"));
            }
            created = Some(fresh);
        }
        SceneEdit::DeleteShape { shape_id, restore } => {
            let s = shape_at(*shape_id)?;
            match restore {
                Some(patch) => {
                    apply_patch(&mut m, patch, n_c)?;
                    let restored: HashSet<(u32, u32)> = patch.pixels.iter().map(|p| (p.0, p.1)).collect();
                    // shape pixels the patch does not cover become unlabeled
                    for y in s.bbox.row0..s.bbox.row0 + s.bbox.rows {
                        for x in s.bbox.col0..s.bbox.col0 + s.bbox.cols {
                            if s.covers(x, y) && !restored.contains(&(x, y)) {
                                m.write(x, y, UNLABELED, 0);
                            }
                        }
                    }
                }
                None => {
                    m.stamp(&s.mask, s.bbox.row0 as i64, s.bbox.col0 as i64, UNLABELED, 0);
                }
            }
        }
        SceneEdit::MoveShape { shape_id, dx, dy } => {
            let s = shape_at(*shape_id)?;
            m.stamp(&s.mask, s.bbox.row0 as i64, s.bbox.col0 as i64, UNLABELED, 0);
            if m.stamp(&s.mask, s.bbox.row0 as i64 + dy, s.bbox.col0 as i64 + dx, s.category, s.instance_id) == 0 {
                return Err(bad("moved shape lies entirely outside the image"));
            }
        }
        SceneEdit::ScaleShape { shape_id, factor } => {
            check_factor(*factor)?;
            let s = shape_at(*shape_id)?;
            let (rows, cols) = (scaled_side(s.bbox.rows, *factor), scaled_side(s.bbox.cols, *factor));
            let top = s.bbox.row0 as i64 + s.bbox.rows as i64 / 2 - rows as i64 / 2;
            let left = s.bbox.col0 as i64 + s.bbox.cols as i64 / 2 - cols as i64 / 2;
            m.stamp(&s.mask, s.bbox.row0 as i64, s.bbox.col0 as i64, UNLABELED, 0);
            m.stamp(&s.mask.resized(rows, cols), top, left, s.category, s.instance_id);
        }
        SceneEdit::PaintLabel { polygon, category } => {
            if *category != UNLABELED && *category >= n_c {
                return Err(bad(format!("category {category} outside the query's {n_c}")));
            }
            if polygon.iter().flatten().any(|v| !v.is_finite()) {
                return Err(bad("polygon vertices must be finite"));
            }
            // fewer than three vertices enclose no pixel center
            let polygon: &[[f64; 2]] = if polygon.len() < 3 { &[] } else { polygon };
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for &[x, y] in polygon {
                (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
            }
            let clamp = |v: f64, len: u32| v.floor().clamp(0.0, len as f64) as u32;
            for y in clamp(y0, m.height)..clamp(y1 + 1.0, m.height) {
                for x in clamp(x0, m.width)..clamp(x1 + 1.0, m.width) {
                    if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, polygon) {
                        m.write(x, y, *category, 0);
                    }
                }
            }
        }
        SceneEdit::Restore { patch } => apply_patch(&mut m, patch, n_c)?,
    }

    // Restore records must be first-touch values; later writes to the same
    // pixel keep the earliest prior value.
    let mut seen = HashSet::new();
    let mut patch = RegionPatch::default();
    for p in m.patch.pixels.iter().copied() {
        if seen.insert((p.0, p.1)) {
            patch.pixels.push(p);
        }
    }
    let changed = patch
        .pixels
        .iter()
        .filter(|&&(x, y, l, i)| {
            let k = (y * m.width + x) as usize;
            m.labels[k] != l || m.instances[k] != i
        })
        .count();

    let new_labels = LabelMap::new(m.width, m.height, n_c, m.labels)?;
    let new_instances = InstanceMap::new(m.width, m.height, m.instances)?;
    validate_pair(&new_labels, &new_instances)
        .map_err(|e| bad(format!("edit leaves an inconsistent instance map: {e}")))?;

    let inverse = match created {
        Some(fresh) => {
            let new_shapes = extract_shapes(&new_labels, &new_instances)?;
            let id = new_shapes
                .iter()
                .find(|s| s.instance_id == fresh)
                .map(|s| s.shape_id)
                .expect("inserted instance has at least one pixel");
            SceneEdit::DeleteShape { shape_id: id, restore: Some(patch) }
        }
        None => SceneEdit::Restore { patch },
    };
    Ok(EditOutcome { labels: new_labels, instances: new_instances, inverse, changed })
}
