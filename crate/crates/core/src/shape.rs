//! Shape-level matching. Each shape becomes a fixed-size filter holding a
//! mask operator (+1 inside the shape, -1 elsewhere) and a contextual
//! operator (the surrounding label ids). Exemplar shapes of the same
//! category are scored against the query shape, and the winner's pixels
//! are copied where both masks overlap.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, FillReport, Provenance, Stage};
use crate::error::{invalid, Result};
use crate::index::ExemplarLibrary;
use crate::raster::{
    bilinear_src, crop_resize_labels, nearest_src, sample_bilinear, LabelMap, ShapeInstance,
};
use crate::retrieval::GlobalMatch;

pub const DEFAULT_FILTER_SIDE: u32 = 50;

/// Candidates are dropped when query aspect / candidate aspect leaves
/// `[MIN_ASPECT_QUOTIENT, MAX_ASPECT_QUOTIENT]`.
pub const MIN_ASPECT_QUOTIENT: f64 = 0.5;
pub const MAX_ASPECT_QUOTIENT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDescriptor {
    side: u32,
    mask: Vec<i8>,
    context: Vec<u16>,
    aspect: f64,
}

impl ShapeDescriptor {
    /// Builds a descriptor from raw operators; used by tests and oracles.
    pub fn from_parts(side: u32, mask: Vec<i8>, context: Vec<u16>, aspect: f64) -> Result<Self> {
        let n = side as usize * side as usize;
        if side == 0 || mask.len() != n || context.len() != n {
            return invalid("descriptor operators must both hold side^2 values");
        }
        if mask.iter().any(|&m| m != 1 && m != -1) {
            return invalid("mask operator values must be +1 or -1");
        }
        Ok(Self { side, mask, context, aspect })
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn mask(&self) -> &[i8] {
        &self.mask
    }

    pub fn context(&self) -> &[u16] {
        &self.context
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }
}

pub fn build_descriptor(shape: &ShapeInstance, labels: &LabelMap, side: u32) -> Result<ShapeDescriptor> {
    if side == 0 {
        return invalid("filter side must be positive");
    }
    if !shape.bbox.fits_in(labels.width(), labels.height()) {
        return invalid(format!("shape {} bbox {:?} outside label map", shape.shape_id, shape.bbox));
    }
    let resized = shape.mask.resized(side, side);
    let mask = resized.bits().iter().map(|&on| if on { 1 } else { -1 }).collect();
    let context = crop_resize_labels(labels, &shape.bbox, side, side);
    Ok(ShapeDescriptor { side, mask, context, aspect: shape.aspect() })
}

/// Sum over filter cells of the mask product plus one for every equal
/// context label. Range `[-side^2, 2 side^2]`.
pub fn score_shape(a: &ShapeDescriptor, b: &ShapeDescriptor) -> Result<i64> {
    if a.side != b.side {
        return invalid(format!("descriptor sides differ: {} vs {}", a.side, b.side));
    }
    let mask: i64 = a.mask.iter().zip(&b.mask).map(|(&x, &y)| (x * y) as i64).sum();
    let context = a.context.iter().zip(&b.context).filter(|(x, y)| x == y).count() as i64;
    Ok(mask + context)
}

pub fn aspect_compatible(query_aspect: f64, candidate_aspect: f64) -> bool {
    let q = query_aspect / candidate_aspect;
    (MIN_ASPECT_QUOTIENT..=MAX_ASPECT_QUOTIENT).contains(&q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub exemplar_id: u32,
    pub shape_id: u32,
    pub score: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_shape_id: u32,
    /// Best first; ties by (exemplar_id, shape_id).
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

pub fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .cmp(&a.score)
        .then(a.exemplar_id.cmp(&b.exemplar_id))
        .then(a.shape_id.cmp(&b.shape_id))
}

/// Scores every same-category shape of the top exemplars that passes the
/// aspect gate and keeps the best `k`.
pub fn retrieve_candidates(
    query_shape: &ShapeInstance,
    query_labels: &LabelMap,
    top_exemplars: &[GlobalMatch],
    lib: &ExemplarLibrary,
    k: usize,
    side: u32,
) -> Result<CandidateSet> {
    if k == 0 {
        return invalid("top_k must be >= 1");
    }
    let query = build_descriptor(query_shape, query_labels, side)?;
    let pool: Vec<(u32, &LabelMap, &ShapeInstance)> = top_exemplars
        .iter()
        .filter_map(|m| lib.record(m.exemplar_id))
        .flat_map(|rec| {
            rec.shapes
                .iter()
                .filter(|s| s.category == query_shape.category && aspect_compatible(query.aspect, s.aspect()))
                .map(move |s| (rec.exemplar_id, &rec.labels, s))
        })
        .collect();
    let mut candidates = pool
        .par_iter()
        .map(|&(exemplar_id, labels, s)| {
            let d = build_descriptor(s, labels, side)?;
            Ok(Candidate { exemplar_id, shape_id: s.shape_id, score: score_shape(&query, &d)? })
        })
        .collect::<Result<Vec<_>>>()?;
    candidates.sort_by(candidate_order);
    candidates.truncate(k);
    Ok(CandidateSet { query_shape_id: query_shape.shape_id, candidates })
}

/// Copies the candidate's pixels into the query shape wherever both masks
/// are active and the canvas is still empty.
pub fn transfer_shape_rgb(
    query_shape: &ShapeInstance,
    candidate: &Candidate,
    lib: &ExemplarLibrary,
    canvas: &mut Canvas,
) -> Result<FillReport> {
    let Some(rec) = lib.record(candidate.exemplar_id) else {
        return invalid(format!("unknown exemplar {}", candidate.exemplar_id));
    };
    let Some(cshape) = rec.shapes.get(candidate.shape_id as usize) else {
        return invalid(format!("exemplar {} has no shape {}", candidate.exemplar_id, candidate.shape_id));
    };
    let qb = query_shape.bbox;
    if !qb.fits_in(canvas.width(), canvas.height()) {
        return invalid("query shape lies outside the canvas");
    }
    let img = rec.image()?;
    let cb = cshape.bbox;
    let cols: Vec<(u32, f64)> = (0..qb.cols)
        .map(|c| (nearest_src(c, cb.cols, qb.cols), bilinear_src(c, cb.col0, cb.cols, qb.cols)))
        .collect();
    let mut report = FillReport::default();
    for r in 0..qb.rows {
        let mr = nearest_src(r, cb.rows, qb.rows);
        let sy = bilinear_src(r, cb.row0, cb.rows, qb.rows);
        let y = qb.row0 + r;
        for (c, &(mc, sx)) in cols.iter().enumerate() {
            let c = c as u32;
            let x = qb.col0 + c;
            if !query_shape.mask.get(r, c) || !cshape.mask.get(mr, mc) || canvas.is_filled(x, y) {
                continue;
            }
            let prov = Provenance {
                stage: Stage::Shape,
                exemplar_id: rec.exemplar_id,
                donor_x: cb.col0 + mc,
                donor_y: cb.row0 + mr,
            };
            if canvas.fill(x, y, sample_bilinear(&img, sx, sy), prov) {
                report.written += 1;
            }
        }
    }
    Ok(report)
}

/// [`transfer_shape_rgb`], downgrading an unreadable exemplar image to a
/// warning and an empty report.
pub fn transfer_or_skip(
    query_shape: &ShapeInstance,
    candidate: &Candidate,
    lib: &ExemplarLibrary,
    canvas: &mut Canvas,
) -> Result<FillReport> {
    match transfer_shape_rgb(query_shape, candidate, lib, canvas) {
        Err(crate::Error::ImageUnavailable { exemplar_id, reason }) => {
            warn!("skipping candidate from exemplar {exemplar_id}: {reason}");
            Ok(FillReport::default())
        }
        other => other,
    }
}
