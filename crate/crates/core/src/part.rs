//! Part-level synthesis. Query and candidate shapes are resampled to a
//! 256x256 label frame cut into a 16x16 grid of 16x16 patches; each patch is
//! described by its own labels plus those of its 8 neighbors. Holes left by
//! the shape stage are filled patch by patch from the best-matching
//! candidate patch within a 5x5 grid neighborhood.

use std::sync::Arc;

use image::RgbImage;
use log::warn;
use rayon::prelude::*;

use crate::canvas::{Canvas, FillReport, Provenance, Stage};
use crate::error::{invalid, Result};
use crate::index::ExemplarLibrary;
use crate::raster::{crop_resize_labels, nearest_src, sample_bilinear, BBox, LabelMap, ShapeInstance, BORDER};
use crate::search::{search_key, window_range, SearchKey};
use crate::shape::CandidateSet;

pub const FRAME_SIDE: u32 = 256;
pub const PATCH_SIDE: u32 = 16;
pub const GRID_SIDE: u32 = FRAME_SIDE / PATCH_SIDE;
pub const PATCH_LEN: usize = (PATCH_SIDE * PATCH_SIDE) as usize;
pub const DESCRIPTOR_LEN: usize = 9 * PATCH_LEN;
/// Search radius in grid cells (5x5 neighborhood).
pub const PART_SEARCH_RADIUS: u32 = 2;

/// Grid offsets of the patches in a descriptor: center, N, NE, E, SE, S,
/// SW, W, NW.
pub const NEIGHBORS: [(i32, i32); 9] =
    [(0, 0), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartGrid {
    frame: Vec<u16>,
    descriptors: Vec<u16>,
}

impl PartGrid {
    /// The 256x256 resampled label frame, row-major.
    pub fn frame(&self) -> &[u16] {
        &self.frame
    }

    pub fn descriptor(&self, row: u32, col: u32) -> &[u16] {
        let start = (row * GRID_SIDE + col) as usize * DESCRIPTOR_LEN;
        &self.descriptors[start..start + DESCRIPTOR_LEN]
    }
}

pub fn build_part_grid(shape: &ShapeInstance, labels: &LabelMap) -> Result<PartGrid> {
    if !shape.bbox.fits_in(labels.width(), labels.height()) {
        return invalid(format!("shape {} bbox {:?} outside label map", shape.shape_id, shape.bbox));
    }
    Ok(grid_from_frame(crop_resize_labels(labels, &shape.bbox, FRAME_SIDE, FRAME_SIDE)))
}

fn grid_from_frame(frame: Vec<u16>) -> PartGrid {
    let cells = (GRID_SIDE * GRID_SIDE) as usize;
    let mut descriptors = vec![BORDER; cells * DESCRIPTOR_LEN];
    let fs = FRAME_SIDE as usize;
    let ps = PATCH_SIDE as usize;
    for gr in 0..GRID_SIDE as i32 {
        for gc in 0..GRID_SIDE as i32 {
            let base = (gr as usize * GRID_SIDE as usize + gc as usize) * DESCRIPTOR_LEN;
            for (k, &(dr, dc)) in NEIGHBORS.iter().enumerate() {
                let (nr, nc) = (gr + dr, gc + dc);
                if nr < 0 || nc < 0 || nr >= GRID_SIDE as i32 || nc >= GRID_SIDE as i32 {
                    continue;
                }
                for py in 0..ps {
                    let src = (nr as usize * ps + py) * fs + nc as usize * ps;
                    let dst = base + k * PATCH_LEN + py * ps;
                    descriptors[dst..dst + ps].copy_from_slice(&frame[src..src + ps]);
                }
            }
        }
    }
    PartGrid { frame, descriptors }
}

/// Number of positions holding equal values. Range `[0, 2304]`.
pub fn score_patch(a: &[u16], b: &[u16]) -> Result<u32> {
    if a.len() != DESCRIPTOR_LEN || b.len() != DESCRIPTOR_LEN {
        return invalid(format!(
            "patch descriptors must have {DESCRIPTOR_LEN} entries, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    Ok(count_equal(a, b))
}

#[inline]
fn count_equal(a: &[u16], b: &[u16]) -> u32 {
    a.iter().zip(b).map(|(x, y)| u32::from(x == y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartMatch {
    pub candidate_rank: usize,
    pub row: u32,
    pub col: u32,
    pub score: u32,
}

/// Best patch for query cell (`row`, `col`) over the 5x5 neighborhood of
/// every candidate grid; `candidates[i]` has rank `i`.
pub fn search_cell(query: &PartGrid, candidates: &[&PartGrid], row: u32, col: u32) -> Option<PartMatch> {
    let ranked: Vec<(usize, &PartGrid)> = candidates.iter().copied().enumerate().collect();
    search_ranked(query, &ranked, row, col)
}

fn search_ranked(query: &PartGrid, candidates: &[(usize, &PartGrid)], row: u32, col: u32) -> Option<PartMatch> {
    let q = query.descriptor(row, col);
    let mut best: Option<(SearchKey, PartMatch)> = None;
    for &(rank, grid) in candidates {
        for r in window_range(row, PART_SEARCH_RADIUS, GRID_SIDE) {
            for c in window_range(col, PART_SEARCH_RADIUS, GRID_SIDE) {
                let score = count_equal(q, grid.descriptor(r, c));
                let key = search_key(score, rank, r as i32 - row as i32, c as i32 - col as i32, r, c);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((key, PartMatch { candidate_rank: rank, row: r, col: c, score }));
                }
            }
        }
    }
    best.map(|(_, m)| m)
}

struct Donor {
    rank: usize,
    exemplar_id: u32,
    bbox: BBox,
    image: Arc<RgbImage>,
    grid: PartGrid,
}

/// Fills the query shape's still-empty pixels from the candidates' parts.
/// Only grid cells containing such pixels are searched, and only empty
/// in-mask pixels are written.
pub fn fill_parts(
    query_shape: &ShapeInstance,
    query_labels: &LabelMap,
    candidate_set: &CandidateSet,
    lib: &ExemplarLibrary,
    canvas: &mut Canvas,
) -> Result<FillReport> {
    if candidate_set.is_empty() {
        return Ok(FillReport::default());
    }
    let qb = query_shape.bbox;
    if !qb.fits_in(canvas.width(), canvas.height()) {
        return invalid("query shape lies outside the canvas");
    }
    let frame_rows: Vec<u32> = (0..qb.rows).map(|r| nearest_src(r, FRAME_SIDE, qb.rows)).collect();
    let frame_cols: Vec<u32> = (0..qb.cols).map(|c| nearest_src(c, FRAME_SIDE, qb.cols)).collect();

    let mut todo = Vec::new();
    let mut needed = vec![false; (GRID_SIDE * GRID_SIDE) as usize];
    for r in 0..qb.rows {
        for c in 0..qb.cols {
            if query_shape.mask.get(r, c) && !canvas.is_filled(qb.col0 + c, qb.row0 + r) {
                todo.push((r, c));
                let cell = (frame_rows[r as usize] / PATCH_SIDE) * GRID_SIDE + frame_cols[c as usize] / PATCH_SIDE;
                needed[cell as usize] = true;
            }
        }
    }
    if todo.is_empty() {
        return Ok(FillReport::default());
    }

    let mut donors = Vec::new();
    for (rank, cand) in candidate_set.candidates.iter().enumerate() {
        let Some(rec) = lib.record(cand.exemplar_id) else { continue };
        let Some(shape) = rec.shapes.get(cand.shape_id as usize) else { continue };
        let image = match rec.image() {
            Ok(img) => img,
            Err(e) => {
                warn!("part stage skips candidate {rank}: {e}");
                continue;
            }
        };
        donors.push(Donor {
            rank,
            exemplar_id: rec.exemplar_id,
            bbox: shape.bbox,
            image,
            grid: build_part_grid(shape, &rec.labels)?,
        });
    }
    if donors.is_empty() {
        return Ok(FillReport::default());
    }

    let query = build_part_grid(query_shape, query_labels)?;
    let ranked: Vec<(usize, &PartGrid)> = donors.iter().map(|d| (d.rank, &d.grid)).collect();
    let cells: Vec<u32> = (0..GRID_SIDE * GRID_SIDE).filter(|&i| needed[i as usize]).collect();
    let found: Vec<(u32, Option<PartMatch>)> = cells
        .par_iter()
        .map(|&i| (i, search_ranked(&query, &ranked, i / GRID_SIDE, i % GRID_SIDE)))
        .collect();
    let mut winners = vec![None; (GRID_SIDE * GRID_SIDE) as usize];
    for (i, m) in found {
        winners[i as usize] = m;
    }

    let scale_r = FRAME_SIDE as f64 / qb.rows as f64;
    let scale_c = FRAME_SIDE as f64 / qb.cols as f64;
    let mut report = FillReport::default();
    for (r, c) in todo {
        let (gr, gc) = (frame_rows[r as usize] / PATCH_SIDE, frame_cols[c as usize] / PATCH_SIDE);
        let Some(m) = winners[(gr * GRID_SIDE + gc) as usize] else { continue };
        let donor = donors.iter().find(|d| d.rank == m.candidate_rank).expect("winner is a donor");
        let cb = donor.bbox;
        // continuous position in the donor's frame, same offset inside the cell
        let fy = (r as f64 + 0.5) * scale_r + (m.row as f64 - gr as f64) * PATCH_SIDE as f64;
        let fx = (c as f64 + 0.5) * scale_c + (m.col as f64 - gc as f64) * PATCH_SIDE as f64;
        let ey = fy * cb.rows as f64 / FRAME_SIDE as f64;
        let ex = fx * cb.cols as f64 / FRAME_SIDE as f64;
        let rgb = sample_bilinear(&donor.image, cb.col0 as f64 + ex - 0.5, cb.row0 as f64 + ey - 0.5);
        let prov = Provenance {
            stage: Stage::Part,
            exemplar_id: donor.exemplar_id,
            donor_x: cb.col0 + (ex.floor() as u32).min(cb.cols - 1),
            donor_y: cb.row0 + (ey.floor() as u32).min(cb.rows - 1),
        };
        if canvas.fill(qb.col0 + c, qb.row0 + r, rgb, prov) {
            report.written += 1;
        }
    }
    Ok(report)
}
