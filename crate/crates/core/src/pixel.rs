//! Pixel-level hole filling on 128x128 label maps. Each remaining hole is
//! described by the 11x11 label window around its low-res cell and copied
//! from the best window within a 5x5 cell neighborhood of the top global
//! exemplars.

use std::sync::Arc;

use image::RgbImage;
use log::warn;
use rayon::prelude::*;

use crate::canvas::{Canvas, FillReport, Provenance, Stage};
use crate::error::{invalid, Error, Result};
use crate::index::{ExemplarLibrary, PIXEL_FILL_SIDE};
use crate::raster::{nearest_src, resize_labels, sample_bilinear, LabelMap, BORDER};
use crate::retrieval::GlobalMatch;
use crate::search::{search_key, window_range, SearchKey};

pub const WINDOW_SIDE: u32 = 11;
pub const WINDOW_LEN: usize = (WINDOW_SIDE * WINDOW_SIDE) as usize;
/// Search radius in low-res cells (5x5 neighborhood).
pub const PIXEL_SEARCH_RADIUS: u32 = 2;
const HALF: u32 = WINDOW_SIDE / 2;

/// The 11x11 window centered on (`col`, `row`), row-major, [`BORDER`]
/// outside the map.
pub fn pixel_window(map: &LabelMap, col: u32, row: u32) -> Vec<u16> {
    let mut out = Vec::with_capacity(WINDOW_LEN);
    for dy in 0..WINDOW_SIDE {
        for dx in 0..WINDOW_SIDE {
            let y = row as i64 + dy as i64 - HALF as i64;
            let x = col as i64 + dx as i64 - HALF as i64;
            let inside = x >= 0 && y >= 0 && x < map.width() as i64 && y < map.height() as i64;
            out.push(if inside { map.get(x as u32, y as u32) } else { BORDER });
        }
    }
    out
}

/// Number of equal entries between two windows. Range `[0, 121]`.
pub fn score_window(a: &[u16], b: &[u16]) -> Result<u32> {
    if a.len() != WINDOW_LEN || b.len() != WINDOW_LEN {
        return invalid(format!("pixel windows must have {WINDOW_LEN} entries"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| u32::from(x == y)).sum())
}

/// Label map padded by half a window of [`BORDER`] on every side, so a
/// window is 11 contiguous row slices.
struct Padded {
    width: u32,
    height: u32,
    stride: usize,
    data: Vec<u16>,
}

impl Padded {
    fn new(map: &LabelMap) -> Self {
        let stride = (map.width() + 2 * HALF) as usize;
        let rows = (map.height() + 2 * HALF) as usize;
        let mut data = vec![BORDER; stride * rows];
        for y in 0..map.height() as usize {
            let dst = (y + HALF as usize) * stride + HALF as usize;
            let src = y * map.width() as usize;
            data[dst..dst + map.width() as usize].copy_from_slice(&map.data()[src..src + map.width() as usize]);
        }
        Self { width: map.width(), height: map.height(), stride, data }
    }

    /// Window score between `self` at (`ax`, `ay`) and `other` at (`bx`, `by`).
    #[inline]
    fn score(&self, ax: u32, ay: u32, other: &Padded, bx: u32, by: u32) -> u32 {
        let n = WINDOW_SIDE as usize;
        let mut total = 0;
        for dy in 0..n {
            let a = (ay as usize + dy) * self.stride + ax as usize;
            let b = (by as usize + dy) * other.stride + bx as usize;
            total += self.data[a..a + n]
                .iter()
                .zip(&other.data[b..b + n])
                .map(|(x, y)| u32::from(x == y))
                .sum::<u32>();
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelMatch {
    /// Index into the donor list (global rank order).
    pub rank: usize,
    pub row: u32,
    pub col: u32,
    pub score: u32,
}

/// Best window for query cell (`row`, `col`) over the 5x5 neighborhood of
/// every donor map; `donors[i]` has rank `i`.
pub fn search_pixel_cell(query: &LabelMap, donors: &[&LabelMap], row: u32, col: u32) -> Option<PixelMatch> {
    let q = Padded::new(query);
    let padded: Vec<(usize, Padded)> = donors.iter().map(|m| Padded::new(m)).enumerate().collect();
    let refs: Vec<(usize, &Padded)> = padded.iter().map(|(i, p)| (*i, p)).collect();
    search(&q, &refs, row, col)
}

fn search(query: &Padded, donors: &[(usize, &Padded)], row: u32, col: u32) -> Option<PixelMatch> {
    let mut best: Option<(SearchKey, PixelMatch)> = None;
    for &(rank, map) in donors {
        let rows = window_range(row, PIXEL_SEARCH_RADIUS, map.height.min(query.height));
        for r in rows {
            for c in window_range(col, PIXEL_SEARCH_RADIUS, map.width.min(query.width)) {
                let score = query.score(col, row, map, c, r);
                let key = search_key(score, rank, r as i32 - row as i32, c as i32 - col as i32, r, c);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((key, PixelMatch { rank, row: r, col: c, score }));
                }
            }
        }
    }
    best.map(|(_, m)| m)
}

struct Donor {
    rank: usize,
    exemplar_id: u32,
    image: Arc<RgbImage>,
    lowres: Padded,
}

/// Fills every remaining hole, labeled or not. With at least one readable
/// donor image the canvas is complete afterwards.
pub fn fill_pixels(
    query_labels: &LabelMap,
    top_matches: &[GlobalMatch],
    lib: &ExemplarLibrary,
    canvas: &mut Canvas,
) -> Result<FillReport> {
    if !query_labels.same_size(canvas.image()) {
        return invalid("canvas and query label map differ in size");
    }
    let (w, h) = (canvas.width(), canvas.height());
    let side = PIXEL_FILL_SIDE;
    let mut todo = Vec::new();
    let mut needed = vec![false; (side * side) as usize];
    let cell_cols: Vec<u32> = (0..w).map(|x| nearest_src(x, side, w)).collect();
    let cell_rows: Vec<u32> = (0..h).map(|y| nearest_src(y, side, h)).collect();
    for y in 0..h {
        for x in 0..w {
            if !canvas.is_filled(x, y) {
                todo.push((x, y));
                needed[(cell_rows[y as usize] * side + cell_cols[x as usize]) as usize] = true;
            }
        }
    }
    if todo.is_empty() {
        return Ok(FillReport::default());
    }
    if top_matches.is_empty() {
        return invalid("pixel fill needs at least one donor exemplar");
    }

    let mut donors = Vec::new();
    for (rank, m) in top_matches.iter().enumerate() {
        let Some(rec) = lib.record(m.exemplar_id) else { continue };
        match rec.image() {
            Ok(image) => donors.push(Donor {
                rank,
                exemplar_id: rec.exemplar_id,
                image,
                lowres: Padded::new(&rec.lowres128),
            }),
            Err(e) => warn!("pixel stage skips donor {rank}: {e}"),
        }
    }
    if donors.is_empty() {
        return Err(Error::InvalidInput("no donor exemplar image is readable".into()));
    }

    let query = Padded::new(&resize_labels(query_labels, side, side)?);
    let ranked: Vec<(usize, &Padded)> = donors.iter().map(|d| (d.rank, &d.lowres)).collect();
    let cells: Vec<u32> = (0..side * side).filter(|&i| needed[i as usize]).collect();
    let found: Vec<(u32, Option<PixelMatch>)> = cells
        .par_iter()
        .map(|&i| (i, search(&query, &ranked, i / side, i % side)))
        .collect();
    let mut winners = vec![None; (side * side) as usize];
    for (i, m) in found {
        winners[i as usize] = m;
    }

    let mut report = FillReport::default();
    for (x, y) in todo {
        let (cx, cy) = (cell_cols[x as usize], cell_rows[y as usize]);
        let m = winners[(cy * side + cx) as usize].expect("search window is never empty");
        let donor = donors.iter().find(|d| d.rank == m.rank).expect("winner is a donor");
        let (ew, eh) = donor.image.dimensions();
        // keep the pixel's fractional position inside its low-res cell
        let fx = (x as f64 + 0.5) * side as f64 / w as f64 - cx as f64;
        let fy = (y as f64 + 0.5) * side as f64 / h as f64 - cy as f64;
        let ex = (m.col as f64 + fx) * ew as f64 / side as f64;
        let ey = (m.row as f64 + fy) * eh as f64 / side as f64;
        let prov = Provenance {
            stage: Stage::Pixel,
            exemplar_id: donor.exemplar_id,
            donor_x: (ex.floor() as u32).min(ew - 1),
            donor_y: (ey.floor() as u32).min(eh - 1),
        };
        if canvas.fill(x, y, sample_bilinear(&donor.image, ex - 0.5, ey - 0.5), prov) {
            report.written += 1;
        }
    }
    Ok(report)
}
