//! Shared fixtures and brute-force oracles for the integration tests. The
//! oracles work on raw label maps with their own resampling and search
//! loops and do not call the engine's scoring code.

#![allow(dead_code)]

use labelsynth::index::ExemplarLibrary;
use labelsynth::raster::{LabelMap, ShapeInstance, BORDER};
use labelsynth::toygen::{category_names, generate_scenes, library_from_scenes, Scene, ToySpec};

pub fn toy(scenes: u32, categories: u16, size: u32, seed: u64, cliques: Option<u16>) -> ToySpec {
    ToySpec { scenes, categories, size, seed, cliques }
}

/// Scenes plus an in-memory library over them with `extra` unused
/// category names appended.
pub fn toy_library(spec: &ToySpec, extra: u16) -> (Vec<Scene>, ExemplarLibrary) {
    let scenes = generate_scenes(spec).expect("toy scenes");
    let lib = library_from_scenes(&scenes, category_names(spec.categories + extra)).expect("toy library");
    (scenes, lib)
}

/// Re-tags a scene's label map with a larger category count.
pub fn widen(labels: &LabelMap, num_categories: u16) -> LabelMap {
    LabelMap::new(labels.width(), labels.height(), num_categories, labels.data().to_vec()).unwrap()
}

/// Center-of-cell nearest source index, computed in floating point.
pub fn nn(d: u32, src_len: u32, dst_len: u32) -> u32 {
    ((d as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as u32
}

pub fn resample(labels: &LabelMap, row0: u32, col0: u32, rows: u32, cols: u32, out_h: u32, out_w: u32) -> Vec<u16> {
    let mut out = Vec::new();
    for y in 0..out_h {
        for x in 0..out_w {
            out.push(labels.get(col0 + nn(x, cols, out_w), row0 + nn(y, rows, out_h)));
        }
    }
    out
}

// ---- shape matching oracle ----

pub fn shape_descriptor(shape: &ShapeInstance, labels: &LabelMap, side: u32) -> (Vec<i64>, Vec<u16>) {
    let b = shape.bbox;
    let mut mask = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let on = shape.covers(b.col0 + nn(x, b.cols, side), b.row0 + nn(y, b.rows, side));
            mask.push(if on { 1 } else { -1 });
        }
    }
    (mask, resample(labels, b.row0, b.col0, b.rows, b.cols, side, side))
}

pub fn shape_score(a: &(Vec<i64>, Vec<u16>), b: &(Vec<i64>, Vec<u16>)) -> i64 {
    let mut s = 0;
    for i in 0..a.0.len() {
        s += a.0[i] * b.0[i];
        if a.1[i] == b.1[i] {
            s += 1;
        }
    }
    s
}

/// Exhaustive candidate list: (score, exemplar_id, shape_id), best first.
pub fn brute_candidates(
    query: &ShapeInstance,
    query_labels: &LabelMap,
    exemplar_ids: &[u32],
    lib: &ExemplarLibrary,
    k: usize,
    side: u32,
) -> Vec<(i64, u32, u32)> {
    let qd = shape_descriptor(query, query_labels, side);
    let q_aspect = query.bbox.cols as f64 / query.bbox.rows as f64;
    let mut all = Vec::new();
    for &e in exemplar_ids {
        let rec = lib.record(e).unwrap();
        for s in &rec.shapes {
            let aspect = s.bbox.cols as f64 / s.bbox.rows as f64;
            let ratio = q_aspect / aspect;
            if s.category != query.category || !(0.5..=2.0).contains(&ratio) {
                continue;
            }
            all.push((shape_score(&qd, &shape_descriptor(s, &rec.labels, side)), e, s.shape_id));
        }
    }
    all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.truncate(k);
    all
}

// ---- part search oracle ----

pub const FRAME: u32 = 256;
pub const CELL: u32 = 16;
pub const CELLS: i64 = 16;

pub fn part_frame(shape: &ShapeInstance, labels: &LabelMap) -> Vec<u16> {
    let b = shape.bbox;
    resample(labels, b.row0, b.col0, b.rows, b.cols, FRAME, FRAME)
}

/// 3x3 patch block around a cell, BORDER outside the grid, center first.
pub fn part_descriptor(frame: &[u16], row: i64, col: i64) -> Vec<u16> {
    let order = [(0, 0), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];
    let mut out = Vec::new();
    for (dr, dc) in order {
        let (r, c) = (row + dr, col + dc);
        for py in 0..CELL as i64 {
            for px in 0..CELL as i64 {
                if r < 0 || c < 0 || r >= CELLS || c >= CELLS {
                    out.push(BORDER);
                } else {
                    let y = r * CELL as i64 + py;
                    let x = c * CELL as i64 + px;
                    out.push(frame[(y * FRAME as i64 + x) as usize]);
                }
            }
        }
    }
    out
}

fn equal_count(a: &[u16], b: &[u16]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as u32
}

/// Every (candidate, offset) pair; returns (score, rank, row, col) of the
/// winner under score desc, rank, squared offset, row, col.
pub fn brute_part_search(query: &[u16], candidates: &[Vec<u16>], row: i64, col: i64) -> (u32, usize, u32, u32) {
    let q = part_descriptor(query, row, col);
    let mut all = Vec::new();
    for (rank, frame) in candidates.iter().enumerate() {
        for dr in -2..=2i64 {
            for dc in -2..=2i64 {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 || r >= CELLS || c >= CELLS {
                    continue;
                }
                let s = equal_count(&q, &part_descriptor(frame, r, c));
                all.push((std::cmp::Reverse(s), rank, dr * dr + dc * dc, r as u32, c as u32));
            }
        }
    }
    let best = all.into_iter().min().unwrap();
    (best.0 .0, best.1, best.3, best.4)
}

// ---- pixel search oracle ----

pub fn window(map: &LabelMap, col: i64, row: i64) -> Vec<u16> {
    let mut out = Vec::new();
    for y in row - 5..=row + 5 {
        for x in col - 5..=col + 5 {
            if x < 0 || y < 0 || x >= map.width() as i64 || y >= map.height() as i64 {
                out.push(BORDER);
            } else {
                out.push(map.get(x as u32, y as u32));
            }
        }
    }
    out
}

pub fn brute_pixel_search(query: &LabelMap, donors: &[&LabelMap], row: i64, col: i64) -> (u32, usize, u32, u32) {
    let q = window(query, col, row);
    let mut all = Vec::new();
    for (rank, d) in donors.iter().enumerate() {
        for dr in -2..=2i64 {
            for dc in -2..=2i64 {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 || r >= d.height() as i64 || c >= d.width() as i64 {
                    continue;
                }
                let s = equal_count(&q, &window(d, c, r));
                all.push((std::cmp::Reverse(s), rank, dr * dr + dc * dc, r as u32, c as u32));
            }
        }
    }
    let best = all.into_iter().min().unwrap();
    (best.0 .0, best.1, best.3, best.4)
}

pub fn lowres(labels: &LabelMap, side: u32) -> LabelMap {
    let data = resample(labels, 0, 0, labels.height(), labels.width(), side, side);
    LabelMap::new(side, side, labels.num_categories(), data).unwrap()
}

// ---- global retrieval oracle ----

/// (exemplar_id, combined) for every related exemplar, best first; the
/// whole library when none is related.
pub fn brute_top_n(query: &LabelMap, lib: &ExemplarLibrary, n: usize) -> (Vec<(u32, f64)>, usize) {
    let n_c = lib.num_categories() as usize;
    let present = |m: &LabelMap| {
        let mut p = vec![false; n_c];
        for &v in m.data() {
            if (v as usize) < n_c {
                p[v as usize] = true;
            }
        }
        p
    };
    let hist = |m: &LabelMap| {
        let mut h = vec![0f64; n_c];
        let mut total = 0f64;
        for &v in m.data() {
            if (v as usize) < n_c {
                h[v as usize] += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            h.iter_mut().for_each(|x| *x /= total);
        }
        h
    };
    let qp = present(query);
    let qh = hist(query);
    let ql = lowres(query, 100);
    let subset = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !x || *y);
    let mut survivors: Vec<u32> = lib
        .records()
        .iter()
        .filter(|r| {
            let p = present(&r.labels);
            subset(&qp, &p) || subset(&p, &qp)
        })
        .map(|r| r.exemplar_id)
        .collect();
    let count = survivors.len();
    if survivors.is_empty() {
        survivors = (0..lib.len() as u32).collect();
    }
    let mut scored: Vec<(u32, f64)> = survivors
        .into_iter()
        .map(|id| {
            let r = lib.record(id).unwrap();
            let eh = hist(&r.labels);
            let g = qh.iter().zip(&eh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let el = lowres(&r.labels, 100);
            let diff = ql.data().iter().zip(el.data()).filter(|(a, b)| a != b).count();
            (id, g + diff as f64 / 10_000.0)
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    (scored, count)
}
