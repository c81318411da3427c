//! Evaluation of composites: reconstruction accuracy against a library
//! exemplar, per-stage coverage, and label agreement of donors.

use serde::{Deserialize, Serialize};

use crate::canvas::Stage;
use crate::compositor::{synthesize, Composite, SynthesisConfig};
use crate::error::{invalid, Result};
use crate::index::ExemplarLibrary;
use crate::raster::{LabelMap, UNLABELED};

/// Fraction of pixels that are filled and equal the exemplar's own image
/// when exemplar `exemplar_id` is used as the query against `lib`.
/// Unfilled pixels count as mismatches.
pub fn self_reconstruction(lib: &ExemplarLibrary, exemplar_id: u32, config: &SynthesisConfig) -> Result<f64> {
    let Some(rec) = lib.record(exemplar_id) else {
        return invalid(format!("unknown exemplar {exemplar_id}"));
    };
    let composite = synthesize(&rec.labels, &rec.instance_map(), lib, config)?;
    let original = rec.image()?;
    Ok(reconstruction_accuracy(&composite, &original))
}

/// Exact-match fraction between the query-resolution canvas and `original`.
pub fn reconstruction_accuracy(composite: &Composite, original: &image::RgbImage) -> f64 {
    let canvas = &composite.canvas;
    assert_eq!(canvas.image().dimensions(), original.dimensions(), "reference size differs");
    let mut hits = 0usize;
    for (x, y, p) in canvas.image().enumerate_pixels() {
        if canvas.is_filled(x, y) && p == original.get_pixel(x, y) {
            hits += 1;
        }
    }
    hits as f64 / (canvas.width() as f64 * canvas.height() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub labeled_pixels: usize,
    /// Fraction of labeled pixels filled by each stage, in stage order.
    pub shape_fraction: f64,
    pub part_fraction: f64,
    pub pixel_fraction: f64,
    /// Fraction of all pixels still unfilled.
    pub unfilled_fraction: f64,
    pub survivors: usize,
    pub library_size: usize,
    pub survivor_fraction: f64,
    pub fell_back: bool,
    pub global_secs: f64,
    pub retrieval_secs: f64,
    pub shape_secs: f64,
    pub part_secs: f64,
    pub pixel_secs: f64,
}

impl StageReport {
    pub fn fraction(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Shape => self.shape_fraction,
            Stage::Part => self.part_fraction,
            Stage::Pixel => self.pixel_fraction,
        }
    }

    /// One `key=value` pair per line.
    pub fn to_key_values(&self) -> String {
        let pairs: [(&str, String); 15] = [
            ("labeled_pixels", self.labeled_pixels.to_string()),
            ("shape_fraction", format!("{:.6}", self.shape_fraction)),
            ("part_fraction", format!("{:.6}", self.part_fraction)),
            ("pixel_fraction", format!("{:.6}", self.pixel_fraction)),
            ("unfilled_fraction", format!("{:.6}", self.unfilled_fraction)),
            ("survivors", self.survivors.to_string()),
            ("library_size", self.library_size.to_string()),
            ("survivor_fraction", format!("{:.6}", self.survivor_fraction)),
            ("fell_back", self.fell_back.to_string()),
            ("global_secs", format!("{:.6}", self.global_secs)),
            ("retrieval_secs", format!("{:.6}", self.retrieval_secs)),
            ("shape_secs", format!("{:.6}", self.shape_secs)),
            ("part_secs", format!("{:.6}", self.part_secs)),
            ("pixel_secs", format!("{:.6}", self.pixel_secs)),
            ("total_secs", format!("{:.6}", self.total_secs())),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn total_secs(&self) -> f64 {
        self.global_secs + self.retrieval_secs + self.shape_secs + self.part_secs + self.pixel_secs
    }
}

pub fn stage_report(composite: &Composite) -> StageReport {
    let canvas = &composite.canvas;
    let labels = composite.labels.data();
    let mut per_stage = [0usize; 3];
    let mut labeled = 0usize;
    for (i, prov) in canvas.provenance_map().iter().enumerate() {
        if labels[i] == UNLABELED {
            continue;
        }
        labeled += 1;
        if let Some(p) = prov {
            per_stage[p.stage as usize] += 1;
        }
    }
    let total = canvas.provenance_map().len();
    let unfilled = total - canvas.filled_count();
    let frac = |n: usize| if labeled == 0 { 0.0 } else { n as f64 / labeled as f64 };
    let s = &composite.stats;
    StageReport {
        labeled_pixels: labeled,
        shape_fraction: frac(per_stage[Stage::Shape as usize]),
        part_fraction: frac(per_stage[Stage::Part as usize]),
        pixel_fraction: frac(per_stage[Stage::Pixel as usize]),
        unfilled_fraction: unfilled as f64 / total as f64,
        survivors: s.survivors,
        library_size: s.library_size,
        survivor_fraction: if s.library_size == 0 { 0.0 } else { s.survivors as f64 / s.library_size as f64 },
        fell_back: s.fell_back,
        global_secs: s.global_time.as_secs_f64(),
        retrieval_secs: s.retrieval_time.as_secs_f64(),
        shape_secs: s.shape_time.as_secs_f64(),
        part_secs: s.part_time.as_secs_f64(),
        pixel_secs: s.pixel_time.as_secs_f64(),
    }
}

/// Fraction of filled, labeled pixels whose donor pixel carries the same
/// category as the query pixel. 1.0 when nothing qualifies.
pub fn label_agreement(composite: &Composite, query_labels: &LabelMap, lib: &ExemplarLibrary) -> f64 {
    let canvas = &composite.canvas;
    let labels = query_labels;
    assert!(labels.same_size(canvas.image()), "query labels and composite differ in size");
    let (mut agree, mut total) = (0usize, 0usize);
    for y in 0..canvas.height() {
        for x in 0..canvas.width() {
            let q = labels.get(x, y);
            let Some(p) = canvas.provenance(x, y) else { continue };
            if q == UNLABELED {
                continue;
            }
            let Some(rec) = lib.record(p.exemplar_id) else { continue };
            total += 1;
            let (dx, dy) = (p.donor_x.min(rec.labels.width() - 1), p.donor_y.min(rec.labels.height() - 1));
            if rec.labels.get(dx, dy) == q {
                agree += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}
