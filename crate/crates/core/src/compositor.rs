//! Runs the four stages in order and owns everything that is reused
//! between renders of the same query: the global top-N, the shapes and
//! their candidate sets. Variants and interactive reselection only redo
//! the painting.

use std::time::{Duration, Instant};

use image::RgbImage;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canvas::{Canvas, FillReport, Stage};
use crate::error::{invalid, Error, Result};
use crate::index::ExemplarLibrary;
use crate::part::fill_parts;
use crate::pixel::fill_pixels;
use crate::raster::{extract_shapes, resize_rgb, validate_pair, InstanceMap, LabelMap, ShapeInstance};
use crate::retrieval::{top_n_profiled, QueryProfile, Retrieval};
use crate::shape::{retrieve_candidates, transfer_or_skip, CandidateSet, DEFAULT_FILTER_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageToggles {
    pub shape: bool,
    pub part: bool,
    pub pixel: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { shape: true, part: true, pixel: true }
    }
}

impl StageToggles {
    pub const NONE: StageToggles = StageToggles { shape: false, part: false, pixel: false };

    pub fn only(stages: &[Stage]) -> Self {
        let mut t = Self::NONE;
        for s in stages {
            match s {
                Stage::Shape => t.shape = true,
                Stage::Part => t.part = true,
                Stage::Pixel => t.pixel = true,
            }
        }
        t
    }

    /// Parses a comma-separated list such as `shape,part,pixel`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut t = Self::NONE;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "shape" => t.shape = true,
                "part" => t.part = true,
                "pixel" => t.pixel = true,
                other => return invalid(format!("unknown stage {other:?}")),
            }
        }
        Ok(t)
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Shape => self.shape,
            Stage::Part => self.part,
            Stage::Pixel => self.pixel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub top_n: usize,
    pub top_k: usize,
    pub filter_side: u32,
    pub seed: u64,
    pub stages: StageToggles,
    /// Output width and height; `None` keeps the query size.
    pub output_size: Option<(u32, u32)>,
    /// Worker threads for the parallel loops; 0 uses the ambient pool.
    /// Never changes output bytes.
    pub workers: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            top_n: 100,
            top_k: 5,
            filter_side: DEFAULT_FILTER_SIDE,
            seed: 0,
            stages: StageToggles::default(),
            output_size: None,
            workers: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 || self.top_k == 0 {
            return invalid("top_n and top_k must be >= 1");
        }
        if self.filter_side == 0 {
            return invalid("filter side must be >= 1");
        }
        if matches!(self.output_size, Some((0, _)) | Some((_, 0))) {
            return invalid("output size must be non-empty");
        }
        Ok(())
    }
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline when 0.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Digest of the query maps and the plan-relevant config fields.
pub fn query_digest(labels: &LabelMap, instances: &InstanceMap, config: &SynthesisConfig) -> String {
    let mut h = Sha256::new();
    h.update(labels.width().to_le_bytes());
    h.update(labels.height().to_le_bytes());
    h.update(labels.num_categories().to_le_bytes());
    for v in labels.data() {
        h.update(v.to_le_bytes());
    }
    for v in instances.data() {
        h.update(v.to_le_bytes());
    }
    h.update((config.top_n as u64).to_le_bytes());
    h.update((config.top_k as u64).to_le_bytes());
    h.update(config.filter_side.to_le_bytes());
    hex::encode(h.finalize())
}

/// Stage 1 and the shape retrieval of stage 2, computed once per query.
#[derive(Clone, Debug)]
pub struct SynthesisPlan {
    pub labels: LabelMap,
    pub instances: InstanceMap,
    pub digest: String,
    pub retrieval: Retrieval,
    pub shapes: Vec<ShapeInstance>,
    /// One per shape, indexed by shape id.
    pub candidates: Vec<CandidateSet>,
    /// Shape indices in paint order.
    pub paint_order: Vec<usize>,
    pub global_time: Duration,
    pub retrieval_time: Duration,
}

/// Stuff before things, each by descending area, ties by shape id.
pub fn paint_order(shapes: &[ShapeInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shapes.len()).collect();
    order.sort_by_key(|&i| (shapes[i].is_thing(), std::cmp::Reverse(shapes[i].area), i));
    order
}

impl SynthesisPlan {
    pub fn build(
        labels: &LabelMap,
        instances: &InstanceMap,
        lib: &ExemplarLibrary,
        config: &SynthesisConfig,
    ) -> Result<Self> {
        config.validate()?;
        validate_pair(labels, instances)?;
        if labels.num_categories() != lib.num_categories() {
            return invalid(format!(
                "query uses {} categories, library has {}",
                labels.num_categories(),
                lib.num_categories()
            ));
        }
        with_workers(config.workers, || {
            let t0 = Instant::now();
            let profile = QueryProfile::new(labels)?;
            let retrieval = top_n_profiled(&profile, lib, config.top_n)?;
            let global_time = t0.elapsed();

            let t1 = Instant::now();
            let shapes = extract_shapes(labels, instances)?;
            let candidates = shapes
                .par_iter()
                .map(|s| retrieve_candidates(s, labels, &retrieval.matches, lib, config.top_k, config.filter_side))
                .collect::<Result<Vec<_>>>()?;
            let retrieval_time = t1.elapsed();
            Ok(Self {
                labels: labels.clone(),
                instances: instances.clone(),
                digest: query_digest(labels, instances, config),
                retrieval,
                paint_order: paint_order(&shapes),
                shapes,
                candidates,
                global_time,
                retrieval_time,
            })
        })?
    }

    /// Rank-1 candidate for every shape.
    pub fn default_selections(&self) -> Vec<usize> {
        vec![0; self.shapes.len()]
    }

    /// Uniform draw over each shape's available candidates.
    pub fn seeded_selections(&self, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.candidates
            .iter()
            .map(|set| if set.len() > 1 { rng.gen_range(0..set.len()) } else { 0 })
            .collect()
    }

    pub fn render(&self, lib: &ExemplarLibrary, selections: &[usize], config: &SynthesisConfig) -> Result<Composite> {
        config.validate()?;
        if selections.len() != self.shapes.len() {
            return invalid(format!(
                "{} selections for {} shapes",
                selections.len(),
                self.shapes.len()
            ));
        }
        for (i, (&sel, set)) in selections.iter().zip(&self.candidates).enumerate() {
            if sel != 0 && sel >= set.len() {
                return invalid(format!("shape {i} has {} candidates, selection {sel}", set.len()));
            }
        }
        with_workers(config.workers, || self.render_inner(lib, selections, config))?
    }

    fn render_inner(&self, lib: &ExemplarLibrary, selections: &[usize], config: &SynthesisConfig) -> Result<Composite> {
        let mut canvas = Canvas::new(self.labels.width(), self.labels.height());
        let mut stats = StageStats {
            global_time: self.global_time,
            retrieval_time: self.retrieval_time,
            survivors: self.retrieval.survivors,
            library_size: self.retrieval.library_size,
            fell_back: self.retrieval.fell_back,
            ..StageStats::default()
        };

        if config.stages.shape {
            let t = Instant::now();
            for &i in &self.paint_order {
                if let Some(cand) = self.candidates[i].candidates.get(selections[i]) {
                    stats.shape += transfer_or_skip(&self.shapes[i], cand, lib, &mut canvas)?;
                }
            }
            stats.shape_time = t.elapsed();
        }
        if config.stages.part {
            let t = Instant::now();
            for &i in &self.paint_order {
                stats.part += fill_parts(&self.shapes[i], &self.labels, &self.candidates[i], lib, &mut canvas)?;
            }
            stats.part_time = t.elapsed();
        }
        if config.stages.pixel {
            let t = Instant::now();
            stats.pixel += fill_pixels(&self.labels, &self.retrieval.matches, lib, &mut canvas)?;
            stats.pixel_time = t.elapsed();
        }
        if !canvas.is_complete() && config.stages.pixel {
            warn!("composite {} still has holes", self.digest);
        }

        let image = match config.output_size {
            Some((w, h)) => resize_rgb(canvas.image(), w, h)?,
            None => canvas.image().clone(),
        };
        Ok(Composite {
            image,
            canvas,
            labels: self.labels.clone(),
            selections: selections.to_vec(),
            config: config.clone(),
            digest: self.digest.clone(),
            stats,
        })
    }
}

/// Per-run fill counts and timings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub shape: FillReport,
    pub part: FillReport,
    pub pixel: FillReport,
    pub global_time: Duration,
    pub retrieval_time: Duration,
    pub shape_time: Duration,
    pub part_time: Duration,
    pub pixel_time: Duration,
    pub survivors: usize,
    pub library_size: usize,
    pub fell_back: bool,
}

#[derive(Clone, Debug)]
pub struct Composite {
    /// Final image at the configured output size.
    pub image: RgbImage,
    /// Query-resolution canvas with fill state and provenance.
    pub canvas: Canvas,
    pub labels: LabelMap,
    /// Chosen candidate index per shape id.
    pub selections: Vec<usize>,
    pub config: SynthesisConfig,
    pub digest: String,
    pub stats: StageStats,
}

pub fn synthesize(
    labels: &LabelMap,
    instances: &InstanceMap,
    lib: &ExemplarLibrary,
    config: &SynthesisConfig,
) -> Result<Composite> {
    let plan = SynthesisPlan::build(labels, instances, lib, config)?;
    plan.render(lib, &plan.default_selections(), config)
}

/// `count` variants; variant `i` draws its selections from seed
/// `config.seed + i`.
pub fn sample_variants(
    labels: &LabelMap,
    instances: &InstanceMap,
    lib: &ExemplarLibrary,
    config: &SynthesisConfig,
    count: usize,
) -> Result<Vec<Composite>> {
    let plan = SynthesisPlan::build(labels, instances, lib, config)?;
    plan_variants(&plan, lib, config, count)
}

pub fn plan_variants(
    plan: &SynthesisPlan,
    lib: &ExemplarLibrary,
    config: &SynthesisConfig,
    count: usize,
) -> Result<Vec<Composite>> {
    if count == 0 {
        return invalid("variant count must be >= 1");
    }
    (0..count as u64)
        .map(|i| {
            let sel = plan.seeded_selections(config.seed.wrapping_add(i));
            plan.render(lib, &sel, config)
        })
        .collect()
}

/// Re-renders `prior` with one shape's candidate swapped.
pub fn recompose_with_selection(
    plan: &SynthesisPlan,
    prior: &Composite,
    shape_id: u32,
    candidate_idx: usize,
    lib: &ExemplarLibrary,
) -> Result<Composite> {
    if prior.digest != plan.digest {
        return invalid("composite was not rendered from this plan");
    }
    let Some(set) = plan.candidates.get(shape_id as usize) else {
        return invalid(format!("unknown shape {shape_id}"));
    };
    if candidate_idx >= set.len() {
        return invalid(format!(
            "shape {shape_id} has {} candidates, requested {candidate_idx}",
            set.len()
        ));
    }
    let mut selections = prior.selections.clone();
    selections[shape_id as usize] = candidate_idx;
    plan.render(lib, &selections, &prior.config)
}
