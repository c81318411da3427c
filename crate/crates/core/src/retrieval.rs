//! Global scene retrieval: prune the library by category-set relations,
//! then rank survivors by global coverage plus pixel coverage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::index::{ExemplarLibrary, ExemplarRecord, COVERAGE_SIDE};
use crate::raster::{
    hamming_norm, indicator_vector, label_histogram, resize_labels, CategorySet, LabelMap,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMatch {
    pub exemplar_id: u32,
    /// l2 distance between normalized label histograms.
    pub global_cov: f64,
    /// Normalized hamming distance between 100x100 label maps.
    pub pixel_cov: f64,
    pub combined: f64,
}

/// Query-side quantities shared by every exemplar comparison.
#[derive(Clone, Debug)]
pub struct QueryProfile {
    pub indicator: CategorySet,
    pub histogram: Vec<f64>,
    pub lowres100: LabelMap,
}

impl QueryProfile {
    pub fn new(labels: &LabelMap) -> Result<Self> {
        Ok(Self {
            indicator: indicator_vector(labels),
            histogram: label_histogram(labels),
            lowres100: resize_labels(labels, COVERAGE_SIDE, COVERAGE_SIDE)?,
        })
    }
}

/// `true` when the two category sets are equal or one contains the other.
pub fn categories_related(query: &CategorySet, exemplar: &CategorySet) -> bool {
    query.is_subset_of(exemplar) || exemplar.is_subset_of(query)
}

/// Exemplars whose category set equals, contains, or is contained in the
/// query's; ascending id order.
pub fn prune_by_categories(query: &CategorySet, lib: &ExemplarLibrary) -> Result<Vec<u32>> {
    if query.len() != lib.num_categories() {
        return invalid(format!(
            "indicator has {} categories, library has {}",
            query.len(),
            lib.num_categories()
        ));
    }
    Ok(lib
        .records()
        .iter()
        .filter(|r| categories_related(query, &r.indicator))
        .map(|r| r.exemplar_id)
        .collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn coverage_scores(query: &QueryProfile, rec: &ExemplarRecord) -> Result<GlobalMatch> {
    let global_cov = l2(&query.histogram, &rec.histogram);
    let pixel_cov = hamming_norm(&query.lowres100, &rec.lowres100)?;
    Ok(GlobalMatch { exemplar_id: rec.exemplar_id, global_cov, pixel_cov, combined: global_cov + pixel_cov })
}

/// Outcome of stage 1, including the pruning statistics.
#[derive(Clone, Debug)]
pub struct Retrieval {
    pub matches: Vec<GlobalMatch>,
    pub survivors: usize,
    pub library_size: usize,
    /// Pruning left nothing and the whole library was scored instead.
    pub fell_back: bool,
}

impl Retrieval {
    pub fn survivor_fraction(&self) -> f64 {
        self.survivors as f64 / self.library_size as f64
    }
}

/// Total order on matches: combined score, then exemplar id.
pub fn rank_order(a: &GlobalMatch, b: &GlobalMatch) -> std::cmp::Ordering {
    a.combined.total_cmp(&b.combined).then(a.exemplar_id.cmp(&b.exemplar_id))
}

pub fn top_n(query_labels: &LabelMap, lib: &ExemplarLibrary, n: usize) -> Result<Retrieval> {
    let profile = QueryProfile::new(query_labels)?;
    top_n_profiled(&profile, lib, n)
}

pub fn top_n_profiled(query: &QueryProfile, lib: &ExemplarLibrary, n: usize) -> Result<Retrieval> {
    if lib.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    if n == 0 {
        return invalid("top_n needs N >= 1");
    }
    let mut ids = prune_by_categories(&query.indicator, lib)?;
    let survivors = ids.len();
    let fell_back = ids.is_empty();
    if fell_back {
        ids = (0..lib.len() as u32).collect();
    }
    let mut matches = ids
        .par_iter()
        .map(|&id| coverage_scores(query, &lib.records()[id as usize]))
        .collect::<Result<Vec<_>>>()?;
    matches.sort_by(rank_order);
    matches.truncate(n);
    Ok(Retrieval { matches, survivors, library_size: lib.len(), fell_back })
}
