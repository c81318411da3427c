//! The exemplar library: one record per ingested (image, labels, instances)
//! triplet, with everything the matching stages read precomputed.

mod format;

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use image::RgbImage;
use log::warn;
use rayon::prelude::*;

pub use format::{load_index, read_index, save_index, write_index, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::io;
use crate::raster::{
    extract_shapes_from, indicator_vector, label_histogram, resize_labels, CategorySet, Dimensions,
    InstanceMap, LabelMap, ShapeInstance, ShapeSource,
};

/// Side of the low-res maps used for pixel coverage.
pub const COVERAGE_SIDE: u32 = 100;
/// Side of the low-res maps searched by the pixel stage.
pub const PIXEL_FILL_SIDE: u32 = 128;

/// Reference to one shape in the library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct ShapeRef {
    pub exemplar_id: u32,
    pub shape_id: u32,
}

#[derive(Clone, Debug)]
pub struct ExemplarRecord {
    pub exemplar_id: u32,
    /// Path of the full-resolution RGB image.
    pub image_ref: String,
    pub labels: LabelMap,
    pub indicator: CategorySet,
    pub histogram: Vec<f64>,
    pub lowres100: LabelMap,
    pub lowres128: LabelMap,
    pub shapes: Vec<ShapeInstance>,
    image: OnceLock<Result<Arc<RgbImage>, String>>,
}

impl PartialEq for ExemplarRecord {
    fn eq(&self, other: &Self) -> bool {
        self.exemplar_id == other.exemplar_id
            && self.image_ref == other.image_ref
            && self.labels == other.labels
            && self.indicator == other.indicator
            && self.histogram.len() == other.histogram.len()
            && self.histogram.iter().zip(&other.histogram).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.lowres100 == other.lowres100
            && self.lowres128 == other.lowres128
            && self.shapes == other.shapes
    }
}

impl ExemplarRecord {
    /// Computes every derived field from the label and instance maps.
    pub fn build(
        exemplar_id: u32,
        image_ref: impl Into<String>,
        labels: LabelMap,
        instances: &InstanceMap,
    ) -> Result<Self> {
        let shapes = extract_shapes_from(&labels, instances, ShapeSource::Exemplar(exemplar_id))?;
        Ok(Self {
            exemplar_id,
            image_ref: image_ref.into(),
            indicator: indicator_vector(&labels),
            histogram: label_histogram(&labels),
            lowres100: resize_labels(&labels, COVERAGE_SIDE, COVERAGE_SIDE)?,
            lowres128: resize_labels(&labels, PIXEL_FILL_SIDE, PIXEL_FILL_SIDE)?,
            labels,
            shapes,
            image: OnceLock::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        exemplar_id: u32,
        image_ref: String,
        labels: LabelMap,
        indicator: CategorySet,
        histogram: Vec<f64>,
        lowres100: LabelMap,
        lowres128: LabelMap,
        shapes: Vec<ShapeInstance>,
    ) -> Self {
        Self {
            exemplar_id,
            image_ref,
            labels,
            indicator,
            histogram,
            lowres100,
            lowres128,
            shapes,
            image: OnceLock::new(),
        }
    }

    /// Attaches an in-memory image; later [`image`](Self::image) calls never
    /// touch `image_ref`.
    pub fn with_image(self, img: RgbImage) -> Result<Self> {
        if !self.labels.same_size(&img) {
            return Err(Error::InvalidInput(format!(
                "exemplar {} image is {:?}, labels are {:?}",
                self.exemplar_id,
                img.dims(),
                self.labels.dims()
            )));
        }
        let cell = OnceLock::new();
        let _ = cell.set(Ok(Arc::new(img)));
        Ok(Self { image: cell, ..self })
    }

    /// Full-resolution image, read from disk on first use and cached.
    pub fn image(&self) -> Result<Arc<RgbImage>> {
        self.image
            .get_or_init(|| {
                let img = io::read_rgb(Path::new(&self.image_ref)).map_err(|e| e.to_string())?;
                if !self.labels.same_size(&img) {
                    return Err(format!(
                        "image is {:?} but labels are {:?}",
                        img.dims(),
                        self.labels.dims()
                    ));
                }
                Ok(Arc::new(img))
            })
            .clone()
            .map_err(|reason| Error::ImageUnavailable { exemplar_id: self.exemplar_id, reason })
    }

    /// Rebuilds the instance map from the thing shapes.
    pub fn instance_map(&self) -> InstanceMap {
        let mut inst = InstanceMap::empty(self.labels.width(), self.labels.height())
            .expect("labels are non-empty");
        for s in self.shapes.iter().filter(|s| s.is_thing()) {
            for r in 0..s.bbox.rows {
                for c in 0..s.bbox.cols {
                    if s.mask.get(r, c) {
                        inst.set(s.bbox.col0 + c, s.bbox.row0 + r, s.instance_id);
                    }
                }
            }
        }
        inst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarLibrary {
    records: Vec<ExemplarRecord>,
    num_categories: u16,
    category_names: Vec<String>,
    shape_catalog: Vec<Vec<ShapeRef>>,
}

impl ExemplarLibrary {
    /// Records must carry ids `0..len` in order.
    pub fn new(category_names: Vec<String>, records: Vec<ExemplarRecord>) -> Result<Self> {
        let num_categories = u16::try_from(category_names.len())
            .map_err(|_| Error::InvalidInput("too many categories".into()))?;
        let mut shape_catalog = vec![Vec::new(); num_categories as usize];
        for (i, rec) in records.iter().enumerate() {
            if rec.exemplar_id as usize != i {
                return Err(Error::InvalidInput(format!(
                    "exemplar ids must be dense, found {} at position {i}",
                    rec.exemplar_id
                )));
            }
            if rec.labels.num_categories() != num_categories {
                return Err(Error::InvalidInput(format!(
                    "exemplar {i} has {} categories, library has {num_categories}",
                    rec.labels.num_categories()
                )));
            }
            for s in &rec.shapes {
                if !rec.indicator.contains(s.category) {
                    return Err(Error::InvalidInput(format!(
                        "exemplar {i} shape {} category {} missing from indicator",
                        s.shape_id, s.category
                    )));
                }
                shape_catalog[s.category as usize]
                    .push(ShapeRef { exemplar_id: rec.exemplar_id, shape_id: s.shape_id });
            }
        }
        Ok(Self { records, num_categories, category_names, shape_catalog })
    }

    pub fn records(&self) -> &[ExemplarRecord] {
        &self.records
    }

    pub fn record(&self, exemplar_id: u32) -> Option<&ExemplarRecord> {
        self.records.get(exemplar_id as usize)
    }

    pub fn shape(&self, r: ShapeRef) -> Option<&ShapeInstance> {
        self.record(r.exemplar_id)?.shapes.get(r.shape_id as usize)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_categories(&self) -> u16 {
        self.num_categories
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// All shapes of `category`, in (exemplar_id, shape_id) order.
    pub fn shapes_of(&self, category: u16) -> &[ShapeRef] {
        self.shape_catalog.get(category as usize).map_or(&[], Vec::as_slice)
    }

    pub fn shape_count(&self) -> usize {
        self.shape_catalog.iter().map(Vec::len).sum()
    }
}

/// Result of ingesting a dataset directory.
#[derive(Debug)]
pub struct Ingested {
    pub library: ExemplarLibrary,
    /// One line per skipped triplet.
    pub warnings: Vec<String>,
}

/// Reads `categories.txt` (one name per line, line number = id).
pub fn read_categories(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if names.is_empty() {
        return Err(Error::Dataset(format!("{} lists no categories", path.display())));
    }
    Ok(names)
}

/// Ingests `<root>/{images,labels,instances}/<id>.png` plus
/// `<root>/categories.txt`. Broken triplets are skipped with a warning;
/// ids are assigned in sorted filename order.
pub fn ingest(root: &Path) -> Result<Ingested> {
    let names = read_categories(&root.join("categories.txt"))?;
    let num_categories = u16::try_from(names.len())
        .map_err(|_| Error::Dataset("too many categories".into()))?;

    let label_dir = root.join("labels");
    let mut stems: Vec<String> = std::fs::read_dir(&label_dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", label_dir.display())))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension()? == "png").then(|| path.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    stems.sort();

    let root = root.canonicalize()?;
    let loaded: Vec<(String, Result<Triplet>)> = stems
        .into_par_iter()
        .map(|stem| {
            let res = load_triplet(&root, &stem, num_categories);
            (stem, res)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for (stem, res) in loaded {
        let built = res.and_then(|(image_path, labels, instances)| {
            ExemplarRecord::build(
                records.len() as u32,
                image_path.to_string_lossy().into_owned(),
                labels,
                &instances,
            )
        });
        match built {
            Ok(rec) => records.push(rec),
            Err(e) => {
                let msg = format!("skipping {stem}: {e}");
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!("no usable triplets under {}", root.display())));
    }
    Ok(Ingested { library: ExemplarLibrary::new(names, records)?, warnings })
}

/// Image path, labels and instances of one dataset entry.
type Triplet = (PathBuf, LabelMap, InstanceMap);

fn load_triplet(root: &Path, stem: &str, num_categories: u16) -> Result<Triplet> {
    let file = format!("{stem}.png");
    let image_path = root.join("images").join(&file);
    let labels = io::read_labels(&root.join("labels").join(&file), num_categories)?;
    let instances = io::read_instances(&root.join("instances").join(&file))?;
    if !labels.same_size(&instances) {
        return Err(Error::Dataset(format!(
            "instance map is {:?}, labels are {:?}",
            instances.dims(),
            labels.dims()
        )));
    }
    let dims = image::image_dimensions(&image_path)?;
    if dims != labels.dims() {
        return Err(Error::Dataset(format!("image is {dims:?}, labels are {:?}", labels.dims())));
    }
    Ok((image_path, labels, instances))
}
