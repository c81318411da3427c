//! Image synthesis from semantic label maps and instance maps by
//! retrieving and compositing pieces of labeled exemplar images.
//!
//! A query (label map plus instance map) is filled in four passes over an
//! [`ExemplarLibrary`]: global retrieval of the best-covering exemplars,
//! whole-shape transfer, 16x16 part transfer inside each shape, and
//! window-matched pixel filling for whatever is left.

pub mod canvas;
pub mod compositor;
pub mod edit;
pub mod error;
pub mod index;
pub mod io;
pub mod metrics;
pub mod part;
pub mod pixel;
pub mod raster;
pub mod retrieval;
mod search;
pub mod shape;
pub mod toygen;

pub use canvas::{Canvas, FillReport, Provenance, Stage};
pub use compositor::{
    plan_variants, recompose_with_selection, sample_variants, synthesize, Composite, StageToggles, SynthesisConfig,
    SynthesisPlan,
};
pub use edit::{apply_edit, EditOutcome, RegionPatch, SceneEdit, ShapeOrigin};
pub use error::{Error, Result};
pub use index::{ingest, load_index, save_index, ExemplarLibrary, ExemplarRecord, ShapeRef};
pub use metrics::{label_agreement, self_reconstruction, stage_report, StageReport};
pub use raster::{extract_shapes, InstanceMap, LabelMap, ShapeInstance, UNLABELED};
pub use retrieval::{top_n, GlobalMatch};
pub use shape::{retrieve_candidates, Candidate, CandidateSet};
