//! Dataset files through ingestion, the index format and the compositor.

mod common;

use std::path::Path;
use std::time::Instant;

use common::*;
use labelsynth::canvas::Stage;
use labelsynth::compositor::{plan_variants, sample_variants, synthesize, StageToggles, SynthesisConfig, SynthesisPlan};
use labelsynth::index::{ingest, load_index, save_index};
use labelsynth::io::write_instances;
use labelsynth::metrics::stage_report;
use labelsynth::raster::InstanceMap;
use labelsynth::toygen::{generate_scene, write_dataset};
use labelsynth::{recompose_with_selection, Error};

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toygen_directories_are_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = toy(6, 12, 64, 7, None);
    write_dataset(&spec, a.path()).unwrap();
    write_dataset(&spec, b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 6 * 3 + 1);
    assert_eq!(ta, tb);
}

#[test]
fn fifty_scene_dataset_ingests_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&toy(50, 12, 96, 7, None), dir.path()).unwrap();
    let ingested = ingest(dir.path()).unwrap();
    let lib = ingested.library;
    assert!(ingested.warnings.is_empty());
    assert_eq!(lib.len(), 50);
    assert_eq!(lib.records().iter().map(|r| r.exemplar_id).collect::<Vec<_>>(), (0..50).collect::<Vec<_>>());

    // catalog recount
    let by_records: usize = lib.records().iter().map(|r| r.shapes.len()).sum();
    let by_catalog: usize = (0..lib.num_categories()).map(|c| lib.shapes_of(c).len()).sum();
    assert_eq!(by_records, by_catalog);
    assert_eq!(lib.shape_count(), by_records);
    for c in 0..lib.num_categories() {
        for r in lib.shapes_of(c) {
            assert_eq!(lib.shape(*r).unwrap().category, c);
        }
    }

    // derived fields recompute bit-exactly
    for r in lib.records() {
        assert_eq!(r.indicator, labelsynth::raster::indicator_vector(&r.labels));
        let h = labelsynth::raster::label_histogram(&r.labels);
        assert!(h.iter().zip(&r.histogram).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(r.lowres100, lowres(&r.labels, 100));
        assert_eq!(r.lowres128, lowres(&r.labels, 128));
    }

    let index = dir.path().join("lib.csix");
    save_index(&lib, &index).unwrap();
    let loaded = load_index(&index).unwrap();
    assert_eq!(loaded, lib);
    // images load lazily from image_ref
    assert_eq!(loaded.record(3).unwrap().image().unwrap().dimensions(), (96, 96));
}

#[test]
fn broken_triplet_is_skipped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&toy(4, 12, 48, 3, None), dir.path()).unwrap();
    write_instances(&dir.path().join("instances/scene_00001.png"), &InstanceMap::empty(20, 20).unwrap()).unwrap();
    let ingested = ingest(dir.path()).unwrap();
    assert_eq!(ingested.library.len(), 3);
    assert_eq!(ingested.warnings.len(), 1);
    assert!(ingested.warnings[0].contains("scene_00001"));

    let empty = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(empty.path().join("labels")).unwrap();
    std::fs::write(empty.path().join("categories.txt"), "a\n").unwrap();
    assert!(matches!(ingest(empty.path()), Err(Error::Dataset(_))));
}

#[test]
fn thousand_exemplar_index_loads_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let (_, lib) = toy_library(&toy(1000, 12, 64, 31, None), 0);
    let path = dir.path().join("big.csix");
    save_index(&lib, &path).unwrap();
    let start = Instant::now();
    let loaded = load_index(&path).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(loaded.len(), 1000);
    assert!(secs < 1.0, "load took {secs:.3}s");
}

#[test]
fn variants_reuse_one_plan() {
    let (_, lib) = toy_library(&toy(40, 12, 96, 5, None), 0);
    let q = generate_scene(&toy(1, 12, 96, 404, None), 0).unwrap();
    let config = SynthesisConfig { seed: 17, ..Default::default() };
    let one = sample_variants(&q.labels, &q.instances, &lib, &config, 1).unwrap().remove(0);
    let plan = SynthesisPlan::build(&q.labels, &q.instances, &lib, &config).unwrap();
    let direct = plan.render(&lib, &plan.seeded_selections(17), &config).unwrap();
    assert_eq!(one.image, direct.image);
    assert_eq!(one.selections, direct.selections);

    let k1 = SynthesisConfig { top_k: 1, ..config.clone() };
    let plan1 = SynthesisPlan::build(&q.labels, &q.instances, &lib, &k1).unwrap();
    let vs = plan_variants(&plan1, &lib, &k1, 4).unwrap();
    assert!(vs.iter().all(|v| v.image == vs[0].image));
    assert!(sample_variants(&q.labels, &q.instances, &lib, &config, 0).is_err());
}

#[test]
fn reselection_contract() {
    let (_, lib) = toy_library(&toy(40, 12, 96, 5, None), 0);
    let q = generate_scene(&toy(1, 12, 96, 404, None), 1).unwrap();
    let config = SynthesisConfig::default();
    let plan = SynthesisPlan::build(&q.labels, &q.instances, &lib, &config).unwrap();
    let base = plan.render(&lib, &plan.default_selections(), &config).unwrap();
    let same = recompose_with_selection(&plan, &base, 0, 0, &lib).unwrap();
    assert_eq!(same.image, base.image);
    assert_eq!(same.canvas, base.canvas);
    let n = plan.candidates[0].len();
    assert!(recompose_with_selection(&plan, &base, 0, n, &lib).is_err());
    assert!(recompose_with_selection(&plan, &base, plan.shapes.len() as u32, 0, &lib).is_err());
    assert_eq!(base.selections, plan.default_selections());
}

#[test]
fn stage_fractions_partition_labeled_pixels() {
    let (_, lib) = toy_library(&toy(30, 12, 96, 9, None), 0);
    let q = generate_scene(&toy(1, 12, 96, 55, None), 2).unwrap();
    let full = synthesize(&q.labels, &q.instances, &lib, &SynthesisConfig::default()).unwrap();
    let r = stage_report(&full);
    assert!((r.shape_fraction + r.part_fraction + r.pixel_fraction - 1.0).abs() < 1e-9);
    assert_eq!(r.unfilled_fraction, 0.0);
    assert!(r.to_key_values().lines().all(|l| l.contains('=')));

    let pixel_only = SynthesisConfig { stages: StageToggles::only(&[Stage::Pixel]), ..Default::default() };
    let p = stage_report(&synthesize(&q.labels, &q.instances, &lib, &pixel_only).unwrap());
    assert_eq!(p.pixel_fraction, 1.0);

    let shape_only = SynthesisConfig { stages: StageToggles::only(&[Stage::Shape]), ..Default::default() };
    let s = stage_report(&synthesize(&q.labels, &q.instances, &lib, &shape_only).unwrap());
    assert_eq!(s.part_fraction + s.pixel_fraction, 0.0);
    assert!(s.shape_fraction <= r.shape_fraction + r.part_fraction);
}

#[test]
fn output_size_resizes_only_the_final_image() {
    let (_, lib) = toy_library(&toy(10, 12, 64, 9, None), 0);
    let q = generate_scene(&toy(1, 12, 64, 55, None), 0).unwrap();
    let config = SynthesisConfig { output_size: Some((100, 80)), ..Default::default() };
    let c = synthesize(&q.labels, &q.instances, &lib, &config).unwrap();
    assert_eq!(c.image.dimensions(), (100, 80));
    assert_eq!(c.canvas.image().dimensions(), (64, 64));
}

#[test]
fn mismatched_query_is_rejected() {
    let (_, lib) = toy_library(&toy(3, 12, 32, 1, None), 0);
    let q = generate_scene(&toy(1, 12, 32, 2, None), 0).unwrap();
    let short = InstanceMap::empty(31, 32).unwrap();
    assert!(synthesize(&q.labels, &short, &lib, &SynthesisConfig::default()).is_err());
    let wide = widen(&q.labels, 14);
    assert!(synthesize(&wide, &q.instances, &lib, &SynthesisConfig::default()).is_err());
}
