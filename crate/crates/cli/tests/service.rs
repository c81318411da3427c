//! HTTP endpoints driven in-process through the router.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use labelsynth::compositor::{plan_variants, SynthesisConfig, SynthesisPlan};
use labelsynth::index::ExemplarLibrary;
use labelsynth::io::{decode_labels, encode_instances, encode_labels};
use labelsynth::toygen::{category_names, generate_scene, generate_scenes, library_from_scenes, Scene, ToySpec};
use labelsynth_cli::service::{router, AppState};

const BOUNDARY: &str = "labelsynth-test-boundary";

fn spec(scenes: u32, seed: u64) -> ToySpec {
    ToySpec { scenes, categories: 12, size: 64, seed, cliques: None }
}

fn library() -> ExemplarLibrary {
    library_from_scenes(&generate_scenes(&spec(30, 5)).unwrap(), category_names(12)).unwrap()
}

fn query() -> Scene {
    generate_scene(&spec(1, 404), 0).unwrap()
}

fn multipart(parts: &[(&str, Vec<u8>)]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n\r\n").as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/jobs")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

fn job_request(scene: &Scene, config: Option<Value>) -> Request<Body> {
    let mut parts = vec![
        ("labels.png", encode_labels(&scene.labels).unwrap()),
        ("instances.png", encode_instances(&scene.instances).unwrap()),
    ];
    if let Some(c) = config {
        parts.push(("config", c.to_string().into_bytes()));
    }
    multipart(&parts)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn wait_done(app: &Router, id: u64) -> Value {
    for _ in 0..600 {
        let (s, v) = get_json(app, &format!("/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        match v["status"].as_str().unwrap() {
            "done" => return v,
            "failed" => panic!("job failed: {v}"),
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("job {id} did not finish");
}

async fn create(app: &Router, scene: &Scene, config: Option<Value>) -> u64 {
    let (s, b) = send(app, job_request(scene, config)).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));
    let v: Value = serde_json::from_slice(&b).unwrap();
    v["job_id"].as_u64().unwrap()
}

async fn image_bytes(app: &Router, uri: &str) -> Vec<u8> {
    let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK, "{uri}");
    assert_eq!(resp.headers()["content-type"], "image/png");
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

#[tokio::test(flavor = "multi_thread")]
async fn job_lifecycle() {
    let lib = library();
    let state = Arc::new(AppState::new(lib.clone(), None));
    let app = router(state);
    let q = query();

    let id = create(&app, &q, Some(json!({ "top_k": 4, "seed": 3 }))).await;
    let status = wait_done(&app, id).await;
    assert_eq!(status["revision"], 0);
    assert_eq!(status["variants"].as_array().unwrap().len(), 1);
    assert!(status["report"]["shape_fraction"].as_f64().unwrap() > 0.0);

    // shapes and candidates agree with a direct plan
    let config = SynthesisConfig { top_k: 4, seed: 3, ..Default::default() };
    let plan = SynthesisPlan::build(&q.labels, &q.instances, &lib, &config).unwrap();
    assert_eq!(status["digest"], plan.digest.as_str());
    let (s, shapes) = get_json(&app, &format!("/jobs/{id}/shapes")).await;
    assert_eq!(s, StatusCode::OK);
    let shapes = shapes["shapes"].as_array().unwrap();
    assert_eq!(shapes.len(), plan.shapes.len());
    for (sid, set) in plan.candidates.iter().enumerate() {
        let (s, v) = get_json(&app, &format!("/jobs/{id}/shapes/{sid}/candidates")).await;
        assert_eq!(s, StatusCode::OK);
        let got: Vec<(u64, u64, i64)> = v["candidates"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| (c["exemplar_id"].as_u64().unwrap(), c["shape_id"].as_u64().unwrap(), c["score"].as_i64().unwrap()))
            .collect();
        let expect: Vec<(u64, u64, i64)> =
            set.candidates.iter().map(|c| (c.exemplar_id as u64, c.shape_id as u64, c.score)).collect();
        assert_eq!(got, expect);
        if let Some(first) = v["candidates"].as_array().unwrap().first() {
            let thumb = image_bytes(&app, first["thumbnail"].as_str().unwrap()).await;
            assert!(image::load_from_memory(&thumb).is_ok());
        }
    }
    let (s, _) = get_json(&app, &format!("/jobs/{id}/shapes/{}/candidates", plan.shapes.len())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // four seeded variants, each rendering the plan's selections
    let (s, v) = get_json(&app, &format!("/jobs/{id}/variants?count=4&seed=11")).await;
    assert_eq!(s, StatusCode::OK);
    let variants = v["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 4);
    let direct = plan_variants(&plan, &lib, &SynthesisConfig { seed: 11, ..config.clone() }, 4).unwrap();
    for (v, d) in variants.iter().zip(&direct) {
        let bytes = image_bytes(&app, v["image"].as_str().unwrap()).await;
        assert_eq!(image::load_from_memory(&bytes).unwrap().to_rgb8(), d.image);
    }
    let (s, _) = get_json(&app, &format!("/jobs/{id}/variants?count=0")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // reselection creates a new current variant
    let pick = plan.candidates.iter().position(|c| c.len() > 1).unwrap();
    let (s, v) = post_json(&app, &format!("/jobs/{id}/select"), json!({ "shape_id": pick, "candidate_idx": 1 })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["variant_id"], 5);
    image_bytes(&app, v["image"].as_str().unwrap()).await;
    let (s, v) = post_json(&app, &format!("/jobs/{id}/select"), json!({ "shape_id": pick, "candidate_idx": 99 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    // an out-of-bounds insert is rejected and changes nothing
    let insert = json!({
        "op": "insert_shape",
        "origin": { "from": "query", "shape_id": 0 },
        "top": 10_000, "left": 0, "scale": 1.0
    });
    let (s, v) = post_json(&app, &format!("/jobs/{id}/edits"), insert).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert!(v["error"].as_str().unwrap().contains("invalid edit"));
    assert_eq!(get_json(&app, &format!("/jobs/{id}")).await.1["revision"], 0);

    // a valid edit bumps the revision and returns the new maps
    let thing = plan.shapes.iter().find(|s| s.is_thing()).unwrap().shape_id;
    let mv = json!({ "op": "move_shape", "shape_id": thing, "dx": 2, "dy": 1 });
    let (s, v) = post_json(&app, &format!("/jobs/{id}/edits"), mv).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    assert_eq!(v["inverse"]["op"], "restore");
    use base64::Engine as _;
    let labels_png = base64::engine::general_purpose::STANDARD.decode(v["labels_png"].as_str().unwrap()).unwrap();
    let labels = decode_labels(&labels_png, 12).unwrap();
    assert_ne!(labels, q.labels);
    let served = send(&app, Request::get(format!("/jobs/{id}/labels")).body(Body::empty()).unwrap()).await.1;
    assert_eq!(decode_labels(&served, 12).unwrap(), labels);

    // undo restores the original query exactly
    let (s, v) = post_json(&app, &format!("/jobs/{id}/edits"), v["inverse"].clone()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let after = wait_done(&app, id).await;
    assert_eq!(after["revision"], 2);
    assert_eq!(after["digest"], plan.digest.as_str());
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_and_library_endpoints() {
    let lib = library();
    let app = router(Arc::new(AppState::new(lib.clone(), None)));

    assert_eq!(get_json(&app, "/jobs/77").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/jobs/77/shapes").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/images/job-77-v0").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/images/nonsense").await.0, StatusCode::NOT_FOUND);

    let q = query();
    let (s, _) = send(&app, multipart(&[("labels", encode_labels(&q.labels).unwrap())])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = send(&app, job_request(&q, Some(json!({ "top_k": 0 })))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = send(&app, multipart(&[("labels", b"not a png".to_vec()), ("instances", b"x".to_vec())])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, info) = get_json(&app, "/library").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(info["exemplars"], 30);
    assert_eq!(info["shapes"], lib.shape_count());

    let cat = (0..12u16).max_by_key(|&c| lib.shapes_of(c).len()).unwrap();
    let total = lib.shapes_of(cat).len();
    let mut seen = Vec::new();
    for page in 0.. {
        let (s, v) = get_json(&app, &format!("/library/shapes?category={cat}&page={page}")).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["total"], total);
        let shapes = v["shapes"].as_array().unwrap().clone();
        if shapes.is_empty() {
            break;
        }
        assert!(shapes.len() <= 50);
        assert!(shapes.iter().all(|s| s["category"] == cat));
        seen.extend(shapes.iter().map(|s| (s["exemplar_id"].as_u64().unwrap(), s["shape_id"].as_u64().unwrap())));
    }
    assert_eq!(seen.len(), total);
    assert_eq!(get_json(&app, "/library/shapes?category=12").await.0, StatusCode::BAD_REQUEST);

    // a library shape can be inserted into a job
    let id = create(&app, &q, None).await;
    wait_done(&app, id).await;
    let (e, sh) = seen[0];
    let insert = json!({
        "op": "insert_shape",
        "origin": { "from": "library", "exemplar_id": e, "shape_id": sh },
        "top": 0, "left": 0, "scale": 0.5
    });
    let (s, v) = post_json(&app, &format!("/jobs/{id}/edits"), insert).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["inverse"]["op"], "delete_shape");
    wait_done(&app, id).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn persisted_jobs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let lib = library();
    let q = query();
    let (id, images) = {
        let app = router(Arc::new(AppState::new(lib.clone(), Some(dir.path().to_path_buf()))));
        let id = create(&app, &q, Some(json!({ "seed": 9 }))).await;
        wait_done(&app, id).await;
        let (_, v) = get_json(&app, &format!("/jobs/{id}/variants?count=2")).await;
        let mut images = Vec::new();
        for v in v["variants"].as_array().unwrap() {
            images.push((v["image"].as_str().unwrap().to_owned(), image_bytes(&app, v["image"].as_str().unwrap()).await));
        }
        (id, images)
    };

    let state = Arc::new(AppState::new(lib, Some(dir.path().to_path_buf())));
    assert_eq!(state.restore().unwrap(), 1);
    let app = router(state);
    let status = wait_done(&app, id).await;
    assert_eq!(status["variants"].as_array().unwrap().len(), 3);
    for (uri, bytes) in images {
        assert_eq!(image_bytes(&app, &uri).await, bytes);
    }
    // new jobs do not reuse restored ids
    assert!(create(&app, &q, None).await > id);
}
