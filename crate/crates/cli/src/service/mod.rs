//! JSON-over-HTTP service for interactive synthesis and scene editing.

mod jobs;

use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use labelsynth::compositor::{plan_variants, recompose_with_selection, SynthesisConfig};
use labelsynth::edit::{apply_edit, SceneEdit};
use labelsynth::index::{load_index, ShapeRef};
use labelsynth::io::{decode_instances, decode_labels, encode_instances, encode_labels, encode_rgb};
use labelsynth::metrics::stage_report;
use labelsynth::raster::{crop_resize_rgb, validate_pair, ShapeInstance};
use labelsynth::Error;

pub use jobs::{AppState, Job, JobStatus, VariantOrigin};

use crate::commands::ServeArgs;

pub const LIBRARY_PAGE_SIZE: usize = 50;
pub const MAX_VARIANTS_PER_REQUEST: usize = 64;
pub const THUMB_SIDE: u32 = 64;

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn not_ready(job: &Job) -> Self {
        let state = match job.status {
            JobStatus::Failed => format!("failed: {}", job.error.as_deref().unwrap_or("unknown error")),
            s => serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
        };
        Self::new(StatusCode::CONFLICT, format!("job {} is not ready ({state})", job.id))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidInput(_) => StatusCode::BAD_REQUEST,
            Error::InvalidEdit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/labels", get(job_labels))
        .route("/jobs/{id}/instances", get(job_instances))
        .route("/jobs/{id}/shapes", get(job_shapes))
        .route("/jobs/{id}/shapes/{shape_id}/candidates", get(shape_candidates))
        .route("/jobs/{id}/select", post(select_candidate))
        .route("/jobs/{id}/variants", get(variants))
        .route("/jobs/{id}/edits", post(edit_scene))
        .route("/images/{name}", get(image))
        .route("/library", get(library_info))
        .route("/library/shapes", get(library_shapes))
        .with_state(state)
}

/// Loads the index, restores persisted jobs and serves until ctrl-c.
pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let lib = load_index(&args.index).with_context(|| format!("loading {}", args.index.display()))?;
    let state = Arc::new(AppState::new(lib, args.persist.clone()));
    state.restore()?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad --host/--port")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn job_id_error(id: u64) -> ApiError {
    ApiError::not_found(format!("no job {id}"))
}

fn lookup(state: &AppState, id: u64) -> ApiResult<Arc<std::sync::Mutex<Job>>> {
    state.job(id).ok_or_else(|| job_id_error(id))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn schedule(state: &Shared, id: u64) {
    let state = state.clone();
    tokio::task::spawn_blocking(move || state.run_job(id));
}

fn variant_url(job: u64, variant: usize) -> String {
    format!("/images/job-{job}-v{variant}")
}

fn thumb_url(r: ShapeRef) -> String {
    format!("/images/thumb-{}-{}", r.exemplar_id, r.shape_id)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn create_job(State(state): State<Shared>, mut multipart: Multipart) -> ApiResult<(StatusCode, Json<Value>)> {
    let (mut labels, mut instances, mut config) = (None::<Bytes>, None::<Bytes>, None::<Bytes>);
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_owned();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        match name.trim_end_matches(".png") {
            "labels" => labels = Some(data),
            "instances" => instances = Some(data),
            "config" => config = Some(data),
            other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let labels = labels.ok_or_else(|| ApiError::bad_request("missing labels field"))?;
    let instances = instances.ok_or_else(|| ApiError::bad_request("missing instances field"))?;
    let config: SynthesisConfig = match config {
        Some(c) => serde_json::from_slice(&c).map_err(|e| ApiError::bad_request(format!("bad config: {e}")))?,
        None => SynthesisConfig::default(),
    };
    config.validate()?;
    let upload = |what: &str, e: Error| ApiError::bad_request(format!("{what}: {e}"));
    let labels = decode_labels(&labels, state.lib.num_categories()).map_err(|e| upload("labels", e))?;
    let instances = decode_instances(&instances).map_err(|e| upload("instances", e))?;
    validate_pair(&labels, &instances)?;
    let id = state.create_job(labels, instances, config);
    schedule(&state, id);
    Ok((StatusCode::CREATED, Json(json!({ "job_id": id, "status": JobStatus::Queued }))))
}

async fn job_status(State(state): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let job = lookup(&state, id)?;
    let j = job.lock().unwrap();
    let variants: Vec<Value> = j
        .variants
        .iter()
        .enumerate()
        .map(|(i, v)| json!({ "variant_id": i, "image": variant_url(id, i), "origin": v.origin }))
        .collect();
    let current = j.current.map(|c| &j.variants[c].composite);
    Ok(Json(json!({
        "job_id": id,
        "status": j.status,
        "error": j.error,
        "revision": j.revision,
        "width": j.labels.width(),
        "height": j.labels.height(),
        "config": j.config,
        "digest": j.plan.as_ref().map(|p| p.digest.clone()),
        "shapes": j.plan.as_ref().map(|p| p.shapes.len()),
        "current_variant": j.current,
        "variants": variants,
        "report": current.map(stage_report),
    })))
}

async fn job_labels(State(state): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    let job = lookup(&state, id)?;
    let bytes = encode_labels(&job.lock().unwrap().labels)?;
    Ok(png(bytes))
}

async fn job_instances(State(state): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    let job = lookup(&state, id)?;
    let bytes = encode_instances(&job.lock().unwrap().instances)?;
    Ok(png(bytes))
}

fn shape_json(s: &ShapeInstance, names: &[String]) -> Value {
    json!({
        "shape_id": s.shape_id,
        "category": s.category,
        "category_name": names.get(s.category as usize),
        "instance_id": s.instance_id,
        "is_thing": s.is_thing(),
        "bbox": s.bbox,
        "area": s.area,
    })
}

async fn job_shapes(State(state): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let job = lookup(&state, id)?;
    let j = job.lock().unwrap();
    let plan = j.plan.as_ref().ok_or_else(|| ApiError::not_ready(&j))?;
    let selections = j.current.map(|c| &j.variants[c].composite.selections);
    let names = state.lib.category_names();
    let shapes: Vec<Value> = plan
        .shapes
        .iter()
        .map(|s| {
            let mut v = shape_json(s, names);
            v["candidates"] = json!(plan.candidates[s.shape_id as usize].len());
            v["selected"] = json!(selections.map(|sel| sel[s.shape_id as usize]));
            v
        })
        .collect();
    Ok(Json(json!({ "job_id": id, "revision": j.revision, "shapes": shapes })))
}

async fn shape_candidates(
    State(state): State<Shared>,
    Path((id, shape_id)): Path<(u64, u32)>,
) -> ApiResult<Json<Value>> {
    let job = lookup(&state, id)?;
    let j = job.lock().unwrap();
    let plan = j.plan.as_ref().ok_or_else(|| ApiError::not_ready(&j))?;
    let set = plan
        .candidates
        .get(shape_id as usize)
        .ok_or_else(|| ApiError::not_found(format!("job {id} has no shape {shape_id}")))?;
    let candidates: Vec<Value> = set
        .candidates
        .iter()
        .enumerate()
        .map(|(rank, c)| {
            json!({
                "rank": rank,
                "exemplar_id": c.exemplar_id,
                "shape_id": c.shape_id,
                "score": c.score,
                "thumbnail": thumb_url(ShapeRef { exemplar_id: c.exemplar_id, shape_id: c.shape_id }),
            })
        })
        .collect();
    Ok(Json(json!({ "job_id": id, "shape_id": shape_id, "candidates": candidates })))
}

#[derive(Deserialize)]
struct SelectBody {
    shape_id: u32,
    candidate_idx: usize,
    /// Variant to start from; defaults to the current one.
    variant_id: Option<usize>,
}

async fn select_candidate(
    State(state): State<Shared>,
    Path(id): Path<u64>,
    Json(body): Json<SelectBody>,
) -> ApiResult<Json<Value>> {
    let job = lookup(&state, id)?;
    let st = state.clone();
    blocking(move || {
        let mut j = job.lock().unwrap();
        let plan = j.plan.clone().ok_or_else(|| ApiError::not_ready(&j))?;
        let from = body.variant_id.or(j.current).ok_or_else(|| ApiError::not_ready(&j))?;
        let prior = &j.variants.get(from).ok_or_else(|| ApiError::not_found(format!("no variant {from}")))?.composite;
        let c = recompose_with_selection(&plan, prior, body.shape_id, body.candidate_idx, &st.lib)?;
        let origin = VariantOrigin::Selected { from, shape_id: body.shape_id, candidate_idx: body.candidate_idx };
        let v = j.push_variant(c, origin);
        j.current = Some(v);
        st.save(&j);
        Ok(Json(json!({ "job_id": id, "variant_id": v, "image": variant_url(id, v) })))
    })
    .await
}

#[derive(Deserialize)]
struct VariantsQuery {
    count: Option<usize>,
    seed: Option<u64>,
}

async fn variants(
    State(state): State<Shared>,
    Path(id): Path<u64>,
    Query(q): Query<VariantsQuery>,
) -> ApiResult<Json<Value>> {
    let count = q.count.unwrap_or(1);
    if count == 0 || count > MAX_VARIANTS_PER_REQUEST {
        return Err(ApiError::bad_request(format!("count must be in 1..={MAX_VARIANTS_PER_REQUEST}")));
    }
    let job = lookup(&state, id)?;
    let st = state.clone();
    blocking(move || {
        let mut j = job.lock().unwrap();
        let plan = j.plan.clone().ok_or_else(|| ApiError::not_ready(&j))?;
        let seed = q.seed.unwrap_or(j.config.seed);
        let config = SynthesisConfig { seed, ..j.config.clone() };
        let mut out = Vec::new();
        for (i, c) in plan_variants(&plan, &st.lib, &config, count)?.into_iter().enumerate() {
            let s = seed.wrapping_add(i as u64);
            let selections = c.selections.clone();
            let v = j.push_variant(c, VariantOrigin::Seeded { seed: s });
            out.push(json!({ "variant_id": v, "seed": s, "selections": selections, "image": variant_url(id, v) }));
        }
        st.save(&j);
        Ok(Json(json!({ "job_id": id, "variants": out })))
    })
    .await
}

async fn edit_scene(
    State(state): State<Shared>,
    Path(id): Path<u64>,
    Json(edit): Json<SceneEdit>,
) -> ApiResult<Json<Value>> {
    let job = lookup(&state, id)?;
    let st = state.clone();
    let out = blocking(move || {
        let mut j = job.lock().unwrap();
        let outcome = apply_edit(&j.labels, &j.instances, &edit, Some(&st.lib))?;
        let labels_png = BASE64.encode(encode_labels(&outcome.labels)?);
        let instances_png = BASE64.encode(encode_instances(&outcome.instances)?);
        j.labels = outcome.labels;
        j.instances = outcome.instances;
        j.invalidate();
        st.save(&j);
        Ok(json!({
            "job_id": id,
            "revision": j.revision,
            "status": j.status,
            "changed": outcome.changed,
            "inverse": outcome.inverse,
            "labels_png": labels_png,
            "instances_png": instances_png,
            "invalidated": ["plan", "variants"],
        }))
    })
    .await?;
    schedule(&state, id);
    Ok(Json(out))
}

enum ImageName {
    Variant { job: u64, variant: usize },
    Thumb(ShapeRef),
}

fn parse_image_name(name: &str) -> Option<ImageName> {
    let name = name.strip_suffix(".png").unwrap_or(name);
    if let Some(rest) = name.strip_prefix("job-") {
        let (job, v) = rest.split_once("-v")?;
        return Some(ImageName::Variant { job: job.parse().ok()?, variant: v.parse().ok()? });
    }
    let (e, s) = name.strip_prefix("thumb-")?.split_once('-')?;
    Some(ImageName::Thumb(ShapeRef { exemplar_id: e.parse().ok()?, shape_id: s.parse().ok()? }))
}

async fn image(State(state): State<Shared>, Path(name): Path<String>) -> ApiResult<Response> {
    let unknown = || ApiError::not_found(format!("no image {name:?}"));
    match parse_image_name(&name).ok_or_else(unknown)? {
        ImageName::Variant { job, variant } => {
            let job = lookup(&state, job)?;
            let j = job.lock().unwrap();
            let v = j.variants.get(variant).ok_or_else(unknown)?;
            Ok(png(encode_rgb(&v.composite.image)?))
        }
        ImageName::Thumb(r) => {
            let st = state.clone();
            blocking(move || {
                let unknown = || ApiError::not_found(format!("no image {name:?}"));
                let shape = st.lib.shape(r).ok_or_else(unknown)?.clone();
                let img = st.lib.record(r.exemplar_id).ok_or_else(unknown)?.image()?;
                Ok(png(encode_rgb(&thumbnail(&img, &shape))?))
            })
            .await
        }
    }
}

/// Shape pixels cropped to the bbox and scaled so the longer side is
/// `THUMB_SIDE`; pixels outside the mask are black.
fn thumbnail(img: &image::RgbImage, shape: &ShapeInstance) -> image::RgbImage {
    let (rows, cols) = (shape.bbox.rows, shape.bbox.cols);
    let scale = THUMB_SIDE as f64 / rows.max(cols) as f64;
    let w = ((cols as f64 * scale).round() as u32).max(1);
    let h = ((rows as f64 * scale).round() as u32).max(1);
    let mut out = crop_resize_rgb(img, &shape.bbox, w, h);
    let mask = shape.mask.resized(h, w);
    for (x, y, p) in out.enumerate_pixels_mut() {
        if !mask.get(y, x) {
            *p = image::Rgb([0, 0, 0]);
        }
    }
    out
}

#[derive(Serialize)]
struct LibraryInfo<'a> {
    exemplars: usize,
    shapes: usize,
    num_categories: u16,
    category_names: &'a [String],
    shapes_per_category: Vec<usize>,
}

async fn library_info(State(state): State<Shared>) -> Json<Value> {
    let lib = &state.lib;
    let info = LibraryInfo {
        exemplars: lib.len(),
        shapes: lib.shape_count(),
        num_categories: lib.num_categories(),
        category_names: lib.category_names(),
        shapes_per_category: (0..lib.num_categories()).map(|c| lib.shapes_of(c).len()).collect(),
    };
    Json(serde_json::to_value(info).unwrap_or_default())
}

#[derive(Deserialize)]
struct LibraryShapesQuery {
    category: u16,
    #[serde(default)]
    page: usize,
}

async fn library_shapes(State(state): State<Shared>, Query(q): Query<LibraryShapesQuery>) -> ApiResult<Json<Value>> {
    let lib = &state.lib;
    if q.category >= lib.num_categories() {
        return Err(ApiError::bad_request(format!("unknown category {}", q.category)));
    }
    let refs = lib.shapes_of(q.category);
    let shapes: Vec<Value> = refs
        .iter()
        .skip(q.page.saturating_mul(LIBRARY_PAGE_SIZE))
        .take(LIBRARY_PAGE_SIZE)
        .filter_map(|&r| {
            let s = lib.shape(r)?;
            let mut v = shape_json(s, lib.category_names());
            v["exemplar_id"] = json!(r.exemplar_id);
            v["thumbnail"] = json!(thumb_url(r));
            Some(v)
        })
        .collect();
    Ok(Json(json!({
        "category": q.category,
        "page": q.page,
        "page_size": LIBRARY_PAGE_SIZE,
        "total": refs.len(),
        "shapes": shapes,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_names_parse() {
        assert!(matches!(parse_image_name("job-3-v12"), Some(ImageName::Variant { job: 3, variant: 12 })));
        assert!(matches!(parse_image_name("job-3-v12.png"), Some(ImageName::Variant { job: 3, variant: 12 })));
        assert!(matches!(
            parse_image_name("thumb-7-2"),
            Some(ImageName::Thumb(ShapeRef { exemplar_id: 7, shape_id: 2 }))
        ));
        assert!(parse_image_name("job-x-v1").is_none());
        assert!(parse_image_name("other").is_none());
    }

    #[test]
    fn edit_errors_map_to_unprocessable() {
        assert_eq!(ApiError::from(Error::InvalidEdit("x".into())).status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(ApiError::from(Error::InvalidInput("x".into())).status, StatusCode::BAD_REQUEST);
    }
}
