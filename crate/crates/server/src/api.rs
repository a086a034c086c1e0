use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use image::DynamicImage;
use insertkit_pipeline::imaging::{decode_image, encode_png, sha256_hex};
use insertkit_pipeline::placement::{mask_overlay, white_canvas};
use insertkit_pipeline::{
    place_object, PipelineConfig, PlacementSpec, PromptSpec, RunManifest, TemplateId, MANIFEST_FILE,
};
use serde::{Deserialize, Serialize};

use crate::config::CANVAS_MULTIPLE;
use crate::error::{ApiError, ApiResult};
use crate::jobs::{current_object, Job, JobTicket, RESULT_DIR};
use crate::session::{AuditEntry, AssetKind, AssetRef, JobKind, PreviewRef, Session, Stage, StageRun};
use crate::AppState;

pub fn routes(state: AppState) -> Router {
    let limit = state.inner.config.max_upload_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/prompt", put(set_prompt))
        .route("/sessions/{id}/config", put(set_config))
        .route("/sessions/{id}/assets", post(upload))
        .route("/sessions/{id}/assets/{sha}", get(get_asset))
        .route("/sessions/{id}/placement", put(set_placement))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/preview/overlay", get(preview_overlay))
        .route("/sessions/{id}/stages/{stage}", post(run_stage))
        .route("/sessions/{id}/variants/{stage}", get(list_variants))
        .route("/sessions/{id}/variants/{stage}/select", post(select))
        .route("/sessions/{id}/variants/{stage}/{index}", get(get_variant))
        .route("/sessions/{id}/run", post(run_batch))
        .route("/sessions/{id}/result", get(result))
        .route("/sessions/{id}/result/image", get(result_image))
        .route("/sessions/{id}/files/{*path}", get(result_file))
        .route("/jobs/{id}", get(get_job))
        .route("/prompts/render", post(render_prompt))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Runs blocking store and image work off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(ApiError::internal)?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn content_type(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        _ if serde_json::from_slice::<serde_json::Value>(bytes).is_ok() => "application/json",
        _ => "application/octet-stream",
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub prompt: Option<PromptSpec>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

fn merged_config(base: &PipelineConfig, patch: serde_json::Value) -> ApiResult<PipelineConfig> {
    let mut value = serde_json::to_value(base).map_err(ApiError::internal)?;
    let (Some(target), serde_json::Value::Object(fields)) = (value.as_object_mut(), patch) else {
        return Err(ApiError::unprocessable("config must be a JSON object"));
    };
    for (k, v) in fields {
        if !target.contains_key(&k) {
            return Err(ApiError::unprocessable(format!("unknown config field `{k}`")));
        }
        target.insert(k, v);
    }
    let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    cfg.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(cfg)
}

async fn create_session(State(state): State<AppState>, body: Option<Json<CreateSession>>) -> ApiResult<Response> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let session = blocking(&state, move |st| {
        let config = match req.config {
            Some(patch) => merged_config(&st.inner.config.pipeline, patch)?,
            None => st.inner.config.pipeline.clone(),
        };
        let prompt = req
            .prompt
            .unwrap_or_else(|| PromptSpec::new("", "", "", TemplateId::Insertion));
        let session = Session::new(uuid::Uuid::new_v4().to_string(), prompt, config);
        st.inner.store.create(&session)?;
        Ok(session)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    blocking(&state, move |st| st.inner.store.load(&id)).await.map(Json)
}

async fn set_prompt(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(prompt): Json<PromptSpec>,
) -> ApiResult<Json<Session>> {
    blocking(&state, move |st| {
        st.inner.store.update(&id, |s| {
            s.check_configurable()?;
            s.log("prompt", serde_json::json!({ "prompt": prompt }));
            s.prompt = prompt;
            Ok(s.clone())
        })
    })
    .await
    .map(Json)
}

async fn set_config(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(patch): Json<serde_json::Value>,
) -> ApiResult<Json<Session>> {
    blocking(&state, move |st| {
        st.inner.store.update(&id, |s| {
            s.check_configurable()?;
            let cfg = merged_config(&s.config, patch.clone())?;
            s.log("config", patch);
            s.config = cfg;
            Ok(s.clone())
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct KindQuery {
    pub kind: String,
}

#[derive(Debug, Serialize)]
pub struct UploadResponse {
    pub kind: AssetKind,
    #[serde(flatten)]
    pub asset: AssetRef,
    /// The same bytes were already stored for this session.
    pub duplicate: bool,
}

async fn upload(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<KindQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let kind: AssetKind = q.kind.parse()?;
    if body.is_empty() {
        return Err(ApiError::BadRequest("empty upload".into()));
    }
    let resp = blocking(&state, move |st| {
        let image = decode_image(&body).map_err(|e| ApiError::BadRequest(format!("not a decodable image: {e}")))?;
        let sha = sha256_hex(&body);
        let asset = AssetRef {
            file: format!("assets/{sha}"),
            sha256: sha,
            width: image.width(),
            height: image.height(),
        };
        st.inner.store.update(&id, |s| {
            s.check_upload()?;
            let duplicate = s.assets.values().any(|a| a.sha256 == asset.sha256);
            if !duplicate {
                st.inner.store.write_file(&s.id, &asset.file, &body)?;
            }
            s.apply_upload(kind, asset.clone());
            Ok(UploadResponse {
                kind,
                asset: asset.clone(),
                duplicate,
            })
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

async fn get_asset(State(state): State<AppState>, Path((id, sha)): Path<(String, String)>) -> ApiResult<Response> {
    let bytes = blocking(&state, move |st| {
        let s = st.inner.store.load(&id)?;
        let asset = s
            .assets
            .values()
            .find(|a| a.sha256 == sha)
            .ok_or_else(|| ApiError::NotFound(format!("no asset `{sha}`")))?;
        st.inner.store.read_file(&s.id, &asset.file)
    })
    .await?;
    let ct = content_type(&bytes);
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRequest {
    pub x: i64,
    pub y: i64,
    pub scale: f64,
    /// Required without a background; must match it otherwise.
    #[serde(default)]
    pub canvas_size: Option<(u32, u32)>,
}

#[derive(Debug, Serialize)]
pub struct PlacementResponse {
    pub placement: PlacementSpec,
    pub preview: PreviewRef,
}

async fn set_placement(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PlacementRequest>,
) -> ApiResult<Json<PlacementResponse>> {
    blocking(&state, move |st| {
        let store = &st.inner.store;
        store.update(&id, |s| {
            s.check_placement()?;
            let background = match s.assets.get(&AssetKind::Background) {
                Some(a) => Some(decode_image(&store.read_file(&s.id, &a.file)?).map_err(ApiError::internal)?.to_rgb8()),
                None => None,
            };
            let canvas_size = match (&background, req.canvas_size) {
                (Some(bg), None) => bg.dimensions(),
                (Some(bg), Some(c)) if c == bg.dimensions() => c,
                (Some(bg), Some(c)) => {
                    return Err(ApiError::unprocessable(format!(
                        "canvas {c:?} differs from the background {:?}",
                        bg.dimensions()
                    )))
                }
                (None, Some(c)) => c,
                (None, None) => return Err(ApiError::unprocessable("canvas_size is required without a background")),
            };
            if canvas_size.0 == 0
                || canvas_size.1 == 0
                || canvas_size.0 % CANVAS_MULTIPLE != 0
                || canvas_size.1 % CANVAS_MULTIPLE != 0
            {
                return Err(ApiError::unprocessable(format!(
                    "canvas {}x{} must be non-empty with sides divisible by {CANVAS_MULTIPLE}",
                    canvas_size.0, canvas_size.1
                )));
            }
            let spec = PlacementSpec::new(req.x, req.y, req.scale, canvas_size);
            let object = current_object(store, s)?;
            let dims = (object.width(), object.height());
            if let Err(e) = spec.validate(dims) {
                return Err(ApiError::Unprocessable {
                    message: e.to_string(),
                    suggestion: Some(spec.clamped(dims)),
                });
            }
            let canvas = background.unwrap_or_else(|| white_canvas(canvas_size));
            let placed = place_object(&object, &canvas, &spec, s.config.mask_threshold)?;
            let image = encode_png(&DynamicImage::ImageRgb8(placed.image.clone()))?;
            let overlay = encode_png(&DynamicImage::ImageRgb8(mask_overlay(&placed)))?;
            store.write_file(&s.id, "preview/preview.png", &image)?;
            store.write_file(&s.id, "preview/overlay.png", &overlay)?;
            let preview = PreviewRef {
                image: "preview/preview.png".into(),
                overlay: "preview/overlay.png".into(),
                sha256: sha256_hex(&image),
                mask_area: placed.mask.count_ones(),
            };
            s.apply_placement(spec, preview.clone());
            Ok(PlacementResponse {
                placement: spec,
                preview,
            })
        })
    })
    .await
    .map(Json)
}

async fn preview_file(state: &AppState, id: String, overlay: bool) -> ApiResult<Response> {
    let bytes = blocking(state, move |st| {
        let s = st.inner.store.load(&id)?;
        let p = s
            .preview
            .as_ref()
            .ok_or_else(|| ApiError::NotFound("session has no placement preview".into()))?;
        st.inner
            .store
            .read_file(&s.id, if overlay { &p.overlay } else { &p.image })
    })
    .await?;
    Ok(png(bytes))
}

async fn preview(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    preview_file(&state, id, false).await
}

async fn preview_overlay(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    preview_file(&state, id, true).await
}

#[derive(Debug, Deserialize)]
pub struct KQuery {
    #[serde(default)]
    pub k: Option<usize>,
}

fn submit(st: &AppState, ticket: &JobTicket) -> ApiResult<()> {
    st.inner.pool.submit(Job::from(ticket))
}

async fn run_stage(
    State(state): State<AppState>,
    Path((id, stage)): Path<(String, String)>,
    Query(q): Query<KQuery>,
) -> ApiResult<Response> {
    let stage: Stage = stage.parse()?;
    let ticket = blocking(&state, move |st| {
        let store = &st.inner.store;
        let ticket = store.update(&id, |s| {
            let k = q.k.unwrap_or(s.config.variants_k);
            s.check_run(stage, k)?;
            let ticket = JobTicket::new(&s.id, JobKind::Stage { stage });
            store.save_job(&ticket)?;
            s.apply_run(stage, k, &ticket.id);
            Ok(ticket)
        })?;
        submit(st, &ticket)?;
        Ok(ticket)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(ticket)).into_response())
}

async fn run_batch(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let ticket = blocking(&state, move |st| {
        let store = &st.inner.store;
        let ticket = store.update(&id, |s| {
            s.check_batch()?;
            let ticket = JobTicket::new(&s.id, JobKind::Batch);
            store.save_job(&ticket)?;
            s.apply_batch_queued(&ticket.id);
            Ok(ticket)
        })?;
        submit(st, &ticket)?;
        Ok(ticket)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(ticket)).into_response())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobTicket>> {
    blocking(&state, move |st| st.inner.store.load_job(&id)).await.map(Json)
}

async fn list_variants(
    State(state): State<AppState>,
    Path((id, stage)): Path<(String, String)>,
) -> ApiResult<Json<StageRun>> {
    let stage: Stage = stage.parse()?;
    blocking(&state, move |st| {
        let s = st.inner.store.load(&id)?;
        s.stages
            .get(&stage)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("{stage} has not run")))
    })
    .await
    .map(Json)
}

async fn get_variant(
    State(state): State<AppState>,
    Path((id, stage, index)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let stage: Stage = stage.parse()?;
    let index: usize = index
        .parse()
        .map_err(|_| ApiError::NotFound(format!("no variant `{index}`")))?;
    let bytes = blocking(&state, move |st| {
        let s = st.inner.store.load(&id)?;
        let v = s
            .stages
            .get(&stage)
            .and_then(|r| r.variants.get(index))
            .ok_or_else(|| ApiError::NotFound(format!("no {stage} variant {index}")))?;
        st.inner.store.read_file(&s.id, &v.file)
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub index: usize,
}

#[derive(Debug, Serialize)]
pub struct SelectResponse {
    pub session: Session,
    /// Finalize job queued by this selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job: Option<JobTicket>,
}

async fn select(
    State(state): State<AppState>,
    Path((id, stage)): Path<(String, String)>,
    Json(req): Json<SelectRequest>,
) -> ApiResult<Json<SelectResponse>> {
    let stage: Stage = stage.parse()?;
    blocking(&state, move |st| {
        let store = &st.inner.store;
        let resp = store.update(&id, |s| {
            s.check_select(stage, req.index)?;
            let job = if s.apply_selection(stage, req.index) {
                let ticket = JobTicket::new(&s.id, JobKind::Finalize);
                store.save_job(&ticket)?;
                s.apply_finalize_queued(&ticket.id);
                Some(ticket)
            } else {
                None
            };
            Ok(SelectResponse {
                session: s.clone(),
                job,
            })
        })?;
        if let Some(t) = &resp.job {
            submit(st, t)?;
        }
        Ok(resp)
    })
    .await
    .map(Json)
}

#[derive(Debug, Serialize)]
pub struct FileLink {
    /// Path under `/sessions/{id}/files/`.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ResultResponse {
    pub final_image: FileLink,
    pub manifest: RunManifest,
    /// One per session stage that ran (colorize, compose, refine).
    pub thumbnails: BTreeMap<String, FileLink>,
    pub audit: Vec<AuditEntry>,
}

fn load_result(st: &AppState, id: &str) -> ApiResult<(Session, RunManifest)> {
    let s = st.inner.store.load(id)?;
    let Some(result) = &s.result else {
        return Err(ApiError::conflict(format!("no result yet (state {:?})", s.state)));
    };
    let text = st
        .inner
        .store
        .read_file(&s.id, &format!("{}/{MANIFEST_FILE}", result.dir))?;
    let manifest = RunManifest::from_json(&String::from_utf8_lossy(&text)).map_err(ApiError::internal)?;
    Ok((s, manifest))
}

async fn result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ResultResponse>> {
    blocking(&state, move |st| {
        let (s, manifest) = load_result(st, &id)?;
        let final_out = manifest
            .final_output
            .as_ref()
            .ok_or_else(|| ApiError::internal("run manifest lists no final output"))?;
        let final_image = FileLink {
            path: final_out.file.path.clone(),
            sha256: s.result.as_ref().map(|r| r.sha256.clone()).unwrap_or_default(),
        };
        let thumbnails = manifest
            .stages
            .iter()
            .filter(|stage| stage.name.parse::<Stage>().is_ok())
            .filter_map(|stage| {
                stage
                    .outputs
                    .iter()
                    .find(|f| f.path.ends_with("/thumbnail.png"))
                    .map(|f| {
                        (
                            stage.name.clone(),
                            FileLink {
                                path: f.path.clone(),
                                sha256: f.sha256.clone(),
                            },
                        )
                    })
            })
            .collect();
        Ok(ResultResponse {
            final_image,
            manifest,
            thumbnails,
            audit: s.audit,
        })
    })
    .await
    .map(Json)
}

async fn result_image(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = blocking(&state, move |st| {
        let (s, manifest) = load_result(st, &id)?;
        let path = manifest
            .final_output
            .map(|o| o.file.path)
            .ok_or_else(|| ApiError::internal("run manifest lists no final output"))?;
        st.inner.store.read_file(&s.id, &format!("{RESULT_DIR}/{path}"))
    })
    .await?;
    Ok(png(bytes))
}

async fn result_file(
    State(state): State<AppState>,
    Path((id, path)): Path<(String, String)>,
) -> ApiResult<Response> {
    let bytes = blocking(&state, move |st| {
        let (s, _) = load_result(st, &id)?;
        crate::store::join_relative(std::path::Path::new(RESULT_DIR), &path)?;
        st.inner.store.read_file(&s.id, &format!("{RESULT_DIR}/{path}"))
    })
    .await?;
    let ct = content_type(&bytes);
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

#[derive(Debug, Serialize)]
pub struct RenderResponse {
    pub template_id: TemplateId,
    pub template_digest: String,
    pub text: String,
}

async fn render_prompt(State(state): State<AppState>, Json(spec): Json<PromptSpec>) -> ApiResult<Json<RenderResponse>> {
    let r = state
        .inner
        .config
        .templates
        .render_recorded(&spec)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(RenderResponse {
        template_id: r.template_id,
        template_digest: r.template_digest,
        text: r.text,
    }))
}

