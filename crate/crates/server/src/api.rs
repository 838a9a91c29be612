use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use splatedit::editing::EditOp;
use splatedit::io::{to_bytes, SceneMeta};
use splatedit::semantics::{query_bbox, query_text, relevancy_scores, PixelRect, Selection, DEFAULT_K, DEFAULT_RHO, DEFAULT_TAU};
use splatedit::trainer::{prepare, TrainConfig};
use splatedit::{rasterize, Camera, GaussianScene, Image};

use crate::error::ApiError;
use crate::session::{Command, Session, Snapshot, StatusBody};
use crate::{AppState, MAX_RENDER_SIDE};

const MAX_UPLOAD: usize = 64 << 20;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/status", get(status))
        .route("/session/{id}/render", post(render))
        .route("/session/{id}/query/text", post(text_query))
        .route("/session/{id}/query/bbox", post(bbox_query))
        .route("/session/{id}/edit", post(edit))
        .route("/session/{id}/undo", post(undo))
        .route("/session/{id}/export", get(export))
        .route("/session/{id}/stream", get(stream))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// Base64 PNG.
    pub image_png: String,
    /// Defaults to fx = fy = width with a centred principal point.
    #[serde(default)]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RenderRequest {
    /// Defaults to the input camera.
    #[serde(default)]
    pub camera: Option<Camera>,
    /// Also render the relevancy of every Gaussian to this text.
    #[serde(default)]
    pub heatmap: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextQuery {
    pub text: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BboxQuery {
    pub rect: PixelRect,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

/// An edit plus the scene revision the client last saw. Without a revision
/// the edit applies to whatever is current.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditRequest {
    #[serde(default)]
    pub revision: Option<u64>,
    #[serde(flatten)]
    pub op: EditOp,
}

fn session(state: &AppState, id: u64) -> Result<Arc<Session>, ApiError> {
    state
        .sessions
        .read()
        .expect("session table poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::unknown_session(id))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> Result<Json<serde_json::Value>, ApiError> {
    let bytes = B64.decode(req.image_png.as_bytes()).map_err(|e| ApiError::bad_request(format!("image_png: {e}")))?;
    let image = Image::decode_png(&bytes)?;
    let camera = req.camera.unwrap_or_else(|| {
        let (w, h) = (image.width as f64, image.height as f64);
        Camera::new(w, w, w / 2.0, h / 2.0, image.width, image.height)
    });
    if camera.width != image.width || camera.height != image.height {
        return Err(ApiError::bad_request("camera resolution differs from the image"));
    }
    let cfg = req.config.unwrap_or_default();
    let priors = (state.priors)();
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (cam, p) = (camera.clone(), priors.clone());
    let (scene, trainer) = blocking(move || Ok(prepare(&image, &cam, &cfg, &p)?)).await?;
    let s = Session::start(id, camera, scene, trainer, priors);
    state.sessions.write().expect("session table poisoned").insert(id, s);
    log::info!("session {id} created");
    Ok(Json(json!({ "id": id })))
}

async fn status(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Json<StatusBody>, ApiError> {
    Ok(Json(session(&state, id)?.status()))
}

fn check_camera(camera: &Camera) -> Result<(), ApiError> {
    if camera.width > MAX_RENDER_SIDE || camera.height > MAX_RENDER_SIDE {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "render_too_large",
            format!("renders are capped at {MAX_RENDER_SIDE}x{MAX_RENDER_SIDE}"),
        ));
    }
    Ok(camera.validate()?)
}

/// Blue for irrelevant, red for relevant.
fn heat_scene(scene: &GaussianScene, scores: &[f64]) -> GaussianScene {
    let mut heat = scene.snapshot();
    for (g, &s) in heat.gaussians_mut().iter_mut().zip(scores) {
        g.sh.iter_mut().for_each(|c| *c = 0.0);
        g.set_base_color([s, 0.1, 1.0 - s]);
    }
    heat.with_background([0.0; 3])
}

fn require_distilled(snap: &Snapshot) -> Result<(), ApiError> {
    if snap.distilled && snap.scene.codec().is_some() {
        Ok(())
    } else {
        Err(ApiError::codec_not_ready())
    }
}

async fn render(State(state): State<AppState>, Path(id): Path<u64>, Json(req): Json<RenderRequest>) -> Result<Response, ApiError> {
    let s = session(&state, id)?;
    let camera = req.camera.unwrap_or_else(|| s.camera.clone());
    check_camera(&camera)?;
    let snap = s.snapshot();
    let revision = snap.revision();
    if let Some(text) = &req.heatmap {
        require_distilled(&snap)?;
        let text = text.clone();
        let (image, heat) = blocking(move || {
            let image = rasterize(&snap.scene, &camera)?.rgb.encode_png()?;
            let scores = relevancy_scores(&snap.scene, &s.priors, &text)?;
            let heat = rasterize(&heat_scene(&snap.scene, &scores), &camera)?.rgb.encode_png()?;
            Ok((image, heat))
        })
        .await?;
        return Ok(Json(json!({
            "revision": revision,
            "image_png": B64.encode(image),
            "heatmap_png": B64.encode(heat),
        }))
        .into_response());
    }
    let png = blocking(move || Ok(rasterize(&snap.scene, &camera)?.rgb.encode_png()?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png".to_string()), ("x-scene-revision".parse().unwrap(), revision.to_string())], png).into_response())
}

async fn text_query(State(state): State<AppState>, Path(id): Path<u64>, Json(q): Json<TextQuery>) -> Result<Json<Selection>, ApiError> {
    let s = session(&state, id)?;
    let snap = s.snapshot();
    require_distilled(&snap)?;
    blocking(move || Ok(query_text(&snap.scene, &s.priors, &q.text, q.tau)?)).await.map(Json)
}

async fn bbox_query(State(state): State<AppState>, Path(id): Path<u64>, Json(q): Json<BboxQuery>) -> Result<Json<Selection>, ApiError> {
    let s = session(&state, id)?;
    let snap = s.snapshot();
    require_distilled(&snap)?;
    let camera = q.camera.unwrap_or_else(|| s.camera.clone());
    check_camera(&camera)?;
    blocking(move || Ok(query_bbox(&snap.scene, &camera, q.rect, q.k, q.rho, q.seed)?)).await.map(Json)
}

async fn edit(State(state): State<AppState>, Path(id): Path<u64>, Json(req): Json<EditRequest>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&state, id)?;
    let revision = s
        .send(|reply| Command::Edit {
            op: req.op,
            revision: req.revision,
            reply,
        })
        .await?;
    Ok(Json(json!({ "revision": revision })))
}

async fn undo(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&state, id)?;
    let revision = s.send(|reply| Command::Undo { reply }).await?;
    Ok(Json(json!({ "revision": revision })))
}

async fn export(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let s = session(&state, id)?;
    let snap = s.snapshot();
    let meta = SceneMeta {
        camera: Some(s.camera.clone()),
        backends: Some(s.priors.info.clone()),
        seed: Some(s.cfg.seed),
    };
    let bytes = to_bytes(&snap.scene, &meta)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            ("x-scene-revision".parse().unwrap(), snap.revision().to_string()),
        ],
        bytes,
    )
        .into_response())
}

async fn stream(State(state): State<AppState>, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let s = session(&state, id)?;
    Ok(ws.on_upgrade(move |socket| push_frames(socket, s)))
}

/// Sends a JSON header and a PNG frame on connect, after every publication,
/// and whenever the client sends a new camera as a text message.
async fn push_frames(mut socket: WebSocket, s: Arc<Session>) {
    let mut frames = s.frames.subscribe();
    let mut camera = s.camera.clone();
    loop {
        let snap = s.snapshot();
        let (revision, step) = (snap.revision(), snap.step);
        let cam = camera.clone();
        let png = match blocking(move || Ok(rasterize(&snap.scene, &cam)?.rgb.encode_png()?)).await {
            Ok(png) => png,
            Err(e) => {
                let _ = socket.send(Message::Text(json!({ "error": e.message }).to_string().into())).await;
                return;
            }
        };
        let header = json!({ "revision": revision, "step": step }).to_string();
        if socket.send(Message::Text(header.into())).await.is_err() || socket.send(Message::Binary(png.into())).await.is_err() {
            return;
        }
        loop {
            tokio::select! {
                published = frames.recv() => match published {
                    Ok(_) | Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => break,
                    Err(_) => return,
                },
                incoming = socket.recv() => match incoming {
                    Some(Ok(Message::Text(t))) => match serde_json::from_str::<Camera>(&t).map_err(|e| e.to_string()).and_then(|c| {
                        check_camera(&c).map_err(|e| e.message)?;
                        Ok(c)
                    }) {
                        Ok(c) => {
                            camera = c;
                            break;
                        }
                        Err(e) => {
                            if socket.send(Message::Text(json!({ "error": e }).to_string().into())).await.is_err() {
                                return;
                            }
                        }
                    },
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => {}
                },
            }
        }
    }
}
