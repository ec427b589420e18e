//! HTTP service: one current scene frame, a last-write-wins gaze point and
//! the selection computed from both on demand.
//!
//! Routes: `GET /health`, `GET|POST /frame`, `POST /gaze`, `GET /heatmap`,
//! `GET /selection`, `GET /stream` (server-sent events).

use std::convert::Infallible;
use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{rejection::JsonRejection, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::Stream;
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::eyesim::{Rig, SceneFrame};
use crate::fuse::{gaze_filter, FuseError, FusionConfig, GraspDetector, Selection, SelectionJson};
use crate::geom::Pixel;
use crate::grasp::GraspMaps;

/// Error body `{"error": {"code", "message"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: ErrorDetail { code: self.code.to_string(), message: self.message } };
        (self.status, Json(body)).into_response()
    }
}

impl From<FuseError> for ApiError {
    fn from(e: FuseError) -> Self {
        match e {
            FuseError::GazeOutOfBounds { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "GazeOutOfBounds", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "FusionFailed", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeRequest {
    pub u: f64,
    pub v: f64,
    pub t_ms: i64,
}

/// A selection tagged with the frame it was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServedSelection {
    pub frame_id: u64,
    #[serde(flatten)]
    pub selection: SelectionJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
}

struct Current {
    frame: Arc<SceneFrame>,
    frame_id: u64,
    maps: Option<Arc<GraspMaps>>,
    gaze: Option<(Pixel, i64)>,
}

/// Shared service state. The detector and configs are immutable; frame and
/// gaze sit behind one lock.
pub struct Service {
    detector: Box<dyn GraspDetector>,
    fusion: FusionConfig,
    current: Mutex<Current>,
    events: broadcast::Sender<ServedSelection>,
}

impl Service {
    pub fn new(detector: Box<dyn GraspDetector>, fusion: FusionConfig, frame: SceneFrame) -> anyhow::Result<Self> {
        fusion.validate()?;
        let (events, _) = broadcast::channel(64);
        Ok(Self {
            detector,
            fusion,
            current: Mutex::new(Current { frame: Arc::new(frame), frame_id: 0, maps: None, gaze: None }),
            events,
        })
    }

    pub fn model_name(&self) -> &str {
        self.detector.name()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Current> {
        self.current.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn frame(&self) -> (u64, Arc<SceneFrame>) {
        let c = self.lock();
        (c.frame_id, c.frame.clone())
    }

    pub fn set_frame(&self, frame: SceneFrame) -> FrameInfo {
        let info = {
            let mut c = self.lock();
            c.frame_id += 1;
            c.frame = Arc::new(frame);
            c.maps = None;
            // a gaze point outside the new frame no longer applies
            if let Some((g, _)) = c.gaze {
                if !g.in_bounds(c.frame.image.width(), c.frame.image.height()) {
                    c.gaze = None;
                }
            }
            FrameInfo { frame_id: c.frame_id, width: c.frame.image.width(), height: c.frame.image.height() }
        };
        self.publish();
        info
    }

    /// Grasp maps of the current frame, computed at most once per frame.
    pub fn maps(&self) -> Result<(u64, Arc<GraspMaps>), ApiError> {
        let (id, frame) = {
            let c = self.lock();
            if let Some(m) = &c.maps {
                return Ok((c.frame_id, m.clone()));
            }
            (c.frame_id, c.frame.clone())
        };
        let maps = Arc::new(
            self.detector
                .detect(&frame)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "DetectionFailed", e.to_string()))?,
        );
        let mut c = self.lock();
        if c.frame_id == id {
            c.maps = Some(maps.clone());
        }
        Ok((id, maps))
    }

    pub fn set_gaze(&self, req: GazeRequest) -> Result<Option<ServedSelection>, ApiError> {
        let g = Pixel::new(req.u, req.v);
        {
            let mut c = self.lock();
            let (w, h) = (c.frame.image.width(), c.frame.image.height());
            if !g.in_bounds(w, h) {
                return Err(FuseError::GazeOutOfBounds { u: g.u, v: g.v, width: w as usize, height: h as usize }.into());
            }
            c.gaze = Some((g, req.t_ms));
        }
        Ok(self.publish())
    }

    /// Selection for the current frame and gaze; `None` before any gaze.
    pub fn selection(&self) -> Result<Option<ServedSelection>, ApiError> {
        let Some((gaze, _)) = self.lock().gaze else { return Ok(None) };
        let (id, maps) = self.maps()?;
        let sel: Selection = gaze_filter(&maps, gaze, &self.fusion)?;
        Ok(Some(ServedSelection { frame_id: id, selection: sel.to_json() }))
    }

    fn publish(&self) -> Option<ServedSelection> {
        match self.selection() {
            Ok(Some(s)) => {
                let _ = self.events.send(s);
                Some(s)
            }
            Ok(None) => None,
            Err(e) => {
                log::warn!("selection update failed: {}", e.message);
                None
            }
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServedSelection> {
        self.events.subscribe()
    }
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], bytes).into_response()
}

fn encode_png(img: impl Into<image::DynamicImage>) -> Result<Vec<u8>, ApiError> {
    let mut buf = Cursor::new(Vec::new());
    img.into()
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "EncodeFailed", e.to_string()))?;
    Ok(buf.into_inner())
}

/// Quality map as an 8-bit image, 0 → 0 and 1 → 255.
pub fn heatmap_image(maps: &GraspMaps) -> GrayImage {
    GrayImage::from_fn(maps.width as u32, maps.height as u32, |x, y| {
        let q = maps.quality[maps.index(x as usize, y as usize)];
        image::Luma([(q.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

type Shared = Arc<Service>;

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model": s.model_name() }))
}

async fn get_frame(State(s): State<Shared>) -> Result<Response, ApiError> {
    let (_, frame) = s.frame();
    let bytes = blocking(move || encode_png(frame.image.clone())).await?;
    Ok(png_response(bytes))
}

async fn post_frame(State(s): State<Shared>, body: Bytes) -> Result<Json<FrameInfo>, ApiError> {
    let img = image::load_from_memory_with_format(&body, image::ImageFormat::Png)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidImage", e.to_string()))?;
    let image: RgbImage = img.to_rgb8();
    if image.width() == 0 || image.height() == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "InvalidImage", "empty image"));
    }
    let plane = s.frame().1.working_plane;
    let frame = SceneFrame { image, truth_grasps: Vec::new(), working_plane: plane, gaze_truth: None };
    blocking(move || Ok(Json(s.set_frame(frame)))).await
}

async fn post_gaze(
    State(s): State<Shared>,
    req: Result<Json<GazeRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", e.body_text()))?;
    if !(req.u.is_finite() && req.v.is_finite()) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "GazeOutOfBounds", "gaze must be finite"));
    }
    let sel = blocking(move || s.set_gaze(req)).await?;
    Ok(match sel {
        Some(sel) => Json(sel).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn get_heatmap(State(s): State<Shared>) -> Result<Response, ApiError> {
    let bytes = blocking(move || encode_png(heatmap_image(&s.maps()?.1))).await?;
    Ok(png_response(bytes))
}

async fn get_selection(State(s): State<Shared>) -> Result<Json<ServedSelection>, ApiError> {
    blocking(move || s.selection())
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NoSelection", "no gaze received yet"))
}

async fn stream(State(s): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.subscribe();
    let first = tokio::task::spawn_blocking(move || s.selection().ok().flatten()).await.ok().flatten();
    let events = futures::stream::unfold((first, rx, None::<ServedSelection>), |(mut pending, mut rx, mut last)| async move {
        loop {
            let next = match pending.take() {
                Some(s) => s,
                None => match rx.recv().await {
                    Ok(s) => s,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
            };
            if last == Some(next) {
                continue;
            }
            last = Some(next);
            let event = Event::default().event("selection").json_data(next).expect("serializable");
            return Some((Ok(event), (None, rx, last)));
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/frame", get(get_frame).post(post_frame))
        .route("/gaze", axum::routing::post(post_gaze))
        .route("/heatmap", get(get_heatmap))
        .route("/selection", get(get_selection))
        .route("/stream", get(stream))
        .fallback(not_found)
        .layer(axum::extract::DefaultBodyLimit::max(32 << 20))
        .with_state(service)
}

/// Initial synthetic frame for a rig: the default two-object scene.
pub fn synthetic_frame(rig: &Rig) -> anyhow::Result<SceneFrame> {
    use crate::eyesim::{make_scene, SceneObject, SceneSpec};
    let spec = SceneSpec {
        objects: vec![
            SceneObject::Bar { x: -0.07, y: -0.01, yaw: 0.5, length: 0.10, thickness: 0.025 },
            SceneObject::Box { x: 0.065, y: 0.02, yaw: -0.4, length: 0.07, width: 0.045 },
        ],
    };
    Ok(make_scene(&spec, &rig.scene_camera, &rig.working_plane, rig.scene_size)?)
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, service: Service) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(service)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
