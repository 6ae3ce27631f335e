//! HTTP scoring service.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `GET /api/health` | | model and detector status |
//! | `POST /api/saliency` | raw image bytes | stored map reference and size |
//! | `GET /api/saliency/{ref}` | | 16-bit grayscale PNG |
//! | `POST /api/score` | `{"image": base64, "boxes"?: [box], "config"?}` | [`ScoreResponse`] |
//! | `POST /api/rescore` | `{"saliency_png_ref", "boxes", "config"?}` | score against a stored map |
//! | `POST /api/detect` | raw image bytes | `{"boxes": [...]}` |
//! | `GET /api/jobs/{id}` | | [`JobRecord`] |

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use brand_attention::brand_score::{brand_attention_score, detect_logos, LogoDetector, ScoreConfig};
use brand_attention::datamodel::{
    encode_saliency_png, load_image, BoundingBox, BoundingBoxSet, Grid, LoadedImage, SaliencyMap,
};
use brand_attention::pipeline::SaliencyPredictor;
use brand_attention::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

/// Longest side of the coarse grid sent to clients.
pub const GRID_MAX_SIDE: usize = 128;
const MAX_STORED_MAPS: usize = 256;
const MAX_JOBS: usize = 10_000;
const RETRY_AFTER_S: &str = "5";
// Detectors read the spooled original file; the decoded tensor is unused.
const DETECT_TENSOR_SIZE: (usize, usize) = (32, 32);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest accepted request body in bytes.
    pub upload_limit: usize,
    /// Concurrent inference calls.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            upload_limit: 20 << 20,
            workers: 1,
        }
    }
}

enum ModelSlot {
    Loading,
    Ready {
        predictor: Arc<dyn SaliencyPredictor>,
        checkpoint_id: String,
    },
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: String,
    pub status: JobStatus,
    /// Unix milliseconds.
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
    pub input_sha256: String,
    pub error: Option<String>,
}

impl JobRecord {
    pub fn new(id: String, kind: &str, input_sha256: String) -> Self {
        Self {
            id,
            kind: kind.to_string(),
            status: JobStatus::Queued,
            created_ms: now_ms(),
            started_ms: None,
            finished_ms: None,
            input_sha256,
            error: None,
        }
    }

    /// Moves forward along queued → running → done/error. Returns false,
    /// leaving the record untouched, for any other transition.
    pub fn advance(&mut self, to: JobStatus) -> bool {
        let allowed = matches!(
            (self.status, to),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Queued, JobStatus::Error)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Error)
        );
        if allowed {
            self.status = to;
            match to {
                JobStatus::Running => self.started_ms = Some(now_ms()),
                JobStatus::Done | JobStatus::Error => self.finished_ms = Some(now_ms()),
                JobStatus::Queued => {}
            }
        }
        allowed
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Coarse copy of a map for client-side what-if scoring: block sums over
/// at most `max_side` cells per side, divided by the total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyGrid {
    pub height: usize,
    pub width: usize,
    /// Side of one cell in original-image pixels.
    pub cell: usize,
    pub data: Vec<f64>,
}

pub fn pooled_grid(map: &Grid, max_side: usize) -> SaliencyGrid {
    let (h, w) = map.shape();
    let cell = h.max(w).div_ceil(max_side).max(1);
    let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
    let mut data = vec![0.0; gh * gw];
    for r in 0..h {
        for c in 0..w {
            data[(r / cell) * gw + c / cell] += map.get(r, c);
        }
    }
    let total: f64 = map.data.iter().sum();
    if total > 0.0 {
        data.iter_mut().for_each(|v| *v /= total);
    }
    SaliencyGrid {
        height: gh,
        width: gw,
        cell,
        data,
    }
}

#[derive(Default)]
struct MapStore {
    maps: HashMap<String, Arc<SaliencyMap>>,
    order: VecDeque<String>,
}

impl MapStore {
    fn insert(&mut self, key: String, map: Arc<SaliencyMap>) {
        if self.maps.insert(key.clone(), map).is_none() {
            self.order.push_back(key);
            while self.order.len() > MAX_STORED_MAPS {
                if let Some(old) = self.order.pop_front() {
                    self.maps.remove(&old);
                }
            }
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    model: RwLock<ModelSlot>,
    logo_detector: Option<Arc<dyn LogoDetector>>,
    maps: Mutex<MapStore>,
    jobs: Mutex<BTreeMap<u64, JobRecord>>,
    next_job: AtomicU64,
    workers: Arc<Semaphore>,
    inferences: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig, logo_detector: Option<Arc<dyn LogoDetector>>) -> Arc<Self> {
        Arc::new(Self {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            model: RwLock::new(ModelSlot::Loading),
            logo_detector,
            maps: Mutex::default(),
            jobs: Mutex::default(),
            next_job: AtomicU64::new(1),
            inferences: AtomicU64::new(0),
        })
    }

    pub fn set_ready(&self, predictor: Arc<dyn SaliencyPredictor>, checkpoint_id: String) {
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = ModelSlot::Ready {
            predictor,
            checkpoint_id,
        };
    }

    pub fn set_failed(&self, message: String) {
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = ModelSlot::Failed(message);
    }

    /// Number of model forward passes run so far.
    pub fn inference_count(&self) -> u64 {
        self.inferences.load(Ordering::SeqCst)
    }

    fn ready(&self) -> Result<(Arc<dyn SaliencyPredictor>, String), ApiError> {
        match &*self.model.read().unwrap_or_else(|p| p.into_inner()) {
            ModelSlot::Ready {
                predictor,
                checkpoint_id,
            } => Ok((predictor.clone(), checkpoint_id.clone())),
            ModelSlot::Loading => Err(ApiError::loading()),
            ModelSlot::Failed(msg) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("model failed to load: {msg}"))),
        }
    }

    fn new_job(&self, kind: &str, checksum: &str) -> String {
        let n = self.next_job.fetch_add(1, Ordering::SeqCst);
        let id = format!("job-{n}");
        let mut jobs = self.jobs.lock().unwrap_or_else(|p| p.into_inner());
        jobs.insert(n, JobRecord::new(id.clone(), kind, checksum.to_string()));
        while jobs.len() > MAX_JOBS {
            jobs.pop_first();
        }
        id
    }

    fn advance_job(&self, id: &str, to: JobStatus, error: Option<String>) {
        let Some(n) = id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) else {
            return;
        };
        if let Some(job) = self.jobs.lock().unwrap_or_else(|p| p.into_inner()).get_mut(&n) {
            if job.advance(to) && error.is_some() {
                job.error = error;
            }
        }
    }

    fn job(&self, id: &str) -> Option<JobRecord> {
        let n = id.strip_prefix("job-")?.parse::<u64>().ok()?;
        self.jobs.lock().unwrap_or_else(|p| p.into_inner()).get(&n).cloned()
    }

    fn stored_map(&self, key: &str) -> Option<Arc<SaliencyMap>> {
        self.maps.lock().unwrap_or_else(|p| p.into_inner()).maps.get(key).cloned()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retry_after: bool,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            retry_after: false,
        }
    }

    fn loading() -> Self {
        Self {
            retry_after: true,
            ..Self::new(StatusCode::SERVICE_UNAVAILABLE, "model is loading")
        }
    }

    fn boxes(e: Error) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid boxes: {e}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Decode { .. } | Error::Malformed { .. } => StatusCode::BAD_REQUEST,
            Error::InvalidInput(_) | Error::Shape(_) | Error::Degenerate(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Detector(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(serde_json::json!({ "error": self.message }))).into_response();
        if self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_static(RETRY_AFTER_S));
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// The upload spooled to disk, so external detectors read the original file.
struct Upload {
    _file: tempfile::TempPath,
    image: LoadedImage,
}

fn spill(bytes: &[u8], target: (usize, usize)) -> ApiResult<Upload> {
    if bytes.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty image payload"));
    }
    let suffix = if bytes.starts_with(b"\x89PNG") {
        ".png"
    } else if bytes.starts_with(&[0xff, 0xd8]) {
        ".jpg"
    } else {
        ".img"
    };
    let io = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("spooling upload: {e}"));
    let mut file = tempfile::Builder::new().suffix(suffix).tempfile().map_err(io)?;
    std::io::Write::write_all(&mut file, bytes).map_err(io)?;
    let path = file.into_temp_path();
    let image = load_image(&path, target)?;
    Ok(Upload {
        _file: path,
        image,
    })
}

struct Analysis {
    key: String,
    map: Arc<SaliencyMap>,
    checkpoint_id: String,
    job_id: String,
    upload: Upload,
}

/// Runs (or reuses) the saliency map for an uploaded image.
async fn analyze(state: &Arc<AppState>, bytes: Bytes, kind: &str) -> ApiResult<Analysis> {
    let (predictor, checkpoint_id) = state.ready()?;
    let working = predictor.working_size();
    let key = sha256_hex(&[checkpoint_id.as_bytes(), &bytes])[..32].to_string();
    let job_id = state.new_job(kind, &sha256_hex(&[&bytes]));
    let permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service shutting down"))?;
    state.advance_job(&job_id, JobStatus::Running, None);
    let st = state.clone();
    let k = key.clone();
    let result = tokio::task::spawn_blocking(move || -> ApiResult<(Arc<SaliencyMap>, Upload)> {
        let _permit = permit;
        let upload = spill(&bytes, working)?;
        if let Some(map) = st.stored_map(&k) {
            return Ok((map, upload));
        }
        st.inferences.fetch_add(1, Ordering::SeqCst);
        let map = Arc::new(predictor.predict(&upload.image)?);
        st.maps.lock().unwrap_or_else(|p| p.into_inner()).insert(k, map.clone());
        Ok((map, upload))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
    .and_then(|r| r);
    match result {
        Ok((map, upload)) => {
            state.advance_job(&job_id, JobStatus::Done, None);
            Ok(Analysis {
                key,
                map,
                checkpoint_id,
                job_id,
                upload,
            })
        }
        Err(e) => {
            state.advance_job(&job_id, JobStatus::Error, Some(e.message.clone()));
            Err(e)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_id: Option<String>,
    pub logo_detector: bool,
    pub error: Option<String>,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let (status, checkpoint_id, error) = match &*state.model.read().unwrap_or_else(|p| p.into_inner()) {
        ModelSlot::Loading => ("loading", None, None),
        ModelSlot::Ready { checkpoint_id, .. } => ("ready", Some(checkpoint_id.clone()), None),
        ModelSlot::Failed(msg) => ("failed", None, Some(msg.clone())),
    };
    Json(HealthResponse {
        status: status.to_string(),
        checkpoint_id,
        logo_detector: state.logo_detector.is_some(),
        error,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub saliency_png_ref: String,
    pub height: usize,
    pub width: usize,
    pub checkpoint_id: String,
    pub job_id: String,
}

async fn saliency(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<SaliencyResponse>> {
    let a = analyze(&state, body, "saliency").await?;
    let (height, width) = a.map.grid().shape();
    Ok(Json(SaliencyResponse {
        saliency_png_ref: a.key,
        height,
        width,
        checkpoint_id: a.checkpoint_id,
        job_id: a.job_id,
    }))
}

async fn saliency_png(State(state): State<Arc<AppState>>, Path(key): Path<String>) -> ApiResult<Response> {
    let map = state
        .stored_map(&key)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no saliency map {key}")))?;
    let png = tokio::task::spawn_blocking(move || encode_saliency_png(&map))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    /// Base64-encoded PNG or JPEG.
    pub image: String,
    #[serde(default)]
    pub boxes: Option<Vec<BoundingBox>>,
    #[serde(default)]
    pub config: Option<ScoreConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
    pub boxes: Vec<BoundingBox>,
    pub saliency_grid: SaliencyGrid,
    pub saliency_png_ref: String,
    pub checkpoint_id: String,
    pub job_id: String,
}

async fn find_boxes(state: &Arc<AppState>, image: LoadedImage) -> ApiResult<BoundingBoxSet> {
    let detector = state
        .logo_detector
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_GATEWAY, "no boxes given and no logo detector configured"))?;
    let boxes = tokio::task::spawn_blocking(move || detect_logos(&image, detector.as_ref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    boxes.map_err(|e| match e {
        Error::Detector(_) => ApiError::from(e),
        other => ApiError::new(StatusCode::BAD_GATEWAY, format!("logo detector: {other}")),
    })
}

fn score_map(map: &SaliencyMap, boxes: &BoundingBoxSet, config: &ScoreConfig) -> ApiResult<f64> {
    config
        .validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    boxes.validate(Some(map.grid().shape())).map_err(ApiError::boxes)?;
    Ok(brand_attention_score(map.grid(), boxes, config)?)
}

async fn score(State(state): State<Arc<AppState>>, Json(req): Json<ScoreRequest>) -> ApiResult<Json<ScoreResponse>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(req.image.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not valid base64: {e}")))?;
    let a = analyze(&state, Bytes::from(bytes), "score").await?;
    let boxes = match req.boxes {
        Some(b) => BoundingBoxSet::new(b),
        None => find_boxes(&state, a.upload.image.clone()).await?,
    };
    let score = score_map(&a.map, &boxes, &req.config.unwrap_or_default())?;
    Ok(Json(ScoreResponse {
        score,
        boxes: boxes.boxes,
        saliency_grid: pooled_grid(a.map.grid(), GRID_MAX_SIDE),
        saliency_png_ref: a.key,
        checkpoint_id: a.checkpoint_id,
        job_id: a.job_id,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RescoreRequest {
    pub saliency_png_ref: String,
    pub boxes: Vec<BoundingBox>,
    #[serde(default)]
    pub config: Option<ScoreConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RescoreResponse {
    pub score: f64,
    pub boxes: Vec<BoundingBox>,
    pub saliency_png_ref: String,
}

async fn rescore(State(state): State<Arc<AppState>>, Json(req): Json<RescoreRequest>) -> ApiResult<Json<RescoreResponse>> {
    let map = state
        .stored_map(&req.saliency_png_ref)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no saliency map {}", req.saliency_png_ref)))?;
    let boxes = BoundingBoxSet::new(req.boxes);
    let score = score_map(&map, &boxes, &req.config.unwrap_or_default())?;
    Ok(Json(RescoreResponse {
        score,
        boxes: boxes.boxes,
        saliency_png_ref: req.saliency_png_ref,
    }))
}

async fn detect(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<BoundingBoxSet>> {
    let upload = tokio::task::spawn_blocking(move || spill(&body, DETECT_TENSOR_SIZE))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let boxes = find_boxes(&state, upload.image.clone()).await?;
    drop(upload);
    Ok(Json(boxes))
}

async fn job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    state
        .job(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.upload_limit;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/saliency", post(saliency))
        .route("/api/saliency/{key}", get(saliency_png))
        .route("/api/score", post(score))
        .route("/api/rescore", post(rescore))
        .route("/api/detect", post(detect))
        .route("/api/jobs/{id}", get(job))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves on `addr`, loading the model in the background; requests that
/// need it get 503 until it is ready.
pub async fn serve<F>(addr: std::net::SocketAddr, state: Arc<AppState>, load: F) -> std::io::Result<()>
where
    F: FnOnce() -> brand_attention::Result<(Arc<dyn SaliencyPredictor>, String)> + Send + 'static,
{
    let st = state.clone();
    tokio::task::spawn_blocking(move || match load() {
        Ok((predictor, id)) => {
            log::info!("model ready ({id})");
            st.set_ready(predictor, id);
        }
        Err(e) => {
            log::error!("model failed to load: {e}");
            st.set_failed(e.to_string());
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
