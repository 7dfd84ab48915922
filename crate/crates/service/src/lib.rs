//! HTTP slice service.
//!
//! Holds one loaded sinogram, filtered caches for the baseline methods and an
//! optional trained model, and reconstructs arbitrary slices on request.
//! Every route lives under `/v1`:
//!
//! | route | purpose |
//! |---|---|
//! | `GET /v1/info` | geometry, methods, active model |
//! | `POST /v1/slice` | reconstruct one slice (PNG, or raw `f32` with `Accept: application/octet-stream`) |
//! | `POST /v1/train` | start a background training job |
//! | `GET /v1/train/{id}` | job status |
//! | `GET /v1/metrics/{axial,frontal,longitudinal}` | PSNR/SSIM against the phantom |
//!
//! Shared state is immutable apart from two pointer swaps: the active model
//! slot and the baseline cache table. Slice handlers clone an `Arc` under a
//! short read lock and never hold a lock while computing.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;

use n2f_core::geometry::{ortho_slice, OrthoAxis, SliceOrientation, Vec3};
use n2f_core::io::{encode_png16, load_dataset, load_model, slice_f32_bytes, DatasetManifest, GeometryRecord, Window};
use n2f_core::methods::{MethodContext, MethodParams, MethodRegistry, Prepared};
use n2f_core::metrics::slice_scores;
use n2f_core::noise2filter::{train_noise2filter, GeometryFingerprint, N2FConfig, N2FModel, Strategy, TrainingMeta};
use n2f_core::projector::{sample_plane, SliceImage, Sinogram, Volume};
use n2f_core::Error as CoreError;

/// Largest accepted slice, in pixels.
pub const MAX_SLICE_PIXELS: usize = 4096 * 4096;

/// Baseline caches kept before the table is flushed.
const MAX_BASELINE_CACHES: usize = 16;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub dataset: PathBuf,
    pub model: Option<PathBuf>,
    pub port: u16,
    pub bind: [u8; 4],
}

impl ServiceConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            model: None,
            port: 8080,
            bind: [127, 0, 0, 1],
        }
    }
}

/// Error returned by handlers, rendered as `{"error": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::InvalidArgument(_) | CoreError::Format(_) | CoreError::CapacityExceeded(_) => StatusCode::BAD_REQUEST,
            CoreError::Mismatch(_) => StatusCode::CONFLICT,
            CoreError::DegenerateData(_) => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
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

/// A model with its filtered cache; replaced as a whole.
pub struct ModelSlot {
    pub version: u64,
    pub model: Arc<N2FModel>,
    prepared: Prepared,
}

#[derive(Default)]
struct ModelState {
    current: Option<Arc<ModelSlot>>,
    rebuilding: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    /// `training`, `caching` or `done`.
    pub phase: String,
    pub progress: f64,
    pub elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Marks the model slot as being rebuilt until dropped.
pub struct RebuildGuard {
    state: Arc<AppState>,
}

impl Drop for RebuildGuard {
    fn drop(&mut self) {
        self.state.models.write().rebuilding -= 1;
    }
}

pub struct AppState {
    sinogram: Arc<Sinogram>,
    manifest: DatasetManifest,
    volume_shape: [usize; 3],
    voxel_size: f64,
    registry: MethodRegistry,
    models: RwLock<ModelState>,
    baselines: RwLock<HashMap<String, Arc<Prepared>>>,
    truth: OnceLock<Result<Volume, String>>,
    next_version: AtomicU64,
    next_job: AtomicU64,
    training: AtomicBool,
    jobs: Mutex<HashMap<u64, JobStatus>>,
}

impl AppState {
    /// State for a loaded dataset. The model, if any, must match its geometry.
    pub fn new(sinogram: Sinogram, manifest: DatasetManifest, model: Option<N2FModel>) -> Result<Arc<Self>, CoreError> {
        let (volume_shape, voxel_size) = manifest.volume_grid();
        let state = Arc::new(Self {
            sinogram: Arc::new(sinogram),
            manifest,
            volume_shape,
            voxel_size,
            registry: MethodRegistry::default(),
            models: RwLock::new(ModelState::default()),
            baselines: RwLock::new(HashMap::new()),
            truth: OnceLock::new(),
            next_version: AtomicU64::new(1),
            next_job: AtomicU64::new(1),
            training: AtomicBool::new(false),
            jobs: Mutex::new(HashMap::new()),
        });
        if let Some(m) = model {
            state.install_model(m)?;
        }
        Ok(state)
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Arc<Self>, CoreError> {
        let (s, manifest) = load_dataset(&cfg.dataset)?;
        let model = cfg.model.as_deref().map(load_model).transpose()?;
        Self::new(s, manifest, model)
    }

    pub fn sinogram(&self) -> &Sinogram {
        &self.sinogram
    }

    pub fn volume_shape(&self) -> [usize; 3] {
        self.volume_shape
    }

    pub fn active_model(&self) -> Option<Arc<ModelSlot>> {
        self.models.read().current.clone()
    }

    /// Flags a rebuild in progress; `n2f` requests without a ready model get 503.
    pub fn mark_rebuilding(self: &Arc<Self>) -> RebuildGuard {
        self.models.write().rebuilding += 1;
        RebuildGuard { state: self.clone() }
    }

    /// Filters the data for `model`, then swaps it in. Returns the new version.
    pub fn install_model(self: &Arc<Self>, model: N2FModel) -> Result<u64, CoreError> {
        model.check_geometry(self.sinogram.geometry())?;
        let _guard = self.mark_rebuilding();
        let model = Arc::new(model);
        let ctx = MethodContext {
            geometry: self.sinogram.geometry(),
            params: MethodParams::default(),
            model: Some(model.clone()),
        };
        let prepared = Prepared::new(self.registry.build("n2f", &ctx)?, &self.sinogram)?;
        let version = self.next_version.fetch_add(1, Ordering::SeqCst);
        let slot = Arc::new(ModelSlot { version, model, prepared });
        self.models.write().current = Some(slot);
        log::info!("model version {version} active");
        Ok(version)
    }

    fn ortho(&self, axis: OrthoAxis) -> SliceOrientation {
        ortho_slice(self.volume_shape, self.voxel_size, axis)
    }

    fn baseline(&self, method: &str, params: MethodParams) -> ApiResult<Arc<Prepared>> {
        let key = format!("{method}|{:?}|{:?}", params.sigma, params.f_sc);
        if let Some(p) = self.baselines.read().get(&key) {
            return Ok(p.clone());
        }
        let ctx = MethodContext {
            geometry: self.sinogram.geometry(),
            params,
            model: None,
        };
        let prepared = Arc::new(Prepared::new(self.registry.build(method, &ctx)?, &self.sinogram)?);
        let mut table = self.baselines.write();
        if table.len() >= MAX_BASELINE_CACHES {
            table.clear();
        }
        Ok(table.entry(key).or_insert(prepared).clone())
    }

    /// Reconstructs one slice. `cor_shift` replaces the dataset's value.
    pub fn reconstruct(
        &self,
        method: &str,
        params: MethodParams,
        o: &SliceOrientation,
        cor_shift: Option<f64>,
    ) -> ApiResult<(SliceImage, Option<u64>)> {
        let key = method.replace('-', "_");
        if !self.registry.names().contains(&key.as_str()) {
            return Err(ApiError::bad_request(format!(
                "unknown method '{method}'; available: {}",
                self.registry.names().join(", ")
            )));
        }
        if key == "n2f" {
            let slot = {
                let m = self.models.read();
                match (&m.current, m.rebuilding) {
                    (Some(s), _) => s.clone(),
                    (None, r) if r > 0 => {
                        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model cache is being rebuilt"))
                    }
                    (None, _) => return Err(ApiError::new(StatusCode::CONFLICT, "no trained model is loaded")),
                }
            };
            let img = slot.prepared.reconstruct(o, cor_shift)?;
            return Ok((img, Some(slot.version)));
        }
        let p = self.baseline(&key, params)?;
        Ok((p.reconstruct(o, cor_shift)?, None))
    }

    fn truth(&self) -> ApiResult<&Volume> {
        if self.manifest.phantom.is_none() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "dataset has no phantom description"));
        }
        let t = self.truth.get_or_init(|| {
            let p = self.manifest.phantom.as_ref().expect("checked above");
            p.ground_truth().map_err(|e| e.to_string())
        });
        t.as_ref().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.clone()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OrientationSpec {
    /// `"axial"`, `"frontal"` or `"longitudinal"` central slice.
    Ortho(String),
    Plane {
        origin: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        width: usize,
        height: usize,
        #[serde(default = "unit")]
        pixel_size: f64,
    },
}

fn unit() -> f64 {
    1.0
}

fn default_method() -> String {
    "fbp".into()
}

#[derive(Debug, Clone, Deserialize)]
pub struct SliceRequest {
    pub orientation: OrientationSpec,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub params: MethodParams,
    #[serde(default)]
    pub cor_shift: Option<f64>,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

fn resolve(state: &AppState, spec: &OrientationSpec) -> ApiResult<SliceOrientation> {
    match spec {
        OrientationSpec::Ortho(name) => OrthoAxis::parse(name)
            .map(|a| state.ortho(a))
            .ok_or_else(|| ApiError::bad_request(format!("unknown slice '{name}'"))),
        OrientationSpec::Plane {
            origin,
            u,
            v,
            width,
            height,
            pixel_size,
        } => {
            if width.saturating_mul(*height) > MAX_SLICE_PIXELS {
                return Err(ApiError::bad_request(format!("slice larger than {MAX_SLICE_PIXELS} pixels")));
            }
            let o = SliceOrientation::new(Vec3(*origin), Vec3(*u), Vec3(*v), *width, *height, *pixel_size)?;
            Ok(o)
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct ModelInfo {
    version: u64,
    fingerprint: GeometryFingerprint,
    meta: TrainingMeta,
    n_hidden: usize,
}

async fn info(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let model = state.active_model().map(|s| ModelInfo {
        version: s.version,
        fingerprint: s.model.fingerprint().clone(),
        meta: s.model.meta().clone(),
        n_hidden: s.model.params().n_hidden,
    });
    Json(json!({
        "geometry": GeometryRecord::from_geometry(state.sinogram.geometry()),
        "volume_shape": state.volume_shape,
        "voxel_size": state.voxel_size,
        "methods": state.registry.names(),
        "model": model,
        "phantom": state.manifest.phantom.is_some(),
        "training": state.training.load(Ordering::SeqCst),
    }))
}

fn wants_raw(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/octet-stream"))
}

fn header_f64(v: f64) -> HeaderValue {
    HeaderValue::from_str(&format!("{v:e}")).expect("numeric header")
}

async fn slice(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req: SliceRequest = parse_json(&body)?;
    let o = resolve(&state, &req.orientation)?;
    if let Some(c) = req.cor_shift {
        if !c.is_finite() {
            return Err(ApiError::bad_request("cor_shift must be finite"));
        }
    }
    let window = match req.window {
        Some([lo, hi]) if lo < hi && lo.is_finite() && hi.is_finite() => Some(Window { lo, hi }),
        Some(_) => return Err(ApiError::bad_request("window must be [lo, hi] with lo < hi")),
        None => None,
    };
    let raw = wants_raw(&headers);
    blocking(move || {
        let (img, version) = state.reconstruct(&req.method, req.params, &o, req.cor_shift)?;
        let (lo, hi) = img.min_max();
        let w = window.unwrap_or(Window { lo, hi });
        let (body, ctype) = if raw {
            (slice_f32_bytes(&img), "application/octet-stream")
        } else {
            (encode_png16(&img, w)?, "image/png")
        };
        let mut resp = Response::new(Body::from(body));
        let h = resp.headers_mut();
        h.insert(header::CONTENT_TYPE, HeaderValue::from_static(ctype));
        h.insert("x-slice-min", header_f64(lo));
        h.insert("x-slice-max", header_f64(hi));
        h.insert("x-window-lo", header_f64(w.lo));
        h.insert("x-window-hi", header_f64(w.hi));
        h.insert("x-slice-width", HeaderValue::from(img.width()));
        h.insert("x-slice-height", HeaderValue::from(img.height()));
        if let Some(v) = version {
            h.insert("x-model-version", HeaderValue::from(v));
        }
        Ok(resp)
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub splits: Option<usize>,
    pub strategy: Option<String>,
    pub n_train: Option<usize>,
    pub seed: Option<u64>,
    pub n_hidden: Option<usize>,
}

impl TrainRequest {
    fn config(&self) -> ApiResult<N2FConfig> {
        let d = N2FConfig::default();
        let strategy = match &self.strategy {
            Some(s) => Strategy::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown strategy '{s}'")))?,
            None => d.strategy,
        };
        let cfg = N2FConfig {
            n_splits: self.splits.unwrap_or(d.n_splits),
            strategy,
            n_train: self.n_train.unwrap_or(d.n_train),
            n_hidden: self.n_hidden.unwrap_or(d.n_hidden),
            seed: self.seed.unwrap_or(d.seed),
        };
        if cfg.n_splits < 2 || cfg.n_hidden == 0 || cfg.n_train == 0 {
            return Err(ApiError::bad_request("splits must be >= 2, n_hidden and n_train >= 1"));
        }
        Ok(cfg)
    }
}

fn update_job(state: &AppState, id: u64, f: impl FnOnce(&mut JobStatus)) {
    if let Some(j) = state.jobs.lock().get_mut(&id) {
        f(j);
    }
}

fn run_job(state: Arc<AppState>, id: u64, cfg: N2FConfig) {
    let t0 = Instant::now();
    let outcome = train_noise2filter(&state.sinogram, &cfg).and_then(|(model, report)| {
        update_job(&state, id, |j| {
            j.phase = "caching".into();
            j.progress = 0.9;
            j.iterations = Some(report.iterations);
            j.elapsed_seconds = t0.elapsed().as_secs_f64();
        });
        state.install_model(model)
    });
    update_job(&state, id, |j| {
        j.elapsed_seconds = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(v) => {
                j.state = JobState::Succeeded;
                j.phase = "done".into();
                j.progress = 1.0;
                j.model_version = Some(v);
            }
            Err(e) => {
                log::warn!("training job {id} failed: {e}");
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
        }
    });
    state.training.store(false, Ordering::SeqCst);
}

async fn train(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: TrainRequest = if body.is_empty() {
        parse_json(&Bytes::from_static(b"{}"))?
    } else {
        parse_json(&body)?
    };
    let cfg = req.config()?;
    if state.training.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a training job is already running"));
    }
    let id = state.next_job.fetch_add(1, Ordering::SeqCst);
    let status = JobStatus {
        id,
        state: JobState::Running,
        phase: "training".into(),
        progress: 0.0,
        elapsed_seconds: 0.0,
        model_version: None,
        iterations: None,
        error: None,
    };
    state.jobs.lock().insert(id, status.clone());
    let st = state.clone();
    tokio::task::spawn_blocking(move || run_job(st, id, cfg));
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn train_status(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    state
        .jobs
        .lock()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no training job {id}")))
}

#[derive(Debug, Clone, Deserialize)]
pub struct MetricsQuery {
    #[serde(default = "default_method")]
    pub method: String,
    pub sigma: Option<f64>,
    pub f_sc: Option<f64>,
    pub cor_shift: Option<f64>,
}

async fn metrics(
    State(state): State<Arc<AppState>>,
    Path(slice): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let axis = OrthoAxis::parse(&slice).ok_or_else(|| ApiError::bad_request(format!("unknown slice '{slice}'")))?;
    blocking(move || {
        let truth = state.truth()?;
        let o = ortho_slice(truth.shape(), truth.voxel_size(), axis);
        let reference = sample_plane(truth, &o);
        let params = MethodParams {
            sigma: q.sigma,
            f_sc: q.f_sc,
        };
        let (img, version) = state.reconstruct(&q.method, params, &o, q.cor_shift)?;
        let s = slice_scores(&img, &reference)?;
        Ok(Json(json!({
            "slice": axis.name(),
            "method": q.method,
            "psnr": s.psnr,
            "ssim": s.ssim,
            "model_version": version,
        })))
    })
    .await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/slice", post(slice))
        .route("/v1/train", post(train))
        .route("/v1/train/{id}", get(train_status))
        .route("/v1/metrics/{slice}", get(metrics))
        .with_state(state)
}

/// Loads the dataset and serves until the process ends.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServeError> {
    let c = cfg.clone();
    let state = tokio::task::spawn_blocking(move || AppState::load(&c)).await??;
    let addr = SocketAddr::from((cfg.bind, cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("startup task failed: {0}")]
    Join(#[from] tokio::task::JoinError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_request_defaults_and_validation() {
        let req: TrainRequest = serde_json::from_str("{}").unwrap();
        let cfg = req.config().unwrap();
        assert_eq!((cfg.n_splits, cfg.n_train, cfg.n_hidden), (3, 50_000, 4));
        let bad: TrainRequest = serde_json::from_str(r#"{"splits": 1}"#).unwrap();
        assert!(bad.config().is_err());
        assert!(serde_json::from_str::<TrainRequest>(r#"{"lr": 1}"#).is_err());
    }

    #[test]
    fn orientation_accepts_names_and_planes() {
        let named: SliceRequest = serde_json::from_str(r#"{"orientation": "axial"}"#).unwrap();
        assert!(matches!(named.orientation, OrientationSpec::Ortho(_)));
        assert_eq!(named.method, "fbp");
        let plane: SliceRequest = serde_json::from_str(
            r#"{"orientation": {"origin": [0,0,0], "u": [1,0,0], "v": [0,1,0], "width": 4, "height": 3}}"#,
        )
        .unwrap();
        assert!(matches!(plane.orientation, OrientationSpec::Plane { pixel_size, .. } if pixel_size == 1.0));
    }

    #[test]
    fn accept_header_selects_raw_floats() {
        let mut h = HeaderMap::new();
        assert!(!wants_raw(&h));
        h.insert(header::ACCEPT, HeaderValue::from_static("application/octet-stream"));
        assert!(wants_raw(&h));
    }

    #[test]
    fn core_errors_map_to_statuses() {
        let s = |e: CoreError| ApiError::from(e).status;
        assert_eq!(s(CoreError::InvalidArgument("x".into())), StatusCode::BAD_REQUEST);
        assert_eq!(s(CoreError::Mismatch("x".into())), StatusCode::CONFLICT);
    }
}
