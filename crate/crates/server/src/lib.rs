//! Read-only HTTP service over one loaded bundle.
//!
//! Routes:
//! - `GET /api/groupings`
//! - `POST /api/analyze`
//! - `GET /api/features/{f}/top?grouping=label&class=3&k=6`
//! - `GET /api/heatmap/{f}/{row}?width=224&height=224`
//!
//! Anything else falls through to the static asset directory when one is
//! configured.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use barlow_core::dataset::{ClassIndex, DatasetBundle, GroupingKind};
use barlow_core::report;
use barlow_core::rules::AnalysisConfig;
use barlow_core::selection::{self, DEFAULT_TOP_ACTIVATING};
use barlow_core::viz::{self, DEFAULT_HEATMAP_SIZE};
use barlow_core::Error;
use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

pub const DEFAULT_CACHE_ENTRIES: usize = 256;

type CacheKey = [u8; 32];

struct AppState {
    bundle: Arc<DatasetBundle>,
    cache: Mutex<LruCache<CacheKey, Arc<String>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub grouping: GroupingKind,
    pub class_index: ClassIndex,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub disabled: Vec<usize>,
}

impl AnalyzeRequest {
    pub fn config(&self) -> AnalysisConfig {
        let d = AnalysisConfig::default();
        AnalysisConfig {
            k: self.k.unwrap_or(d.k),
            max_depth: self.depth.unwrap_or(d.max_depth),
            rho: self.rho.unwrap_or(d.rho),
            tau: self.tau.unwrap_or(d.tau),
            disabled: self.disabled.iter().copied().collect::<BTreeSet<_>>(),
            min_samples_split: d.min_samples_split,
        }
    }

    /// Hash of the grouping and the fully defaulted config.
    fn cache_key(&self) -> CacheKey {
        let canonical = serde_json::json!({
            "grouping": self.grouping,
            "class_index": self.class_index,
            "config": self.config(),
        });
        Sha256::digest(canonical.to_string().as_bytes()).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingEntry {
    pub kind: GroupingKind,
    pub class_index: ClassIndex,
    pub class_name: String,
    pub size: usize,
    pub ber: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopActivating {
    pub feature: usize,
    pub rows: Vec<usize>,
    pub image_ids: Vec<String>,
    pub activations: Vec<f32>,
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownClass(_) => StatusCode::NOT_FOUND,
            Error::Io { .. }
            | Error::FeatureMap { .. }
            | Error::Json(_)
            | Error::MalformedTree(_)
            | Error::InconsistentReport(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn json_body(body: Arc<String>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body.as_str().to_owned()).into_response()
}

/// Builds the service router. `static_dir` serves the explorer assets.
pub fn router(bundle: Arc<DatasetBundle>, static_dir: Option<PathBuf>) -> Router {
    router_with_cache(bundle, static_dir, DEFAULT_CACHE_ENTRIES)
}

pub fn router_with_cache(bundle: Arc<DatasetBundle>, static_dir: Option<PathBuf>, cache_entries: usize) -> Router {
    let capacity = NonZeroUsize::new(cache_entries).unwrap_or(NonZeroUsize::MIN);
    let state = Arc::new(AppState {
        bundle,
        cache: Mutex::new(LruCache::new(capacity)),
    });
    let api = Router::new()
        .route("/api/groupings", get(groupings))
        .route("/api/analyze", post(analyze))
        .route("/api/features/{feature}/top", get(top_activating))
        .route("/api/heatmap/{feature}/{row}", get(heatmap))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(bundle: Arc<DatasetBundle>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(bundle, static_dir)).await
}

async fn groupings(State(state): State<Arc<AppState>>) -> Json<Vec<GroupingEntry>> {
    let bundle = &state.bundle;
    let entries = GroupingKind::ALL
        .iter()
        .flat_map(|&kind| bundle.groupings(kind))
        .filter(|g| !g.is_empty())
        .map(|g| {
            let errors = barlow_core::metrics::count_failures(&g.rows, bundle.failures());
            GroupingEntry {
                kind: g.kind,
                class_index: g.class_index,
                class_name: bundle.class_name(g.class_index).unwrap_or_default().to_string(),
                size: g.len(),
                ber: errors as f64 / g.len() as f64,
            }
        })
        .collect();
    Json(entries)
}

async fn analyze(State(state): State<Arc<AppState>>, Json(req): Json<AnalyzeRequest>) -> Result<Response, ApiError> {
    let key = req.cache_key();
    if let Some(hit) = state.cache.lock().unwrap().get(&key).cloned() {
        return Ok(json_body(hit));
    }
    let worker = Arc::clone(&state);
    let body = tokio::task::spawn_blocking(move || {
        report::analyze_json(&worker.bundle, req.grouping, req.class_index, &req.config())
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = Arc::new(body);
    state.cache.lock().unwrap().put(key, Arc::clone(&body));
    Ok(json_body(body))
}

#[derive(Debug, Deserialize)]
struct TopQuery {
    grouping: Option<GroupingKind>,
    class: Option<ClassIndex>,
    k: Option<usize>,
}

async fn top_activating(
    State(state): State<Arc<AppState>>,
    Path(feature): Path<usize>,
    Query(q): Query<TopQuery>,
) -> Result<Json<TopActivating>, ApiError> {
    let bundle = &state.bundle;
    let matrix = bundle.features();
    if feature >= matrix.n_features() {
        return Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("feature {feature} does not exist"),
        ));
    }
    let rows = match (q.grouping, q.class) {
        (Some(kind), Some(class)) => bundle.group(kind, class)?.rows,
        (None, None) => (0..bundle.n_images()).collect(),
        _ => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                "grouping and class must be given together".into(),
            ))
        }
    };
    let k = q.k.unwrap_or(DEFAULT_TOP_ACTIVATING);
    let top = selection::top_activating_rows(matrix, &rows, feature, k)?;
    Ok(Json(TopActivating {
        feature,
        image_ids: top.iter().map(|&r| bundle.records()[r].image_id.clone()).collect(),
        activations: top.iter().map(|&r| matrix.value(r, feature)).collect(),
        rows: top,
    }))
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    width: Option<usize>,
    height: Option<usize>,
}

async fn heatmap(
    State(state): State<Arc<AppState>>,
    Path((feature, row)): Path<(usize, usize)>,
    Query(q): Query<HeatmapQuery>,
) -> Result<Response, ApiError> {
    let not_found = || {
        ApiError(
            StatusCode::NOT_FOUND,
            format!("no feature map for feature {feature}, row {row}"),
        )
    };
    let dir = state.bundle.feature_maps_dir().ok_or_else(not_found)?;
    let path = viz::fmap_path(dir, feature, row);
    if !path.is_file() {
        return Err(not_found());
    }
    let (w, h) = (
        q.width.unwrap_or(DEFAULT_HEATMAP_SIZE),
        q.height.unwrap_or(DEFAULT_HEATMAP_SIZE),
    );
    let bytes = tokio::task::spawn_blocking(move || -> barlow_core::Result<Vec<u8>> {
        let map = viz::read_fmap(&path)?;
        Ok(viz::encode_pgm(&viz::heatmap(&map, h, w)?))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}
