//! HTTP front end of the repository.
//!
//! `POST /records` takes JSON lines (or a JSON array) of sample records,
//! `POST /reconstruct` takes `{window, method}`, `GET /noise` answers
//! queries and `GET /maps/{version}` returns a stored map.

use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use noisemap::gridref::{Lattice, MgrsIndex, SampleRecord};
use noisemap::reconstruct::Method;
use noisemap::server::{solve_job, IngestReport, MapStatus, MapVersion, QueryCell, QueryRequest, Region, Repository};
use noisemap::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct AppState {
    repo: RwLock<Repository>,
    // one reconstruction job at a time
    jobs: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(repo: Repository) -> Arc<Self> {
        Arc::new(AppState { repo: RwLock::new(repo), jobs: tokio::sync::Mutex::new(()) })
    }

    pub fn read<T>(&self, f: impl FnOnce(&Repository) -> T) -> T {
        f(&self.repo.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn write<T>(&self, f: impl FnOnce(&mut Repository) -> T) -> T {
        f(&mut self.repo.write().unwrap_or_else(|e| e.into_inner()))
    }

    /// Bins the window under a read lock, solves without holding any lock and
    /// publishes under the write lock.
    pub async fn reconstruct(self: &Arc<Self>, window: Lattice, method: Method) -> Result<Arc<MapVersion>, Error> {
        let _job = self.jobs.lock().await;
        let (samples, cfg) = self.read(|r| r.prepare_job(&window).map(|s| (s, r.recon.clone())))?;
        let out = tokio::task::spawn_blocking(move || solve_job(&samples, method, &cfg))
            .await
            .map_err(|e| Error::InvalidInput(format!("reconstruction task failed: {e}")))?;
        self.write(|r| r.publish(out))
    }
}

/// Error body `{"error": kind, "message": text}`.
pub struct ApiError(pub StatusCode, pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::InsufficientSamples { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.1.kind(), "message": self.1.to_string() });
        (self.0, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/records", post(post_records))
        .route("/reconstruct", post(post_reconstruct))
        .route("/noise", get(get_noise))
        .route("/maps/{version}", get(get_map))
        .with_state(state)
}

/// Parses a JSON array or JSON lines.
pub fn parse_records(body: &str) -> Result<Vec<SampleRecord>, Error> {
    if body.trim_start().starts_with('[') {
        Ok(serde_json::from_str(body)?)
    } else {
        noisemap::gridref::read_records_jsonl(body.as_bytes())
    }
}

async fn post_records(State(state): State<Arc<AppState>>, body: String) -> Result<Json<IngestReport>, ApiError> {
    let records = parse_records(&body)?;
    Ok(Json(state.write(|r| r.ingest_all(&records))))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructRequest {
    pub window: Lattice,
    #[serde(default = "default_method")]
    pub method: Method,
}

fn default_method() -> Method {
    Method::L1
}

/// What `POST /reconstruct` returns; the cells are at `/maps/{version}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub version: u64,
    pub method: Method,
    pub status: MapStatus,
    pub measured: usize,
    pub cells: usize,
}

impl From<&MapVersion> for MapSummary {
    fn from(m: &MapVersion) -> Self {
        MapSummary {
            version: m.version,
            method: m.method,
            status: m.status.clone(),
            measured: m.measured.iter().filter(|&&b| b).count(),
            cells: m.lattice.len(),
        }
    }
}

async fn post_reconstruct(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ReconstructRequest>,
) -> Result<Json<MapSummary>, ApiError> {
    let map = state.reconstruct(req.window, req.method).await?;
    Ok(Json(MapSummary::from(&*map)))
}

async fn get_map(State(state): State<Arc<AppState>>, Path(version): Path<u64>) -> Result<Json<MapVersion>, ApiError> {
    match state.read(|r| r.map(version)) {
        Some(m) => Ok(Json((*m).clone())),
        None => Err(ApiError(StatusCode::NOT_FOUND, Error::InvalidInput(format!("no map version {version}")))),
    }
}

/// Query string of `GET /noise`. `bbox` is `min_lat,min_lon,max_lat,max_lon`;
/// `cells` is a comma-separated list of MGRS references.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct NoiseParams {
    pub bbox: Option<String>,
    pub cells: Option<String>,
    pub from: f64,
    pub to: f64,
    pub method: Option<Method>,
}

impl NoiseParams {
    pub fn to_request(&self) -> Result<QueryRequest, Error> {
        let region = match (&self.bbox, &self.cells) {
            (Some(b), None) => {
                let v: Vec<f64> = b
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::InvalidInput(format!("bad bbox {b:?}")))?;
                let [min_lat, min_lon, max_lat, max_lon] = v[..] else {
                    return Err(Error::InvalidInput("bbox needs min_lat,min_lon,max_lat,max_lon".into()));
                };
                Region::BBox { min_lat, min_lon, max_lat, max_lon }
            }
            (None, Some(c)) => Region::Cells(
                c.split(',').map(|s| s.trim().parse::<MgrsIndex>()).collect::<Result<_, _>>()?,
            ),
            _ => return Err(Error::InvalidInput("give exactly one of bbox or cells".into())),
        };
        let q = QueryRequest { region, from: self.from, to: self.to, method: self.method };
        q.validate()?;
        Ok(q)
    }

    pub fn to_query_string(&self) -> String {
        let mut parts = vec![format!("from={}", self.from), format!("to={}", self.to)];
        if let Some(b) = &self.bbox {
            parts.push(format!("bbox={b}"));
        }
        if let Some(c) = &self.cells {
            parts.push(format!("cells={c}"));
        }
        if let Some(m) = self.method {
            parts.push(format!("method={m}"));
        }
        parts.join("&")
    }
}

async fn get_noise(
    State(state): State<Arc<AppState>>,
    Query(params): Query<NoiseParams>,
) -> Result<Json<Vec<QueryCell>>, ApiError> {
    let q = params.to_request()?;
    Ok(Json(state.read(|r| r.query(&q))?))
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
