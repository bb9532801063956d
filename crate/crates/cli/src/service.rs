use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wimp_core::counterfactual::{counterfactual_predict, Deltas, SceneEdit};
use wimp_core::lane_graph::{propose_polylines, CandidatePolyline, LaneGraph, ProposalConfig};
use wimp_core::model::{PredictionSet, Traces, WimpModel};
use wimp_core::scenario::generator::Dataset;
use wimp_core::scenario::Scenario;
use wimp_core::{Error, Point2, Polyline2};

/// Immutable state shared by all requests.
pub struct ServiceState {
    pub model: WimpModel,
    pub dataset: Dataset,
    pub proposal: ProposalConfig,
}

/// The `k` best-ranked trajectories of a prediction set, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPredictions {
    pub trajectories: Vec<Vec<Point2>>,
    /// Head index of each returned trajectory.
    pub mixtures: Vec<usize>,
}

impl RankedPredictions {
    pub fn new(set: &PredictionSet, k: usize) -> Self {
        let mixtures: Vec<usize> = set.mixture_ranks.iter().take(k).copied().collect();
        RankedPredictions {
            trajectories: set.top_k(k),
            mixtures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePair {
    pub baseline: Traces,
    pub edited: Traces,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub baseline: RankedPredictions,
    pub edited: RankedPredictions,
    pub deltas: Deltas,
    pub traces: TracePair,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: String,
    pub detail: String,
    pub pointer: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            detail: detail.into(),
            pointer: None,
        }
    }

    fn schema(pointer: &str, detail: impl Into<String>) -> Self {
        ApiError {
            pointer: Some(pointer.into()),
            ..Self::new(StatusCode::BAD_REQUEST, "SchemaViolation", detail)
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("unknown {what} `{id}`"))
    }

    /// Rebases schema pointers of an embedded document under `prefix`.
    fn from_core(e: Error, prefix: &str) -> Self {
        let status = if e.is_edit_error() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            match e {
                Error::SchemaViolation { .. }
                | Error::MissingFocalActor(_)
                | Error::MissingPolyline(_)
                | Error::LengthMismatch(..)
                | Error::InvalidPolyline(_)
                | Error::InvalidPolygon(_)
                | Error::InvalidGraph(_)
                | Error::UnknownSeed(_)
                | Error::EmptyInput => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            }
        };
        let pointer = match &e {
            Error::SchemaViolation { pointer, .. } => Some(format!("{prefix}{pointer}")),
            _ => None,
        };
        ApiError {
            status,
            error: e.kind().into(),
            detail: e.to_string(),
            pointer,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.error, "detail": self.detail});
        if let Some(p) = self.pointer {
            body["pointer"] = Value::String(p);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/scenarios", get(list_scenarios))
        .route("/api/scenarios/{id}", get(get_scenario))
        .route("/api/scenarios/{id}/polylines", get(get_polylines))
        .route("/api/predict", post(predict))
        .with_state(state)
}

async fn health(State(st): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({"status": "ok", "model_config": st.model.config}))
}

async fn list_scenarios(State(st): State<Arc<ServiceState>>) -> Json<Value> {
    let items: Vec<Value> = st
        .dataset
        .scenarios
        .iter()
        .map(|s| json!({"id": s.id, "map_id": s.map_id, "n_actors": s.actors.len()}))
        .collect();
    Json(Value::Array(items))
}

fn find<'a>(st: &'a ServiceState, id: &str) -> ApiResult<(&'a Scenario, &'a LaneGraph)> {
    let sc = st.dataset.scenario(id).ok_or_else(|| ApiError::not_found("scenario", id))?;
    let g = st.dataset.maps.get(&sc.map_id).ok_or_else(|| ApiError::not_found("map", &sc.map_id))?;
    Ok((sc, g))
}

async fn get_scenario(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (sc, g) = find(&st, &id)?;
    Ok(Json(json!({"scenario": sc.to_json_value(), "map": g.to_json_value()})))
}

#[derive(Deserialize)]
struct PolylineQuery {
    k: Option<usize>,
}

async fn get_polylines(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<PolylineQuery>,
) -> ApiResult<Json<Vec<CandidatePolyline>>> {
    let (sc, g) = find(&st, &id)?;
    let k = q.k.unwrap_or(st.model.config.mixtures);
    if k == 0 {
        return Err(ApiError::schema("/k", "k must be at least 1"));
    }
    let c = propose_polylines(g, &sc.focal().observed, k, &st.proposal).map_err(|e| ApiError::from_core(e, ""))?;
    Ok(Json(c))
}

/// Parses and runs a predict request body.
pub fn run_predict(st: &ServiceState, body: &[u8]) -> ApiResult<PredictResponse> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ApiError::schema("", format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| ApiError::schema("", "body must be an object"))?;
    let inline_map;
    let (scenario, graph): (std::borrow::Cow<Scenario>, &LaneGraph) = match (obj.get("scenario_id"), obj.get("scenario")) {
        (Some(id), None) => {
            let id = id.as_str().ok_or_else(|| ApiError::schema("/scenario_id", "expected a string"))?;
            let (sc, g) = find(st, id)?;
            (std::borrow::Cow::Borrowed(sc), g)
        }
        (None, Some(sv)) => {
            let sc = Scenario::from_json_value(sv).map_err(|e| ApiError::from_core(e, "/scenario"))?;
            let g = match obj.get("map") {
                Some(mv) => {
                    inline_map = LaneGraph::from_json_value(mv).map_err(|e| ApiError::from_core(e, "/map"))?;
                    &inline_map
                }
                None => st
                    .dataset
                    .maps
                    .get(&sc.map_id)
                    .ok_or_else(|| ApiError::not_found("map", &sc.map_id))?,
            };
            (std::borrow::Cow::Owned(sc), g)
        }
        _ => return Err(ApiError::schema("", "exactly one of scenario_id and scenario is required")),
    };
    let m = st.model.config.mixtures;
    let k = match obj.get("k") {
        None => m,
        Some(kv) => kv
            .as_u64()
            .map(|k| k as usize)
            .filter(|k| (1..=m).contains(k))
            .ok_or_else(|| ApiError::schema("/k", format!("k must be an integer in [1, {m}]")))?,
    };
    let edits: Vec<SceneEdit> = match obj.get("edits") {
        None | Some(Value::Null) => Vec::new(),
        Some(ev) => serde_json::from_value(ev.clone()).map_err(|e| ApiError::schema("/edits", e.to_string()))?,
    };
    let override_line = match obj.get("polyline_override") {
        None | Some(Value::Null) => None,
        Some(pv) => {
            let pts: Vec<Point2> =
                serde_json::from_value(pv.clone()).map_err(|e| ApiError::schema("/polyline_override", e.to_string()))?;
            Some(Polyline2::from_points_dedup(&pts).map_err(|e| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidEdit", format!("polyline_override: {e}"))
            })?)
        }
    };
    let cf = counterfactual_predict(&st.model, graph, &scenario, &edits, override_line.as_ref(), &st.proposal)
        .map_err(|e| ApiError::from_core(e, "/scenario"))?;
    Ok(PredictResponse {
        baseline: RankedPredictions::new(&cf.baseline, k),
        edited: RankedPredictions::new(&cf.edited, k),
        deltas: cf.deltas,
        traces: TracePair {
            baseline: cf.baseline.traces,
            edited: cf.edited.traces,
        },
    })
}

async fn predict(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<Json<PredictResponse>> {
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || run_predict(&st2, &body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map(Json)
}

pub async fn serve(state: Arc<ServiceState>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
