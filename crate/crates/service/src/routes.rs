use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::Json;
use serde::de::DeserializeOwned;
use zcbm_core::pipeline::{EditOp, InterventionSession};
use zcbm_core::regress::{Solver, SolverConfig, DEFAULT_HTP_S, DEFAULT_HTP_STEP, DEFAULT_LAMBDA};
use zcbm_core::retrieval::topk_exact;
use zcbm_core::vecstore::{normalize, EmbeddingVector};

use crate::dto::*;
use crate::{ApiError, AppState};

pub(crate) const DEFAULT_SEARCH_N: usize = 10;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn looks_non_finite(body: &[u8], err: &serde_json::Error) -> bool {
    let text = String::from_utf8_lossy(body);
    err.to_string().contains("number out of range") || text.contains("NaN") || text.contains("Infinity")
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        if looks_non_finite(body, &e) {
            ApiError::unprocessable(format!("non-finite number in request: {e}"))
        } else {
            ApiError::bad_request(format!("invalid request body: {e}"))
        }
    })
}

/// Values must stay finite once narrowed to `f32`.
fn embedding(values: &[f64], dim: usize) -> Result<EmbeddingVector, ApiError> {
    if let Some(i) = values.iter().position(|v| !(*v as f32).is_finite()) {
        return Err(ApiError::unprocessable(format!(
            "embedding component {i} is not a finite 32-bit float"
        )));
    }
    if values.len() != dim {
        return Err(zcbm_core::vecstore::VecError::DimensionMismatch {
            expected: dim,
            actual: values.len(),
        }
        .into());
    }
    Ok(EmbeddingVector::new(values.iter().map(|&v| v as f32).collect())?)
}

fn solver_name(s: &Solver) -> &'static str {
    match s {
        Solver::Lasso { .. } => "lasso",
        Solver::ElasticNet { .. } => "elastic_net",
        Solver::Htp { .. } => "htp",
        Solver::LeastSquares => "least_squares",
        Solver::Similarity => "similarity",
    }
}

/// Request solver on top of the service default. `lambda` sets the l1
/// weight of lasso and elastic net.
pub(crate) fn resolve_solver(
    default: &SolverConfig,
    name: Option<&str>,
    lambda: Option<f64>,
) -> Result<SolverConfig, ApiError> {
    let solver = match name {
        None => default.solver,
        Some(n) if n == solver_name(&default.solver) => default.solver,
        Some("lasso") => Solver::Lasso { lambda: DEFAULT_LAMBDA },
        Some("elastic_net") => Solver::ElasticNet {
            lambda1: DEFAULT_LAMBDA,
            lambda2: DEFAULT_LAMBDA,
        },
        Some("htp") => Solver::Htp {
            s: DEFAULT_HTP_S,
            step: DEFAULT_HTP_STEP,
        },
        Some("least_squares") => Solver::LeastSquares,
        Some("similarity") => Solver::Similarity,
        Some(other) => return Err(ApiError::bad_request(format!("unknown solver {other:?}"))),
    };
    if let Some(l) = lambda {
        if !l.is_finite() {
            return Err(ApiError::unprocessable("lambda must be finite"));
        }
    }
    let solver = match (solver, lambda) {
        (Solver::Lasso { .. }, Some(lambda)) => Solver::Lasso { lambda },
        (Solver::ElasticNet { lambda2, .. }, Some(lambda1)) => Solver::ElasticNet { lambda1, lambda2 },
        (s, Some(_)) => {
            return Err(ApiError::bad_request(format!(
                "lambda does not apply to the {} solver",
                solver_name(&s)
            )))
        }
        (s, None) => s,
    };
    let cfg = SolverConfig { solver, ..*default };
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(cfg)
}

fn resolve_k(state: &AppState, k: Option<usize>) -> Result<usize, ApiError> {
    match k.unwrap_or(state.config().default_k) {
        0 => Err(ApiError::bad_request("k must be at least 1")),
        k => Ok(k),
    }
}

pub(crate) async fn healthz(State(state): State<AppState>) -> Json<Health> {
    let bank = state.engine().bank();
    Json(Health {
        status: "ok".into(),
        bank_count: bank.len(),
        dim: bank.dim(),
    })
}

pub(crate) async fn infer(State(state): State<AppState>, body: Bytes) -> Result<Json<PredictionDto>, ApiError> {
    let req: InferRequest = parse_body(&body)?;
    let x = embedding(&req.embedding, state.engine().dim())?;
    let k = resolve_k(&state, req.k)?;
    let solver = resolve_solver(&state.config().default_solver, req.solver.as_deref(), req.lambda)?;
    blocking(move || {
        let engine = state.engine();
        let p = engine.infer(&x, k, &solver)?;
        Ok(Json(PredictionDto::new(&p, engine.classes())))
    })
    .await
}

pub(crate) async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<SessionCreated>, ApiError> {
    let req: InferRequest = parse_body(&body)?;
    let x = embedding(&req.embedding, state.engine().dim())?;
    let k = resolve_k(&state, req.k)?;
    let solver = resolve_solver(&state.config().default_solver, req.solver.as_deref(), req.lambda)?;
    blocking(move || {
        let engine = state.engine();
        let p = engine.infer(&x, k, &solver)?;
        let prediction = PredictionDto::new(&p, engine.classes());
        let session = InterventionSession::new(p, k, solver);
        let session_id = session.session_id.clone();
        state.store().insert(session);
        state.store().persist()?;
        Ok(Json(SessionCreated { session_id, prediction }))
    })
    .await
}

pub(crate) async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionDto>, ApiError> {
    blocking(move || {
        let handle = state.store().get(&id)?;
        let s = handle.lock().unwrap();
        Ok(Json(SessionDto::new(&s, state.engine().classes())))
    })
    .await
}

fn edit_op(req: EditRequest) -> Result<EditOp, ApiError> {
    let index = || req.index.ok_or_else(|| ApiError::bad_request(format!("{} needs an index", req.op)));
    match req.op.as_str() {
        "delete" => Ok(EditOp::Delete { index: index()? }),
        "restore" => Ok(EditOp::Restore { index: index()? }),
        "insert" => match &req.concept {
            Some(c) => Ok(EditOp::Insert { concept: c.clone() }),
            None => Err(ApiError::bad_request("insert needs a concept")),
        },
        other => Err(ApiError::bad_request(format!(
            "unknown op {other:?}; expected delete, restore or insert"
        ))),
    }
}

pub(crate) async fn edit_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionDto>, ApiError> {
    let op = edit_op(parse_body(&body)?)?;
    blocking(move || {
        let handle = state.store().get(&id)?;
        let mut s = handle.lock().unwrap();
        s.apply_edit(state.engine(), op, state.embedder())?;
        let dto = SessionDto::new(&s, state.engine().classes());
        drop(s);
        state.store().persist()?;
        Ok(Json(dto))
    })
    .await
}

pub(crate) async fn recompute_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionDto>, ApiError> {
    blocking(move || {
        let handle = state.store().get(&id)?;
        let mut s = handle.lock().unwrap();
        s.recompute(state.engine())?;
        let dto = SessionDto::new(&s, state.engine().classes());
        drop(s);
        state.store().persist()?;
        Ok(Json(dto))
    })
    .await
}

/// Embeds the query through the provider. Without one, only exact bank
/// concepts can be looked up.
pub(crate) async fn search_bank(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<SearchResponse>, ApiError> {
    let q = params
        .get("q")
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing query parameter q"))?;
    let n = match params.get("n") {
        None => DEFAULT_SEARCH_N,
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return Err(ApiError::bad_request(format!("n must be a positive integer, got {v:?}"))),
        },
    };
    blocking(move || {
        let bank = state.engine().bank();
        let query = match (state.embedder(), bank.find(&q)) {
            (Some(e), _) => {
                let m = e.embed(std::slice::from_ref(&q)).map_err(|e| ApiError::provider(e.to_string()))?;
                embedding(&m.row(0).iter().map(|&v| v as f64).collect::<Vec<_>>(), bank.dim())?
            }
            (None, Some(i)) => bank.embeddings().row_vector(i),
            (None, None) => {
                return Err(ApiError::provider(format!(
                    "{q:?} is not in the bank and no embedding provider is configured"
                )))
            }
        };
        let query = normalize(query.values())?;
        let hits = topk_exact(&query, bank.embeddings(), n).map_err(|e| ApiError::internal(e.to_string()))?;
        let results = hits
            .indices
            .iter()
            .zip(&hits.scores)
            .map(|(&index, &score)| SearchHit {
                index,
                text: bank.concept(index).to_string(),
                score: score as f32,
            })
            .collect();
        Ok(Json(SearchResponse { query: q, results }))
    })
    .await
}

pub(crate) async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}
