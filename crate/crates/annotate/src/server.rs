use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dser_core::EmotionSequence;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::{Choice, Error, Judgment, JudgmentLog, Manifest, Recorded, Result};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub log: PathBuf,
    /// Built UI bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
    pub host: String,
    pub port: u16,
}

/// Shared service state. The manifest is read without locking; every log
/// write goes through the one mutex.
#[derive(Debug)]
pub struct AppState {
    pub manifest: Manifest,
    pub log: Mutex<JudgmentLog>,
}

impl AppState {
    pub fn new(manifest: Manifest, log: JudgmentLog) -> Arc<Self> {
        Arc::new(Self {
            manifest,
            log: Mutex::new(log),
        })
    }
}

/// What an annotator sees. Which candidate is which stays server-side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub pair_id: String,
    pub audio_id: String,
    pub a: EmotionSequence,
    pub b: EmotionSequence,
    pub status: String,
    /// Zero-based manifest position and manifest size, for progress display.
    pub index: usize,
    pub total: usize,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgmentRequest {
    pair_id: String,
    choice: Choice,
    annotator: String,
}

#[derive(Serialize)]
struct Sequences<'a> {
    pair_id: &'a str,
    a: &'a EmotionSequence,
    b: &'a EmotionSequence,
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let status = match &self {
            Error::UnknownPair(_) => StatusCode::NOT_FOUND,
            Error::Conflict { .. } => StatusCode::CONFLICT,
            Error::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

fn annotator_of(raw: Option<String>) -> Result<String> {
    match raw {
        Some(a) if !a.trim().is_empty() => Ok(a),
        _ => Err(Error::Invalid("missing annotator".into())),
    }
}

async fn next_pair(State(state): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response> {
    let annotator = annotator_of(q.annotator)?;
    let log = state.log.lock().expect("log mutex poisoned");
    let total = state.manifest.len();
    for (index, pair) in state.manifest.pairs().iter().enumerate() {
        if log.choice(&pair.pair_id, &annotator).is_none() {
            let (a, b) = pair.shown();
            return Ok(Json(TaskPayload {
                pair_id: pair.pair_id.clone(),
                audio_id: pair.audio_id.clone(),
                a: a.clone(),
                b: b.clone(),
                status: "pending".into(),
                index,
                total,
            })
            .into_response());
        }
    }
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn post_judgment(State(state): State<Arc<AppState>>, Json(req): Json<JudgmentRequest>) -> Result<StatusCode> {
    let annotator = annotator_of(Some(req.annotator))?;
    if state.manifest.get(&req.pair_id).is_none() {
        return Err(Error::UnknownPair(req.pair_id));
    }
    let judgment = Judgment {
        pair_id: req.pair_id,
        choice: req.choice,
        annotator,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    // The append is synced to disk before the response goes out.
    let recorded = tokio::task::spawn_blocking(move || state.log.lock().expect("log mutex poisoned").record(judgment))
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))??;
    Ok(match recorded {
        Recorded::Created => StatusCode::CREATED,
        Recorded::Duplicate => StatusCode::OK,
    })
}

async fn audio(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response> {
    let path = state
        .manifest
        .audio_path(&id)
        .ok_or_else(|| Error::UnknownPair(format!("audio {id}")))?;
    let bytes = tokio::fs::read(path).await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn sequences(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response> {
    let pair = state.manifest.get(&id).ok_or(Error::UnknownPair(id))?;
    let (a, b) = pair.shown();
    Ok(Json(Sequences {
        pair_id: &pair.pair_id,
        a,
        b,
    })
    .into_response())
}

/// All API routes, plus the UI bundle when `ui_dir` is given.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/pairs/{id}/sequences", get(sequences))
        .route("/api/judgments", post(post_judgment))
        .route("/api/audio/{id}", get(audio))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Loads the manifest and log, then serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let manifest = Manifest::load(&cfg.manifest)?;
    let log = JudgmentLog::open(&cfg.log)?;
    log::info!("{} pairs, {} judgments on record", manifest.len(), log.records().len());
    let app = router(AppState::new(manifest, log), cfg.ui_dir.clone());
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .map_err(|e| Error::Invalid(format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
