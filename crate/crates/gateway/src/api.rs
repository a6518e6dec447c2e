//! Worker and admin HTTP API under `/api/v1`.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use peekaboom_core::crowdgame::{Campaign, CampaignConfig, Choice, GameError, PairId, SharedCampaign, TaskView, TrialOutcome};
use peekaboom_core::dataset::Split;
use peekaboom_core::metrics::{AccuracyCurve, ScoreTable};
use peekaboom_core::storage::{Clock, Durability, SystemClock};

use crate::crowd_report;
use crate::store::Store;

pub const BIND_ENV: &str = "PEEKABOOM_BIND_ADDR";
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(24 * 3600);

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "invalid_token", "missing, unknown or expired worker token")
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        use GameError::*;
        let (status, code) = match &e {
            Config(_) | MissingSaliency { .. } | SaliencySize { .. } | TooManyWrong { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config")
            }
            Closed => (StatusCode::CONFLICT, "campaign_closed"),
            UnknownWorker(_) => (StatusCode::NOT_FOUND, "unknown_worker"),
            UnknownTrial(_) => (StatusCode::NOT_FOUND, "unknown_trial"),
            NotOwner { .. } => (StatusCode::FORBIDDEN, "not_owner"),
            Unassigned { .. } | DuplicateStart { .. } => (StatusCode::CONFLICT, "bad_pair"),
            TrialFinished(_) => (StatusCode::CONFLICT, "trial_finished"),
            StaleStep { .. } => (StatusCode::CONFLICT, "stale_step"),
            ConflictingRetry { .. } => (StatusCode::CONFLICT, "conflicting_retry"),
            UnknownChoice(_) => (StatusCode::BAD_REQUEST, "unknown_choice"),
            NotCreated | CorrectNotListed(_) | Mask(_) | Storage(_) | Apply(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

struct Session {
    campaign_id: String,
    worker_id: String,
    expires: Instant,
}

pub struct AppState {
    store: Store,
    campaigns: RwLock<HashMap<String, SharedCampaign>>,
    sessions: Mutex<HashMap<String, Session>>,
    session_ttl: Duration,
    clock: Arc<dyn Fn() -> Box<dyn Clock> + Send + Sync>,
    durability: Durability,
}

impl AppState {
    /// Opens every campaign already in the store.
    pub fn open(store: Store, session_ttl: Duration) -> anyhow::Result<Self> {
        Self::with_clock(store, session_ttl, Durability::Sync, Arc::new(|| Box::new(SystemClock)))
    }

    pub fn with_clock(
        store: Store,
        session_ttl: Duration,
        durability: Durability,
        clock: Arc<dyn Fn() -> Box<dyn Clock> + Send + Sync>,
    ) -> anyhow::Result<Self> {
        let mut campaigns = HashMap::new();
        for id in store.campaign_ids()? {
            let c = store.open_campaign(&id, clock(), durability)?;
            campaigns.insert(id, SharedCampaign::new(c));
        }
        Ok(Self {
            store,
            campaigns: RwLock::new(campaigns),
            sessions: Mutex::new(HashMap::new()),
            session_ttl,
            clock,
            durability,
        })
    }

    fn campaign(&self, id: &str) -> Result<SharedCampaign, ApiError> {
        self.campaigns
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_campaign", format!("no campaign {id}")))
    }

    /// Resolves a token and extends its expiry.
    fn session(&self, token: Option<String>) -> Result<(SharedCampaign, String, String), ApiError> {
        let token = token.ok_or_else(ApiError::unauthorized)?;
        let now = Instant::now();
        let (cid, wid) = {
            let mut sessions = self.sessions.lock();
            sessions.retain(|_, s| s.expires > now);
            let s = sessions.get_mut(&token).ok_or_else(ApiError::unauthorized)?;
            s.expires = now + self.session_ttl;
            (s.campaign_id.clone(), s.worker_id.clone())
        };
        Ok((self.campaign(&cid)?, cid, wid))
    }
}

type Shared = Arc<AppState>;

fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Token from `Authorization: Bearer` or `?token=`.
fn token_of(headers: &HeaderMap, query: &TokenQuery) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string)
        .or_else(|| query.token.clone())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

#[derive(Debug, Default, Deserialize)]
pub struct TokenQuery {
    pub token: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChoiceJson {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskJson {
    pub trial_id: u64,
    pub pair: PairId,
    pub step: usize,
    pub rate: f64,
    pub image_png_b64: String,
    pub choices: Vec<ChoiceJson>,
    pub idk_allowed: bool,
}

/// A choice on the wire: a class index or the string `"idk"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireChoice {
    Index(usize),
    Word(String),
}

impl WireChoice {
    pub fn from_choice(c: Choice) -> Self {
        match c {
            Choice::Label(l) => Self::Index(l),
            Choice::Idk => Self::Word("idk".into()),
        }
    }

    fn to_choice(&self) -> Result<Choice, ApiError> {
        match self {
            Self::Index(l) => Ok(Choice::Label(*l)),
            Self::Word(w) if w == "idk" => Ok(Choice::Idk),
            Self::Word(w) => Err(ApiError::new(StatusCode::BAD_REQUEST, "unknown_choice", format!("choice {w:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerBody {
    pub step: usize,
    pub choice: WireChoice,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerReply {
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next: Option<TaskJson>,
}

#[derive(Debug, Deserialize)]
pub struct CreateCampaignBody {
    pub config: CampaignConfig,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Test
}

#[derive(Debug, Deserialize)]
pub struct RegisterBody {
    pub campaign_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReply {
    pub scores: ScoreTable,
    pub curves: Vec<AccuracyCurve>,
}

fn task_json(view: &TaskView, class_names: &[String]) -> Result<TaskJson, ApiError> {
    let png = view.image.to_png().map_err(ApiError::internal)?;
    Ok(TaskJson {
        trial_id: view.trial_id,
        pair: view.pair,
        step: view.step,
        rate: view.rate,
        image_png_b64: B64.encode(png),
        choices: view
            .choices
            .options
            .iter()
            .map(|&i| ChoiceJson {
                index: i,
                label: class_names[i].clone(),
            })
            .collect(),
        idk_allowed: view.idk_allowed,
    })
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/v1/campaigns", post(create_campaign).get(list_campaigns))
        .route("/api/v1/campaigns/{id}", get(campaign_status))
        .route("/api/v1/campaigns/{id}/assignments", post(assign))
        .route("/api/v1/campaigns/{id}/metrics", get(metrics))
        .route("/api/v1/workers", post(register))
        .route("/api/v1/trials/next", get(next_trial))
        .route("/api/v1/trials/{id}/answers", post(answer))
        .route("/api/v1/trials/{id}/abandon", post(abandon))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

async fn create_campaign(State(st): State<Shared>, Json(body): Json<CreateCampaignBody>) -> Result<Response, ApiError> {
    blocking(move || {
        let id = body.config.campaign_id.clone();
        let mut campaigns = st.campaigns.write();
        if campaigns.contains_key(&id) || st.store.campaign_log(&id).exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, "campaign_exists", format!("campaign {id} exists")));
        }
        let c: Campaign = st
            .store
            .create_campaign(body.config, body.split, (st.clock)(), st.durability)
            .map_err(|e| match e.downcast::<GameError>() {
                Ok(g) => ApiError::from(g),
                Err(e) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_campaign", format!("{e:#}")),
            })?;
        let n_pairs = c.state().n_pairs();
        campaigns.insert(id.clone(), SharedCampaign::new(c));
        Ok((StatusCode::CREATED, Json(json!({"campaign_id": id, "n_pairs": n_pairs}))).into_response())
    })
    .await
}

async fn list_campaigns(State(st): State<Shared>) -> Json<Value> {
    let mut ids: Vec<String> = st.campaigns.read().keys().cloned().collect();
    ids.sort();
    Json(json!({ "campaigns": ids }))
}

async fn campaign_status(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let c = st.campaign(&id)?;
    blocking(move || {
        let c = c.lock();
        let s = c.state();
        Ok(Json(json!({
            "campaign_id": id,
            "n_pairs": s.n_pairs(),
            "closed": s.is_closed(),
            "workers": s.workers.len(),
            "completed_trials": s.completed_trials().len(),
            "events": c.events().len(),
        })))
    })
    .await
}

async fn register(State(st): State<Shared>, Json(body): Json<RegisterBody>) -> Result<Json<Value>, ApiError> {
    let c = st.campaign(&body.campaign_id)?;
    blocking(move || {
        let worker_id = c.lock().register_worker()?;
        let token = new_token();
        st.sessions.lock().insert(
            token.clone(),
            Session {
                campaign_id: body.campaign_id,
                worker_id: worker_id.clone(),
                expires: Instant::now() + st.session_ttl,
            },
        );
        Ok(Json(json!({"worker_token": token, "worker_id": worker_id})))
    })
    .await
}

async fn assign(
    State(st): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Json<Value>, ApiError> {
    let (c, cid, worker) = st.session(token_of(&headers, &q))?;
    if cid != id {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "wrong_campaign", "token belongs to another campaign"));
    }
    blocking(move || {
        let pairs = c.lock().assign_tasks(&worker)?;
        Ok(Json(json!({ "pairs": pairs })))
    })
    .await
}

async fn next_trial(State(st): State<Shared>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> Result<Response, ApiError> {
    let (c, _, worker) = st.session(token_of(&headers, &q))?;
    blocking(move || {
        let mut c = c.lock();
        match c.next_trial(&worker)? {
            Some(v) => Ok(Json(task_json(&v, &c.state().class_names)?).into_response()),
            None => Ok(StatusCode::NO_CONTENT.into_response()),
        }
    })
    .await
}

async fn answer(
    State(st): State<Shared>,
    Path(trial): Path<u64>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    Json(body): Json<AnswerBody>,
) -> Result<Json<AnswerReply>, ApiError> {
    let (c, _, worker) = st.session(token_of(&headers, &q))?;
    let choice = body.choice.to_choice()?;
    blocking(move || {
        let mut c = c.lock();
        let reply = match c.submit_answer(&worker, trial, body.step, choice)? {
            TrialOutcome::Advance(v) => AnswerReply {
                outcome: "advance".into(),
                rate: None,
                next: Some(task_json(&v, &c.state().class_names)?),
            },
            TrialOutcome::Correct { rate } => AnswerReply {
                outcome: "correct".into(),
                rate: Some(rate),
                next: None,
            },
            TrialOutcome::Exhausted => AnswerReply {
                outcome: "exhausted".into(),
                rate: None,
                next: None,
            },
        };
        Ok(Json(reply))
    })
    .await
}

async fn abandon(
    State(st): State<Shared>,
    Path(trial): Path<u64>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Json<Value>, ApiError> {
    let (c, _, worker) = st.session(token_of(&headers, &q))?;
    blocking(move || {
        c.lock().abandon_trial(&worker, trial)?;
        Ok(Json(json!({"outcome": "abandoned"})))
    })
    .await
}

async fn metrics(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<MetricsReply>, ApiError> {
    let c = st.campaign(&id)?;
    blocking(move || {
        let state = c.snapshot();
        let (scores, curves) =
            crowd_report(&state).map_err(|e| ApiError::new(StatusCode::CONFLICT, "no_data", e.to_string()))?;
        Ok(Json(MetricsReply { scores, curves }))
    })
    .await
}

/// Serves until ctrl-c or SIGTERM, then drains in-flight requests.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(shutdown_signal())
        .await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_choices() {
        let idk: AnswerBody = serde_json::from_str(r#"{"step": 2, "choice": "idk"}"#).unwrap();
        assert_eq!(idk.choice.to_choice().unwrap(), Choice::Idk);
        let label: AnswerBody = serde_json::from_str(r#"{"step": 0, "choice": 5}"#).unwrap();
        assert_eq!(label.choice.to_choice().unwrap(), Choice::Label(5));
        let bad: AnswerBody = serde_json::from_str(r#"{"step": 0, "choice": "cat"}"#).unwrap();
        assert_eq!(bad.choice.to_choice().unwrap_err().status, StatusCode::BAD_REQUEST);
        assert!(serde_json::from_str::<AnswerBody>(r#"{"step": 0, "choice": -1}"#).is_err());
        assert_eq!(serde_json::to_value(WireChoice::from_choice(Choice::Idk)).unwrap(), json!("idk"));
    }

    #[test]
    fn tokens_are_256_bit_hex() {
        let a = new_token();
        assert_eq!(a.len(), 64);
        assert!(a.bytes().all(|b| b.is_ascii_hexdigit()));
        assert_ne!(a, new_token());
    }
}
