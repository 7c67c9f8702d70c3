use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefse_core::control::enhance_with_floor;
use prefse_core::eval::{compare_conditions, ConditionTable};
use prefse_core::preference::{
    fit_preferences, new_session_for_scenes, ElicitationSession, PreferenceError, PreferenceFunction, ResponseEvent,
    SessionStatus, DEFAULT_STEP, START_P,
};
use prefse_core::scenes::{render, SceneLabel, Stems};
use prefse_core::signal::{read_wav_bytes, write_wav_bytes, AudioClip, SampleFormat, PIPELINE_RATE};
use serde::{Deserialize, Serialize};

use crate::store::StoreError;
use crate::{AppState, Artifacts};

pub(crate) fn routes() -> Router<AppState> {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session_state))
        .route("/api/sessions/{id}/stimulus", get(stimulus))
        .route("/api/sessions/{id}/response", post(respond))
        .route("/api/sessions/{id}/preferences", get(preferences))
        .route("/api/sessions/{id}/report", get(report))
        .route("/api/enhance", post(enhance_upload))
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg)
    }

    fn internal(msg: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, e.to_string()),
            StoreError::Session(PreferenceError::SessionComplete) => Self::new(StatusCode::CONFLICT, e.to_string()),
            other => Self::internal(other),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn artifacts(state: &AppState) -> ApiResult<Arc<Artifacts>> {
    state
        .artifacts
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "dataset artifacts are not loaded"))
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
}

fn completed(id: &str) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, format!("session {id} is complete"))
}

fn incomplete(id: &str) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, format!("session {id} is not complete"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "artifacts": state.artifacts.is_some(),
        "weights": state.artifacts.as_ref().is_some_and(|a| a.weights.is_some()),
        "sessions": state.store.ids().len(),
    }))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub grid_repeats: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub scenes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSummary {
    pub stimuli: usize,
    pub scenes: Vec<SceneLabel>,
    pub snr_grid_db: Vec<f64>,
    pub p_start: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub plan_summary: PlanSummary,
}

/// Public view of a session. Scene and SNR of the plan are never included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub p_current: f64,
    pub cursor: usize,
    pub status: SessionStatus,
    pub plan_len: usize,
}

impl From<&ElicitationSession> for SessionState {
    fn from(s: &ElicitationSession) -> Self {
        Self { p_current: s.p_current, cursor: s.cursor, status: s.status, plan_len: s.plan.len() }
    }
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let art = artifacts(&state)?;
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad session config: {e}")))?
    };
    let scenes = match &config.scenes {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<SceneLabel>().map_err(|e| ApiError::bad_request(e.to_string())))
            .collect::<ApiResult<Vec<_>>>()?,
        None => SceneLabel::ALL.to_vec(),
    };
    let step = config.step.unwrap_or(DEFAULT_STEP);
    if !(step > 0.0 && step <= 1.0) {
        return Err(ApiError::bad_request(format!("step {step} must lie in (0, 1]")));
    }
    let repeats = config.grid_repeats.unwrap_or(1);
    let seed = config.seed.unwrap_or_else(rand::random);
    let mut session = new_session_for_scenes(&art.manifest, &scenes, repeats, seed).map_err(|e| match e {
        PreferenceError::InvalidParams(_) => ApiError::bad_request(e.to_string()),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
    })?;
    session.id = uuid::Uuid::new_v4().simple().to_string();
    session.step = step;
    let created = SessionCreated {
        session_id: session.id.clone(),
        plan_summary: PlanSummary {
            stimuli: session.plan.len(),
            scenes,
            snr_grid_db: art.manifest.snr_grid(),
            p_start: START_P,
            step,
        },
    };
    state.store.insert(session)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn session_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let s = state.store.snapshot(&id).await.ok_or_else(|| not_found(&id))?;
    Ok(Json(SessionState::from(&s)))
}

fn header_value(v: impl ToString) -> HeaderValue {
    HeaderValue::from_str(&v.to_string()).unwrap_or_else(|_| HeaderValue::from_static("invalid"))
}

fn wav_response(bytes: Vec<u8>, extra: Vec<(&'static str, HeaderValue)>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    for (name, value) in extra {
        headers.insert(HeaderName::from_static(name), value);
    }
    (headers, bytes).into_response()
}

/// The current stimulus, enhanced at floor `A = 1 - p_current`.
async fn stimulus(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let art = artifacts(&state)?;
    let s = state.store.snapshot(&id).await.ok_or_else(|| not_found(&id))?;
    let stim = s.current().cloned().ok_or_else(|| completed(&id))?;
    let record = art
        .manifest
        .get(&stim.record_id)
        .cloned()
        .ok_or_else(|| ApiError::internal(format!("record {} missing from manifest", stim.record_id)))?;
    let a = 1.0 - s.p_current;
    let bytes = {
        let art = art.clone();
        blocking(move || {
            let stems = render(&record, art.base_dir.as_deref()).map_err(ApiError::internal)?;
            let clip = enhance_with_floor(&stems, a, art.stft).map_err(ApiError::internal)?;
            Ok(write_wav_bytes(&clip, SampleFormat::Pcm16))
        })
        .await?
    };
    let mut extra = vec![
        ("x-stimulus-index", header_value(s.cursor)),
        ("x-plan-length", header_value(s.plan.len())),
        ("x-p-current", header_value(s.p_current)),
        ("x-floor-a", header_value(a)),
    ];
    if state.reveal {
        extra.push(("x-scene", header_value(stim.scene)));
        extra.push(("x-snr-db", header_value(stim.snr_db)));
        extra.push(("x-record-id", header_value(&stim.record_id)));
    }
    Ok(wav_response(bytes, extra))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseBody {
    pub event: String,
}

async fn respond(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionState>> {
    let parsed: ResponseBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad response body: {e}")))?;
    let event: ResponseEvent = parsed.event.parse().map_err(|e: PreferenceError| ApiError::bad_request(e.to_string()))?;
    let s = state.store.respond(&id, event).await?;
    Ok(Json(SessionState::from(&s)))
}

async fn fitted(state: &AppState, id: &str) -> ApiResult<PreferenceFunction> {
    let entry = state.store.get(id).ok_or_else(|| not_found(id))?;
    let mut guard = entry.lock().await;
    if !guard.session.is_complete() {
        return Err(incomplete(id));
    }
    if guard.preferences.is_none() {
        guard.preferences = Some(fit_preferences(&guard.session.log).map_err(ApiError::internal)?);
    }
    Ok(guard.preferences.clone().expect("cached above"))
}

async fn preferences(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<PreferenceFunction>> {
    Ok(Json(fitted(&state, &id).await?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneLine {
    beta: f64,
    gamma: f64,
    a_at_min_snr: f64,
    a_at_max_snr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Report {
    session_id: String,
    preferences: PreferenceFunction,
    lines: BTreeMap<SceneLabel, SceneLine>,
    conditions: ConditionTable,
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn report(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ReportQuery>,
) -> ApiResult<Response> {
    let art = artifacts(&state)?;
    let pref = fitted(&state, &id).await?;
    let entry = state.store.get(&id).ok_or_else(|| not_found(&id))?;
    let mut guard = entry.lock().await;
    let table = match &guard.conditions {
        Some(t) => t.clone(),
        None => {
            let (art, pref) = (art.clone(), pref.clone());
            let t = blocking(move || {
                let weights = art.weights.as_ref();
                let pref = weights.map(|_| &pref);
                compare_conditions(&art.manifest, weights, pref, art.base_dir.as_deref(), art.stft)
                    .map_err(ApiError::internal)
            })
            .await?;
            let t = Arc::new(t);
            guard.conditions = Some(t.clone());
            t
        }
    };
    drop(guard);

    if query.format.as_deref() == Some("csv") {
        let mut buf = Vec::new();
        table.write_csv(&mut buf).map_err(ApiError::internal)?;
        return Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response());
    }
    let grid = art.manifest.snr_grid();
    let (lo, hi) = (grid.first().copied().unwrap_or(0.0), grid.last().copied().unwrap_or(0.0));
    let lines = SceneLabel::ALL
        .into_iter()
        .map(|scene| {
            let l = pref.line(scene);
            let a = |snr: f64| l.eval(snr).clamp(0.0, 1.0);
            (scene, SceneLine { beta: l.beta, gamma: l.gamma, a_at_min_snr: a(lo), a_at_max_snr: a(hi) })
        })
        .collect();
    let report = Report { session_id: id, preferences: pref, lines, conditions: (*table).clone() };
    Ok(Json(report).into_response())
}

/// Multipart fields: `mixture` and `clean` WAV files, optional `A` (floor,
/// default 0) or `p` (enhancement level, `A = 1 - p`).
async fn enhance_upload(mut multipart: Multipart) -> ApiResult<Response> {
    let mut mixture = None;
    let mut clean = None;
    let mut floor = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        match name.as_str() {
            "mixture" => mixture = Some(data),
            "clean" => clean = Some(data),
            "A" | "p" => {
                let v: f64 = std::str::from_utf8(&data)
                    .ok()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| ApiError::bad_request(format!("field {name} is not a number")))?;
                floor = Some(if name == "p" { 1.0 - v } else { v });
            }
            _ => {}
        }
    }
    let mixture = mixture.ok_or_else(|| ApiError::bad_request("missing 'mixture' field"))?;
    let a = floor.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&a) {
        return Err(ApiError::bad_request(format!("floor {a} outside [0, 1]")));
    }
    let unmaskable = |msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg);
    let clean = clean.ok_or_else(|| unmaskable("oracle masking needs a paired 'clean' stem".into()))?;
    let bytes = blocking(move || {
        let decode = |b: &[u8], what: &str| -> ApiResult<AudioClip> {
            let clip = read_wav_bytes(b).map_err(|e| ApiError::bad_request(format!("{what}: {e}")))?;
            clip.require_rate(PIPELINE_RATE).map_err(|e| unmaskable(format!("{what}: {e}")))?;
            Ok(clip)
        };
        let mixture = decode(&mixture, "mixture")?;
        let clean = decode(&clean, "clean")?;
        if mixture.len() != clean.len() {
            return Err(unmaskable(format!("stem lengths differ: {} vs {}", mixture.len(), clean.len())));
        }
        let noise: Vec<f64> = mixture.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
        let noise = AudioClip::new(noise, PIPELINE_RATE).map_err(ApiError::internal)?;
        let stems = Stems { clean, noise, mixture };
        let out = enhance_with_floor(&stems, a, Default::default()).map_err(|e| unmaskable(e.to_string()))?;
        Ok(write_wav_bytes(&out, SampleFormat::Pcm16))
    })
    .await?;
    Ok(wav_response(bytes, vec![("x-floor-a", header_value(a))]))
}
