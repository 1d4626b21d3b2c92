use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::multipart::Multipart;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use candor_core::domain::{BlobRef, CaseOrigin, CaseScenario, FeedbackRecord};
use candor_core::orchestrator::{ClinicianInput, TurnResult};
use candor_core::session::{FeedbackMode, Phase, SessionOptions, SessionState};
use candor_core::store::valid_session_id;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::audio::{check_wav, content_type};
use crate::error::ApiError;
use crate::events::{event_for, ApiEvent, EventKind};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

// Orchestrator calls block on providers and file IO.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

fn hides_turn_feedback(s: &SessionState) -> bool {
    !s.options.feedback_mode.shows_turn_feedback() && s.phase != Phase::Ended
}

fn session_view(mut s: SessionState) -> SessionState {
    if hides_turn_feedback(&s) {
        s.feedback.clear();
    }
    s
}

#[derive(Deserialize)]
pub struct CaseQuery {
    specialty: Option<String>,
}

pub async fn list_cases(State(st): State<Arc<AppState>>, Query(q): Query<CaseQuery>) -> impl IntoResponse {
    Json(st.catalog.list(q.specialty.as_deref()))
}

pub async fn get_case(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CaseScenario>> {
    st.catalog
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no case {id:?}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewCase {
    case: Option<CaseScenario>,
    description: Option<String>,
}

/// JSON `{case}` or `{description}`, or multipart with a dictated
/// `audio` description or a `description` text field.
pub async fn create_case(State(st): State<Arc<AppState>>, req: Request) -> ApiResult<Response> {
    let description = match media_type(&req).as_str() {
        "application/json" => {
            let Json(body) = Json::<NewCase>::from_request(req, &())
                .await
                .map_err(|e| ApiError::validation(e.body_text()))?;
            match (body.case, body.description) {
                (Some(c), None) => Err(c),
                (None, Some(d)) => Ok(ClinicianInput::Text(d)),
                _ => return Err(ApiError::validation("send exactly one of `case` or `description`")),
            }
        }
        "multipart/form-data" => Ok(read_multipart(&st, req, "description").await?),
        _ => return Err(unsupported_media()),
    };
    let mut case = match description {
        Err(c) => c,
        Ok(d) => {
            let s = st.clone();
            blocking(move || s.orch.extract_case_from(d)).await??
        }
    };
    case.origin = CaseOrigin::Bespoke;
    if !valid_session_id(&case.case_id.0) {
        return Err(ApiError::validation("case_id may contain only letters, digits, '-' and '_'"));
    }
    case.validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidCase", e.to_string()))?;
    let stored = case.clone();
    let s = st.clone();
    if !blocking(move || s.catalog.insert(stored)).await?.map_err(|e| ApiError::internal(e.to_string()))? {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "CaseExists",
            format!("case {:?} already exists", case.case_id.0),
        ));
    }
    Ok((StatusCode::CREATED, Json(case)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    case_id: Option<String>,
    case: Option<CaseScenario>,
    #[serde(default)]
    options: Option<Value>,
}

fn merge_options(defaults: &SessionOptions, patch: Option<Value>) -> ApiResult<SessionOptions> {
    let Some(patch) = patch else {
        return Ok(*defaults);
    };
    let Value::Object(patch) = patch else {
        return Err(ApiError::validation("`options` must be an object"));
    };
    let mut v = serde_json::to_value(defaults).expect("options serialize");
    if let Value::Object(m) = &mut v {
        m.extend(patch);
    }
    let o: SessionOptions =
        serde_json::from_value(v).map_err(|e| ApiError::validation(format!("options: {e}")))?;
    if o.window == 0 || o.turn_budget == 0 {
        return Err(ApiError::validation("options: window and turn_budget must be positive"));
    }
    Ok(o)
}

pub async fn create_session(State(st): State<Arc<AppState>>, Json(body): Json<NewSession>) -> ApiResult<Response> {
    let case = match (body.case_id, body.case) {
        (Some(id), None) => st
            .catalog
            .get(&id)
            .ok_or_else(|| ApiError::not_found(format!("no case {id:?}")))?,
        (None, Some(mut c)) => {
            c.origin = CaseOrigin::Bespoke;
            c
        }
        _ => return Err(ApiError::validation("send exactly one of `case_id` or `case`")),
    };
    let options = merge_options(&st.settings.defaults, body.options)?;
    let s = st.clone();
    let state = blocking(move || s.orch.create_session(case, options)).await??;
    Ok((StatusCode::CREATED, Json(session_view(state))).into_response())
}

pub async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let s = st.clone();
    let state = blocking(move || s.orch.session(&id)).await??;
    Ok(Json(session_view(state)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextTurn {
    text: String,
}

fn media_type(req: &Request) -> String {
    let ctype = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    ctype.split(';').next().unwrap_or("").trim().to_ascii_lowercase()
}

fn unsupported_media() -> ApiError {
    ApiError::new(
        StatusCode::UNSUPPORTED_MEDIA_TYPE,
        "UnsupportedMediaType",
        "send application/json or multipart/form-data",
    )
}

/// The first `audio` or `text_field` part of a multipart body.
async fn read_multipart(st: &AppState, req: Request, text_field: &str) -> ApiResult<ClinicianInput> {
    let mut mp = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::validation(e.body_text()))?;
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "PayloadTooLarge",
            format!("audio exceeds {} bytes", st.settings.max_upload_bytes),
        )
    };
    let multipart_error = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large()
        } else {
            ApiError::validation(e.body_text())
        }
    };
    while let Some(field) = mp.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("audio") => {
                let bytes: Bytes = field.bytes().await.map_err(multipart_error)?;
                if bytes.len() > st.settings.max_upload_bytes {
                    return Err(too_large());
                }
                check_wav(&bytes).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "UnsupportedAudio", m))?;
                return Ok(ClinicianInput::Audio(bytes.to_vec()));
            }
            Some(name) if name == text_field => {
                return Ok(ClinicianInput::Text(field.text().await.map_err(multipart_error)?));
            }
            _ => {}
        }
    }
    Err(ApiError::validation(format!(
        "multipart body needs an `audio` or `{text_field}` field"
    )))
}

async fn read_input(st: &AppState, req: Request) -> ApiResult<ClinicianInput> {
    match media_type(&req).as_str() {
        "application/json" => {
            let Json(t) = Json::<TextTurn>::from_request(req, &())
                .await
                .map_err(|e| ApiError::validation(e.body_text()))?;
            Ok(ClinicianInput::Text(t.text))
        }
        "multipart/form-data" => read_multipart(st, req, "text").await,
        _ => Err(unsupported_media()),
    }
}

pub async fn submit_turn(State(st): State<Arc<AppState>>, Path(id): Path<String>, req: Request) -> ApiResult<Json<TurnResult>> {
    let input = read_input(&st, req).await?;
    let _permit = st
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let s = st.clone();
    let result = blocking(move || s.orch.submit_clinician_turn(&id, input)).await??;
    Ok(Json(result))
}

pub async fn get_feedback(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = st.clone();
    let state = blocking(move || s.orch.session(&id)).await??;
    let hidden = hides_turn_feedback(&state);
    if state.overall.is_none() && (hidden || state.feedback.is_empty()) {
        return Err(ApiError::new(StatusCode::CONFLICT, "NoReport", "no feedback has been recorded yet"));
    }
    let turns: &[FeedbackRecord] = if hidden { &[] } else { &state.feedback };
    Ok(Json(json!({
        "session_id": state.session_id,
        "phase": state.phase,
        "turn_feedback": turns,
        "overall": state.overall,
    })))
}

pub async fn end_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = st.clone();
    let report = blocking(move || s.orch.end_session(&id)).await??;
    Ok(Json(json!({ "overall": report })))
}

pub async fn get_audio(State(st): State<Arc<AppState>>, Path(blob): Path<String>) -> ApiResult<Response> {
    if blob.len() != 64 || !blob.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        return Err(ApiError::not_found("no such audio"));
    }
    let s = st.clone();
    let bytes = blocking(move || s.orch.blob(&BlobRef(blob)))
        .await??
        .ok_or_else(|| ApiError::not_found("no such audio"))?;
    Ok((
        [
            (header::CONTENT_TYPE, content_type(&bytes)),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Deserialize)]
pub struct EventQuery {
    after: Option<u64>,
}

fn sse_event(e: &ApiEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.as_str())
        .json_data(e)
        .expect("event serializes")
}

/// History from the log followed by live events. Resumes after the
/// `Last-Event-ID` header or the `after` query parameter.
pub async fn events(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.after);
    let from = after.map_or(0, |a| a + 1);
    let s = st.clone();
    let sid = id.clone();
    // Subscribing under the writer lock means nothing falls between the
    // history read and the live feed.
    let (history, rx) = blocking(move || s.orch.entries_then(&sid, from, || s.hub.subscribe(&sid))).await??;
    let state = {
        let s = st.clone();
        let sid = id.clone();
        blocking(move || s.orch.session(&sid)).await??
    };
    let hide = state.options.feedback_mode == FeedbackMode::OverallOnly;
    let keep = move |e: &ApiEvent| !(hide && e.kind == EventKind::TurnFeedback);
    let past: Vec<ApiEvent> = history.iter().filter_map(|e| event_for(&id, e)).filter(&keep).collect();
    let last = past.last().map(|e| e.seq).or(after);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((e, rx)),
                Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .filter(move |e| futures::future::ready(keep(e) && last.is_none_or(|l| e.seq > l)));
    let out = stream::iter(past).chain(live).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(out).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
