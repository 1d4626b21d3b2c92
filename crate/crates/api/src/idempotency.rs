//! Replays stored responses for POST requests that repeat an
//! `Idempotency-Key`.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};

use crate::error::ApiError;
use crate::AppState;

pub const HEADER: &str = "idempotency-key";
pub const REPLAY_HEADER: &str = "idempotent-replay";
const CAPACITY: usize = 4_096;

#[derive(Clone)]
struct Stored {
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

enum Slot {
    InFlight,
    Done(Stored),
}

#[derive(Default)]
pub struct IdempotencyCache {
    inner: Mutex<(HashMap<String, Slot>, VecDeque<String>)>,
}

impl IdempotencyCache {
    fn claim(&self, key: &str) -> Result<Option<Stored>, ()> {
        let mut g = self.inner.lock().expect("idempotency lock");
        match g.0.get(key) {
            Some(Slot::Done(s)) => Ok(Some(s.clone())),
            Some(Slot::InFlight) => Err(()),
            None => {
                g.0.insert(key.to_string(), Slot::InFlight);
                Ok(None)
            }
        }
    }

    fn finish(&self, key: &str, stored: Option<Stored>) {
        let mut g = self.inner.lock().expect("idempotency lock");
        let (map, order) = &mut *g;
        match stored {
            None => {
                map.remove(key);
            }
            Some(s) => {
                map.insert(key.to_string(), Slot::Done(s));
                order.push_back(key.to_string());
                while order.len() > CAPACITY {
                    if let Some(old) = order.pop_front() {
                        map.remove(&old);
                    }
                }
            }
        }
    }
}

fn rebuild(s: Stored, replay: bool) -> Response {
    let mut resp = Response::new(Body::from(s.body));
    *resp.status_mut() = s.status;
    *resp.headers_mut() = s.headers;
    if replay {
        resp.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
    }
    resp
}

// Server errors and conflicts are worth retrying, so they are not stored.
fn cacheable(status: StatusCode) -> bool {
    !(status.is_server_error() || status == StatusCode::CONFLICT)
}

pub async fn middleware(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req.headers().get(HEADER).and_then(|v| v.to_str().ok()).map(str::to_string) else {
        return next.run(req).await;
    };
    let scoped = format!("{} {}", req.uri().path(), key);
    match state.idempotency.claim(&scoped) {
        Ok(Some(stored)) => return rebuild(stored, true),
        Err(()) => {
            return ApiError::new(StatusCode::CONFLICT, "RequestInFlight", "a request with this key is in progress")
                .into_response()
        }
        Ok(None) => {}
    }
    let resp = next.run(req).await;
    let (parts, body) = resp.into_parts();
    let body = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            state.idempotency.finish(&scoped, None);
            return ApiError::internal(e.to_string()).into_response();
        }
    };
    let stored = Stored {
        status: parts.status,
        headers: parts.headers,
        body,
    };
    state
        .idempotency
        .finish(&scoped, cacheable(stored.status).then(|| stored.clone()));
    rebuild(stored, false)
}
