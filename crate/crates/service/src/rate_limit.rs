use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{ConnectInfo, Request, State};
use axum::http::StatusCode;
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::Json;

/// At most `requests` per client address in each fixed `window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub requests: u32,
    pub window: Duration,
}

pub(crate) struct Limiter {
    limit: RateLimit,
    windows: Mutex<HashMap<Option<IpAddr>, (Instant, u32)>>,
}

impl Limiter {
    pub(crate) fn new(limit: RateLimit) -> Self {
        Self {
            limit,
            windows: Mutex::new(HashMap::new()),
        }
    }

    fn admit(&self, client: Option<IpAddr>, now: Instant) -> bool {
        let mut windows = self.windows.lock().expect("rate limiter lock poisoned");
        // forget clients whose window closed, so the table stays small
        windows.retain(|_, (start, _)| now.duration_since(*start) < self.limit.window);
        let (_, count) = windows.entry(client).or_insert((now, 0));
        if *count >= self.limit.requests {
            return false;
        }
        *count += 1;
        true
    }
}

pub(crate) async fn enforce(State(limiter): State<Arc<Limiter>>, request: Request, next: Next) -> Response {
    let client = request
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|ConnectInfo(addr)| addr.ip());
    if limiter.admit(client, Instant::now()) {
        next.run(request).await
    } else {
        (
            StatusCode::TOO_MANY_REQUESTS,
            Json(serde_json::json!({"error": "rate limit exceeded"})),
        )
            .into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_window_per_client() {
        let limiter = Limiter::new(RateLimit {
            requests: 2,
            window: Duration::from_secs(10),
        });
        let t0 = Instant::now();
        let a = Some(IpAddr::from([10, 0, 0, 1]));
        let b = Some(IpAddr::from([10, 0, 0, 2]));
        assert!(limiter.admit(a, t0));
        assert!(limiter.admit(a, t0));
        assert!(!limiter.admit(a, t0 + Duration::from_secs(1)));
        assert!(limiter.admit(b, t0 + Duration::from_secs(1)));
        assert!(limiter.admit(a, t0 + Duration::from_secs(10)));
    }
}
