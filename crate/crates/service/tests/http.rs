use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use discovery_core::store::DiscoveryStore;
use discovery_service::{router, AppState, RateLimit, ServiceConfig, MIN_BODY_LIMIT};
use serde_json::Value;
use tower::ServiceExt;

const SHIPPING: &str = include_str!("../../core/fixtures/shipping_event.sanitised.json");
const RECEIVING: &str = include_str!("../../core/fixtures/receiving_event.sanitised.json");
const REQUEST: &str = include_str!("../../core/fixtures/access_request.json");
const SSCC: &str = "e5284a01b67b7756c0f51d10e7c74c6f277fea0e1f08ebe8f27fae25b04e695b";
const TARGET: &str = "dd85a8a245177fe4c4cbd540075a96dc38aefd7780677989be9e1efc92b5f08f";

fn app(store: DiscoveryStore) -> Router {
    router(AppState::new(store), MIN_BODY_LIMIT, None)
}

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = to_bytes(response.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn post_then_duplicate() {
    let app = app(DiscoveryStore::new());
    let (status, body) = call(&app, Method::POST, "/events", SHIPPING).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = json(&body)["eventId"].clone();
    assert!(id.as_str().unwrap().starts_with("ni:///sha-256;"));
    let (status, body) = call(&app, Method::POST, "/events", SHIPPING).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["eventId"], id);
}

#[tokio::test]
async fn raw_epc_is_a_bad_request() {
    let app = app(DiscoveryStore::new());
    let bad = SHIPPING.replace(&format!("ni:///sha-256;{SSCC}"), "urn:epc:id:sscc:4023333.0222222222");
    let (status, body) = call(&app, Method::POST, "/events", &bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json(&body)["path"], "epcList[0]");
    let (status, _) = call(&app, Method::POST, "/events", "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn conflicting_id_is_409() {
    let app = app(DiscoveryStore::new());
    call(&app, Method::POST, "/events", SHIPPING).await;
    let other = SHIPPING.replace("bizstep:shipping", "bizstep:packing");
    let (status, _) = call(&app, Method::POST, "/events", &other).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn oversized_body_is_413() {
    let app = app(DiscoveryStore::new());
    let huge = format!("{{\"pad\":\"{}\"}}", "x".repeat(MIN_BODY_LIMIT));
    let (status, body) = call(&app, Method::POST, "/events", &huge).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(json(&body)["error"].is_string());
}

#[tokio::test]
async fn query_returns_pair_in_order() {
    let app = app(DiscoveryStore::new());
    call(&app, Method::POST, "/events", RECEIVING).await;
    call(&app, Method::POST, "/events", SHIPPING).await;
    let (status, body) = call(&app, Method::GET, &format!("/events?hash={SSCC}"), "").await;
    assert_eq!(status, StatusCode::OK);
    let events = json(&body);
    let steps: Vec<_> = events.as_array().unwrap().iter().map(|e| e["bizStep"].clone()).collect();
    assert_eq!(steps, ["urn:epcglobal:cbv:bizstep:shipping", "urn:epcglobal:cbv:bizstep:receiving"]);
    let (_, upper) = call(&app, Method::GET, &format!("/events?hash={}", SSCC.to_uppercase()), "").await;
    assert_eq!(upper, body);
}

#[tokio::test]
async fn unknown_is_empty_and_malformed_is_400() {
    let app = app(DiscoveryStore::new());
    let (status, body) = call(&app, Method::GET, &format!("/events?hash={}", "0".repeat(64)), "").await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"[]".as_slice()));
    for uri in ["/events?hash=abc", "/events", &format!("/events?hash={}", "g".repeat(64))] {
        let (status, _) = call(&app, Method::GET, uri, "").await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
    }
}

#[tokio::test]
async fn responses_carry_no_submitter_data() {
    let app = app(DiscoveryStore::new());
    let request = Request::builder()
        .method(Method::POST)
        .uri("/events")
        .header("x-forwarded-for", "203.0.113.9")
        .body(Body::from(SHIPPING))
        .unwrap();
    app.clone().oneshot(request).await.unwrap();
    let response = app
        .clone()
        .oneshot(Request::get(format!("/events?hash={SSCC}")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let headers: Vec<_> = response.headers().keys().map(|k| k.as_str().to_string()).collect();
    assert!(headers.iter().all(|h| h == "content-type" || h == "content-length"), "{headers:?}");
    let body = to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let text = String::from_utf8(body.to_vec()).unwrap();
    assert!(!text.contains("203.0.113.9"));
    assert!(!text.contains("received"));
    assert!(!text.contains("origin"));
}

fn clocked(now: Arc<Mutex<DateTime<Utc>>>) -> Router {
    let state = AppState::new(DiscoveryStore::new()).with_clock(move || *now.lock().unwrap());
    router(state, MIN_BODY_LIMIT, None)
}

fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

#[tokio::test]
async fn dead_drop_lifecycle() {
    let now = Arc::new(Mutex::new(at("2021-07-30T13:00:00Z")));
    let app = clocked(now.clone());
    let (status, body) = call(&app, Method::POST, "/dead_drop", REQUEST).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(json(&body)["requestId"].as_str().unwrap().len(), 64);

    let poll = format!("/dead_drop?hash={TARGET}");
    let (status, body) = call(&app, Method::GET, &poll, "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body), Value::Array(vec![json(REQUEST.as_bytes())]));

    *now.lock().unwrap() = at("2021-07-30T13:32:44Z");
    let (_, body) = call(&app, Method::GET, &poll, "").await;
    assert_eq!(body, b"[]");
    let (_, body) = call(&app, Method::DELETE, "/dead_drop", "").await;
    assert_eq!(json(&body)["removed"], 1);
    let (_, body) = call(&app, Method::DELETE, "/dead_drop", "").await;
    assert_eq!(json(&body)["removed"], 0);

    let (status, _) = call(&app, Method::POST, "/dead_drop", REQUEST).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, Method::POST, "/dead_drop", &REQUEST.replace("dd85", "zz85")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json(&body)["path"], "requesting");
}

#[tokio::test]
async fn rate_limit_returns_429() {
    let limit = RateLimit {
        requests: 3,
        window: Duration::from_secs(3600),
    };
    let app = router(AppState::new(DiscoveryStore::new()), MIN_BODY_LIMIT, Some(limit));
    let uri = format!("/events?hash={SSCC}");
    for _ in 0..3 {
        assert_eq!(call(&app, Method::GET, &uri, "").await.0, StatusCode::OK);
    }
    assert_eq!(call(&app, Method::GET, &uri, "").await.0, StatusCode::TOO_MANY_REQUESTS);
}

#[test]
fn config_invariants() {
    let ok = ServiceConfig::default();
    assert!(ok.validate().is_ok());
    let small = ServiceConfig {
        max_body: MIN_BODY_LIMIT - 1,
        ..ServiceConfig::default()
    };
    assert!(small.validate().is_err());
    let zero = ServiceConfig {
        sweep_interval: Duration::ZERO,
        ..ServiceConfig::default()
    };
    assert!(zero.validate().is_err());
}
