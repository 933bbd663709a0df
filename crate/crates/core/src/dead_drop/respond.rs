//! Owner-side delivery of clear-text answers.
//!
//! This runs on the data owner's machine. The dead drop is not involved: the
//! payload goes straight to the endpoint named in the request.

use std::collections::HashMap;
use std::time::Duration;

use serde_json::{Map, Value};

use super::{AccessRequest, AuthDecision, Protocol};
use crate::event::Event;

/// Delivery channel for protocols other than `POST`, e.g. `EMAIL`.
pub trait Transport: Send + Sync {
    fn deliver(&self, endpoint: &str, payload: &[u8]) -> Result<(), String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryResult {
    Delivered { attempts: u32 },
    Failed { attempts: u32, reason: String },
}

impl DeliveryResult {
    pub fn is_delivered(&self) -> bool {
        matches!(self, DeliveryResult::Delivered { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RespondError {
    #[error("request was not granted")]
    NotGranted,
    #[error("no transport for protocol {0:?}")]
    UnsupportedProtocol(String),
}

pub struct Responder {
    http: reqwest::blocking::Client,
    transports: HashMap<String, Box<dyn Transport>>,
    retries: u32,
}

impl Default for Responder {
    fn default() -> Self {
        Self::new()
    }
}

impl Responder {
    pub fn new() -> Self {
        Self::with_timeout(Duration::from_secs(10))
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("HTTP client builds with default TLS");
        Self {
            http,
            transports: HashMap::new(),
            retries: 0,
        }
    }

    /// Extra attempts after a failed delivery. Defaults to 0.
    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    /// Registers a transport for `protocol` (e.g. `"EMAIL"`). Replaces any earlier one.
    pub fn with_transport(mut self, protocol: &str, transport: impl Transport + 'static) -> Self {
        self.transports.insert(protocol.to_string(), Box::new(transport));
        self
    }

    /// Sends `payload` to the request's recipient. Refuses unless `decision` is `Granted`.
    pub fn respond(
        &self,
        r: &AccessRequest,
        decision: AuthDecision,
        payload: &[u8],
    ) -> Result<DeliveryResult, RespondError> {
        if decision != AuthDecision::Granted {
            return Err(RespondError::NotGranted);
        }
        let endpoint = r.recipient.endpoint.as_str();
        let send: Box<dyn Fn() -> Result<(), String> + '_> = match &r.recipient.protocol {
            Protocol::Post => Box::new(move || self.post(endpoint, payload)),
            other => {
                let transport = self
                    .transports
                    .get(other.as_str())
                    .ok_or_else(|| RespondError::UnsupportedProtocol(other.to_string()))?;
                Box::new(move || transport.deliver(endpoint, payload))
            }
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match send() {
                Ok(()) => return Ok(DeliveryResult::Delivered { attempts }),
                Err(reason) if attempts > self.retries => return Ok(DeliveryResult::Failed { attempts, reason }),
                Err(_) => {}
            }
        }
    }

    fn post(&self, endpoint: &str, payload: &[u8]) -> Result<(), String> {
        let resp = self
            .http
            .post(endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(payload.to_vec())
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("endpoint answered {}", resp.status()))
        }
    }
}

/// The JSON form of `e` restricted to the named top-level fields, e.g. `["eventTime", "bizStep"]`.
/// Unknown names are ignored.
pub fn redact(e: &Event, fields: &[&str]) -> Value {
    let Value::Object(full) = serde_json::to_value(e).expect("events always serialise") else {
        unreachable!("events serialise as objects")
    };
    let kept: Map<String, Value> = full.into_iter().filter(|(k, _)| fields.contains(&k.as_str())).collect();
    Value::Object(kept)
}
