//! Blocking HTTP client for the discovery service.

use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use discovery_core::chain::EventSource;
use discovery_core::dead_drop::AccessRequest;
use discovery_core::ni::Digest;
use discovery_core::sanitiser::SanitisedEvent;
use serde_json::Value;
use url::Url;

pub struct Client {
    http: reqwest::blocking::Client,
    base: Url,
}

#[derive(Debug)]
pub struct Posted {
    pub status: u16,
    pub body: Value,
}

impl Client {
    pub fn new(base: &str) -> anyhow::Result<Self> {
        let mut base = Url::parse(base).with_context(|| format!("invalid service URL {base:?}"))?;
        if !base.has_host() {
            bail!("service URL {base} has no host");
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()?;
        Ok(Self { http, base })
    }

    fn endpoint(&self, path: &str) -> Url {
        self.base.join(path).expect("static relative path")
    }

    fn with_hash(&self, path: &str, d: &Digest) -> Url {
        let mut url = self.endpoint(path);
        url.query_pairs_mut().append_pair("hash", &d.to_hex());
        url
    }

    fn post(&self, path: &str, body: String) -> anyhow::Result<Posted> {
        let resp = self
            .http
            .post(self.endpoint(path))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()?;
        let status = resp.status().as_u16();
        let body = resp.json().unwrap_or(Value::Null);
        Ok(Posted { status, body })
    }

    fn get_json(&self, url: Url) -> anyhow::Result<Value> {
        let resp = self.http.get(url).send()?;
        let status = resp.status();
        let body: Value = resp.json().context("service returned non-JSON")?;
        if !status.is_success() {
            return Err(anyhow!("service answered {status}: {}", body["error"]));
        }
        Ok(body)
    }

    pub fn upload(&self, e: &SanitisedEvent) -> anyhow::Result<Posted> {
        self.post("events", e.to_json())
    }

    pub fn events(&self, d: &Digest) -> anyhow::Result<Vec<SanitisedEvent>> {
        let body = self.get_json(self.with_hash("events", d))?;
        let Value::Array(items) = body else {
            bail!("expected a JSON array of events");
        };
        items
            .into_iter()
            .map(|v| SanitisedEvent::from_json(v.to_string().as_bytes()).map_err(Into::into))
            .collect()
    }

    pub fn post_request(&self, r: &AccessRequest) -> anyhow::Result<Posted> {
        self.post("dead_drop", r.to_json())
    }

    pub fn poll(&self, d: &Digest) -> anyhow::Result<Vec<AccessRequest>> {
        let body = self.get_json(self.with_hash("dead_drop", d))?;
        let Value::Array(items) = body else {
            bail!("expected a JSON array of requests");
        };
        items
            .into_iter()
            .map(|v| AccessRequest::from_json(v.to_string().as_bytes()).map_err(Into::into))
            .collect()
    }
}

impl EventSource for Client {
    type Error = anyhow::Error;

    fn events_by_digest(&self, d: &Digest) -> anyhow::Result<Vec<SanitisedEvent>> {
        self.events(d)
    }
}
