//! Anonymous access requests.
//!
//! A requester who knows an item digest leaves an [`AccessRequest`] naming a
//! reply endpoint. Data owners poll by digest without identifying themselves
//! and answer out of band (see [`respond`]). Requests nobody answers simply
//! expire. The dead drop never sees event data.

mod auth;
mod canonical;
pub mod respond;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ni::Digest;

pub use auth::{evaluate_auth, sign_request, AuthDecision, AuthPolicy};
pub use canonical::canonical_json;

const VALID_UNTIL_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Expiry instant, written `YYYY-MM-DD HH:MM:SS` and read as UTC.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValidUntil(NaiveDateTime);

impl ValidUntil {
    pub fn from_instant(t: DateTime<Utc>) -> Self {
        // whole seconds only, so the wire form round-trips
        let whole = DateTime::from_timestamp(t.timestamp(), 0).expect("in range");
        Self(whole.naive_utc())
    }

    pub fn instant(&self) -> DateTime<Utc> {
        self.0.and_utc()
    }

    /// True once `now` has reached the expiry instant.
    pub fn has_passed(&self, now: DateTime<Utc>) -> bool {
        now >= self.instant()
    }
}

impl FromStr for ValidUntil {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = NaiveDateTime::parse_from_str(s, VALID_UNTIL_FORMAT)
            .map_err(|e| format!("invalid valid_until {s:?}: {e}"))?;
        let v = Self(parsed);
        if v.to_string() != s {
            return Err(format!("invalid valid_until {s:?}: expected YYYY-MM-DD HH:MM:SS"));
        }
        Ok(v)
    }
}

impl fmt::Display for ValidUntil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(VALID_UNTIL_FORMAT))
    }
}

impl fmt::Debug for ValidUntil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ValidUntil({self})")
    }
}

impl Serialize for ValidUntil {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ValidUntil {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Protocol {
    Post,
    Email,
    Other(String),
}

impl Protocol {
    pub fn as_str(&self) -> &str {
        match self {
            Protocol::Post => "POST",
            Protocol::Email => "EMAIL",
            Protocol::Other(s) => s,
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "POST" => Protocol::Post,
            "EMAIL" => Protocol::Email,
            "" => return Err("empty protocol".into()),
            other => Protocol::Other(other.to_string()),
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Protocol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipient {
    pub endpoint: String,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessRequest {
    pub requesting: Digest,
    pub recipient: Recipient,
    /// Opaque credentials. Recognised keys are `id`, `public_key` and `signature`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<serde_json::Map<String, serde_json::Value>>,
    pub valid_until: ValidUntil,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeadDropError {
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("request expired at {0}")]
    Expired(ValidUntil),
}

impl AccessRequest {
    pub fn new(requesting: Digest, endpoint: impl Into<String>, protocol: Protocol, valid_until: ValidUntil) -> Self {
        Self {
            requesting,
            recipient: Recipient {
                endpoint: endpoint.into(),
                protocol,
            },
            auth: None,
            valid_until,
        }
    }

    pub fn from_json(input: &[u8]) -> Result<Self, DeadDropError> {
        let mut de = serde_json::Deserializer::from_slice(input);
        let r = serde_path_to_error::deserialize(&mut de).map_err(|e| DeadDropError::Malformed {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        de.end().map_err(|e| DeadDropError::Malformed {
            path: String::new(),
            message: e.to_string(),
        })?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("requests always serialise")
    }

    /// Key-sorted compact JSON of the request without `auth.signature`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut value = serde_json::to_value(self).expect("requests always serialise");
        if let Some(auth) = value.get_mut("auth").and_then(|a| a.as_object_mut()) {
            auth.remove("signature");
        }
        canonical_json(&value).into_bytes()
    }

    pub fn request_id(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn is_live(&self, now: DateTime<Utc>) -> bool {
        !self.valid_until.has_passed(now)
    }
}

struct Stored {
    seq: u64,
    request: AccessRequest,
}

#[derive(Default)]
struct Inner {
    requests: HashMap<Digest, Stored>,
    // target digest -> sequence -> request id
    by_target: HashMap<Digest, BTreeMap<u64, Digest>>,
    next_seq: u64,
}

/// In-memory dead drop. Holds requests only; nothing about who polls.
#[derive(Default)]
pub struct DeadDrop {
    inner: RwLock<Inner>,
}

impl DeadDrop {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `r` until it expires. Posting the same request again returns the same id.
    pub fn post_request(&self, r: AccessRequest, now: DateTime<Utc>) -> Result<Digest, DeadDropError> {
        if !r.is_live(now) {
            return Err(DeadDropError::Expired(r.valid_until));
        }
        let id = r.request_id();
        let mut inner = self.inner.write().expect("dead drop lock poisoned");
        if inner.requests.contains_key(&id) {
            return Ok(id);
        }
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.by_target.entry(r.requesting).or_default().insert(seq, id);
        inner.requests.insert(id, Stored { seq, request: r });
        Ok(id)
    }

    /// Live requests for `h`, oldest first. Expiry is checked here as well as by the sweep.
    pub fn poll_requests(&self, h: &Digest, now: DateTime<Utc>) -> Vec<AccessRequest> {
        let inner = self.inner.read().expect("dead drop lock poisoned");
        inner
            .by_target
            .get(h)
            .into_iter()
            .flat_map(|ids| ids.values())
            .map(|id| &inner.requests[id].request)
            .filter(|r| r.is_live(now))
            .cloned()
            .collect()
    }

    /// Deletes every request with `valid_until <= now` and returns how many went.
    pub fn expire_sweep(&self, now: DateTime<Utc>) -> usize {
        let expired: Vec<Digest> = {
            let inner = self.inner.read().expect("dead drop lock poisoned");
            inner
                .requests
                .iter()
                .filter(|(_, s)| !s.request.is_live(now))
                .map(|(id, _)| *id)
                .collect()
        };
        let mut removed = 0;
        for id in expired {
            let mut inner = self.inner.write().expect("dead drop lock poisoned");
            if let Some(stored) = inner.requests.remove(&id) {
                let target = stored.request.requesting;
                if let Some(ids) = inner.by_target.get_mut(&target) {
                    ids.remove(&stored.seq);
                    if ids.is_empty() {
                        inner.by_target.remove(&target);
                    }
                }
                removed += 1;
            }
        }
        removed
    }

    /// Number of stored requests, expired or not.
    pub fn len(&self) -> usize {
        self.inner.read().expect("dead drop lock poisoned").requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &[u8] = include_bytes!("../../fixtures/access_request.json");

    fn request() -> AccessRequest {
        AccessRequest::from_json(FIXTURE).unwrap()
    }

    fn at(s: &str) -> DateTime<Utc> {
        s.parse::<ValidUntil>().unwrap().instant()
    }

    fn target() -> Digest {
        Digest::parse_lowercase("dd85a8a245177fe4c4cbd540075a96dc38aefd7780677989be9e1efc92b5f08f").unwrap()
    }

    #[test]
    fn fixture_parses() {
        let r = request();
        assert_eq!(r.requesting, target());
        assert_eq!(r.recipient.endpoint, "https://eccc.de:234567");
        assert_eq!(r.recipient.protocol, Protocol::Post);
        assert_eq!(r.auth.as_ref().unwrap()["id"], "Sebastian");
        assert_eq!(r.valid_until.to_string(), "2021-07-30 13:32:44");
        let back: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let orig: serde_json::Value = serde_json::from_slice(FIXTURE).unwrap();
        assert_eq!(back, orig);
    }

    #[test]
    fn malformed_requests_name_the_field() {
        let bad = String::from_utf8(FIXTURE.to_vec()).unwrap().replace("dd85a8a2", "zz85a8a2");
        match AccessRequest::from_json(bad.as_bytes()) {
            Err(DeadDropError::Malformed { path, .. }) => assert_eq!(path, "requesting"),
            other => panic!("{other:?}"),
        }
        let bad = String::from_utf8(FIXTURE.to_vec())
            .unwrap()
            .replace("2021-07-30 13:32:44", "2021-07-30T13:32:44Z");
        assert!(AccessRequest::from_json(bad.as_bytes()).is_err());
        let bad = String::from_utf8(FIXTURE.to_vec()).unwrap().replace("\"POST\"", "\"\"");
        assert!(AccessRequest::from_json(bad.as_bytes()).is_err());
    }

    #[test]
    fn other_protocols_round_trip() {
        let p: Protocol = "SFTP".parse().unwrap();
        assert_eq!(p, Protocol::Other("SFTP".into()));
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"SFTP\"");
        assert_eq!("EMAIL".parse::<Protocol>().unwrap(), Protocol::Email);
    }

    #[test]
    fn valid_until_is_strict() {
        assert!("2021-7-30 13:32:44".parse::<ValidUntil>().is_err());
        assert!("2021-07-30 13:32".parse::<ValidUntil>().is_err());
        assert!("2021-02-30 13:32:44".parse::<ValidUntil>().is_err());
        let v: ValidUntil = "2021-07-30 13:32:44".parse().unwrap();
        assert_eq!(v.instant().to_rfc3339(), "2021-07-30T13:32:44+00:00");
    }

    #[test]
    fn post_then_poll_before_expiry() {
        let dd = DeadDrop::new();
        let id = dd.post_request(request(), at("2021-07-30 13:00:00")).unwrap();
        assert_eq!(id, request().request_id());
        assert_eq!(dd.poll_requests(&target(), at("2021-07-30 13:32:43")), vec![request()]);
        assert!(dd.poll_requests(&target(), at("2021-07-30 13:32:44")).is_empty());
        assert!(dd.poll_requests(&Digest::of(b"other"), at("2021-07-30 13:00:00")).is_empty());
    }

    #[test]
    fn expired_on_arrival_is_rejected() {
        let dd = DeadDrop::new();
        let err = dd.post_request(request(), at("2021-07-30 13:32:44")).unwrap_err();
        assert!(matches!(err, DeadDropError::Expired(_)));
        assert!(dd.is_empty());
    }

    #[test]
    fn reposting_is_idempotent() {
        let dd = DeadDrop::new();
        let now = at("2021-07-01 00:00:00");
        let a = dd.post_request(request(), now).unwrap();
        let b = dd.post_request(request(), now).unwrap();
        assert_eq!(a, b);
        assert_eq!(dd.len(), 1);
        assert_eq!(dd.poll_requests(&target(), now).len(), 1);
    }

    #[test]
    fn poll_is_oldest_first() {
        let dd = DeadDrop::new();
        let now = at("2021-07-01 00:00:00");
        let mut later = request();
        later.recipient.endpoint = "https://b.example/reply".into();
        let mut earlier = request();
        earlier.recipient.endpoint = "https://a.example/reply".into();
        dd.post_request(later.clone(), now).unwrap();
        dd.post_request(earlier.clone(), now).unwrap();
        assert_eq!(dd.poll_requests(&target(), now), vec![later, earlier]);
    }

    #[test]
    fn sweep_removes_only_expired() {
        let dd = DeadDrop::new();
        let now = at("2021-07-01 00:00:00");
        assert_eq!(dd.expire_sweep(now), 0);
        let mut live = request();
        live.valid_until = "2021-08-30 00:00:00".parse().unwrap();
        dd.post_request(request(), now).unwrap();
        dd.post_request(live.clone(), now).unwrap();
        let later = at("2021-07-30 13:32:44");
        assert_eq!(dd.expire_sweep(later), 1);
        assert_eq!(dd.expire_sweep(later), 0);
        assert_eq!(dd.poll_requests(&target(), later), vec![live]);
        // gone for good, even for a clock that runs backwards
        assert_eq!(dd.poll_requests(&target(), now).len(), 1);
    }

    #[test]
    fn concurrent_post_poll_sweep() {
        use std::sync::Arc;
        let dd = Arc::new(DeadDrop::new());
        let now = at("2021-07-01 00:00:00");
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let dd = Arc::clone(&dd);
                std::thread::spawn(move || {
                    for i in 0..200 {
                        let mut r = request();
                        r.recipient.endpoint = format!("https://r{t}-{i}.example");
                        if i % 2 == 0 {
                            r.valid_until = "2021-07-01 00:00:01".parse().unwrap();
                        }
                        dd.post_request(r, now).unwrap();
                        dd.poll_requests(&target(), now);
                        dd.expire_sweep(at("2021-07-01 00:00:01"));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        dd.expire_sweep(at("2021-07-01 00:00:01"));
        assert_eq!(dd.len(), 400);
        assert_eq!(dd.poll_requests(&target(), at("2021-07-01 00:00:01")).len(), 400);
    }
}
