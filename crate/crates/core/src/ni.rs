//! Named-information (`ni:`) hash URIs.
//!
//! Digests are rendered as `ni:///sha-256;<64 lowercase hex>[?<query>]`. That is
//! the RFC 6920 layout with a hex rather than base64url digest, which is what
//! `sha256sum` prints and what published discovery data carries. The parser also
//! accepts the two-slash spelling `ni://sha-256;…`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

const PREFIX: &str = "ni:///";
const SHORT_PREFIX: &str = "ni://";
const ALGORITHM: &str = "sha-256";

/// A SHA-256 digest. Displays as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashError {
    #[error("cannot hash an empty value")]
    EmptyValue,
    #[error("cannot salt with an empty string")]
    EmptySalt,
    #[error("invalid digest {0:?}: expected 64 hex characters")]
    InvalidDigest(String),
    #[error("invalid ni URI {uri:?}: {reason}")]
    InvalidUri { uri: String, reason: &'static str },
}

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Accepts lowercase hex only.
    pub fn parse_lowercase(s: &str) -> Result<Self, HashError> {
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(HashError::InvalidDigest(s.to_string()));
        }
        s.parse()
    }
}

impl FromStr for Digest {
    type Err = HashError;

    /// Accepts either hex case; the value is normalised to lowercase on display.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 {
            return Err(HashError::InvalidDigest(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| HashError::InvalidDigest(s.to_string()))?;
        Ok(Self(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::parse_lowercase(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NiUri {
    digest: Digest,
    query: Option<String>,
}

impl NiUri {
    pub fn new(digest: Digest) -> Self {
        Self { digest, query: None }
    }

    pub fn with_query(mut self, query: impl Into<String>) -> Self {
        let query = query.into();
        self.query = (!query.is_empty()).then_some(query);
        self
    }

    /// Attaches `type=<uri>` unless the type is empty.
    pub fn with_type(self, kind: &str) -> Self {
        if kind.is_empty() {
            self
        } else {
            self.with_query(format!("type={kind}"))
        }
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    pub fn digest(&self) -> &Digest {
        &self.digest
    }

    pub fn digest_hex(&self) -> String {
        self.digest.to_hex()
    }

    pub fn query(&self) -> Option<&str> {
        self.query.as_deref()
    }

    /// The value of a `type=` query, if that is what the query holds.
    pub fn type_suffix(&self) -> Option<&str> {
        self.query.as_deref().and_then(|q| q.strip_prefix("type="))
    }
}

impl fmt::Display for NiUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}{ALGORITHM};{}", self.digest)?;
        if let Some(q) = &self.query {
            write!(f, "?{q}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for NiUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NiUri({self})")
    }
}

impl FromStr for NiUri {
    type Err = HashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = |reason| HashError::InvalidUri {
            uri: s.to_string(),
            reason,
        };
        let rest = s
            .strip_prefix(PREFIX)
            .or_else(|| s.strip_prefix(SHORT_PREFIX))
            .ok_or_else(|| invalid("expected ni:/// prefix"))?;
        let rest = rest
            .strip_prefix(ALGORITHM)
            .and_then(|r| r.strip_prefix(';'))
            .ok_or_else(|| invalid("only sha-256 is supported"))?;
        let (hex, query) = match rest.split_once('?') {
            Some((hex, query)) => {
                if query.is_empty() {
                    return Err(invalid("empty query"));
                }
                (hex, Some(query.to_string()))
            }
            None => (rest, None),
        };
        let digest = Digest::parse_lowercase(hex).map_err(|_| invalid("digest must be 64 lowercase hex characters"))?;
        Ok(Self { digest, query })
    }
}

impl Serialize for NiUri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NiUri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Plain SHA-256 of the exact UTF-8 bytes of `value`.
pub fn ni_hash(value: &str) -> Result<NiUri, HashError> {
    if value.is_empty() {
        return Err(HashError::EmptyValue);
    }
    Ok(NiUri::new(Digest::of(value.as_bytes())))
}

/// SHA-256 of `value` immediately followed by `salt`.
pub fn salted_hash(value: &str, salt: &str) -> Result<NiUri, HashError> {
    if value.is_empty() {
        return Err(HashError::EmptyValue);
    }
    if salt.is_empty() {
        return Err(HashError::EmptySalt);
    }
    let mut hasher = Sha256::new();
    hasher.update(value.as_bytes());
    hasher.update(salt.as_bytes());
    Ok(NiUri::new(Digest(hasher.finalize().into())))
}
