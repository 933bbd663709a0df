//! Event sanitisation.
//!
//! Every attribute of an [`Event`] falls into exactly one [`Classification`]:
//!
//! * `Clear`: published verbatim (event type, times, action, business step, type URIs)
//! * `HashPlain`: high-entropy identifiers, published as a plain SHA-256 `ni` URI
//! * `HashSalted`: guessable identifiers (parties), hashed together with a salt that
//!   both trading partners know, so a dictionary of party ids does not reverse them
//! * `Drop`: removed (record time, disposition, read point, vendor extensions)
//!
//! The salt is the value of the event's first business transaction. Shipping and
//! receiving events for the same transaction therefore publish identical party
//! digests, which is what lets the two sides be linked without revealing them.

mod sanitised;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::event::{validate, Event, TypedValue, ValidationReport};
use crate::ni::{ni_hash, salted_hash, Digest, HashError, NiUri};

pub use sanitised::{FieldError, SanitisedEvent, EVENT_ID_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Clear,
    HashPlain,
    HashSalted,
    Drop,
}

/// Every attribute an [`Event`] can carry. The table in [`AttributePath::default_classification`]
/// is total over this enum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttributePath {
    EventType,
    EventTime,
    RecordTime,
    EventTimeZoneOffset,
    Epc,
    InputEpc,
    OutputEpc,
    Action,
    BizStep,
    Disposition,
    ReadPoint,
    BizTransactionType,
    BizTransactionValue,
    SourceType,
    SourceValue,
    DestinationType,
    DestinationValue,
    Extension,
}

impl AttributePath {
    pub const ALL: [AttributePath; 18] = [
        AttributePath::EventType,
        AttributePath::EventTime,
        AttributePath::RecordTime,
        AttributePath::EventTimeZoneOffset,
        AttributePath::Epc,
        AttributePath::InputEpc,
        AttributePath::OutputEpc,
        AttributePath::Action,
        AttributePath::BizStep,
        AttributePath::Disposition,
        AttributePath::ReadPoint,
        AttributePath::BizTransactionType,
        AttributePath::BizTransactionValue,
        AttributePath::SourceType,
        AttributePath::SourceValue,
        AttributePath::DestinationType,
        AttributePath::DestinationValue,
        AttributePath::Extension,
    ];

    pub fn as_str(self) -> &'static str {
        use AttributePath::*;
        match self {
            EventType => "eventType",
            EventTime => "eventTime",
            RecordTime => "recordTime",
            EventTimeZoneOffset => "eventTimeZoneOffset",
            Epc => "epcList[*]",
            InputEpc => "inputEPCList[*]",
            OutputEpc => "outputEPCList[*]",
            Action => "action",
            BizStep => "bizStep",
            Disposition => "disposition",
            ReadPoint => "readPoint",
            BizTransactionType => "bizTransactionList[*].type",
            BizTransactionValue => "bizTransactionList[*].value",
            SourceType => "sourceList[*].type",
            SourceValue => "sourceList[*].value",
            DestinationType => "destinationList[*].type",
            DestinationValue => "destinationList[*].value",
            Extension => "extensions[*]",
        }
    }

    pub fn default_classification(self) -> Classification {
        use AttributePath::*;
        use Classification::*;
        match self {
            EventType | EventTime | Action | BizStep => Clear,
            BizTransactionType | SourceType | DestinationType => Clear,
            Epc | InputEpc | OutputEpc | BizTransactionValue => HashPlain,
            SourceValue | DestinationValue => HashSalted,
            RecordTime | EventTimeZoneOffset | Disposition | ReadPoint | Extension => Drop,
        }
    }

    /// Classifications the sanitised schema can represent for this attribute.
    pub fn permitted(self) -> &'static [Classification] {
        use AttributePath::*;
        use Classification::*;
        match self {
            EventType | EventTime | Action | BizStep => &[Clear],
            BizTransactionType | SourceType | DestinationType => &[Clear, Drop],
            Epc | InputEpc | OutputEpc | BizTransactionValue | SourceValue | DestinationValue => {
                &[HashPlain, HashSalted, Drop]
            }
            RecordTime | EventTimeZoneOffset | Disposition | ReadPoint | Extension => &[Drop],
        }
    }
}

impl fmt::Display for AttributePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributePath {
    type Err = SanitiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttributePath::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SanitiseError::UnknownPath(s.to_string()))
    }
}

impl TryFrom<String> for AttributePath {
    type Error = SanitiseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AttributePath> for String {
    fn from(p: AttributePath) -> Self {
        p.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaltSource {
    /// Salted attributes are hashed without a salt.
    #[default]
    None,
    /// The value of the lexicographically first `(type, value)` business transaction.
    BizTransactionValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SanitiserConfig {
    dead_drop_url: Url,
    salt_source: SaltSource,
    overrides: BTreeMap<AttributePath, Classification>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SanitiseError {
    #[error("unknown attribute path {0:?}")]
    UnknownPath(String),
    #[error("dead drop URL {0:?} is not an absolute URL")]
    RelativeUrl(String),
    #[error("{path} cannot be classified {requested:?}; the sanitised schema allows {permitted:?}")]
    UnsupportedOverride {
        path: AttributePath,
        requested: Classification,
        permitted: &'static [Classification],
    },
    #[error("invalid event: {0}")]
    InvalidEvent(ValidationReport),
    #[error(transparent)]
    Hash(#[from] HashError),
}

impl SanitiserConfig {
    pub fn new(dead_drop_url: &str) -> Result<Self, SanitiseError> {
        let url = Url::parse(dead_drop_url).map_err(|_| SanitiseError::RelativeUrl(dead_drop_url.to_string()))?;
        if !url.has_host() {
            return Err(SanitiseError::RelativeUrl(dead_drop_url.to_string()));
        }
        Ok(Self {
            dead_drop_url: url,
            salt_source: SaltSource::BizTransactionValue,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_salt_source(mut self, salt_source: SaltSource) -> Self {
        self.salt_source = salt_source;
        self
    }

    pub fn with_override(mut self, path: AttributePath, class: Classification) -> Result<Self, SanitiseError> {
        let permitted = path.permitted();
        if !permitted.contains(&class) {
            return Err(SanitiseError::UnsupportedOverride {
                path,
                requested: class,
                permitted,
            });
        }
        self.overrides.insert(path, class);
        Ok(self)
    }

    pub fn dead_drop_url(&self) -> &Url {
        &self.dead_drop_url
    }

    pub fn salt_source(&self) -> SaltSource {
        self.salt_source
    }

    pub fn classification(&self, path: AttributePath) -> Classification {
        self.overrides
            .get(&path)
            .copied()
            .unwrap_or_else(|| path.default_classification())
    }
}

/// Looks up an attribute path by name, honouring overrides in `cfg`.
pub fn classify(path: &str, cfg: &SanitiserConfig) -> Result<Classification, SanitiseError> {
    Ok(cfg.classification(path.parse()?))
}

/// The salt shared by both sides of a transaction, if the config asks for one.
pub fn derive_salt(e: &Event, cfg: &SanitiserConfig) -> Option<String> {
    match cfg.salt_source {
        SaltSource::None => None,
        SaltSource::BizTransactionValue => e
            .biz_transactions
            .iter()
            .min_by(|a, b| (&a.kind, &a.value).cmp(&(&b.kind, &b.value)))
            .map(|tv| tv.value.clone()),
    }
}

/// Deterministic event id.
///
/// The pre-image is every attribute that is not dropped under the default
/// classification, taken from the clear-text event as `path=value` lines,
/// sorted by path then value and joined with `\n`. The id is the SHA-256 of
/// that text with a `ver=CBV2.0` query.
pub fn compute_event_id(e: &Event) -> Result<NiUri, SanitiseError> {
    let report = validate(e);
    if !report.is_valid() {
        return Err(SanitiseError::InvalidEvent(report));
    }
    let text = canonical_pre_image(e);
    Ok(NiUri::new(Digest::of(text.as_bytes())).with_query(EVENT_ID_VERSION))
}

fn canonical_pre_image(e: &Event) -> String {
    use AttributePath as P;
    let mut pairs: Vec<(&'static str, &str)> = vec![
        (P::EventType.as_str(), e.event_type.as_str()),
        (P::EventTime.as_str(), e.event_time.as_str()),
        (P::Action.as_str(), e.action.as_str()),
        (P::BizStep.as_str(), &e.biz_step),
    ];
    let lists = [(P::Epc, &e.epc_list), (P::InputEpc, &e.input_epcs), (P::OutputEpc, &e.output_epcs)];
    for (path, list) in lists {
        pairs.extend(list.iter().map(|v| (path.as_str(), v.as_str())));
    }
    let typed = [
        (P::BizTransactionType, P::BizTransactionValue, &e.biz_transactions),
        (P::SourceType, P::SourceValue, &e.sources),
        (P::DestinationType, P::DestinationValue, &e.destinations),
    ];
    for (type_path, value_path, list) in typed {
        for tv in list.iter() {
            if !tv.kind.is_empty() {
                pairs.push((type_path.as_str(), &tv.kind));
            }
            pairs.push((value_path.as_str(), &tv.value));
        }
    }
    debug_assert!(pairs
        .iter()
        .all(|(p, _)| p.parse::<AttributePath>().unwrap().default_classification() != Classification::Drop));
    pairs.sort_unstable();
    pairs
        .iter()
        .map(|(p, v)| format!("{p}={v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sanitised {
    pub event: SanitisedEvent,
    pub warnings: Vec<String>,
}

struct Hasher<'a> {
    cfg: &'a SanitiserConfig,
    salt: Option<String>,
    unsalted_fallback: bool,
}

impl Hasher<'_> {
    fn hash(&mut self, class: Classification, value: &str) -> Result<Option<NiUri>, SanitiseError> {
        Ok(match class {
            Classification::Drop => None,
            Classification::HashPlain => Some(ni_hash(value)?),
            Classification::HashSalted => match &self.salt {
                Some(salt) => Some(salted_hash(value, salt)?),
                None => {
                    self.unsalted_fallback = true;
                    Some(ni_hash(value)?)
                }
            },
            // excluded by SanitiserConfig::with_override
            Classification::Clear => unreachable!("value paths are never published in clear"),
        })
    }

    fn list(&mut self, path: AttributePath, values: &[String]) -> Result<Vec<NiUri>, SanitiseError> {
        let class = self.cfg.classification(path);
        let mut out = Vec::with_capacity(values.len());
        for v in values {
            out.extend(self.hash(class, v)?);
        }
        Ok(out)
    }

    fn typed(
        &mut self,
        type_path: AttributePath,
        value_path: AttributePath,
        values: &[TypedValue],
    ) -> Result<Vec<NiUri>, SanitiseError> {
        let value_class = self.cfg.classification(value_path);
        let keep_type = self.cfg.classification(type_path) == Classification::Clear;
        let mut out = Vec::with_capacity(values.len());
        for tv in values {
            if let Some(uri) = self.hash(value_class, &tv.value)? {
                out.push(if keep_type { uri.with_type(&tv.kind) } else { uri });
            }
        }
        Ok(out)
    }
}

/// Reduces a clear-text event to its publishable form.
pub fn sanitise(e: &Event, cfg: &SanitiserConfig) -> Result<Sanitised, SanitiseError> {
    use AttributePath as P;

    let event_id = compute_event_id(e)?;
    let mut hasher = Hasher {
        cfg,
        salt: derive_salt(e, cfg),
        unsalted_fallback: false,
    };

    let event = SanitisedEvent {
        request_event_data_at: cfg.dead_drop_url.to_string(),
        event_type: e.event_type,
        event_id,
        event_time: e.event_time.clone(),
        action: e.action,
        epc_list: hasher.list(P::Epc, &e.epc_list)?,
        input_epc_list: hasher.list(P::InputEpc, &e.input_epcs)?,
        output_epc_list: hasher.list(P::OutputEpc, &e.output_epcs)?,
        biz_step: e.biz_step.clone(),
        source_list: hasher.typed(P::SourceType, P::SourceValue, &e.sources)?,
        destination_list: hasher.typed(P::DestinationType, P::DestinationValue, &e.destinations)?,
        biz_transaction_list: hasher.typed(P::BizTransactionType, P::BizTransactionValue, &e.biz_transactions)?,
    };

    let mut warnings = Vec::new();
    if hasher.unsalted_fallback {
        warnings.push(format!(
            "event {}: no salt available, salted attributes were hashed without one",
            event.event_id
        ));
    }
    Ok(Sanitised { event, warnings })
}
