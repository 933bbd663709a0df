use serde::{Deserialize, Serialize};

use crate::event::{Action, EventTime, EventType};
use crate::ni::{Digest, NiUri};

/// Query carried by every event id.
pub const EVENT_ID_VERSION: &str = "ver=CBV2.0";

/// The public, minimised projection of an [`Event`](crate::event::Event).
///
/// Field order is the serialisation order. Unknown fields are rejected on
/// input so nothing outside this set can be published.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitisedEvent {
    pub request_event_data_at: String,
    #[serde(rename = "eventType")]
    pub event_type: EventType,
    #[serde(rename = "eventId")]
    pub event_id: NiUri,
    #[serde(rename = "eventTime")]
    pub event_time: EventTime,
    pub action: Action,
    #[serde(rename = "epcList", default)]
    pub epc_list: Vec<NiUri>,
    #[serde(rename = "inputEPCList", default, skip_serializing_if = "Vec::is_empty")]
    pub input_epc_list: Vec<NiUri>,
    #[serde(rename = "outputEPCList", default, skip_serializing_if = "Vec::is_empty")]
    pub output_epc_list: Vec<NiUri>,
    #[serde(rename = "bizStep")]
    pub biz_step: String,
    #[serde(rename = "sourceList", default)]
    pub source_list: Vec<NiUri>,
    #[serde(rename = "destinationList", default)]
    pub destination_list: Vec<NiUri>,
    #[serde(rename = "bizTransactionList", default)]
    pub biz_transaction_list: Vec<NiUri>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl SanitisedEvent {
    /// Parses and checks a single sanitised event. Errors name the offending field.
    pub fn from_json(input: &[u8]) -> Result<Self, FieldError> {
        let mut de = serde_json::Deserializer::from_slice(input);
        let event: SanitisedEvent = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            FieldError::new(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| FieldError::new("", e.to_string()))?;
        event.check()?;
        Ok(event)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sanitised events always serialise")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("sanitised events always serialise")
    }

    /// Structural checks beyond what deserialisation already enforces.
    pub fn check(&self) -> Result<(), FieldError> {
        match url::Url::parse(&self.request_event_data_at) {
            Ok(u) if u.has_host() => {}
            _ => {
                return Err(FieldError::new(
                    "request_event_data_at",
                    "must be an absolute URL",
                ))
            }
        }
        if !self.event_id.query().is_some_and(|q| q.starts_with("ver=")) {
            return Err(FieldError::new("eventId", "missing ver= query"));
        }
        match self.event_type {
            EventType::ObjectEvent => {
                if self.epc_list.is_empty() {
                    return Err(FieldError::new("epcList", "ObjectEvent requires at least one EPC"));
                }
                if !self.input_epc_list.is_empty() || !self.output_epc_list.is_empty() {
                    return Err(FieldError::new("inputEPCList", "only AssemblyEvent may list inputs or outputs"));
                }
            }
            EventType::AssemblyEvent => {
                if self.output_epc_list.is_empty() {
                    return Err(FieldError::new(
                        "outputEPCList",
                        "AssemblyEvent requires at least one output EPC",
                    ));
                }
            }
        }
        if self.biz_step.trim().is_empty() {
            return Err(FieldError::new("bizStep", "empty business step"));
        }
        let lists = [
            ("epcList", &self.epc_list),
            ("inputEPCList", &self.input_epc_list),
            ("outputEPCList", &self.output_epc_list),
        ];
        for (name, list) in lists {
            if let Some(i) = list.iter().position(|u| u.query().is_some()) {
                return Err(FieldError::new(format!("{name}[{i}]"), "EPC digests carry no query"));
            }
        }
        let typed = [
            ("sourceList", &self.source_list),
            ("destinationList", &self.destination_list),
            ("bizTransactionList", &self.biz_transaction_list),
        ];
        for (name, list) in typed {
            if let Some(i) = list
                .iter()
                .position(|u| u.query().is_some() && u.type_suffix().is_none_or(str::is_empty))
            {
                return Err(FieldError::new(format!("{name}[{i}]"), "query must be type=<uri>"));
            }
        }
        Ok(())
    }

    /// Every `(field, digest)` the event publishes, except the event id.
    pub fn digests(&self) -> impl Iterator<Item = (&'static str, &Digest)> {
        [
            ("epcList", &self.epc_list),
            ("inputEPCList", &self.input_epc_list),
            ("outputEPCList", &self.output_epc_list),
            ("sourceList", &self.source_list),
            ("destinationList", &self.destination_list),
            ("bizTransactionList", &self.biz_transaction_list),
        ]
        .into_iter()
        .flat_map(|(name, list)| list.iter().map(move |u| (name, u.digest())))
    }

    /// Digests identifying items: epcList, inputEPCList and outputEPCList.
    pub fn item_digests(&self) -> impl Iterator<Item = &Digest> {
        self.epc_list
            .iter()
            .chain(&self.input_epc_list)
            .chain(&self.output_epc_list)
            .map(NiUri::digest)
    }

    pub fn mentions_item(&self, digest: &Digest) -> bool {
        self.item_digests().any(|d| d == digest)
    }
}
