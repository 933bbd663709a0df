//! Clear-text EPCIS events.
//!
//! This is the data owner's confidential record. Only the subset of EPCIS 1.2
//! needed for discovery is modelled as typed fields; anything else found in an
//! event is carried as an [`Extension`] so the sanitiser can drop it explicitly.
//!
//! Two wire forms are supported: the XML document shape used by EPCIS 1.2
//! capture interfaces (see [`xml`]) and a JSON twin with camelCase field names
//! (see [`json`]).

pub mod json;
mod time;
pub mod xml;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use json::{parse_event_json, parse_event_ndjson, serialize_json, serialize_ndjson, JsonError};
pub use time::{format_offset, parse_offset, EventTime, TimeParseError};
pub use xml::{parse_event_xml, parse_event_xml_with_warnings, serialize_xml, XmlParseOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    ObjectEvent,
    /// Joins component EPCs (`inputEPCList`) into a product (`outputEPCList`).
    AssemblyEvent,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::ObjectEvent => "ObjectEvent",
            EventType::AssemblyEvent => "AssemblyEvent",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ObjectEvent" => Ok(EventType::ObjectEvent),
            "AssemblyEvent" => Ok(EventType::AssemblyEvent),
            other => Err(format!("unknown event type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Add,
    Observe,
    Delete,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Add => "ADD",
            Action::Observe => "OBSERVE",
            Action::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ADD" => Ok(Action::Add),
            "OBSERVE" => Ok(Action::Observe),
            "DELETE" => Ok(Action::Delete),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

/// A `(type, value)` pair as used by bizTransaction, source and destination lists.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypedValue {
    #[serde(rename = "type")]
    pub kind: String,
    pub value: String,
}

impl TypedValue {
    pub fn new(kind: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            value: value.into(),
        }
    }
}

/// Vendor or unmodelled field. Nested XML elements are flattened into
/// `/`-joined keys, e.g. `example:myField1/mySubField1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extension {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Event {
    pub event_type: EventType,
    pub event_time: EventTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_time: Option<EventTime>,
    pub event_time_zone_offset: String,
    #[serde(default, rename = "epcList")]
    pub epc_list: Vec<String>,
    #[serde(default, rename = "inputEPCList", skip_serializing_if = "Vec::is_empty")]
    pub input_epcs: Vec<String>,
    #[serde(default, rename = "outputEPCList", skip_serializing_if = "Vec::is_empty")]
    pub output_epcs: Vec<String>,
    pub action: Action,
    pub biz_step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disposition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_point: Option<String>,
    #[serde(default, rename = "bizTransactionList")]
    pub biz_transactions: Vec<TypedValue>,
    #[serde(default, rename = "sourceList")]
    pub sources: Vec<TypedValue>,
    #[serde(default, rename = "destinationList")]
    pub destinations: Vec<TypedValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extensions: Vec<Extension>,
}

impl Event {
    /// A bare event with the given identity fields and empty lists.
    pub fn new(event_type: EventType, event_time: EventTime, action: Action, biz_step: impl Into<String>) -> Self {
        let event_time_zone_offset = event_time.offset_string();
        Self {
            event_type,
            event_time,
            record_time: None,
            event_time_zone_offset,
            epc_list: Vec::new(),
            input_epcs: Vec::new(),
            output_epcs: Vec::new(),
            action,
            biz_step: biz_step.into(),
            disposition: None,
            read_point: None,
            biz_transactions: Vec::new(),
            sources: Vec::new(),
            destinations: Vec::new(),
            extensions: Vec::new(),
        }
    }

    /// Every EPC the event mentions, in epcList, inputEPCList, outputEPCList order.
    pub fn all_epcs(&self) -> impl Iterator<Item = &str> {
        self.epc_list
            .iter()
            .chain(&self.input_epcs)
            .chain(&self.output_epcs)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for issue in &self.errors {
            if !first {
                f.write_str("; ")?;
            }
            first = false;
            write!(f, "{}: {}", issue.path, issue.message)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of an event. Never fails; problems are data.
pub fn validate(e: &Event) -> ValidationReport {
    let mut report = ValidationReport::default();

    match e.event_type {
        EventType::ObjectEvent => {
            if e.epc_list.is_empty() {
                report.error("epcList", "ObjectEvent requires at least one EPC");
            }
            if !e.input_epcs.is_empty() {
                report.error("inputEPCList", "only AssemblyEvent may list input EPCs");
            }
            if !e.output_epcs.is_empty() {
                report.error("outputEPCList", "only AssemblyEvent may list output EPCs");
            }
        }
        EventType::AssemblyEvent => {
            if e.output_epcs.is_empty() {
                report.error("outputEPCList", "AssemblyEvent requires at least one output EPC");
            }
            if e.input_epcs.is_empty() {
                report.warning("inputEPCList", "AssemblyEvent without components");
            }
        }
    }

    match parse_offset(&e.event_time_zone_offset) {
        None => report.error(
            "eventTimeZoneOffset",
            format!("{:?} is not a +hh:mm offset", e.event_time_zone_offset),
        ),
        Some(offset) => {
            let embedded = e.event_time.offset_string();
            if format_offset(offset) != embedded {
                report.error(
                    "eventTimeZoneOffset",
                    format!(
                        "{} does not match the offset {} of eventTime",
                        e.event_time_zone_offset, embedded
                    ),
                );
            }
        }
    }

    let lists = [
        ("epcList", &e.epc_list),
        ("inputEPCList", &e.input_epcs),
        ("outputEPCList", &e.output_epcs),
    ];
    for (name, list) in lists {
        for (i, epc) in list.iter().enumerate() {
            if epc.trim().is_empty() {
                report.error(format!("{name}[{i}]"), "empty EPC");
            }
        }
    }

    if e.biz_step.trim().is_empty() {
        report.error("bizStep", "empty business step");
    }
    if let Some(rp) = &e.read_point {
        if rp.trim().is_empty() {
            report.error("readPoint", "empty read point");
        }
    }

    let typed = [
        ("bizTransactionList", &e.biz_transactions),
        ("sourceList", &e.sources),
        ("destinationList", &e.destinations),
    ];
    for (name, list) in typed {
        for (i, tv) in list.iter().enumerate() {
            // bizTransaction types are optional in EPCIS
            if name != "bizTransactionList" && tv.kind.trim().is_empty() {
                report.error(format!("{name}[{i}].type"), "empty type");
            }
            if tv.value.trim().is_empty() {
                report.error(format!("{name}[{i}].value"), "empty value");
            }
        }
    }

    if let Some(rt) = &e.record_time {
        if rt.instant() < e.event_time.instant() {
            report.warning("recordTime", "recorded before the event happened");
        }
    }

    report
}
