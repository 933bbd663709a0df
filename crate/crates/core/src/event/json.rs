//! JSON twin of the XML event form.
//!
//! A document is either a bare array of events or an object with an
//! `eventList` array. Field names are the camelCase EPCIS names.

use serde::Deserialize;

use super::Event;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct JsonError {
    /// Path of the offending field, e.g. `[0].eventTime`. Empty for syntax errors.
    pub path: String,
    pub message: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Document {
    List(Vec<serde_json::Value>),
    Wrapped {
        #[serde(rename = "eventList")]
        event_list: Vec<serde_json::Value>,
    },
}

pub fn parse_event_json(input: &[u8]) -> Result<Vec<Event>, JsonError> {
    let doc: Document = serde_json::from_slice(input).map_err(|e| JsonError {
        path: String::new(),
        message: e.to_string(),
    })?;
    let (prefix, values) = match doc {
        Document::List(v) => ("", v),
        Document::Wrapped { event_list } => ("eventList", event_list),
    };
    values
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            serde_path_to_error::deserialize::<_, Event>(value).map_err(|e| {
                let inner = e.path().to_string();
                let path = if inner == "." {
                    format!("{prefix}[{i}]")
                } else {
                    format!("{prefix}[{i}].{inner}")
                };
                JsonError {
                    path,
                    message: e.into_inner().to_string(),
                }
            })
        })
        .collect()
}

/// Pretty-printed JSON array of events.
pub fn serialize_json(events: &[Event]) -> String {
    serde_json::to_string_pretty(events).expect("events always serialise")
}

/// One compact JSON event per line, each line newline terminated.
pub fn serialize_ndjson(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events always serialise"));
        out.push('\n');
    }
    out
}

/// Parses NDJSON produced by [`serialize_ndjson`]. Blank lines are skipped.
pub fn parse_event_ndjson(input: &str) -> Result<Vec<Event>, JsonError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            let mut de = serde_json::Deserializer::from_str(line);
            serde_path_to_error::deserialize::<_, Event>(&mut de).map_err(|e| JsonError {
                path: format!("line {}: {}", n + 1, e.path()),
                message: e.into_inner().to_string(),
            })
        })
        .collect()
}
