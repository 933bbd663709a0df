use std::io::IsTerminal;

use discovery_core::chain::ChainVerdict;
use discovery_core::sanitiser::SanitisedEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
}

/// Colour only for terminals, and never when `NO_COLOR` is set to anything non-empty.
fn colour_enabled() -> bool {
    std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stdout().is_terminal()
}

fn paint(text: &str, code: &str) -> String {
    if colour_enabled() {
        format!("\x1b[{code}m{text}\x1b[0m")
    } else {
        text.to_string()
    }
}

pub fn events_table(events: &[SanitisedEvent]) -> String {
    let mut out = format!("{:<30} {:<14} {:<40} {}\n", "eventTime", "eventType", "bizStep", "eventId");
    for e in events {
        out.push_str(&format!(
            "{:<30} {:<14} {:<40} {}\n",
            e.event_time.as_str(),
            e.event_type.as_str(),
            e.biz_step,
            e.event_id
        ));
    }
    out
}

pub fn verdict_table(v: &ChainVerdict) -> String {
    let mut out = String::new();
    write_verdict(v, 0, &mut out);
    out
}

fn write_verdict(v: &ChainVerdict, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    match v {
        ChainVerdict::Complete {
            item,
            links,
            conditions,
            component_verdicts,
            ..
        } => {
            out.push_str(&format!(
                "{indent}{} {item} links={} continuity={:?}\n",
                paint("COMPLETE", "32"),
                links.len(),
                conditions.continuity
            ));
            for c in component_verdicts.values() {
                write_verdict(c, depth + 1, out);
            }
        }
        ChainVerdict::Broken {
            item,
            links,
            gap,
            component_verdicts,
        } => {
            out.push_str(&format!(
                "{indent}{} {item} links={} gap={}\n",
                paint("BROKEN", "31"),
                links.len(),
                serde_json::to_string(gap).expect("gap serialises")
            ));
            for c in component_verdicts.values() {
                write_verdict(c, depth + 1, out);
            }
        }
        ChainVerdict::Unknown { item, reason } => {
            out.push_str(&format!("{indent}{} {item} {reason}\n", paint("UNKNOWN", "33")));
        }
    }
}
