//! EPCIS 1.2 XML subset.
//!
//! The reader accepts any document containing `ObjectEvent` / `AssemblyEvent`
//! elements, typically wrapped in `EPCISDocument/EPCISBody/EventList`. Other
//! event kinds found under an `EventList` are skipped with a warning. Element
//! text is trimmed, so values wrapped over several lines read back intact.
//!
//! Unmodelled elements inside an event become [`Extension`]s keyed by their
//! qualified name; nested elements are flattened into `/`-joined keys and
//! anything under the EPCIS 1.x `<extension>` wrapper keeps an `extension/`
//! prefix so the writer can put it back.

use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::Event as XmlEvent;
use quick_xml::Reader;

use super::{Action, Event, EventTime, EventType, Extension, TypedValue};

const MAX_DEPTH: usize = 128;
const WRAPPER: &str = "extension";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct XmlError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct XmlParseOutput {
    pub events: Vec<Event>,
    /// Non-fatal findings, e.g. skipped event kinds.
    pub warnings: Vec<String>,
}

#[derive(Debug, Default)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    text: String,
    pos: usize,
}

impl Element {
    fn local_name(&self) -> &str {
        self.name.rsplit(':').next().unwrap_or(&self.name)
    }

    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn value(&self) -> &str {
        self.text.trim()
    }
}

pub fn parse_event_xml(input: &[u8]) -> Result<Vec<Event>, XmlError> {
    parse_event_xml_with_warnings(input).map(|out| out.events)
}

pub fn parse_event_xml_with_warnings(input: &[u8]) -> Result<XmlParseOutput, XmlError> {
    let roots = build_tree(input)?;
    let mut out = XmlParseOutput::default();
    let locate = |pos: usize, message: String| {
        let (line, column) = line_column(input, pos);
        XmlError {
            line,
            column,
            message,
        }
    };
    for root in &roots {
        collect_events(root, false, &mut out).map_err(|(pos, msg)| locate(pos, msg))?;
    }
    Ok(out)
}

fn build_tree(input: &[u8]) -> Result<Vec<Element>, XmlError> {
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(true);

    let err_at = |pos: usize, message: String| {
        let (line, column) = line_column(input, pos);
        XmlError {
            line,
            column,
            message,
        }
    };

    let mut roots = Vec::new();
    let mut stack: Vec<Element> = Vec::new();
    loop {
        let before = reader.buffer_position() as usize;
        let event = reader
            .read_event()
            .map_err(|e| err_at(reader.error_position() as usize, e.to_string()))?;
        match event {
            XmlEvent::Start(ref start) | XmlEvent::Empty(ref start) => {
                let is_empty = matches!(event, XmlEvent::Empty(_));
                let pos = skip_ws(input, before);
                if stack.len() >= MAX_DEPTH {
                    return Err(err_at(pos, format!("nesting deeper than {MAX_DEPTH}")));
                }
                let name = String::from_utf8(start.name().as_ref().to_vec())
                    .map_err(|_| err_at(pos, "element name is not UTF-8".into()))?;
                let mut attrs = Vec::new();
                for attr in start.attributes() {
                    let attr = attr.map_err(|e| err_at(pos, e.to_string()))?;
                    let key = String::from_utf8(attr.key.as_ref().to_vec())
                        .map_err(|_| err_at(pos, "attribute name is not UTF-8".into()))?;
                    let value = attr
                        .unescape_value()
                        .map_err(|e| err_at(pos, e.to_string()))?
                        .into_owned();
                    attrs.push((key, value));
                }
                let element = Element {
                    name,
                    attrs,
                    pos,
                    ..Element::default()
                };
                if is_empty {
                    attach(&mut stack, &mut roots, element);
                } else {
                    stack.push(element);
                }
            }
            XmlEvent::End(_) => {
                // quick-xml checks that end names match
                if let Some(element) = stack.pop() {
                    attach(&mut stack, &mut roots, element);
                }
            }
            XmlEvent::Text(text) => {
                let pos = skip_ws(input, before);
                let text = text.unescape().map_err(|e| err_at(pos, e.to_string()))?;
                match stack.last_mut() {
                    Some(top) => top.text.push_str(&text),
                    None if text.trim().is_empty() => {}
                    None => return Err(err_at(pos, "text outside of any element".into())),
                }
            }
            XmlEvent::CData(data) => {
                let pos = skip_ws(input, before);
                let text = std::str::from_utf8(&data)
                    .map_err(|_| err_at(pos, "CDATA is not UTF-8".into()))?
                    .to_string();
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&text);
                }
            }
            XmlEvent::Eof => break,
            XmlEvent::Decl(_) | XmlEvent::PI(_) | XmlEvent::DocType(_) | XmlEvent::Comment(_) => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(err_at(
            input.len(),
            format!("unexpected end of document inside <{}>", open.name),
        ));
    }
    Ok(roots)
}

fn attach(stack: &mut [Element], roots: &mut Vec<Element>, element: Element) {
    match stack.last_mut() {
        Some(parent) => parent.children.push(element),
        None => roots.push(element),
    }
}

fn skip_ws(input: &[u8], mut pos: usize) -> usize {
    while pos < input.len() && input[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

fn line_column(input: &[u8], pos: usize) -> (usize, usize) {
    let pos = pos.min(input.len());
    let before = &input[..pos];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let line_start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    (line, pos - line_start + 1)
}

type Located = (usize, String);

fn collect_events(el: &Element, in_event_list: bool, out: &mut XmlParseOutput) -> Result<(), Located> {
    match el.local_name() {
        "ObjectEvent" => out.events.push(parse_event(el, EventType::ObjectEvent)?),
        "AssemblyEvent" => out.events.push(parse_event(el, EventType::AssemblyEvent)?),
        "EventList" => {
            for child in &el.children {
                collect_events(child, true, out)?;
            }
        }
        WRAPPER if in_event_list => {
            for child in &el.children {
                collect_events(child, true, out)?;
            }
        }
        other if in_event_list => {
            out.warnings.push(format!("skipped unsupported event element <{other}>"));
        }
        _ => {
            for child in &el.children {
                collect_events(child, false, out)?;
            }
        }
    }
    Ok(())
}

fn parse_event(el: &Element, event_type: EventType) -> Result<Event, Located> {
    let mut event_time = None;
    let mut record_time = None;
    let mut offset = None;
    let mut action = None;
    let mut biz_step = None;
    let mut event = Event::new(
        event_type,
        EventTime::parse("1970-01-01T00:00:00.000+00:00").expect("epoch parses"),
        Action::Observe,
        "",
    );
    let mut wrapped = Vec::new();
    let mut other = Vec::new();

    let time = |child: &Element| EventTime::parse(child.value()).map_err(|e| (child.pos, e.to_string()));

    for child in &el.children {
        match child.name.as_str() {
            "eventTime" => event_time = Some(time(child)?),
            "recordTime" => record_time = Some(time(child)?),
            "eventTimeZoneOffset" => offset = Some(child.value().to_string()),
            "epcList" => event.epc_list = epcs(child),
            "inputEPCList" => event.input_epcs = epcs(child),
            "outputEPCList" => event.output_epcs = epcs(child),
            "action" => {
                action = Some(
                    child
                        .value()
                        .parse::<Action>()
                        .map_err(|e| (child.pos, e))?,
                )
            }
            "bizStep" => biz_step = Some(child.value().to_string()),
            "disposition" => event.disposition = Some(child.value().to_string()),
            "readPoint" => {
                let id = child
                    .children
                    .iter()
                    .find(|c| c.name == "id")
                    .ok_or_else(|| (child.pos, "readPoint without <id>".to_string()))?;
                event.read_point = Some(id.value().to_string());
            }
            "bizTransactionList" => event.biz_transactions = typed_list(child, "bizTransaction"),
            "sourceList" => event.sources = typed_list(child, "source"),
            "destinationList" => event.destinations = typed_list(child, "destination"),
            WRAPPER => {
                for inner in &child.children {
                    match inner.name.as_str() {
                        "sourceList" => event.sources = typed_list(inner, "source"),
                        "destinationList" => event.destinations = typed_list(inner, "destination"),
                        _ => flatten(inner, WRAPPER, &mut wrapped),
                    }
                }
            }
            _ => flatten(child, "", &mut other),
        }
    }

    event.event_time = event_time.ok_or_else(|| (el.pos, format!("{event_type} without <eventTime>")))?;
    event.action = action.ok_or_else(|| (el.pos, format!("{event_type} without <action>")))?;
    event.biz_step = biz_step.ok_or_else(|| (el.pos, format!("{event_type} without <bizStep>")))?;
    event.record_time = record_time;
    event.event_time_zone_offset = match offset {
        Some(o) => o,
        None => event.event_time.offset_string(),
    };
    // wrapper contents first: that is where the writer puts them
    wrapped.extend(other);
    event.extensions = wrapped;
    Ok(event)
}

fn epcs(list: &Element) -> Vec<String> {
    list.children
        .iter()
        .filter(|c| c.name == "epc")
        .map(|c| c.value().to_string())
        .collect()
}

fn typed_list(list: &Element, item: &str) -> Vec<TypedValue> {
    list.children
        .iter()
        .filter(|c| c.name == item)
        .map(|c| TypedValue::new(c.attr("type").unwrap_or_default(), c.value()))
        .collect()
}

fn flatten(el: &Element, prefix: &str, out: &mut Vec<Extension>) {
    let key = if prefix.is_empty() {
        el.name.clone()
    } else {
        format!("{prefix}/{}", el.name)
    };
    if el.children.is_empty() {
        out.push(Extension {
            key,
            value: el.value().to_string(),
        });
    } else {
        for child in &el.children {
            flatten(child, &key, out);
        }
    }
}

/// Writes events as an `EPCISDocument` with one `EventList`.
pub fn serialize_xml(events: &[Event]) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<epcis:EPCISDocument xmlns:epcis=\"urn:epcglobal:epcis:xsd:1\" schemaVersion=\"1.2\">\n");
    out.push_str("  <EPCISBody>\n");
    if events.is_empty() {
        out.push_str("    <EventList/>\n");
    } else {
        out.push_str("    <EventList>\n");
        for e in events {
            write_event(&mut out, e, 6);
        }
        out.push_str("    </EventList>\n");
    }
    out.push_str("  </EPCISBody>\n");
    out.push_str("</epcis:EPCISDocument>\n");
    out
}

fn pad(out: &mut String, indent: usize) {
    out.extend(std::iter::repeat(' ').take(indent));
}

fn leaf(out: &mut String, indent: usize, name: &str, value: &str) {
    pad(out, indent);
    let _ = writeln!(out, "<{name}>{}</{name}>", escape(value));
}

fn epc_list(out: &mut String, indent: usize, name: &str, epcs: &[String]) {
    pad(out, indent);
    let _ = writeln!(out, "<{name}>");
    for epc in epcs {
        leaf(out, indent + 2, "epc", epc);
    }
    pad(out, indent);
    let _ = writeln!(out, "</{name}>");
}

fn typed(out: &mut String, indent: usize, list: &str, item: &str, values: &[TypedValue]) {
    pad(out, indent);
    let _ = writeln!(out, "<{list}>");
    for tv in values {
        pad(out, indent + 2);
        if tv.kind.is_empty() {
            let _ = writeln!(out, "<{item}>{}</{item}>", escape(&tv.value));
        } else {
            let _ = writeln!(
                out,
                "<{item} type=\"{}\">{}</{item}>",
                escape(&tv.kind),
                escape(&tv.value)
            );
        }
    }
    pad(out, indent);
    let _ = writeln!(out, "</{list}>");
}

fn write_event(out: &mut String, e: &Event, indent: usize) {
    let tag = e.event_type.as_str();
    let inner = indent + 2;
    pad(out, indent);
    let _ = writeln!(out, "<{tag}>");
    leaf(out, inner, "eventTime", e.event_time.as_str());
    if let Some(rt) = &e.record_time {
        leaf(out, inner, "recordTime", rt.as_str());
    }
    leaf(out, inner, "eventTimeZoneOffset", &e.event_time_zone_offset);
    if !e.epc_list.is_empty() || e.event_type == EventType::ObjectEvent {
        epc_list(out, inner, "epcList", &e.epc_list);
    }
    if !e.input_epcs.is_empty() {
        epc_list(out, inner, "inputEPCList", &e.input_epcs);
    }
    if !e.output_epcs.is_empty() {
        epc_list(out, inner, "outputEPCList", &e.output_epcs);
    }
    leaf(out, inner, "action", e.action.as_str());
    leaf(out, inner, "bizStep", &e.biz_step);
    if let Some(d) = &e.disposition {
        leaf(out, inner, "disposition", d);
    }
    if let Some(rp) = &e.read_point {
        pad(out, inner);
        out.push_str("<readPoint>\n");
        leaf(out, inner + 2, "id", rp);
        pad(out, inner);
        out.push_str("</readPoint>\n");
    }
    if !e.biz_transactions.is_empty() {
        typed(out, inner, "bizTransactionList", "bizTransaction", &e.biz_transactions);
    }

    let wrapper_prefix = format!("{WRAPPER}/");
    let (wrapped, other): (Vec<_>, Vec<_>) = e
        .extensions
        .iter()
        .partition(|x| x.key.starts_with(&wrapper_prefix));
    if !e.sources.is_empty() || !e.destinations.is_empty() || !wrapped.is_empty() {
        pad(out, inner);
        out.push_str("<extension>\n");
        if !e.sources.is_empty() {
            typed(out, inner + 2, "sourceList", "source", &e.sources);
        }
        if !e.destinations.is_empty() {
            typed(out, inner + 2, "destinationList", "destination", &e.destinations);
        }
        let items: Vec<(Vec<&str>, &str)> = wrapped
            .iter()
            .map(|x| (x.key[wrapper_prefix.len()..].split('/').collect(), x.value.as_str()))
            .collect();
        write_nested(out, inner + 2, &items);
        pad(out, inner);
        out.push_str("</extension>\n");
    }
    let items: Vec<(Vec<&str>, &str)> = other
        .iter()
        .map(|x| (x.key.split('/').collect(), x.value.as_str()))
        .collect();
    write_nested(out, inner, &items);

    pad(out, indent);
    let _ = writeln!(out, "</{tag}>");
}

/// Rebuilds nested elements from flattened keys, grouping consecutive keys
/// that share their first segment.
fn write_nested(out: &mut String, indent: usize, items: &[(Vec<&str>, &str)]) {
    let mut i = 0;
    while i < items.len() {
        let head = items[i].0[0];
        let mut j = i + 1;
        while j < items.len() && items[j].0.len() > 1 && items[i].0.len() > 1 && items[j].0[0] == head {
            j += 1;
        }
        if items[i].0.len() == 1 {
            leaf(out, indent, head, items[i].1);
        } else {
            pad(out, indent);
            let _ = writeln!(out, "<{head}>");
            let tails: Vec<(Vec<&str>, &str)> = items[i..j]
                .iter()
                .map(|(segs, v)| (segs[1..].to_vec(), *v))
                .collect();
            write_nested(out, indent + 2, &tails);
            pad(out, indent);
            let _ = writeln!(out, "</{head}>");
        }
        i = j;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPING: &str = include_str!("../../fixtures/shipping_event.xml");

    #[test]
    fn reference_shipping_event() {
        let events = parse_event_xml(SHIPPING.as_bytes()).unwrap();
        assert_eq!(events.len(), 1);
        let e = &events[0];
        assert_eq!(e.event_type, EventType::ObjectEvent);
        assert_eq!(e.event_time.as_str(), "2021-04-28T00:00:00.000+02:00");
        assert_eq!(e.event_time_zone_offset, "+02:00");
        assert_eq!(e.epc_list, vec!["urn:epc:id:sscc:4023333.0222222222"]);
        assert_eq!(e.action, Action::Observe);
        assert_eq!(e.biz_step, "urn:epcglobal:cbv:bizstep:shipping");
        assert_eq!(e.disposition.as_deref(), Some("urn:epcglobal:cbv:disp:in_transit"));
        assert_eq!(e.read_point.as_deref(), Some("urn:epc:id:sgln:4023333.00002.0"));
        assert_eq!(
            e.biz_transactions,
            vec![TypedValue::new("urn:epcglobal:cbv:btt:po", "urn:epc:id:gdti:0614141.00002.PO-123")]
        );
        assert_eq!(
            e.sources,
            vec![TypedValue::new("urn:epcglobal:cbv:sdt:possessing_party", "urn:epc:id:pgln:4023333.00000")]
        );
        assert_eq!(
            e.destinations,
            vec![TypedValue::new("urn:epcglobal:cbv:sdt:possessing_party", "urn:epc:id:pgln:0614141.00000")]
        );
        assert!(e.extensions.is_empty());
    }

    #[test]
    fn empty_event_list() {
        assert!(parse_event_xml(b"<EventList/>").unwrap().is_empty());
        assert!(parse_event_xml(b"").unwrap().is_empty());
    }

    #[test]
    fn unknown_event_kind_is_skipped_with_warning() {
        let doc = br#"<EventList>
            <AggregationEvent><eventTime>2021-01-01T00:00:00Z</eventTime></AggregationEvent>
            <ObjectEvent>
              <eventTime>2021-01-01T00:00:00.000+00:00</eventTime>
              <epcList><epc>urn:epc:id:sgtin:1.2.3</epc></epcList>
              <action>ADD</action>
              <bizStep>urn:epcglobal:cbv:bizstep:commissioning</bizStep>
            </ObjectEvent>
        </EventList>"#;
        let out = parse_event_xml_with_warnings(doc).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("AggregationEvent"));
        // offset defaults to the one embedded in eventTime
        assert_eq!(out.events[0].event_time_zone_offset, "+00:00");
    }

    #[test]
    fn malformed_xml_reports_position() {
        let doc = b"<EventList>\n  <ObjectEvent>\n    <eventTime>x</action>\n</EventList>";
        let err = parse_event_xml(doc).unwrap_err();
        assert_eq!(err.line, 3, "{err}");
    }

    #[test]
    fn truncated_document() {
        let err = parse_event_xml(b"<EventList>\n<ObjectEvent>").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("ObjectEvent"));
    }

    #[test]
    fn missing_event_time_is_an_error() {
        let doc = b"<EventList>\n<ObjectEvent><action>ADD</action><bizStep>x</bizStep></ObjectEvent></EventList>";
        let err = parse_event_xml(doc).unwrap_err();
        assert_eq!((err.line, err.column), (2, 1));
        assert!(err.message.contains("eventTime"));
    }

    #[test]
    fn vendor_fields_become_extensions() {
        let doc = br#"<ObjectEvent xmlns:example="https://example.com/ns">
          <eventTime>2022-03-04T11:00:30.000+01:00</eventTime>
          <recordTime>2022-03-04T11:00:30.999+01:00</recordTime>
          <eventTimeZoneOffset>+01:00</eventTimeZoneOffset>
          <epcList><epc>https://id.gs1.org/00/040123450000003338</epc></epcList>
          <action>OBSERVE</action>
          <bizStep>https://ns.gs1.org/cbv/BizStep-departing</bizStep>
          <example:myField1>
            <example:mySubField1>2</example:mySubField1>
            <example:mySubField2>5</example:mySubField2>
          </example:myField1>
        </ObjectEvent>"#;
        let e = parse_event_xml(doc).unwrap().remove(0);
        assert_eq!(
            e.extensions,
            vec![
                Extension {
                    key: "example:myField1/example:mySubField1".into(),
                    value: "2".into()
                },
                Extension {
                    key: "example:myField1/example:mySubField2".into(),
                    value: "5".into()
                },
            ]
        );
        assert_eq!(e.record_time.unwrap().as_str(), "2022-03-04T11:00:30.999+01:00");
    }

    #[test]
    fn assembly_event() {
        let doc = br#"<AssemblyEvent>
          <eventTime>2022-03-04T11:00:30.000+01:00</eventTime>
          <eventTimeZoneOffset>+01:00</eventTimeZoneOffset>
          <inputEPCList><epc>a</epc><epc>b</epc></inputEPCList>
          <outputEPCList><epc>c</epc></outputEPCList>
          <action>ADD</action>
          <bizStep>urn:epcglobal:cbv:bizstep:assembling</bizStep>
        </AssemblyEvent>"#;
        let e = parse_event_xml(doc).unwrap().remove(0);
        assert_eq!(e.event_type, EventType::AssemblyEvent);
        assert_eq!(e.input_epcs, vec!["a", "b"]);
        assert_eq!(e.output_epcs, vec!["c"]);
        assert!(e.epc_list.is_empty());
    }

    #[test]
    fn entities_are_unescaped_and_written_back() {
        let doc = br#"<ObjectEvent>
          <eventTime>2022-03-04T11:00:30.000+01:00</eventTime>
          <epcList><epc>urn:x:a&amp;b</epc></epcList>
          <action>OBSERVE</action>
          <bizStep>s</bizStep>
          <note><![CDATA[<raw>]]></note>
        </ObjectEvent>"#;
        let events = parse_event_xml(doc).unwrap();
        assert_eq!(events[0].epc_list, vec!["urn:x:a&b"]);
        assert_eq!(events[0].extensions[0].value, "<raw>");
        let again = parse_event_xml(serialize_xml(&events).as_bytes()).unwrap();
        assert_eq!(again, events);
    }

    #[test]
    fn writer_round_trip() {
        let events = parse_event_xml(SHIPPING.as_bytes()).unwrap();
        let xml = serialize_xml(&events);
        assert_eq!(parse_event_xml(xml.as_bytes()).unwrap(), events);
        assert!(xml.contains("<extension>"));
    }

    #[test]
    fn empty_document_round_trip() {
        let xml = serialize_xml(&[]);
        assert!(parse_event_xml(xml.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn depth_limit() {
        let mut doc = String::new();
        for _ in 0..(MAX_DEPTH + 5) {
            doc.push_str("<a>");
        }
        assert!(parse_event_xml(doc.as_bytes()).is_err());
    }
}
