//! Graph interchange: newline-delimited JSON (one node or relationship per line) and GraphML.

use std::collections::{BTreeMap, BTreeSet};

use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::Event as XmlEvent;
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use super::{GraphError, KnowledgeGraph, Label, Layer, Node, NodeId, RelId, RelType, Relationship};
use crate::value::{Attributes, Value};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Meta {
        #[serde(default)]
        log_id: Option<String>,
        #[serde(default)]
        layer_versions: BTreeMap<Layer, u64>,
        #[serde(default)]
        written: BTreeSet<Layer>,
    },
    Node {
        id: u64,
        labels: Vec<String>,
        #[serde(default)]
        properties: Attributes,
    },
    Rel {
        id: u64,
        #[serde(rename = "type")]
        rel_type: RelType,
        source: u64,
        target: u64,
        #[serde(default)]
        properties: Attributes,
    },
}

/// Serializes the graph as NDJSON. The first line carries graph metadata (`kind: meta`).
pub fn to_ndjson(g: &KnowledgeGraph) -> String {
    let mut out = String::new();
    let mut push = |line: &Line| {
        out.push_str(&serde_json::to_string(line).expect("graph lines serialize"));
        out.push('\n');
    };
    push(&Line::Meta {
        log_id: g.log_id.clone(),
        layer_versions: g.layer_versions.clone(),
        written: g.written.clone(),
    });
    for n in g.nodes.values() {
        push(&Line::Node {
            id: n.id.0,
            labels: n.labels.iter().map(|l| l.as_str().to_string()).collect(),
            properties: n.properties.clone(),
        });
    }
    for r in g.rels.values() {
        push(&Line::Rel {
            id: r.id.0,
            rel_type: r.rel_type,
            source: r.source.0,
            target: r.target.0,
            properties: r.properties.clone(),
        });
    }
    out
}

pub fn from_ndjson(text: &str) -> Result<KnowledgeGraph, GraphError> {
    let mut g = KnowledgeGraph::new();
    let mut rels = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: Line = serde_json::from_str(line).map_err(|e| GraphError::Import(format!("line {}: {e}", i + 1)))?;
        match parsed {
            Line::Meta { log_id, layer_versions, written } => {
                g.log_id = log_id;
                g.layer_versions = layer_versions;
                g.written = written;
            }
            Line::Node { id, labels, properties } => {
                let labels = parse_labels(labels.iter().map(String::as_str))?;
                g.insert_node(Node { id: NodeId(id), labels, properties });
            }
            Line::Rel { id, rel_type, source, target, properties } => rels.push(Relationship {
                id: RelId(id),
                rel_type,
                source: NodeId(source),
                target: NodeId(target),
                properties,
            }),
        }
    }
    for r in rels {
        g.insert_rel(r)?;
    }
    Ok(g)
}

fn parse_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<BTreeSet<Label>, GraphError> {
    let set = labels
        .filter(|l| !l.is_empty())
        .map(|l| Label::parse(l).ok_or_else(|| GraphError::Import(format!("unknown label {l:?}"))))
        .collect::<Result<BTreeSet<_>, _>>()?;
    if set.is_empty() {
        return Err(GraphError::Import("node without labels".into()));
    }
    Ok(set)
}

/// GraphML with one `<key>` per property name; property values are stored as their JSON text so
/// that scalar types survive the trip.
pub fn to_graphml(g: &KnowledgeGraph) -> String {
    let node_keys: BTreeSet<&str> = g.nodes.values().flat_map(|n| n.properties.keys().map(String::as_str)).collect();
    let edge_keys: BTreeSet<&str> = g.rels.values().flat_map(|r| r.properties.keys().map(String::as_str)).collect();
    let node_ids: BTreeMap<&str, String> = node_keys.iter().enumerate().map(|(i, k)| (*k, format!("n{i}"))).collect();
    let edge_ids: BTreeMap<&str, String> = edge_keys.iter().enumerate().map(|(i, k)| (*k, format!("e{i}"))).collect();

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    out.push_str("  <key id=\"labels\" for=\"node\" attr.name=\"labels\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"type\" for=\"edge\" attr.name=\"type\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"log_id\" for=\"graph\" attr.name=\"log_id\" attr.type=\"string\"/>\n");
    for (domain, keys) in [("node", &node_ids), ("edge", &edge_ids)] {
        for (name, id) in keys {
            out.push_str(&format!(
                "  <key id=\"{id}\" for=\"{domain}\" attr.name=\"{}\" attr.type=\"string\"/>\n",
                escape(*name)
            ));
        }
    }
    out.push_str("  <graph id=\"G\" edgedefault=\"directed\">\n");
    if let Some(log_id) = &g.log_id {
        out.push_str(&format!("    <data key=\"log_id\">{}</data>\n", escape(log_id.as_str())));
    }
    let data = |key: &str, v: &Value| {
        format!("<data key=\"{key}\">{}</data>", escape(serde_json::to_string(v).expect("value serializes")))
    };
    for n in g.nodes.values() {
        let labels: Vec<&str> = n.labels.iter().map(|l| l.as_str()).collect();
        out.push_str(&format!("    <node id=\"{}\"><data key=\"labels\">{}</data>", n.id, labels.join(":")));
        for (k, v) in &n.properties {
            out.push_str(&data(&node_ids[k.as_str()], v));
        }
        out.push_str("</node>\n");
    }
    for r in g.rels.values() {
        out.push_str(&format!(
            "    <edge id=\"{}\" source=\"{}\" target=\"{}\"><data key=\"type\">{}</data>",
            r.id, r.source, r.target, r.rel_type
        ));
        for (k, v) in &r.properties {
            out.push_str(&data(&edge_ids[k.as_str()], v));
        }
        out.push_str("</edge>\n");
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

enum Element {
    Node { id: NodeId, labels: Option<String>, props: Attributes },
    Edge { id: RelId, source: NodeId, target: NodeId, rel_type: Option<String>, props: Attributes },
}

/// Reads GraphML written by [`to_graphml`]. Layer versions restart at 1 for every layer present.
pub fn from_graphml(text: &str) -> Result<KnowledgeGraph, GraphError> {
    let err = |e: String| GraphError::Import(e);
    let mut reader = Reader::from_str(text);
    let mut key_names: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<Element> = None;
    let mut data_key: Option<String> = None;
    let mut text_buf = String::new();
    let mut log_id = None;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();

    loop {
        let ev = reader.read_event().map_err(|e| err(e.to_string()))?;
        match ev {
            XmlEvent::Start(ref e) | XmlEvent::Empty(ref e) => {
                let mut attrs: BTreeMap<String, String> = BTreeMap::new();
                for a in e.attributes() {
                    let a = a.map_err(|e| err(e.to_string()))?;
                    let v = a.normalized_value(XmlVersion::Implicit1_0).map_err(|e| err(e.to_string()))?;
                    attrs.insert(a.key.as_ref().to_string(), v.into_owned());
                }
                let get = |k: &str| attrs.get(k).cloned().ok_or_else(|| err(format!("missing attribute {k}")));
                let parse_id = |s: String, prefix: char| {
                    s.strip_prefix(prefix).and_then(|n| n.parse::<u64>().ok()).ok_or_else(|| err(format!("bad id {s}")))
                };
                match e.local_name().as_ref() {
                    "key" => {
                        key_names.insert(get("id")?, get("attr.name")?);
                    }
                    "node" => {
                        current = Some(Element::Node { id: NodeId(parse_id(get("id")?, 'n')?), labels: None, props: Attributes::new() })
                    }
                    "edge" => {
                        current = Some(Element::Edge {
                            id: RelId(parse_id(get("id")?, 'r')?),
                            source: NodeId(parse_id(get("source")?, 'n')?),
                            target: NodeId(parse_id(get("target")?, 'n')?),
                            rel_type: None,
                            props: Attributes::new(),
                        })
                    }
                    "data" => {
                        data_key = Some(get("key")?);
                        text_buf.clear();
                    }
                    _ => {}
                }
                if matches!(ev, XmlEvent::Empty(_)) {
                    match e.local_name().as_ref() {
                        "node" | "edge" => finish(&mut current, &mut nodes, &mut edges),
                        "data" => data_key = None,
                        _ => {}
                    }
                }
            }
            XmlEvent::Text(t) if data_key.is_some() => text_buf.push_str(&t.xml_content(XmlVersion::Implicit1_0)),
            XmlEvent::CData(t) if data_key.is_some() => text_buf.push_str(&t.xml_content(XmlVersion::Implicit1_0)),
            XmlEvent::GeneralRef(r) if data_key.is_some() => {
                if let Some(c) = r.resolve_char_ref().map_err(|e| err(e.to_string()))? {
                    text_buf.push(c);
                } else {
                    let name = r.xml_content(XmlVersion::Implicit1_0);
                    text_buf.push_str(resolve_predefined_entity(&name).ok_or_else(|| err(format!("entity &{name};")))?);
                }
            }
            XmlEvent::End(ref e) => match e.local_name().as_ref() {
                "data" => {
                    let key = data_key.take().unwrap_or_default();
                    let content = std::mem::take(&mut text_buf);
                    match (&mut current, key.as_str()) {
                        (None, "log_id") => log_id = Some(content),
                        (Some(Element::Node { labels, .. }), "labels") => *labels = Some(content),
                        (Some(Element::Edge { rel_type, .. }), "type") => *rel_type = Some(content),
                        (Some(Element::Node { props, .. } | Element::Edge { props, .. }), k) => {
                            let name = key_names.get(k).ok_or_else(|| err(format!("undeclared key {k}")))?;
                            let json: serde_json::Value =
                                serde_json::from_str(&content).map_err(|e| err(e.to_string()))?;
                            let v = Value::from_json(&json).ok_or_else(|| err(format!("bad value {content}")))?;
                            props.insert(name.clone(), v);
                        }
                        _ => {}
                    }
                }
                "node" | "edge" => finish(&mut current, &mut nodes, &mut edges),
                _ => {}
            },
            XmlEvent::Eof => break,
            _ => {}
        }
    }

    let mut g = KnowledgeGraph::new();
    for (id, labels, props) in nodes {
        let labels = parse_labels(labels.as_deref().unwrap_or("").split(':'))?;
        g.insert_node(Node { id, labels, properties: props });
    }
    for (id, source, target, rel_type, props) in edges {
        let rel_type = rel_type
            .as_deref()
            .and_then(RelType::parse)
            .ok_or_else(|| err(format!("edge {id} has no valid type")))?;
        g.insert_rel(Relationship { id, rel_type, source, target, properties: props })?;
    }
    g.log_id = log_id;
    let mut layers: BTreeSet<Layer> = g.rels.values().map(|r| r.rel_type.layer()).collect();
    if g.log_id.is_some() {
        layers.insert(Layer::Base);
    }
    for l in layers {
        g.bump(l);
    }
    Ok(g)
}

type NodeParts = (NodeId, Option<String>, Attributes);
type EdgeParts = (RelId, NodeId, NodeId, Option<String>, Attributes);

fn finish(current: &mut Option<Element>, nodes: &mut Vec<NodeParts>, edges: &mut Vec<EdgeParts>) {
    match current.take() {
        Some(Element::Node { id, labels, props }) => nodes.push((id, labels, props)),
        Some(Element::Edge { id, source, target, rel_type, props }) => edges.push((id, source, target, rel_type, props)),
        None => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::{Event, EventLog, Trace};
    use crate::graph::{CauseRecord, Markers, FlowRecord, ViewKind};
    use crate::value::Timestamp;

    fn sample() -> KnowledgeGraph {
        let events = vec![
            Event::new("e1", "c1", "A & B", Timestamp(0)).with_attr("cost", 2.5),
            Event::new("e2", "c1", "C<", Timestamp(10)).with_attr("ok", true).with_attr("at", Timestamp(3)),
        ];
        let log = EventLog::new([Trace::new("c1", events, Attributes::from([("n".to_string(), Value::Int(3))]))]).unwrap();
        let mut g = KnowledgeGraph::from_log(&log).unwrap();
        g.infer_directly_follows();
        let markers = Markers { start: "S".into(), end: "E".into() };
        let flows = [("S", "A & B"), ("A & B", "C<"), ("C<", "E")]
            .map(|(a, b)| FlowRecord { from: a.into(), to: b.into(), frequency: 1 });
        g.write_process_layer(&flows, &markers).unwrap();
        let causes = [CauseRecord { cause: "A & B".into(), effect: "C<".into(), coefficient: 0.75, boundary: false }];
        g.write_causal_layer(&causes, &["A & B".into(), "C<".into()]).unwrap();
        g
    }

    #[test]
    fn ndjson_roundtrip() {
        let g = sample();
        let text = to_ndjson(&g);
        assert!(text.lines().nth(1).unwrap().contains("\"kind\":\"node\""));
        let back = from_ndjson(&text).unwrap();
        assert_eq!(to_ndjson(&back), text);
        assert_eq!(back.query_view(ViewKind::Causal), g.query_view(ViewKind::Causal));
        assert_eq!(back.event_log().unwrap(), g.event_log().unwrap());
    }

    #[test]
    fn graphml_roundtrip() {
        let g = sample();
        let xml = to_graphml(&g);
        let back = from_graphml(&xml).unwrap();
        assert_eq!(back.node_count(), g.node_count());
        assert_eq!(back.rel_count(), g.rel_count());
        assert_eq!(back.query_view(ViewKind::Process), g.query_view(ViewKind::Process));
        assert_eq!(back.event_log().unwrap(), g.event_log().unwrap());
        assert_eq!(to_graphml(&back), xml);
    }

    #[test]
    fn import_rejects_dangling_edges() {
        let text = "{\"kind\":\"rel\",\"id\":0,\"type\":\"CAUSES\",\"source\":1,\"target\":2}\n";
        assert!(matches!(from_ndjson(text), Err(GraphError::UnknownNode(_))));
    }
}
