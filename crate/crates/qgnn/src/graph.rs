//! Vector-labelled directed graphs over a finite number set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{ArithmeticSpec, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
}

pub fn schema_err(path: impl Into<String>, msg: impl Into<String>) -> GraphError {
    GraphError::Schema { path: path.into(), msg: msg.into() }
}

/// Numbers in documents are decimal strings; bare JSON numbers are accepted too.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NumText {
    Text(String),
    Number(serde_json::Number),
}

impl NumText {
    pub fn parse(&self, spec: ArithmeticSpec, path: &str) -> Result<Value, GraphError> {
        let text = match self {
            NumText::Text(s) => s.clone(),
            NumText::Number(n) => n.to_string(),
        };
        spec.parse_value(&text).map_err(|e| schema_err(path, e.to_string()))
    }

    pub fn of(v: Value) -> Self {
        NumText::Text(v.to_string())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default)]
    pub label: BTreeMap<String, NumText>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub features: Vec<String>,
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledGraph {
    spec: ArithmeticSpec,
    features: Vec<String>,
    names: Vec<String>,
    labels: Vec<Vec<Value>>,
    succ: Vec<Vec<NodeId>>,
    edges: Vec<(NodeId, NodeId)>,
    index: FxHashMap<String, NodeId>,
}

impl LabeledGraph {
    pub fn new(spec: ArithmeticSpec, features: Vec<String>) -> Self {
        LabeledGraph {
            spec,
            features,
            names: Vec::new(),
            labels: Vec::new(),
            succ: Vec::new(),
            edges: Vec::new(),
            index: FxHashMap::default(),
        }
    }

    pub fn spec(&self) -> ArithmeticSpec {
        self.spec
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.names.len()).map(NodeId)
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.names[v.0]
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    /// Adds a node labelled with zeros.
    pub fn add_node(&mut self, name: &str) -> Result<NodeId, GraphError> {
        if self.index.contains_key(name) {
            return Err(GraphError::DuplicateNode(name.to_string()));
        }
        let id = NodeId(self.names.len());
        self.names.push(name.to_string());
        self.labels.push(vec![self.spec.zero(); self.features.len()]);
        self.succ.push(Vec::new());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_edge(&mut self, s: NodeId, t: NodeId) -> Result<(), GraphError> {
        if self.succ[s.0].contains(&t) {
            return Err(GraphError::DuplicateEdge(self.names[s.0].clone(), self.names[t.0].clone()));
        }
        self.succ[s.0].push(t);
        self.edges.push((s, t));
        Ok(())
    }

    pub fn set_label(&mut self, v: NodeId, feature: &str, value: Value) -> Result<(), GraphError> {
        let i = self.feature_index(feature).ok_or_else(|| GraphError::UnknownFeature(feature.to_string()))?;
        assert_eq!(value.spec(), self.spec);
        self.labels[v.0][i] = value;
        Ok(())
    }

    pub fn label(&self, v: NodeId) -> &[Value] {
        &self.labels[v.0]
    }

    pub fn label_of(&self, v: NodeId, feature: &str) -> Option<Value> {
        self.feature_index(feature).map(|i| self.labels[v.0][i])
    }

    /// Targets in edge-insertion order.
    pub fn successors(&self, v: NodeId) -> &[NodeId] {
        &self.succ[v.0]
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.succ[v.0].len()
    }

    pub fn successors_by_name(&self, name: &str) -> Result<Vec<&str>, GraphError> {
        let v = self.node(name).ok_or_else(|| GraphError::UnknownNode(name.to_string()))?;
        Ok(self.succ[v.0].iter().map(|t| self.name(*t)).collect())
    }

    pub fn out_degree_by_name(&self, name: &str) -> Result<usize, GraphError> {
        let v = self.node(name).ok_or_else(|| GraphError::UnknownNode(name.to_string()))?;
        Ok(self.out_degree(v))
    }

    pub fn from_doc(doc: &GraphDoc, spec: ArithmeticSpec) -> Result<Self, GraphError> {
        let mut seen = BTreeMap::new();
        for (i, f) in doc.features.iter().enumerate() {
            if seen.insert(f.as_str(), i).is_some() {
                return Err(schema_err(format!("features[{i}]"), format!("duplicate feature `{f}`")));
            }
        }
        let mut g = LabeledGraph::new(spec, doc.features.clone());
        for (i, n) in doc.nodes.iter().enumerate() {
            let v = g.add_node(&n.id).map_err(|e| schema_err(format!("nodes[{i}].id"), e.to_string()))?;
            for (name, text) in &n.label {
                let path = format!("nodes[{i}].label.{name}");
                let fi = g.feature_index(name).ok_or_else(|| schema_err(&path, "undeclared feature"))?;
                g.labels[v.0][fi] = text.parse(spec, &path)?;
            }
            if let Some(missing) = g.features.iter().find(|f| !n.label.contains_key(*f)) {
                return Err(schema_err(format!("nodes[{i}].label"), format!("missing feature `{missing}`")));
            }
        }
        for (i, (s, t)) in doc.edges.iter().enumerate() {
            let path = format!("edges[{i}]");
            let sv = g.node(s).ok_or_else(|| schema_err(&path, format!("unknown node `{s}`")))?;
            let tv = g.node(t).ok_or_else(|| schema_err(&path, format!("unknown node `{t}`")))?;
            g.add_edge(sv, tv).map_err(|e| schema_err(&path, e.to_string()))?;
        }
        Ok(g)
    }

    pub fn to_doc(&self, point: Option<NodeId>) -> GraphDoc {
        GraphDoc {
            features: self.features.clone(),
            nodes: self
                .nodes()
                .map(|v| NodeDoc {
                    id: self.name(v).to_string(),
                    label: self
                        .features
                        .iter()
                        .zip(self.label(v))
                        .map(|(f, x)| (f.clone(), NumText::of(*x)))
                        .collect(),
                })
                .collect(),
            edges: self.edges.iter().map(|(s, t)| (self.name(*s).to_string(), self.name(*t).to_string())).collect(),
            point: point.map(|p| self.name(p).to_string()),
        }
    }

    pub fn load_json(text: &str, spec: ArithmeticSpec) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(|e| schema_err("$", e.to_string()))?;
        Self::from_doc(&doc, spec)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc(None)).expect("graph documents serialize")
    }

    /// DOT digraph; labels render as `name=value` lists.
    pub fn to_dot(&self, point: Option<NodeId>) -> String {
        let mut out = String::from("digraph G {\n");
        for v in self.nodes() {
            let label: Vec<String> =
                self.features.iter().zip(self.label(v)).map(|(f, x)| format!("{f}={x}")).collect();
            let shape = if Some(v) == point { ", shape=doublecircle" } else { "" };
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n{}\"{}];",
                escape(self.name(v)),
                escape(self.name(v)),
                escape(&label.join(", ")),
                shape
            );
        }
        for (s, t) in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", escape(self.name(*s)), escape(self.name(*t)));
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// A graph with a distinguished evaluation node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointedGraph {
    pub graph: LabeledGraph,
    pub point: NodeId,
}

impl PointedGraph {
    pub fn new(graph: LabeledGraph, point: NodeId) -> Self {
        assert!(point.0 < graph.node_count(), "point outside graph");
        PointedGraph { graph, point }
    }

    pub fn from_doc(doc: &GraphDoc, spec: ArithmeticSpec) -> Result<Self, GraphError> {
        let graph = LabeledGraph::from_doc(doc, spec)?;
        let name = doc.point.as_ref().ok_or_else(|| schema_err("point", "missing evaluation point"))?;
        let point = graph.node(name).ok_or_else(|| schema_err("point", format!("unknown node `{name}`")))?;
        Ok(PointedGraph { graph, point })
    }

    pub fn to_doc(&self) -> GraphDoc {
        self.graph.to_doc(Some(self.point))
    }

    pub fn load_json(text: &str, spec: ArithmeticSpec) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(|e| schema_err("$", e.to_string()))?;
        Self::from_doc(&doc, spec)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("graph documents serialize")
    }

    pub fn to_dot(&self) -> String {
        self.graph.to_dot(Some(self.point))
    }
}
