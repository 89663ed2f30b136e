//! Weighted flow graphs `G = <V, E, alpha>`.
//!
//! Each node maps properties to transfer formulas. A transfer for property
//! `P` is evaluated against the state of one predecessor: the variable `In`
//! denotes that predecessor's value of `P`, any other property name denotes
//! the predecessor's value of that property, and node-local constants shadow
//! both. The results over incoming edges are merged by the collector (the
//! alpha-weighted average for fuzzy analyses).
//!
//! The start node and every other node without incoming edges keep their
//! seed valuation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::formula::Formula;
use crate::fuzzy::{LogicFamily, Truth, TruthInterval, TruthValue};

/// Tolerance on the sum of incoming weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Name through which a transfer reads the predecessor's value of the
/// property being computed.
pub const INPUT_VAR: &str = "In";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("start node `{0}` does not exist")]
    InvalidStart(String),
    /// The message already carries serde's line and column, so the
    /// JSON error is not chained as a source.
    #[error("malformed graph: {0}")]
    Json(serde_json::Error),
}

impl From<serde_json::Error> for GraphError {
    fn from(e: serde_json::Error) -> Self {
        GraphError::Json(e)
    }
}

/// A scalar or interval degree as it appears in problem files: a number or a
/// `[lo, hi]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(TruthValue),
    Interval(TruthInterval),
}

impl Value {
    pub fn to_truth<V: Truth>(self) -> Option<V> {
        match self {
            Value::Scalar(t) => Some(V::lift(t)),
            Value::Interval(i) => V::from_interval(i),
        }
    }

    pub fn as_interval(self) -> TruthInterval {
        match self {
            Value::Scalar(t) => TruthInterval::degenerate(t),
            Value::Interval(i) => i,
        }
    }

    pub fn is_crisp(self) -> bool {
        let i = self.as_interval();
        i.is_degenerate() && (i.lo() == TruthValue::FALSE || i.lo() == TruthValue::TRUE)
    }
}

impl From<TruthValue> for Value {
    fn from(t: TruthValue) -> Self {
        Value::Scalar(t)
    }
}

impl From<TruthInterval> for Value {
    fn from(i: TruthInterval) -> Self {
        Value::Interval(i)
    }
}

pub type ValueMap = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    #[serde(default)]
    pub transfer: BTreeMap<String, Formula>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: ValueMap,
}

impl Node {
    pub fn new(id: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            transfer: BTreeMap::new(),
            constants: BTreeMap::new(),
        }
    }

    pub fn with_transfer(mut self, property: impl Into<String>, formula: Formula) -> Self {
        self.transfer.insert(property.into(), formula);
        self
    }

    pub fn with_constant(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.constants.insert(name.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub alpha: TruthValue,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, alpha: TruthValue) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGraph {
    #[serde(default = "default_logic")]
    pub logic: LogicFamily,
    pub start: String,
    /// Seed valuations, keyed by node id.
    #[serde(default)]
    pub seed: BTreeMap<String, ValueMap>,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

fn default_logic() -> LogicFamily {
    LogicFamily::MinMax
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateNode { node: String },
    MissingStart { node: String },
    DanglingEdge { from: String, to: String, missing: String },
    WeightSum { node: String, sum: f64 },
    MissingSeed { node: String, property: String },
    UnknownSeedNode { node: String },
    MissingTransfer { node: String, property: String },
    UnboundVariable { node: String, property: String, name: String },
    /// Edges into the start node are never collected.
    IgnoredStartEdge { from: String },
    Unreachable { node: String },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::IgnoredStartEdge { .. } | Violation::Unreachable { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode { node } => write!(f, "duplicate node id `{node}`"),
            Violation::MissingStart { node } => write!(f, "start node `{node}` does not exist"),
            Violation::DanglingEdge { from, to, missing } => {
                write!(f, "edge {from} -> {to} names unknown node `{missing}`")
            }
            Violation::WeightSum { node, sum } => {
                write!(f, "incoming weights of `{node}` sum to {sum}, expected 1")
            }
            Violation::MissingSeed { node, property } => {
                write!(f, "node `{node}` has no seed value for `{property}`")
            }
            Violation::UnknownSeedNode { node } => write!(f, "seed given for unknown node `{node}`"),
            Violation::MissingTransfer { node, property } => {
                write!(f, "node `{node}` has no transfer for `{property}`")
            }
            Violation::UnboundVariable { node, property, name } => {
                write!(f, "transfer `{node}.{property}` uses unbound variable `{name}`")
            }
            Violation::IgnoredStartEdge { from } => {
                write!(f, "edge {from} -> start is ignored (start keeps its seed)")
            }
            Violation::Unreachable { node } => write!(f, "node `{node}` is unreachable from start"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity() == Severity::Warning)
    }
}

impl FlowGraph {
    pub fn new(start: impl Into<String>) -> Self {
        FlowGraph {
            logic: LogicFamily::MinMax,
            start: start.into(),
            seed: BTreeMap::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn from_json(src: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(src)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn with_logic(mut self, logic: LogicFamily) -> Self {
        self.logic = logic;
        self
    }

    pub fn add_node(&mut self, node: Node) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn add_edge(&mut self, from: &str, to: &str, alpha: f64) -> &mut Self {
        let alpha = TruthValue::new(alpha).expect("edge weight in [0, 1]");
        self.edges.push(Edge::new(from, to, alpha));
        self
    }

    pub fn set_seed(&mut self, node: &str, property: &str, value: impl Into<Value>) -> &mut Self {
        self.seed
            .entry(node.to_string())
            .or_default()
            .insert(property.to_string(), value.into());
        self
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Sorted union of all transfer and seed property names.
    pub fn properties(&self) -> Vec<String> {
        let mut props: BTreeSet<&str> = BTreeSet::new();
        for node in &self.nodes {
            props.extend(node.transfer.keys().map(String::as_str));
        }
        for vals in self.seed.values() {
            props.extend(vals.keys().map(String::as_str));
        }
        props.into_iter().map(str::to_string).collect()
    }

    /// Whether `id` keeps its seed valuation instead of collecting.
    pub fn is_seeded(&self, id: &str) -> bool {
        id == self.start || !self.edges.iter().any(|e| e.to == id)
    }

    pub fn incoming<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                out.push(Violation::DuplicateNode { node: node.id.clone() });
            }
        }
        if !seen.contains(self.start.as_str()) {
            out.push(Violation::MissingStart { node: self.start.clone() });
        }
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !seen.contains(end.as_str()) {
                    out.push(Violation::DanglingEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        missing: end.clone(),
                    });
                }
            }
            if e.to == self.start {
                out.push(Violation::IgnoredStartEdge { from: e.from.clone() });
            }
        }

        let props = self.properties();
        for node in &self.nodes {
            if self.is_seeded(&node.id) {
                let seed = self.seed.get(&node.id);
                for p in &props {
                    if seed.and_then(|s| s.get(p)).is_none() {
                        out.push(Violation::MissingSeed {
                            node: node.id.clone(),
                            property: p.clone(),
                        });
                    }
                }
                continue;
            }
            let sum: f64 = self.incoming(&node.id).map(|e| e.alpha.get()).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                out.push(Violation::WeightSum {
                    node: node.id.clone(),
                    sum,
                });
            }
            for p in &props {
                let Some(f) = node.transfer.get(p) else {
                    out.push(Violation::MissingTransfer {
                        node: node.id.clone(),
                        property: p.clone(),
                    });
                    continue;
                };
                for name in f.free_vars() {
                    let bound = name == INPUT_VAR
                        || node.constants.contains_key(&name)
                        || props.binary_search(&name).is_ok();
                    if !bound {
                        out.push(Violation::UnboundVariable {
                            node: node.id.clone(),
                            property: p.clone(),
                            name,
                        });
                    }
                }
            }
        }
        for seed_node in self.seed.keys() {
            if !seen.contains(seed_node.as_str()) {
                out.push(Violation::UnknownSeedNode { node: seed_node.clone() });
            }
        }

        if seen.contains(self.start.as_str()) {
            let reachable = self.reachable_from(&self.start);
            for node in &self.nodes {
                if !reachable.contains(node.id.as_str()) {
                    out.push(Violation::Unreachable { node: node.id.clone() });
                }
            }
        }
        ValidationReport { violations: out }
    }

    fn reachable_from<'a>(&'a self, start: &'a str) -> BTreeSet<&'a str> {
        let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            succ.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in succ.get(n).into_iter().flatten() {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Flips every edge. Weights carry over unless `overrides` names the
    /// flipped edge `(from, to)`; backward weights usually differ from the
    /// forward ones.
    pub fn reverse(
        &self,
        new_start: &str,
        new_seed: ValueMap,
        overrides: &BTreeMap<(String, String), TruthValue>,
    ) -> Result<FlowGraph, GraphError> {
        if self.node(new_start).is_none() {
            return Err(GraphError::InvalidStart(new_start.to_string()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let key = (e.to.clone(), e.from.clone());
                let alpha = overrides.get(&key).copied().unwrap_or(e.alpha);
                Edge::new(e.to.clone(), e.from.clone(), alpha)
            })
            .collect();
        Ok(FlowGraph {
            logic: self.logic,
            start: new_start.to_string(),
            seed: BTreeMap::from([(new_start.to_string(), new_seed)]),
            nodes: self.nodes.clone(),
            edges,
        })
    }
}

/// Value of every property at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState<V> {
    nodes: Vec<String>,
    properties: Vec<String>,
    values: Vec<V>,
}

impl<V: Truth> GlobalState<V> {
    pub fn filled(nodes: Vec<String>, properties: Vec<String>, value: V) -> Self {
        let len = nodes.len() * properties.len();
        GlobalState {
            nodes,
            properties,
            values: vec![value; len],
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn properties(&self) -> &[String] {
        &self.properties
    }

    pub fn get(&self, node: &str, property: &str) -> Option<V> {
        let n = self.nodes.iter().position(|x| x == node)?;
        let p = self.properties.iter().position(|x| x == property)?;
        Some(self.values[n * self.properties.len() + p])
    }

    pub fn set(&mut self, node: &str, property: &str, value: V) -> bool {
        let n = self.nodes.iter().position(|x| x == node);
        let p = self.properties.iter().position(|x| x == property);
        match (n, p) {
            (Some(n), Some(p)) => {
                let width = self.properties.len();
                self.values[n * width + p] = value;
                true
            }
            _ => false,
        }
    }

    /// Values of one node, in property order.
    pub fn row(&self, node_index: usize) -> &[V] {
        let w = self.properties.len();
        &self.values[node_index * w..(node_index + 1) * w]
    }

    pub(crate) fn row_mut(&mut self, node_index: usize) -> &mut [V] {
        let w = self.properties.len();
        &mut self.values[node_index * w..(node_index + 1) * w]
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [V] {
        &mut self.values
    }

    /// l1 distance over all (node, property) pairs. Panics if the shapes differ.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "state shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.distance(*b))
            .sum()
    }
}

impl<V: Truth + Serialize> Serialize for GlobalState<V> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Row<'a, V>(&'a [String], &'a [V]);
        impl<V: Serialize> Serialize for Row<'_, V> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0.iter().zip(self.1) {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(self.nodes.len()))?;
        for (i, node) in self.nodes.iter().enumerate() {
            map.serialize_entry(node, &Row(&self.properties, self.row(i)))?;
        }
        map.end()
    }
}
