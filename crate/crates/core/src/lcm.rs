//! Lazy code motion (Knoop–Rüthing–Steffen) as four staged analyses.
//!
//! Every stage runs per expression on top of the generic solver:
//!
//! 1. availability (forward) and anticipability (backward, on the reversed
//!    graph with its own edge weights);
//! 2. `Earliest(i,j)`, evaluated pointwise on each edge;
//! 3. `Later`, a forward fixed point over the edge-split graph;
//! 4. `Insert(i,j)` per edge and `Delete(k)` per block, pointwise.
//!
//! Three modes share the code path. *Crisp* uses the min-max logic, a
//! meet collector and greatest fixed points, i.e. the textbook bit-vector
//! analysis. *Fuzzy* replaces the meet with the alpha-weighted average.
//! *Interval* is fuzzy mode lifted to sub-intervals of `[0, 1]`.
//!
//! Naming follows the analysis state: `an_out(b)` is the value the backward
//! transfer of `b` produces (anticipated at the entry of `b`), and
//! `an_in(b)` merges `an_out` over the successors of `b` (anticipated at
//! its exit). Likewise `later_in(b)` merges `later_out` over the edges
//! entering `b`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::flowgraph::{FlowGraph, Node, Value, INPUT_VAR, WEIGHT_SUM_TOLERANCE};
use crate::formula::Formula;
use crate::fuzzy::{LogicFamily, Truth, TruthInterval, TruthValue};
use crate::solver::{Collector, CompiledGraph, InitialState, SolverConfig, SolverError};

const PROP: &str = "v";

#[derive(Debug, Error)]
pub enum LcmError {
    /// The message already carries serde's line and column, so the
    /// JSON error is not chained as a source.
    #[error("malformed problem: {0}")]
    Json(serde_json::Error),
    #[error("problem has no blocks")]
    NoBlocks,
    #[error("duplicate block `{0}`")]
    DuplicateBlock(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("duplicate edge {from}->{to}")]
    DuplicateEdge { from: String, to: String },
    #[error("entry block `{0}` has predecessors")]
    EntryHasPredecessors(String),
    #[error("exit block `{0}` has successors")]
    ExitHasSuccessors(String),
    #[error("block `{0}` has no predecessor")]
    NoPredecessor(String),
    #[error("block `{0}` has no successor")]
    NoSuccessor(String),
    #[error("{direction} weights at `{block}` sum to {sum}, expected 1")]
    WeightSum {
        direction: &'static str,
        block: String,
        sum: f64,
    },
    #[error("edge {from}->{to}: weight {value} outside [0, 1]")]
    WeightRange { from: String, to: String, value: f64 },
    #[error("{matrix} has no row for block `{block}`")]
    MissingRow { matrix: &'static str, block: String },
    #[error("row width {found} does not match {expected} expressions")]
    WidthMismatch { expected: usize, found: usize },
    #[error("join needs at least one row")]
    EmptyJoin,
    #[error("{matrix}[{block}][{expr}] is not 0 or 1, required in crisp mode")]
    NonCrisp {
        matrix: &'static str,
        block: String,
        expr: String,
    },
    #[error("{matrix}[{block}][{expr}] is an interval; use interval mode")]
    IntervalInScalarMode {
        matrix: &'static str,
        block: String,
        expr: String,
    },
    #[error("unknown mode `{0}` (expected crisp, fuzzy or interval)")]
    UnknownMode(String),
    #[error("{stage} did not converge for `{expr}` after {iterations} iterations")]
    NotConverged {
        stage: Stage,
        expr: String,
        iterations: usize,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl From<serde_json::Error> for LcmError {
    fn from(e: serde_json::Error) -> Self {
        LcmError::Json(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcmMode {
    Crisp,
    #[default]
    Fuzzy,
    Interval,
}

impl fmt::Display for LcmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LcmMode::Crisp => "crisp",
            LcmMode::Fuzzy => "fuzzy",
            LcmMode::Interval => "interval",
        })
    }
}

impl FromStr for LcmMode {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "crisp" => Ok(LcmMode::Crisp),
            "fuzzy" => Ok(LcmMode::Fuzzy),
            "interval" => Ok(LcmMode::Interval),
            _ => Err(LcmError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Availability,
    Anticipability,
    Later,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Availability => "availability",
            Stage::Anticipability => "anticipability",
            Stage::Later => "later",
        })
    }
}

/// A control-flow edge. Missing weights default to a uniform split: over
/// the predecessors of `to` for `alpha`, over the successors of `from` for
/// `backward_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcmEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_alpha: Option<f64>,
}

impl LcmEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        LcmEdge {
            from: from.into(),
            to: to.into(),
            alpha: None,
            backward_alpha: None,
        }
    }

    pub fn with_weights(mut self, alpha: f64, backward_alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self.backward_alpha = Some(backward_alpha);
        self
    }

    pub fn label(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RowSpec {
    Plain(Vec<Value>),
    Join {
        join: Vec<Vec<Value>>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(default)]
    logic: LogicFamily,
    #[serde(default)]
    mode: LcmMode,
    entry: String,
    exit: String,
    blocks: Vec<String>,
    edges: Vec<LcmEdge>,
    exprs: Vec<String>,
    dee: BTreeMap<String, RowSpec>,
    uee: BTreeMap<String, RowSpec>,
    kill: BTreeMap<String, RowSpec>,
}

/// Predicate matrices are indexed `[block][expr]` in the order of
/// `blocks` and `exprs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcmProblem {
    pub logic: LogicFamily,
    pub mode: LcmMode,
    pub entry: String,
    pub exit: String,
    pub blocks: Vec<String>,
    pub edges: Vec<LcmEdge>,
    pub exprs: Vec<String>,
    pub dee: Vec<Vec<Value>>,
    pub uee: Vec<Vec<Value>>,
    pub kill: Vec<Vec<Value>>,
}

/// Elementwise join of the predicate rows of several possible call
/// targets. Nothing is known about which target runs, so each entry
/// becomes the smallest interval enclosing all candidates: agreeing entries
/// stay degenerate, a `0` against a `1` becomes `[0, 1]`.
pub fn join_targets(rows: &[Vec<Value>]) -> Result<Vec<Value>, LcmError> {
    let first = rows.first().ok_or(LcmError::EmptyJoin)?;
    for r in rows {
        if r.len() != first.len() {
            return Err(LcmError::WidthMismatch {
                expected: first.len(),
                found: r.len(),
            });
        }
    }
    Ok((0..first.len())
        .map(|k| {
            let (lo, hi) = rows.iter().map(|r| r[k].as_interval()).fold((1.0f64, 0.0f64), |(lo, hi), i| {
                (lo.min(i.lo().get()), hi.max(i.hi().get()))
            });
            let hull = TruthInterval::from_bounds(lo, hi).expect("hull of valid intervals");
            if hull.is_degenerate() {
                Value::Scalar(hull.lo())
            } else {
                Value::Interval(hull)
            }
        })
        .collect())
}

impl LcmProblem {
    pub fn from_json(src: &str) -> Result<Self, LcmError> {
        let raw: RawProblem = serde_json::from_str(src)?;
        let resolve = |matrix: &'static str, rows: BTreeMap<String, RowSpec>| -> Result<Vec<Vec<Value>>, LcmError> {
            let mut rows: HashMap<String, RowSpec> = rows.into_iter().collect();
            for name in rows.keys() {
                if !raw.blocks.contains(name) {
                    return Err(LcmError::UnknownBlock(name.clone()));
                }
            }
            raw.blocks
                .iter()
                .map(|b| match rows.remove(b) {
                    Some(RowSpec::Plain(r)) => Ok(r),
                    Some(RowSpec::Join { join }) => join_targets(&join),
                    None => Err(LcmError::MissingRow {
                        matrix,
                        block: b.clone(),
                    }),
                })
                .collect()
        };
        let dee = resolve("dee", raw.dee)?;
        let uee = resolve("uee", raw.uee)?;
        let kill = resolve("kill", raw.kill)?;
        let problem = LcmProblem {
            logic: raw.logic,
            mode: raw.mode,
            entry: raw.entry,
            exit: raw.exit,
            blocks: raw.blocks,
            edges: raw.edges,
            exprs: raw.exprs,
            dee,
            uee,
            kill,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b == id)
    }

    pub fn expr_index(&self, name: &str) -> Option<usize> {
        self.exprs.iter().position(|e| e == name)
    }

    pub fn edge_index(&self, from: &str, to: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }

    /// Forward weight of every edge, defaults filled in.
    pub fn forward_weights(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| {
                e.alpha.unwrap_or_else(|| {
                    1.0 / self.edges.iter().filter(|x| x.to == e.to).count() as f64
                })
            })
            .collect()
    }

    /// Backward weight of every edge, defaults filled in.
    pub fn backward_weights(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| {
                e.backward_alpha.unwrap_or_else(|| {
                    1.0 / self.edges.iter().filter(|x| x.from == e.from).count() as f64
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), LcmError> {
        if self.blocks.is_empty() {
            return Err(LcmError::NoBlocks);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if self.blocks[..i].contains(b) {
                return Err(LcmError::DuplicateBlock(b.clone()));
            }
        }
        for id in [&self.entry, &self.exit] {
            if self.block_index(id).is_none() {
                return Err(LcmError::UnknownBlock(id.clone()));
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            for end in [&e.from, &e.to] {
                if self.block_index(end).is_none() {
                    return Err(LcmError::UnknownBlock(end.clone()));
                }
            }
            if self.edges[..k].iter().any(|x| x.from == e.from && x.to == e.to) {
                return Err(LcmError::DuplicateEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
        }
        for b in &self.blocks {
            let has_pred = self.edges.iter().any(|e| &e.to == b);
            let has_succ = self.edges.iter().any(|e| &e.from == b);
            if *b == self.entry && has_pred {
                return Err(LcmError::EntryHasPredecessors(b.clone()));
            }
            if *b == self.exit && has_succ {
                return Err(LcmError::ExitHasSuccessors(b.clone()));
            }
            if *b != self.entry && !has_pred {
                return Err(LcmError::NoPredecessor(b.clone()));
            }
            if *b != self.exit && !has_succ {
                return Err(LcmError::NoSuccessor(b.clone()));
            }
        }
        self.check_weights("forward", &self.forward_weights(), |e| &e.to)?;
        self.check_weights("backward", &self.backward_weights(), |e| &e.from)?;
        for rows in [&self.dee, &self.uee, &self.kill] {
            if rows.len() != self.blocks.len() {
                return Err(LcmError::WidthMismatch {
                    expected: self.blocks.len(),
                    found: rows.len(),
                });
            }
            for r in rows {
                if r.len() != self.exprs.len() {
                    return Err(LcmError::WidthMismatch {
                        expected: self.exprs.len(),
                        found: r.len(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_weights(
        &self,
        direction: &'static str,
        weights: &[f64],
        key: impl Fn(&LcmEdge) -> &String,
    ) -> Result<(), LcmError> {
        let mut sums: BTreeMap<&String, f64> = BTreeMap::new();
        for (e, &w) in self.edges.iter().zip(weights) {
            if !(0.0..=1.0).contains(&w) {
                return Err(LcmError::WeightRange {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    value: w,
                });
            }
            *sums.entry(key(e)).or_default() += w;
        }
        for (block, sum) in sums {
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(LcmError::WeightSum {
                    direction,
                    block: block.clone(),
                    sum,
                });
            }
        }
        Ok(())
    }

    /// Checks that the predicate values fit `mode`.
    pub fn check_mode(&self, mode: LcmMode) -> Result<(), LcmError> {
        for (matrix, rows) in [("dee", &self.dee), ("uee", &self.uee), ("kill", &self.kill)] {
            for (b, row) in rows.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let bad = match mode {
                        LcmMode::Crisp if !v.is_crisp() => Some(true),
                        LcmMode::Fuzzy if !v.as_interval().is_degenerate() => Some(false),
                        _ => None,
                    };
                    if let Some(crisp) = bad {
                        let (block, expr) = (self.blocks[b].clone(), self.exprs[k].clone());
                        return Err(if crisp {
                            LcmError::NonCrisp { matrix, block, expr }
                        } else {
                            LcmError::IntervalInScalarMode { matrix, block, expr }
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl Serialize for LcmProblem {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            logic: LogicFamily,
            mode: LcmMode,
            entry: &'a str,
            exit: &'a str,
            blocks: &'a [String],
            edges: &'a [LcmEdge],
            exprs: &'a [String],
            dee: BTreeMap<&'a str, &'a [Value]>,
            uee: BTreeMap<&'a str, &'a [Value]>,
            kill: BTreeMap<&'a str, &'a [Value]>,
        }
        fn rows<'a>(blocks: &'a [String], m: &'a [Vec<Value>]) -> BTreeMap<&'a str, &'a [Value]> {
            blocks.iter().map(String::as_str).zip(m.iter().map(Vec::as_slice)).collect()
        }
        Out {
            logic: self.logic,
            mode: self.mode,
            entry: &self.entry,
            exit: &self.exit,
            blocks: &self.blocks,
            edges: &self.edges,
            exprs: &self.exprs,
            dee: rows(&self.blocks, &self.dee),
            uee: rows(&self.blocks, &self.uee),
            kill: rows(&self.blocks, &self.kill),
        }
        .serialize(serializer)
    }
}

/// A dense matrix with row and column labels, serialized as nested maps in
/// label order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: Vec<String>,
    cols: Vec<String>,
    data: Vec<Value>,
}

impl Matrix {
    fn new(rows: Vec<String>, cols: Vec<String>, fill: Value) -> Self {
        let data = vec![fill; rows.len() * cols.len()];
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> Value {
        self.data[row * self.cols.len() + col]
    }

    pub fn get(&self, row: &str, col: &str) -> Option<Value> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        Some(self.at(r, c))
    }

    pub fn row(&self, row: usize) -> &[Value] {
        let w = self.cols.len();
        &self.data[row * w..(row + 1) * w]
    }

    pub fn values(&self) -> &[Value] {
        &self.data
    }

    fn set(&mut self, row: usize, col: usize, v: Value) {
        let w = self.cols.len();
        self.data[row * w + col] = v;
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Row<'a>(&'a [String], &'a [Value]);
        impl Serialize for Row<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut m = serializer.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0.iter().zip(self.1) {
                    m.serialize_entry(k, v)?;
                }
                m.end()
            }
        }
        let mut m = serializer.serialize_map(Some(self.rows.len()))?;
        for (i, r) in self.rows.iter().enumerate() {
            m.serialize_entry(r, &Row(&self.cols, self.row(i)))?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageDiagnostics {
    pub stage: Stage,
    pub expr: String,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcmResult {
    pub mode: LcmMode,
    pub logic: LogicFamily,
    pub av_out: Matrix,
    pub an_out: Matrix,
    pub an_in: Matrix,
    pub earliest: Matrix,
    pub later_in: Matrix,
    pub later_out: Matrix,
    pub insert: Matrix,
    pub delete: Matrix,
    pub diagnostics: Vec<StageDiagnostics>,
}

impl LcmResult {
    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }

    /// The first stage that ran out of iterations, as an error.
    pub fn ensure_converged(&self) -> Result<&Self, LcmError> {
        match self.diagnostics.iter().find(|d| !d.converged) {
            None => Ok(self),
            Some(d) => Err(LcmError::NotConverged {
                stage: d.stage,
                expr: d.expr.clone(),
                iterations: d.iterations,
            }),
        }
    }

    /// Insert and Delete as fixed-width text with 3 decimals. Entries at or
    /// above `threshold` (lower bound, for intervals) are starred.
    pub fn render_table(&self, threshold: f64) -> String {
        let cell = |v: Value| -> String {
            let i = v.as_interval();
            let mark = if i.lo().get() >= threshold { "*" } else { " " };
            match (self.mode, v) {
                (LcmMode::Interval, _) => format!("[{:.3}, {:.3}]{mark}", i.lo().get(), i.hi().get()),
                _ => format!("{:.3}{mark}", i.lo().get()),
            }
        };
        let mut out = String::new();
        for (title, m) in [("Insert", &self.insert), ("Delete", &self.delete)] {
            let label_w = m.rows().iter().map(String::len).max().unwrap_or(0).max(title.len());
            let cells: Vec<Vec<String>> = (0..m.rows().len())
                .map(|r| m.row(r).iter().map(|&v| cell(v)).collect())
                .collect();
            let col_w: Vec<usize> = (0..m.cols().len())
                .map(|c| {
                    cells
                        .iter()
                        .map(|row| row[c].len())
                        .chain(std::iter::once(m.cols()[c].len()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            out.push_str(&format!("{title:<label_w$}"));
            for (c, name) in m.cols().iter().enumerate() {
                out.push_str(&format!("  {name:>w$}", w = col_w[c]));
            }
            out.push('\n');
            for (r, row) in cells.iter().enumerate() {
                out.push_str(&format!("{:<label_w$}", m.rows()[r]));
                for (c, s) in row.iter().enumerate() {
                    out.push_str(&format!("  {s:>w$}", w = col_w[c]));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    family: LogicFamily,
    collector: Collector,
    cfg: SolverConfig,
}

impl Params {
    fn new(mode: LcmMode, family: LogicFamily, cfg: &SolverConfig) -> Self {
        let (family, collector, init) = match mode {
            LcmMode::Crisp => (LogicFamily::MinMax, Collector::Meet, InitialState::Top),
            _ => (family, Collector::WeightedAverage, InitialState::Bottom),
        };
        Params {
            family,
            collector,
            cfg: SolverConfig {
                family,
                collector,
                init,
                ..*cfg
            },
        }
    }

    fn merge<V: Truth>(&self, terms: impl IntoIterator<Item = (f64, V)>) -> V {
        match self.collector {
            Collector::WeightedAverage => V::weighted_sum(terms),
            Collector::Meet => terms
                .into_iter()
                .map(|(_, v)| v)
                .reduce(|a, b| a.and(b, self.family))
                .unwrap_or_else(V::zero),
        }
    }
}

fn value_of<V: Truth>(v: V, mode: LcmMode) -> Value {
    let i = v.to_interval();
    match mode {
        LcmMode::Interval => Value::Interval(i),
        _ => Value::Scalar(i.lo()),
    }
}

fn truth<V: Truth>(v: Value) -> V {
    v.to_truth::<V>().expect("mode checked before solving")
}

/// `a | (In & !b)`
fn gen_kill(gen: &str, kill: &str) -> Formula {
    Formula::or(
        Formula::var(gen),
        Formula::and(Formula::var(INPUT_VAR), Formula::not(Formula::var(kill))),
    )
}

fn solve_stage<V: Truth>(
    g: &FlowGraph,
    params: &Params,
    stage: Stage,
    expr: &str,
) -> Result<(Vec<V>, StageDiagnostics), LcmError> {
    let report = CompiledGraph::<V>::new(g)?.solve(&params.cfg)?;
    let values = report.final_state.values().to_vec();
    let diag = StageDiagnostics {
        stage,
        expr: expr.to_string(),
        iterations: report.iterations,
        residual: report.residual_trace.last().copied().unwrap_or(0.0),
        converged: report.converged,
    };
    Ok((values, diag))
}

struct ExprOutcome<V> {
    av_out: Vec<V>,
    an_out: Vec<V>,
    an_in: Vec<V>,
    earliest: Vec<V>,
    later_in: Vec<V>,
    later_out: Vec<V>,
    insert: Vec<V>,
    delete: Vec<V>,
    diagnostics: Vec<StageDiagnostics>,
}

fn availability_expr<V: Truth>(
    p: &LcmProblem,
    e: usize,
    params: &Params,
) -> Result<(Vec<V>, StageDiagnostics), LcmError> {
    let mut g = FlowGraph::new(p.entry.clone()).with_logic(params.family);
    let transfer = gen_kill("dee", "kill");
    for (b, id) in p.blocks.iter().enumerate() {
        g.add_node(
            Node::new(id.clone())
                .with_transfer(PROP, transfer.clone())
                .with_constant("dee", p.dee[b][e])
                .with_constant("kill", p.kill[b][e]),
        );
    }
    for (edge, w) in p.edges.iter().zip(p.forward_weights()) {
        g.add_edge(&edge.from, &edge.to, w);
    }
    let entry = p.block_index(&p.entry).expect("validated");
    g.set_seed(&p.entry, PROP, p.dee[entry][e]);
    solve_stage(&g, params, Stage::Availability, &p.exprs[e])
}

/// Returns `(an_out, an_in, diagnostics)`.
fn anticipability_expr<V: Truth>(
    p: &LcmProblem,
    e: usize,
    params: &Params,
) -> Result<(Vec<V>, Vec<V>, StageDiagnostics), LcmError> {
    let mut g = FlowGraph::new(p.exit.clone()).with_logic(params.family);
    let transfer = gen_kill("uee", "kill");
    for (b, id) in p.blocks.iter().enumerate() {
        g.add_node(
            Node::new(id.clone())
                .with_transfer(PROP, transfer.clone())
                .with_constant("uee", p.uee[b][e])
                .with_constant("kill", p.kill[b][e]),
        );
    }
    let back = p.backward_weights();
    for (edge, &w) in p.edges.iter().zip(&back) {
        g.add_edge(&edge.to, &edge.from, w);
    }
    let exit = p.block_index(&p.exit).expect("validated");
    g.set_seed(&p.exit, PROP, p.uee[exit][e]);
    let (an_out, diag) = solve_stage::<V>(&g, params, Stage::Anticipability, &p.exprs[e])?;
    let an_in = p
        .blocks
        .iter()
        .map(|b| {
            params.merge(
                p.edges
                    .iter()
                    .zip(&back)
                    .filter(|(edge, _)| &edge.from == b)
                    .map(|(edge, &w)| (w, an_out[p.block_index(&edge.to).expect("validated")])),
            )
        })
        .collect();
    Ok((an_out, an_in, diag))
}

fn earliest_expr<V: Truth>(
    p: &LcmProblem,
    e: usize,
    av_out: &[V],
    an_out: &[V],
    an_in: &[V],
    family: LogicFamily,
) -> Vec<V> {
    p.edges
        .iter()
        .map(|edge| {
            let i = p.block_index(&edge.from).expect("validated");
            let j = p.block_index(&edge.to).expect("validated");
            let base = an_out[j].and(av_out[i].not(), family);
            if edge.from == p.entry {
                base
            } else {
                let kill: V = truth(p.kill[i][e]);
                base.and(kill.or(an_in[i].not(), family), family)
            }
        })
        .collect()
}

fn edge_node_ids(p: &LcmProblem) -> Vec<String> {
    let mut taken: Vec<String> = p.blocks.clone();
    p.edges
        .iter()
        .map(|edge| {
            let mut id = edge.label();
            while taken.contains(&id) {
                id.push('\'');
            }
            taken.push(id.clone());
            id
        })
        .collect()
}

/// Returns `(later_in, later_out, diagnostics)`. The graph splits every
/// edge `(i, j)` into a node carrying `LaterOut(i, j)`; block nodes merge
/// their incoming edge nodes, which yields `LaterIn`.
fn later_expr<V: Truth>(
    p: &LcmProblem,
    e: usize,
    earliest: &[V],
    params: &Params,
) -> Result<(Vec<V>, Vec<V>, StageDiagnostics), LcmError> {
    let mut g = FlowGraph::new(p.entry.clone()).with_logic(params.family);
    for id in &p.blocks {
        g.add_node(Node::new(id.clone()).with_transfer(PROP, Formula::var(INPUT_VAR)));
    }
    let ids = edge_node_ids(p);
    let transfer = gen_kill("earliest", "uee");
    for ((edge, id), &early) in p.edges.iter().zip(&ids).zip(earliest) {
        let i = p.block_index(&edge.from).expect("validated");
        g.add_node(
            Node::new(id.clone())
                .with_transfer(PROP, transfer.clone())
                .with_constant("earliest", value_of(early, LcmMode::Interval))
                .with_constant("uee", p.uee[i][e]),
        );
    }
    for ((edge, id), w) in p.edges.iter().zip(&ids).zip(p.forward_weights()) {
        g.add_edge(&edge.from, id, 1.0);
        g.add_edge(id, &edge.to, w);
    }
    g.set_seed(&p.entry, PROP, TruthValue::FALSE);
    let (values, diag) = solve_stage::<V>(&g, params, Stage::Later, &p.exprs[e])?;
    let n = p.blocks.len();
    Ok((values[..n].to_vec(), values[n..].to_vec(), diag))
}

fn run_expr<V: Truth>(p: &LcmProblem, e: usize, params: &Params) -> Result<ExprOutcome<V>, LcmError> {
    let fam = params.family;
    let (av_out, d1) = availability_expr::<V>(p, e, params)?;
    let (an_out, an_in, d2) = anticipability_expr::<V>(p, e, params)?;
    let earliest = earliest_expr(p, e, &av_out, &an_out, &an_in, fam);
    let (later_in, later_out, d3) = later_expr(p, e, &earliest, params)?;
    let insert = p
        .edges
        .iter()
        .zip(&later_out)
        .map(|(edge, &lo)| lo.and(later_in[p.block_index(&edge.to).expect("validated")].not(), fam))
        .collect();
    let delete = p
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            if *b == p.entry {
                V::zero()
            } else {
                truth::<V>(p.uee[k][e]).and(later_in[k].not(), fam)
            }
        })
        .collect();
    Ok(ExprOutcome {
        av_out,
        an_out,
        an_in,
        earliest,
        later_in,
        later_out,
        insert,
        delete,
        diagnostics: vec![d1, d2, d3],
    })
}

fn run_all<V: Truth>(p: &LcmProblem, params: &Params, jobs: usize) -> Result<Vec<ExprOutcome<V>>, LcmError> {
    let work = |e: usize| run_expr::<V>(p, e, params);
    if jobs <= 1 || p.exprs.len() <= 1 {
        return (0..p.exprs.len()).map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|err| LcmError::Pool(err.to_string()))?;
    // `collect` keeps expression order, so the merge is deterministic.
    pool.install(|| (0..p.exprs.len()).into_par_iter().map(work).collect())
}

fn assemble<V: Truth>(p: &LcmProblem, mode: LcmMode, family: LogicFamily, outcomes: Vec<ExprOutcome<V>>) -> LcmResult {
    let zero = value_of(V::zero(), mode);
    let blocks = || Matrix::new(p.blocks.clone(), p.exprs.clone(), zero);
    let edges = || Matrix::new(p.edges.iter().map(LcmEdge::label).collect(), p.exprs.clone(), zero);
    let mut r = LcmResult {
        mode,
        logic: family,
        av_out: blocks(),
        an_out: blocks(),
        an_in: blocks(),
        earliest: edges(),
        later_in: blocks(),
        later_out: edges(),
        insert: edges(),
        delete: blocks(),
        diagnostics: Vec::new(),
    };
    for (e, o) in outcomes.into_iter().enumerate() {
        let fill = |m: &mut Matrix, vs: &[V]| {
            for (row, &v) in vs.iter().enumerate() {
                m.set(row, e, value_of(v, mode));
            }
        };
        fill(&mut r.av_out, &o.av_out);
        fill(&mut r.an_out, &o.an_out);
        fill(&mut r.an_in, &o.an_in);
        fill(&mut r.earliest, &o.earliest);
        fill(&mut r.later_in, &o.later_in);
        fill(&mut r.later_out, &o.later_out);
        fill(&mut r.insert, &o.insert);
        fill(&mut r.delete, &o.delete);
        r.diagnostics.extend(o.diagnostics);
    }
    r
}

/// Runs all four stages for every expression. Non-convergence is recorded
/// in the diagnostics rather than raised; see [`LcmResult::ensure_converged`].
pub fn lcm_pipeline(
    p: &LcmProblem,
    mode: LcmMode,
    family: LogicFamily,
    cfg: &SolverConfig,
) -> Result<LcmResult, LcmError> {
    lcm_pipeline_with_jobs(p, mode, family, cfg, 1)
}

/// As [`lcm_pipeline`], analysing up to `jobs` expressions in parallel.
pub fn lcm_pipeline_with_jobs(
    p: &LcmProblem,
    mode: LcmMode,
    family: LogicFamily,
    cfg: &SolverConfig,
    jobs: usize,
) -> Result<LcmResult, LcmError> {
    p.validate()?;
    p.check_mode(mode)?;
    cfg.validate()?;
    let params = Params::new(mode, family, cfg);
    Ok(match mode {
        LcmMode::Interval => assemble(p, mode, params.family, run_all::<TruthInterval>(p, &params, jobs)?),
        _ => assemble(p, mode, params.family, run_all::<TruthValue>(p, &params, jobs)?),
    })
}

fn per_expr<F>(p: &LcmProblem, mode: LcmMode, family: LogicFamily, cfg: &SolverConfig, f: F) -> Result<Matrix, LcmError>
where
    F: Fn(&ExprOutcome<TruthInterval>) -> &[TruthInterval],
{
    // Stage-level entry points reuse the full per-expression run; the later
    // stages are cheap next to the fixed points they depend on.
    p.validate()?;
    p.check_mode(mode)?;
    let params = Params::new(mode, family, cfg);
    let outcomes = run_all::<TruthInterval>(p, &params, 1)?;
    let mut m = Matrix::new(p.blocks.clone(), p.exprs.clone(), value_of(TruthInterval::BOTTOM, mode));
    for (e, o) in outcomes.iter().enumerate() {
        for (row, &v) in f(o).iter().enumerate() {
            m.set(row, e, value_of(v, mode));
        }
    }
    Ok(m)
}

/// Step 1, forward: `AvOut` per block and expression.
pub fn availability(p: &LcmProblem, mode: LcmMode, family: LogicFamily, cfg: &SolverConfig) -> Result<Matrix, LcmError> {
    per_expr(p, mode, family, cfg, |o| &o.av_out)
}

/// Step 1, backward: `AnOut` (anticipated at block entry).
pub fn anticipability(p: &LcmProblem, mode: LcmMode, family: LogicFamily, cfg: &SolverConfig) -> Result<Matrix, LcmError> {
    per_expr(p, mode, family, cfg, |o| &o.an_out)
}
