//! Kleene iteration of the fuzzy analysis functional.
//!
//! One step maps a global state `S` to `F(S)`: seeded nodes keep their seed,
//! every other node `v` becomes the collector over incoming edges `<w, v>`
//! of `[[v]](S(w))`. Updates are simultaneous: every read is from `S`.
//! Iteration stops once the l1 distance between consecutive states drops
//! below `epsilon`, or after `max_iters` steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowgraph::{FlowGraph, GlobalState, Violation, INPUT_VAR};
use crate::formula::{FormulaError, Operand, Program};
use crate::fuzzy::{LogicFamily, Truth, TruthInterval, TruthValue};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("graph failed validation: {}", summarize(.0))]
    InvalidGraph(Vec<Violation>),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("node `{node}`: `{name}` is an interval but the solve is scalar")]
    ModeMismatch { node: String, name: String },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("state does not match the graph's nodes and properties")]
    StateShape,
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// How values arriving over several incoming edges are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collector {
    /// `sum alpha_e * value_e`.
    #[default]
    WeightedAverage,
    /// T-norm over all incoming values; weights are ignored. This is the
    /// classical must-analysis meet.
    Meet,
}

/// Value of every non-seeded node before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    #[default]
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Scalar,
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub mode: Mode,
    pub family: LogicFamily,
    pub collector: Collector,
    pub init: InitialState,
    /// Snap every value to the grid `{ i / 2^q }` after each step.
    pub quantize: Option<u32>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            mode: Mode::Scalar,
            family: LogicFamily::MinMax,
            collector: Collector::WeightedAverage,
            init: InitialState::Bottom,
            quantize: None,
        }
    }
}

impl SolverConfig {
    pub fn new(family: LogicFamily) -> Self {
        SolverConfig {
            family,
            ..SolverConfig::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_collector(mut self, collector: Collector) -> Self {
        self.collector = collector;
        self
    }

    pub fn with_init(mut self, init: InitialState) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(SolverError::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.quantize == Some(0) {
            return Err(SolverError::InvalidConfig("quantize grid exponent must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "V: Truth + Serialize"))]
pub struct SolveReport<V> {
    #[serde(rename = "final")]
    pub final_state: GlobalState<V>,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    pub converged: bool,
}

enum NodeKind<V> {
    Seeded(Vec<V>),
    Collect {
        incoming: Vec<(usize, f64)>,
        programs: Vec<Program<V>>,
    },
}

/// A validated graph with every transfer resolved against predecessor slots.
pub struct CompiledGraph<V> {
    nodes: Vec<String>,
    properties: Vec<String>,
    kinds: Vec<NodeKind<V>>,
}

impl<V: Truth> CompiledGraph<V> {
    pub fn new(g: &FlowGraph) -> Result<Self, SolverError> {
        let report = g.validate();
        if !report.is_ok() {
            return Err(SolverError::InvalidGraph(report.errors().cloned().collect()));
        }
        let properties = g.properties();
        let mut kinds = Vec::with_capacity(g.nodes.len());
        for node in &g.nodes {
            if g.is_seeded(&node.id) {
                let seed = &g.seed[&node.id];
                let row = properties
                    .iter()
                    .map(|p| {
                        seed[p].to_truth::<V>().ok_or_else(|| SolverError::ModeMismatch {
                            node: node.id.clone(),
                            name: p.clone(),
                        })
                    })
                    .collect::<Result<Vec<V>, _>>()?;
                kinds.push(NodeKind::Seeded(row));
                continue;
            }
            let incoming: Vec<(usize, f64)> = g
                .incoming(&node.id)
                .map(|e| (g.node_index(&e.from).expect("validated"), e.alpha.get()))
                .collect();
            let total: f64 = incoming.iter().map(|(_, w)| w).sum();
            let incoming = incoming.into_iter().map(|(i, w)| (i, w / total)).collect();

            let mut programs = Vec::with_capacity(properties.len());
            for (pi, p) in properties.iter().enumerate() {
                let mismatch = std::cell::RefCell::new(None);
                let resolve = |name: &str| -> Option<Operand<V>> {
                    if let Some(c) = node.constants.get(name) {
                        return match c.to_truth::<V>() {
                            Some(v) => Some(Operand::Const(v)),
                            None => {
                                *mismatch.borrow_mut() = Some(name.to_string());
                                Some(Operand::Const(V::zero()))
                            }
                        };
                    }
                    if name == INPUT_VAR {
                        return Some(Operand::Slot(pi));
                    }
                    properties.binary_search_by(|x| x.as_str().cmp(name)).ok().map(Operand::Slot)
                };
                let prog = node.transfer[p].compile(&resolve)?;
                if let Some(name) = mismatch.into_inner() {
                    return Err(SolverError::ModeMismatch {
                        node: node.id.clone(),
                        name,
                    });
                }
                programs.push(prog);
            }
            kinds.push(NodeKind::Collect { incoming, programs });
        }
        Ok(CompiledGraph {
            nodes: g.nodes.iter().map(|n| n.id.clone()).collect(),
            properties,
            kinds,
        })
    }

    pub fn initial_state(&self, init: InitialState) -> GlobalState<V> {
        let fill = match init {
            InitialState::Bottom => V::zero(),
            InitialState::Top => V::one(),
        };
        let mut s = GlobalState::filled(self.nodes.clone(), self.properties.clone(), fill);
        for (i, kind) in self.kinds.iter().enumerate() {
            if let NodeKind::Seeded(row) = kind {
                s.row_mut(i).copy_from_slice(row);
            }
        }
        s
    }

    fn check_shape(&self, s: &GlobalState<V>) -> Result<(), SolverError> {
        if s.nodes() == self.nodes.as_slice() && s.properties() == self.properties.as_slice() {
            Ok(())
        } else {
            Err(SolverError::StateShape)
        }
    }

    /// One application of the analysis functional, writing into `out`.
    pub fn step_into(&self, s: &GlobalState<V>, family: LogicFamily, collector: Collector, out: &mut GlobalState<V>) {
        for (i, kind) in self.kinds.iter().enumerate() {
            match kind {
                NodeKind::Seeded(row) => out.row_mut(i).copy_from_slice(row),
                NodeKind::Collect { incoming, programs } => {
                    for (pi, prog) in programs.iter().enumerate() {
                        let contributions = incoming.iter().map(|&(w, alpha)| (alpha, prog.eval(family, s.row(w))));
                        let merged = match collector {
                            Collector::WeightedAverage => V::weighted_sum(contributions),
                            Collector::Meet => contributions
                                .map(|(_, v)| v)
                                .reduce(|a, b| a.and(b, family))
                                .expect("collecting node has an incoming edge"),
                        };
                        out.row_mut(i)[pi] = merged;
                    }
                }
            }
        }
    }

    pub fn step(&self, s: &GlobalState<V>, family: LogicFamily, collector: Collector) -> Result<GlobalState<V>, SolverError> {
        self.check_shape(s)?;
        let mut out = s.clone();
        self.step_into(s, family, collector, &mut out);
        Ok(out)
    }

    pub fn solve_from(&self, initial: GlobalState<V>, cfg: &SolverConfig) -> Result<SolveReport<V>, SolverError> {
        cfg.validate()?;
        self.check_shape(&initial)?;
        let mut current = initial;
        let mut next = current.clone();
        let mut trace = Vec::new();
        let mut converged = false;
        while trace.len() < cfg.max_iters {
            self.step_into(&current, cfg.family, cfg.collector, &mut next);
            if let Some(q) = cfg.quantize {
                for v in next.values_mut() {
                    *v = v.quantize(q);
                }
            }
            let residual = next.distance(&current);
            std::mem::swap(&mut current, &mut next);
            trace.push(residual);
            if residual < cfg.epsilon {
                converged = true;
                break;
            }
        }
        Ok(SolveReport {
            final_state: current,
            iterations: trace.len(),
            residual_trace: trace,
            converged,
        })
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<SolveReport<V>, SolverError> {
        self.solve_from(self.initial_state(cfg.init), cfg)
    }
}

/// One simultaneous update of every non-seeded node.
pub fn step<V: Truth>(g: &FlowGraph, s: &GlobalState<V>, family: LogicFamily) -> Result<GlobalState<V>, SolverError> {
    CompiledGraph::new(g)?.step(s, family, Collector::WeightedAverage)
}

/// Scalar solve. Interval-valued seeds or constants are rejected.
pub fn solve(g: &FlowGraph, cfg: &SolverConfig) -> Result<SolveReport<TruthValue>, SolverError> {
    CompiledGraph::<TruthValue>::new(g)?.solve(cfg)
}

/// Interval solve; scalar inputs are lifted to degenerate intervals.
pub fn solve_interval(g: &FlowGraph, cfg: &SolverConfig) -> Result<SolveReport<TruthInterval>, SolverError> {
    CompiledGraph::<TruthInterval>::new(g)?.solve(cfg)
}

/// Either kind of report, for callers that pick the mode at run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AnyReport {
    Scalar(SolveReport<TruthValue>),
    Interval(SolveReport<TruthInterval>),
}

impl AnyReport {
    pub fn converged(&self) -> bool {
        match self {
            AnyReport::Scalar(r) => r.converged,
            AnyReport::Interval(r) => r.converged,
        }
    }

    pub fn residual_trace(&self) -> &[f64] {
        match self {
            AnyReport::Scalar(r) => &r.residual_trace,
            AnyReport::Interval(r) => &r.residual_trace,
        }
    }
}

/// Dispatches on `cfg.mode`.
pub fn run(g: &FlowGraph, cfg: &SolverConfig) -> Result<AnyReport, SolverError> {
    Ok(match cfg.mode {
        Mode::Scalar => AnyReport::Scalar(solve(g, cfg)?),
        Mode::Interval => AnyReport::Interval(solve_interval(g, cfg)?),
    })
}
