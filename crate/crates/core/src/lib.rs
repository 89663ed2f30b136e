//! Fuzzy data-flow analysis.
//!
//! Analyses compute degrees of truth in `[0, 1]` (or sub-intervals of it)
//! instead of booleans. Transfer functions are formulas in a fuzzy logic,
//! and control-flow joins take an alpha-weighted average over incoming
//! edges. With a 1-Lipschitz logic every transfer is non-expansive, so
//! Kleene iteration settles to within any `epsilon` on graphs where the
//! seeded start influences every cycle.
//!
//! Modules:
//! - [`fuzzy`]: truth values, intervals, T-/S-/C-norm families.
//! - [`formula`]: transfer-function ASTs, parser and evaluation.
//! - [`flowgraph`]: weighted flow graphs, validation and the JSON format.
//! - [`solver`]: epsilon-bounded Jacobi iteration, scalar and interval.
//! - [`lcm`]: lazy code motion in crisp, fuzzy and interval modes.
//! - [`anfis`]: a first-order Takagi-Sugeno classifier with LMS/LS
//!   training and the periodic refinement harness.

pub mod anfis;
pub mod flowgraph;
pub mod formula;
pub mod fuzzy;
pub mod lcm;
pub mod solver;

pub use flowgraph::{Edge, FlowGraph, GlobalState, Node, ValidationReport, Value, Violation};
pub use formula::{Formula, FormulaError, IntervalValuation, Valuation};
pub use fuzzy::{LogicFamily, Truth, TruthInterval, TruthValue};
pub use solver::{solve, solve_interval, SolveReport, SolverConfig, SolverError};
