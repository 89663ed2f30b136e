//! Optional JSON config file shared by all subcommands. Every key is
//! optional and command-line flags override it; unknown keys are rejected.

use std::path::Path;

use anyhow::{Context, Result};
use fuzzyflow::solver::{Collector, InitialState};
use fuzzyflow::{LogicFamily, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub logic: Option<LogicFamily>,
    /// `scalar`/`interval` for `solve`, `crisp`/`fuzzy`/`interval` for `lcm`.
    pub mode: Option<String>,
    pub collector: Option<Collector>,
    pub init: Option<InitialState>,
    pub quantize: Option<u32>,
    pub jobs: Option<usize>,
    /// Presentation threshold for `lcm --pretty`.
    pub threshold: Option<f64>,
    pub mu: Option<f64>,
    pub retrain_error_threshold: Option<f64>,
    pub period: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let src = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&src).with_context(|| format!("{}: invalid config", path.display()))
    }

    /// Solver settings named in the file, defaults elsewhere. The family and
    /// mode are resolved by the caller.
    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        if let Some(c) = self.collector {
            cfg.collector = c;
        }
        if let Some(i) = self.init {
            cfg.init = i;
        }
        cfg.quantize = self.quantize;
        cfg
    }
}
