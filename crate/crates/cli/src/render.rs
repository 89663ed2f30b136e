//! Human-readable (`--pretty`) output and CSV side files.

use std::fmt::Write;

use fuzzyflow::anfis::HarnessReport;
use fuzzyflow::lcm::StageDiagnostics;
use fuzzyflow::solver::{AnyReport, SolveReport};
use fuzzyflow::Truth;

fn cell<V: Truth>(v: V) -> String {
    let i = v.to_interval();
    if i.is_degenerate() {
        format!("{:.6}", i.lo().get())
    } else {
        format!("[{:.6}, {:.6}]", i.lo().get(), i.hi().get())
    }
}

fn state_table<V: Truth>(r: &SolveReport<V>) -> String {
    let s = &r.final_state;
    let width = s.nodes().iter().map(String::len).max().unwrap_or(4).max(4);
    let cells: Vec<Vec<String>> = (0..s.nodes().len()).map(|i| s.row(i).iter().map(|v| cell(*v)).collect()).collect();
    let col = cells.iter().flatten().map(String::len).chain(s.properties().iter().map(String::len)).max().unwrap_or(8);
    let mut out = format!("{:width$}", "node");
    for p in s.properties() {
        let _ = write!(out, "  {p:>col$}");
    }
    out.push('\n');
    for (n, row) in s.nodes().iter().zip(&cells) {
        let _ = write!(out, "{n:width$}");
        for c in row {
            let _ = write!(out, "  {c:>col$}");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "iterations: {}, converged: {}, last residual: {:.3e}",
        r.iterations,
        r.converged,
        r.residual_trace.last().copied().unwrap_or(0.0)
    );
    out
}

pub fn solve_report(r: &AnyReport) -> String {
    match r {
        AnyReport::Scalar(r) => state_table(r),
        AnyReport::Interval(r) => state_table(r),
    }
}

pub fn diagnostics_csv(d: &[StageDiagnostics]) -> String {
    let mut out = String::from("stage,expr,iterations,residual,converged\n");
    for s in d {
        // Expression names may contain commas; quote them.
        let _ = writeln!(
            out,
            "{},\"{}\",{},{},{}",
            s.stage,
            s.expr.replace('"', "\"\""),
            s.iterations,
            s.residual,
            s.converged
        );
    }
    out
}

pub fn train_report(r: &HarnessReport) -> String {
    let mut out = String::from("period  error_rate  refit\n");
    for (i, (rate, refit)) in r.error_rates.iter().zip(&r.refits).enumerate() {
        let _ = writeln!(out, "{:>6}  {:>10.3}  {}", i + 1, rate, if *refit { "yes" } else { "no" });
    }
    out
}
