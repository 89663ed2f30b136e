//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use fuzzyflow::flowgraph::Value;
use fuzzyflow::formula::Formula;
use fuzzyflow::fuzzy::{LogicFamily, TruthValue};
use fuzzyflow::lcm::{LcmEdge, LcmMode, LcmProblem};
use rand::Rng;

pub fn example_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn read_example(name: &str) -> String {
    std::fs::read_to_string(example_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn t(x: f64) -> TruthValue {
    TruthValue::new(x).unwrap()
}

fn crisp(b: bool) -> Value {
    Value::Scalar(if b { TruthValue::TRUE } else { TruthValue::FALSE })
}

/// The diffPCM loop with branch probability `p` and trip count `n`.
/// Predicate rows are in expression order 0..=6.
pub fn diffpcm(p: f64, n: f64) -> LcmProblem {
    let row = |s: &str| -> Vec<Value> { s.chars().rev().map(|c| crisp(c == '1')).collect() };
    let blocks: Vec<String> = (0..6).map(|i| format!("B{i}")).collect();
    let edge = |a: &str, b: &str, f: f64, bw: f64| LcmEdge::new(a, b).with_weights(f, bw);
    LcmProblem {
        logic: LogicFamily::MinMax,
        mode: LcmMode::Fuzzy,
        entry: "B0".into(),
        exit: "B5".into(),
        blocks,
        edges: vec![
            edge("B0", "B1", 1.0 / n, 1.0),
            edge("B1", "B2", 1.0, (n - 1.0) / n),
            edge("B1", "B5", 1.0, 1.0 / n),
            edge("B2", "B3", 1.0, 1.0 - p),
            edge("B2", "B4", p, p),
            edge("B3", "B4", 1.0 - p, 1.0),
            edge("B4", "B1", (n - 1.0) / n, 1.0),
        ],
        exprs: ["i<N", "in[i]!=b", "i+1", "A*B", "IncRate(i)", "Transform(b)", "abs(a[i]-b)"]
            .map(String::from)
            .to_vec(),
        dee: ["0000000", "0000001", "0000010", "0000000", "0101000", "0000000"].map(row).to_vec(),
        uee: ["0000000", "0000001", "0000010", "1000000", "0110100", "0000000"].map(row).to_vec(),
        kill: ["1111111", "0000000", "0000000", "1100010", "1011111", "0000000"].map(row).to_vec(),
    }
}

/// A random CFG with entry `B0`, exit `B{n-1}`, every block reachable from
/// the entry and reaching the exit, and random crisp predicates.
pub fn random_crisp_problem<R: Rng>(rng: &mut R, max_blocks: usize, max_exprs: usize) -> LcmProblem {
    let n = rng.gen_range(2..=max_blocks);
    let m = rng.gen_range(1..=max_exprs);
    let exit = n - 1;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let add = |edges: &mut Vec<(usize, usize)>, a: usize, b: usize| {
        if a != exit && b != 0 && !edges.contains(&(a, b)) {
            edges.push((a, b));
        }
    };
    for k in 1..n {
        let from = rng.gen_range(0..k);
        add(&mut edges, from, k);
    }
    for k in 0..exit {
        let to = rng.gen_range(k + 1..n);
        add(&mut edges, k, to);
    }
    for _ in 0..rng.gen_range(0..=n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        add(&mut edges, a, b);
    }
    let blocks: Vec<String> = (0..n).map(|i| format!("B{i}")).collect();
    let mut matrix = |density: f64| -> Vec<Vec<Value>> {
        (0..n).map(|_| (0..m).map(|_| crisp(rng.gen_bool(density))).collect()).collect()
    };
    let dee = matrix(0.35);
    let uee = matrix(0.35);
    let kill = matrix(0.3);
    LcmProblem {
        logic: LogicFamily::MinMax,
        mode: LcmMode::Crisp,
        entry: blocks[0].clone(),
        exit: blocks[exit].clone(),
        edges: edges
            .into_iter()
            .map(|(a, b)| LcmEdge::new(blocks[a].clone(), blocks[b].clone()))
            .collect(),
        blocks,
        exprs: (0..m).map(|k| format!("e{k}")).collect(),
        dee,
        uee,
        kill,
    }
}

/// Textbook KRS over bit masks; bit `k` is expression `k`.
#[derive(Debug, PartialEq, Eq)]
pub struct BitKrs {
    pub av_out: Vec<u64>,
    pub ant_in: Vec<u64>,
    pub ant_out: Vec<u64>,
    pub earliest: Vec<u64>,
    pub later_in: Vec<u64>,
    pub later: Vec<u64>,
    pub insert: Vec<u64>,
    pub delete: Vec<u64>,
}

pub fn bit_krs(p: &LcmProblem) -> BitKrs {
    let n = p.blocks.len();
    let all: u64 = (1u64 << p.exprs.len()) - 1;
    let mask = |rows: &Vec<Vec<Value>>| -> Vec<u64> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| v.as_interval().lo() == TruthValue::TRUE)
                    .fold(0, |acc, (k, _)| acc | (1 << k))
            })
            .collect()
    };
    let (dee, uee, kill) = (mask(&p.dee), mask(&p.uee), mask(&p.kill));
    let idx = |s: &str| p.blocks.iter().position(|b| b == s).unwrap();
    let edges: Vec<(usize, usize)> = p.edges.iter().map(|e| (idx(&e.from), idx(&e.to))).collect();
    let entry = idx(&p.entry);
    let exit = idx(&p.exit);

    let mut av_out = vec![all; n];
    av_out[entry] = dee[entry];
    loop {
        let mut changed = false;
        for b in (0..n).filter(|&b| b != entry) {
            let av_in = edges.iter().filter(|e| e.1 == b).fold(all, |acc, e| acc & av_out[e.0]);
            let v = dee[b] | (av_in & !kill[b]);
            changed |= v != av_out[b];
            av_out[b] = v;
        }
        if !changed {
            break;
        }
    }

    let mut ant_in = vec![all; n];
    let mut ant_out = vec![all; n];
    ant_out[exit] = 0;
    loop {
        let mut changed = false;
        for b in 0..n {
            let out = if b == exit {
                0
            } else {
                edges.iter().filter(|e| e.0 == b).fold(all, |acc, e| acc & ant_in[e.1])
            };
            let v = uee[b] | (out & !kill[b]);
            changed |= v != ant_in[b] || out != ant_out[b];
            ant_in[b] = v;
            ant_out[b] = out;
        }
        if !changed {
            break;
        }
    }

    let earliest: Vec<u64> = edges
        .iter()
        .map(|&(i, j)| {
            let guard = if i == entry { all } else { kill[i] | (!ant_out[i] & all) };
            ant_in[j] & !av_out[i] & guard & all
        })
        .collect();

    let mut later_in = vec![all; n];
    later_in[entry] = 0;
    let mut later = vec![all; edges.len()];
    loop {
        let mut changed = false;
        for (k, &(i, _)) in edges.iter().enumerate() {
            let v = earliest[k] | (later_in[i] & !uee[i]);
            changed |= v != later[k];
            later[k] = v;
        }
        for b in (0..n).filter(|&b| b != entry) {
            let v = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.1 == b)
                .fold(all, |acc, (k, _)| acc & later[k]);
            changed |= v != later_in[b];
            later_in[b] = v;
        }
        if !changed {
            break;
        }
    }
    let insert = edges.iter().enumerate().map(|(k, &(_, j))| later[k] & !later_in[j] & all).collect();
    let delete = (0..n)
        .map(|b| if b == entry { 0 } else { uee[b] & !later_in[b] & all })
        .collect();
    BitKrs {
        av_out,
        ant_in,
        ant_out,
        earliest,
        later_in,
        later,
        insert,
        delete,
    }
}

/// Reads a crisp result matrix back into bit masks, one per row.
pub fn matrix_bits(m: &fuzzyflow::lcm::Matrix) -> Vec<u64> {
    (0..m.rows().len())
        .map(|r| {
            m.row(r).iter().enumerate().fold(0u64, |acc, (k, v)| {
                let i = v.as_interval();
                assert!(v.is_crisp(), "non-crisp value {i:?} in crisp mode");
                if i.lo() == TruthValue::TRUE {
                    acc | (1 << k)
                } else {
                    acc
                }
            })
        })
        .collect()
}

/// Logic families with the 1-Lipschitz guarantee.
pub fn random_frank_family<R: Rng>(rng: &mut R) -> LogicFamily {
    match rng.gen_range(0..4) {
        0 => LogicFamily::MinMax,
        1 => LogicFamily::Product,
        2 => LogicFamily::Lukasiewicz,
        _ => loop {
            let s = 10f64.powf(rng.gen_range(-4.0..4.0));
            if let Ok(f) = LogicFamily::frank(s) {
                break f;
            }
        },
    }
}

/// A random formula in which each of `vars` occurs at most once.
pub fn random_read_once_formula<R: Rng>(rng: &mut R, vars: &[&str]) -> Formula {
    fn build<R: Rng>(rng: &mut R, vars: &mut Vec<String>, depth: usize) -> Formula {
        let leaf = depth == 0 || rng.gen_bool(0.25);
        if leaf {
            if !vars.is_empty() && rng.gen_bool(0.8) {
                let i = rng.gen_range(0..vars.len());
                return Formula::var(vars.swap_remove(i));
            }
            return Formula::constant(TruthValue::new(rng.gen_range(0.0..=1.0)).unwrap());
        }
        match rng.gen_range(0..3) {
            0 => Formula::not(build(rng, vars, depth - 1)),
            1 => Formula::and(build(rng, vars, depth - 1), build(rng, vars, depth - 1)),
            _ => Formula::or(build(rng, vars, depth - 1), build(rng, vars, depth - 1)),
        }
    }
    let mut pool: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let depth = rng.gen_range(1..=5);
    build(rng, &mut pool, depth)
}

/// Least squares via the normal equations `AᵀA c = Aᵀy`, solved by
/// Gaussian elimination with partial pivoting. Only for well-conditioned,
/// full-column-rank systems.
#[allow(clippy::needless_range_loop)]
pub fn normal_equations(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = a[0].len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for (row, &yi) in a.iter().zip(y) {
        for i in 0..n {
            for j in 0..n {
                m[i][j] += row[i] * row[j];
            }
            m[i][n] += row[i] * yi;
        }
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// `x(t) = (½ + ½ sin(2πt/25 + φ), ½ + ½ cos(2πt/25))`, label `x₀ > 0.5`;
/// each period shifts the phase slightly.
pub fn periodic_stream(periods: usize, len: usize) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<bool>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in 0..periods {
        let phase = 0.1 * p as f64;
        let period: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                let a = std::f64::consts::TAU * t as f64 / len as f64;
                vec![0.5 + 0.5 * (a + phase).sin(), 0.5 + 0.5 * a.cos()]
            })
            .collect();
        ys.push(period.iter().map(|x| x[0] > 0.5).collect());
        xs.push(period);
    }
    (xs, ys)
}
