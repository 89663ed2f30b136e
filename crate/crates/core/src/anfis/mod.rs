//! First-order Takagi–Sugeno ANFIS.
//!
//! The five layers: triangular memberships per input, rule firing strength
//! as the AND of a rule's memberships, normalisation, the weighted affine
//! consequent `w̄ᵢ·fᵢ(x)`, and the final sum. Only consequents adapt, by
//! per-sample LMS steps or a global least-squares fit; antecedents stay as
//! given.

mod harness;

pub use harness::{read_labeled_csv, run_harness, split_periods, write_error_rates_csv, HarnessReport, HybridClassifier};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnfisError {
    #[error("invalid membership function: need finite a <= b <= c, got ({a}, {b}, {c})")]
    InvalidMembership { a: f64, b: f64, c: f64 },
    #[error("model needs at least one rule")]
    NoRules,
    #[error("expected {expected} values, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no rule fires for input {0:?}")]
    NoRuleFires(Vec<f64>),
    #[error("no samples")]
    EmptyData,
    #[error("{inputs} input rows but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("uniform partition needs at least 2 sets per dimension and dim >= 1")]
    InvalidPartition,
    /// The message already carries serde's line and column, so the
    /// JSON error is not chained as a source.
    #[error("malformed model: {0}")]
    Json(serde_json::Error),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
}

impl From<serde_json::Error> for AnfisError {
    fn from(e: serde_json::Error) -> Self {
        AnfisError::Json(e)
    }
}

/// Triangular membership with feet `a`, `c` and peak `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TriangularRepr", into = "TriangularRepr")]
pub struct MembershipFunction {
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TriangularRepr {
    triangular: [f64; 3],
}

impl TryFrom<TriangularRepr> for MembershipFunction {
    type Error = AnfisError;

    fn try_from(r: TriangularRepr) -> Result<Self, Self::Error> {
        let [a, b, c] = r.triangular;
        MembershipFunction::triangular(a, b, c)
    }
}

impl From<MembershipFunction> for TriangularRepr {
    fn from(m: MembershipFunction) -> Self {
        TriangularRepr {
            triangular: [m.a, m.b, m.c],
        }
    }
}

impl MembershipFunction {
    pub fn triangular(a: f64, b: f64, c: f64) -> Result<Self, AnfisError> {
        if a.is_finite() && b.is_finite() && c.is_finite() && a <= b && b <= c {
            Ok(MembershipFunction { a, b, c })
        } else {
            Err(AnfisError::InvalidMembership { a, b, c })
        }
    }

    pub fn params(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let MembershipFunction { a, b, c } = *self;
        if x < a || x > c {
            0.0
        } else if x == b {
            1.0
        } else if x < b {
            (x - a) / (b - a)
        } else {
            (c - x) / (c - b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AndOp {
    #[default]
    Min,
    Product,
}

impl AndOp {
    fn apply(self, xs: impl Iterator<Item = f64>) -> f64 {
        match self {
            AndOp::Min => xs.fold(1.0, f64::min),
            AndOp::Product => xs.product(),
        }
    }
}

/// `IF x₁ is A₁ and … THEN f = c₀ + c₁x₁ + … + cₙxₙ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub antecedents: Vec<MembershipFunction>,
    pub consequent: Vec<f64>,
}

impl Rule {
    pub fn new(antecedents: Vec<MembershipFunction>, consequent: Vec<f64>) -> Self {
        Rule { antecedents, consequent }
    }

    fn affine(&self, x: &[f64]) -> f64 {
        self.consequent[0] + self.consequent[1..].iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleTrace {
    pub memberships: Vec<f64>,
    pub w: f64,
    pub w_bar: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub output: f64,
    pub rules: Vec<RuleTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct AnfisModel {
    dim: usize,
    and_op: AndOp,
    rules: Vec<Rule>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    dim: usize,
    #[serde(default)]
    and_op: AndOp,
    rules: Vec<Rule>,
}

impl TryFrom<ModelRepr> for AnfisModel {
    type Error = AnfisError;

    fn try_from(r: ModelRepr) -> Result<Self, Self::Error> {
        AnfisModel::new(r.dim, r.and_op, r.rules)
    }
}

impl From<AnfisModel> for ModelRepr {
    fn from(m: AnfisModel) -> Self {
        ModelRepr {
            dim: m.dim,
            and_op: m.and_op,
            rules: m.rules,
        }
    }
}

/// Per-rule memberships, firing strengths and normalised strengths.
type Strengths = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

impl AnfisModel {
    pub fn new(dim: usize, and_op: AndOp, rules: Vec<Rule>) -> Result<Self, AnfisError> {
        if rules.is_empty() {
            return Err(AnfisError::NoRules);
        }
        for r in &rules {
            check_len(dim, r.antecedents.len())?;
            check_len(dim + 1, r.consequent.len())?;
        }
        Ok(AnfisModel { dim, and_op, rules })
    }

    /// Grid partition of `[0, 1]^dim` with `per_dim` evenly spaced
    /// triangles per input, one rule per grid cell, zero consequents.
    pub fn uniform(dim: usize, per_dim: usize, and_op: AndOp) -> Result<Self, AnfisError> {
        if dim == 0 || per_dim < 2 {
            return Err(AnfisError::InvalidPartition);
        }
        let h = 1.0 / (per_dim - 1) as f64;
        let sets: Vec<MembershipFunction> = (0..per_dim)
            .map(|i| {
                let b = i as f64 * h;
                MembershipFunction::triangular(b - h, b, b + h).expect("ordered")
            })
            .collect();
        let count = per_dim.pow(dim as u32);
        let rules = (0..count)
            .map(|mut idx| {
                let antecedents = (0..dim)
                    .map(|_| {
                        let mf = sets[idx % per_dim];
                        idx /= per_dim;
                        mf
                    })
                    .collect();
                Rule::new(antecedents, vec![0.0; dim + 1])
            })
            .collect();
        AnfisModel::new(dim, and_op, rules)
    }

    pub fn from_json(src: &str) -> Result<Self, AnfisError> {
        Ok(serde_json::from_str(src)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn and_op(&self) -> AndOp {
        self.and_op
    }

    pub fn with_and_op(mut self, and_op: AndOp) -> Self {
        self.and_op = and_op;
        self
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// All consequent coefficients, rule by rule.
    pub fn coefficients(&self) -> Vec<f64> {
        self.rules.iter().flat_map(|r| r.consequent.iter().copied()).collect()
    }

    pub fn set_coefficients(&mut self, coeffs: &[f64]) -> Result<(), AnfisError> {
        check_len(self.rules.len() * (self.dim + 1), coeffs.len())?;
        for (r, chunk) in self.rules.iter_mut().zip(coeffs.chunks(self.dim + 1)) {
            r.consequent.copy_from_slice(chunk);
        }
        Ok(())
    }

    /// Layers 1–3: memberships, firing strengths and their normalisation.
    fn normalized_strengths(&self, x: &[f64]) -> Result<Strengths, AnfisError> {
        check_len(self.dim, x.len())?;
        let memberships: Vec<Vec<f64>> = self
            .rules
            .iter()
            .map(|r| r.antecedents.iter().zip(x).map(|(mf, &xi)| mf.eval(xi)).collect())
            .collect();
        let w: Vec<f64> = memberships.iter().map(|m| self.and_op.apply(m.iter().copied())).collect();
        let total: f64 = w.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(AnfisError::NoRuleFires(x.to_vec()));
        }
        let w_bar = w.iter().map(|wi| wi / total).collect();
        Ok((memberships, w, w_bar))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, AnfisError> {
        let (memberships, w, w_bar) = self.normalized_strengths(x)?;
        let mut output = 0.0;
        let rules = self
            .rules
            .iter()
            .zip(memberships)
            .zip(w.into_iter().zip(w_bar))
            .map(|((rule, memberships), (w, w_bar))| {
                let f = rule.affine(x);
                output += w_bar * f;
                RuleTrace { memberships, w, w_bar, f }
            })
            .collect();
        Ok(Prediction { output, rules })
    }

    /// The regressor row: `w̄ᵢ·[1, x₁ … xₙ]` for each rule in turn. The output
    /// is its dot product with [`coefficients`](Self::coefficients).
    pub fn regressors(&self, x: &[f64]) -> Result<Vec<f64>, AnfisError> {
        let (_, _, w_bar) = self.normalized_strengths(x)?;
        Ok(w_bar
            .iter()
            .flat_map(|&wb| std::iter::once(wb).chain(x.iter().map(move |xi| wb * xi)))
            .collect())
    }

    /// Gradient of `½(target − output)²` with respect to every consequent
    /// coefficient.
    pub fn squared_error_gradient(&self, x: &[f64], target: f64) -> Result<Vec<f64>, AnfisError> {
        let phi = self.regressors(x)?;
        let e = target - dot(&phi, &self.coefficients());
        Ok(phi.into_iter().map(|p| -e * p).collect())
    }

    /// One LMS step in place; returns the error before the step.
    pub fn lms_step(&mut self, x: &[f64], target: f64, mu: f64) -> Result<f64, AnfisError> {
        let phi = self.regressors(x)?;
        let mut coeffs = self.coefficients();
        let e = target - dot(&phi, &coeffs);
        for (c, p) in coeffs.iter_mut().zip(&phi) {
            *c += mu * e * p;
        }
        self.set_coefficients(&coeffs)?;
        Ok(e)
    }

    /// `c(i,0) += μ·e·w̄ᵢ`, `c(i,k) += μ·e·w̄ᵢ·xₖ` with `e = target − output`.
    pub fn lms_update(&self, x: &[f64], target: f64, mu: f64) -> Result<AnfisModel, AnfisError> {
        let mut next = self.clone();
        next.lms_step(x, target, mu)?;
        Ok(next)
    }

    /// Least-squares fit of all consequents jointly. Rank-deficient systems
    /// get the minimum-norm solution.
    pub fn ls_fit(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<AnfisModel, AnfisError> {
        if xs.len() != ys.len() {
            return Err(AnfisError::LengthMismatch {
                inputs: xs.len(),
                targets: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(AnfisError::EmptyData);
        }
        let cols = self.rules.len() * (self.dim + 1);
        let mut rows = Vec::with_capacity(xs.len() * cols);
        for x in xs {
            rows.extend(self.regressors(x)?);
        }
        let a = DMatrix::from_row_slice(xs.len(), cols, &rows);
        let b = DVector::from_column_slice(ys);
        let coeffs = min_norm_least_squares(a, &b);
        let mut next = self.clone();
        next.set_coefficients(coeffs.as_slice())?;
        Ok(next)
    }

    /// Sum of squared residuals over a data set.
    pub fn sse(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64, AnfisError> {
        xs.iter().zip(ys).try_fold(0.0, |acc, (x, y)| {
            let r = y - self.predict(x)?.output;
            Ok(acc + r * r)
        })
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), AnfisError> {
    if expected == found {
        Ok(())
    } else {
        Err(AnfisError::DimensionMismatch { expected, found })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pseudo-inverse solution via SVD; singular values below the usual
/// `max(m, n)·σ_max·ε` cut-off are treated as zero.
fn min_norm_least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = m.max(n) as f64 * sigma_max * f64::EPSILON;
    svd.solve(b, tol).expect("u and v were computed")
}

/// LMS step size and the per-period error rate that triggers an LS refit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mu: f64,
    pub retrain_error_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mu: 0.1,
            retrain_error_threshold: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnfisError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(AnfisError::InvalidConfig(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.retrain_error_threshold) {
            return Err(AnfisError::InvalidConfig(format!(
                "retrain_error_threshold must be in [0, 1], got {}",
                self.retrain_error_threshold
            )));
        }
        Ok(())
    }
}
