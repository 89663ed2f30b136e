//! Periodic refinement of an update/leave decision.
//!
//! Two models score the same input, one for "update" and one for "leave";
//! the larger score wins and a tie counts as a wrong answer. Every wrong
//! answer triggers one LMS step on both models (target 1 for the correct
//! class, 0 for the other). When a whole period's error rate reaches the
//! configured threshold, both models are refit by least squares on that
//! period's samples.

use std::io::Read;

use serde::Serialize;

use super::{AnfisError, AnfisModel, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridClassifier {
    pub update: AnfisModel,
    pub leave: AnfisModel,
}

impl HybridClassifier {
    /// Both scorers start from the same model.
    pub fn new(model: AnfisModel) -> Self {
        HybridClassifier {
            update: model.clone(),
            leave: model,
        }
    }

    /// `Some(true)` for update, `Some(false)` for leave, `None` on a tie.
    pub fn classify(&self, x: &[f64]) -> Result<Option<bool>, AnfisError> {
        let u = self.update.predict(x)?.output;
        let l = self.leave.predict(x)?.output;
        Ok(if u > l {
            Some(true)
        } else if l > u {
            Some(false)
        } else {
            None
        })
    }
}

fn targets(label: bool) -> (f64, f64) {
    if label {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessReport {
    /// Fraction of misclassified samples per period, in order. Empty periods
    /// report 0.
    pub error_rates: Vec<f64>,
    /// Whether the period ended with a least-squares refit.
    pub refits: Vec<bool>,
    pub classifier: HybridClassifier,
}

pub fn run_harness(
    classifier: &HybridClassifier,
    periods: &[Vec<Vec<f64>>],
    labels: &[Vec<bool>],
    tc: &TrainConfig,
) -> Result<HarnessReport, AnfisError> {
    tc.validate()?;
    if periods.len() != labels.len() {
        return Err(AnfisError::LengthMismatch {
            inputs: periods.len(),
            targets: labels.len(),
        });
    }
    let mut clf = classifier.clone();
    let mut error_rates = Vec::with_capacity(periods.len());
    let mut refits = Vec::with_capacity(periods.len());
    for (xs, ys) in periods.iter().zip(labels) {
        if xs.len() != ys.len() {
            return Err(AnfisError::LengthMismatch {
                inputs: xs.len(),
                targets: ys.len(),
            });
        }
        let mut errors = 0usize;
        for (x, &label) in xs.iter().zip(ys) {
            if clf.classify(x)? != Some(label) {
                errors += 1;
                let (tu, tl) = targets(label);
                clf.update.lms_step(x, tu, tc.mu)?;
                clf.leave.lms_step(x, tl, tc.mu)?;
            }
        }
        let rate = if xs.is_empty() {
            0.0
        } else {
            errors as f64 / xs.len() as f64
        };
        let refit = !xs.is_empty() && rate >= tc.retrain_error_threshold;
        if refit {
            let (tu, tl): (Vec<f64>, Vec<f64>) = ys.iter().map(|&l| targets(l)).unzip();
            clf.update = clf.update.ls_fit(xs, &tu)?;
            clf.leave = clf.leave.ls_fit(xs, &tl)?;
        }
        error_rates.push(rate);
        refits.push(refit);
    }
    Ok(HarnessReport {
        error_rates,
        refits,
        classifier: clf,
    })
}

/// Splits a sample stream into consecutive periods of `period` samples;
/// the last period may be shorter.
pub fn split_periods(xs: Vec<Vec<f64>>, labels: Vec<bool>, period: usize) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<bool>>) {
    let period = period.max(1);
    (
        xs.chunks(period).map(<[_]>::to_vec).collect(),
        labels.chunks(period).map(<[_]>::to_vec).collect(),
    )
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "update" => Some(true),
        "0" | "false" | "leave" => Some(false),
        _ => None,
    }
}

/// Reads rows `x₁,…,xₙ,label`. A first row whose inputs are not all numbers
/// is taken as a header. Labels: `1`/`true`/`update` or `0`/`false`/`leave`.
pub fn read_labeled_csv<R: Read>(reader: R) -> Result<(Vec<Vec<f64>>, Vec<bool>), AnfisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let line = (i + 1) as u64;
        let record = record.map_err(|e| AnfisError::Csv {
            line: e.position().map_or(line, |p| p.line()),
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(AnfisError::Csv {
                line,
                message: "need at least one input column and a label".into(),
            });
        }
        let n = record.len() - 1;
        let inputs: Result<Vec<f64>, _> = record.iter().take(n).map(str::parse::<f64>).collect();
        let inputs = match inputs {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(AnfisError::Csv {
                    line,
                    message: format!("bad input value: {e}"),
                })
            }
        };
        if *width.get_or_insert(n) != n {
            return Err(AnfisError::Csv {
                line,
                message: format!("expected {} columns, got {}", width.unwrap_or(n) + 1, n + 1),
            });
        }
        let label = parse_label(&record[n]).ok_or_else(|| AnfisError::Csv {
            line,
            message: format!("bad label `{}`", &record[n]),
        })?;
        xs.push(inputs);
        labels.push(label);
    }
    Ok((xs, labels))
}

pub fn write_error_rates_csv(rates: &[f64]) -> String {
    let mut out = String::from("period,error_rate\n");
    for (i, r) in rates.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, r));
    }
    out
}
