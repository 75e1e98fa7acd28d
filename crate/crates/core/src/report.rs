//! Serializable check results shared by the catalog verifier and the CLI.

use serde::Serialize;

use crate::coords::{ConfigPoint, ReducedPoint, TangentVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoint {
    pub reduced: ReducedPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<ConfigPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<TangentVector>,
}

impl WorstPoint {
    pub fn reduced(p: ReducedPoint) -> Self {
        WorstPoint { reduced: p, x: None, y: None }
    }

    pub fn full(p: ReducedPoint, x: ConfigPoint, y: TangentVector) -> Self {
        WorstPoint { reduced: p, x: Some(x), y: Some(y) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_abs: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<WorstPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    /// Passes when `max_abs < tolerance`.
    pub fn below(name: impl Into<String>, max_abs: f64, tolerance: f64, worst: Option<WorstPoint>) -> Self {
        CheckResult { name: name.into(), max_abs, tolerance, passed: max_abs < tolerance, worst, detail: None }
    }

    /// Passes when `max_abs > threshold`.
    pub fn above(name: impl Into<String>, max_abs: f64, threshold: f64, worst: Option<WorstPoint>) -> Self {
        CheckResult { name: name.into(), max_abs, tolerance: threshold, passed: max_abs > threshold, worst, detail: None }
    }

    pub fn failed(name: impl Into<String>, error: impl ToString) -> Self {
        CheckResult {
            name: name.into(),
            max_abs: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            worst: None,
            detail: Some(error.to_string()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// A reference expression that disagrees with the computed field.
#[derive(Debug, Clone, Serialize)]
pub struct Discrepancy {
    pub entry: String,
    pub field: String,
    pub reference: String,
    pub point: ReducedPoint,
    pub computed: f64,
    pub expected: f64,
    pub max_abs_diff: f64,
}
