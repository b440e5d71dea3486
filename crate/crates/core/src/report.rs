//! Outcome of sampled inequality checks.

use serde::{Deserialize, Serialize};

/// Result of checking an inequality `lhs <= rhs` (or a signed quantity
/// against a tolerance) over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub check: String,
    pub samples: usize,
    /// Samples whose violation exceeds `tolerance`.
    pub violations: usize,
    /// Largest signed violation (`lhs - rhs`); negative when every sample
    /// holds with room to spare.
    pub max_violation: f64,
    /// Location of the largest violation (meaning depends on the check).
    pub witness: Vec<f64>,
    pub tolerance: f64,
    /// Largest `lhs / rhs` over samples with positive `rhs`.
    pub tightest_ratio: Option<f64>,
}

impl InequalityReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            samples: 0,
            violations: 0,
            max_violation: f64::NEG_INFINITY,
            witness: Vec::new(),
            tolerance,
            tightest_ratio: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Records one sample with signed violation `excess` at `witness`.
    pub fn record(&mut self, excess: f64, witness: &[f64]) {
        self.samples += 1;
        if excess > self.tolerance || excess.is_nan() {
            self.violations += 1;
        }
        if excess > self.max_violation || excess.is_nan() && !self.max_violation.is_nan() {
            self.max_violation = excess;
            self.witness = witness.to_vec();
        }
    }

    pub fn record_ratio(&mut self, ratio: f64) {
        if ratio.is_finite() || ratio == f64::INFINITY {
            self.tightest_ratio = Some(self.tightest_ratio.map_or(ratio, |r| r.max(ratio)));
        }
    }

    /// Folds another report over the same check into this one.
    pub fn merge(&mut self, other: &InequalityReport) {
        self.samples += other.samples;
        self.violations += other.violations;
        if other.max_violation > self.max_violation {
            self.max_violation = other.max_violation;
            self.witness = other.witness.clone();
        }
        if let Some(r) = other.tightest_ratio {
            self.record_ratio(r);
        }
    }
}
