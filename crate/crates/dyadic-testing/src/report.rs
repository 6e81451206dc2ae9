//! Report envelopes: inequality checks, assembled constants and a tabular view.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::constants::AssembledConstant;

/// Relative slack for inequalities whose sides are computed exactly.
pub const EXACT_SLACK: f64 = 1e-9;

/// One inequality `lhs ≤ rhs` (or an equality), evaluated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub subject: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Check {
    /// `lhs ≤ rhs` up to `rel` times the larger side.
    pub fn at_most(label: &str, subject: impl Into<String>, lhs: f64, rhs: f64, rel: f64) -> Self {
        let slack = rel * lhs.abs().max(rhs.abs());
        Check::new(label, subject, lhs, rhs, lhs <= rhs + slack)
    }

    /// `lhs ≤ rhs + abs`.
    pub fn at_most_abs(label: &str, subject: impl Into<String>, lhs: f64, rhs: f64, abs: f64) -> Self {
        Check::new(label, subject, lhs, rhs, lhs <= rhs + abs)
    }

    /// `|lhs − rhs| ≤ rel` times the larger side.
    pub fn close(label: &str, subject: impl Into<String>, lhs: f64, rhs: f64, rel: f64) -> Self {
        let slack = rel * lhs.abs().max(rhs.abs());
        Check::new(label, subject, lhs, rhs, (lhs - rhs).abs() <= slack)
    }

    /// A check whose outcome was decided elsewhere.
    pub fn new(label: &str, subject: impl Into<String>, lhs: f64, rhs: f64, holds: bool) -> Self {
        Check {
            label: label.to_string(),
            subject: subject.into(),
            lhs,
            rhs,
            holds,
        }
    }
}

/// Counts per label, the failures, and the largest observed `lhs/rhs` per label.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckSummary {
    pub total: usize,
    pub failed: usize,
    pub worst_ratio: BTreeMap<String, f64>,
    pub failures: Vec<Check>,
}

impl CheckSummary {
    pub fn from_checks(checks: &[Check]) -> Self {
        let mut summary = CheckSummary {
            total: checks.len(),
            ..Default::default()
        };
        for c in checks {
            if c.rhs > 0.0 && c.rhs.is_finite() {
                let r = c.lhs / c.rhs;
                let e = summary.worst_ratio.entry(c.label.clone()).or_insert(r);
                *e = e.max(r);
            }
            if !c.holds {
                summary.failed += 1;
                summary.failures.push(c.clone());
            }
        }
        summary
    }

    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

/// The output of one command.
#[derive(Clone, Debug, Serialize)]
pub struct Report<T> {
    pub command: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: CheckSummary,
    pub assembled: Vec<AssembledConstant>,
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, seed: u64, checks: &[Check], assembled: Vec<AssembledConstant>, body: T) -> Self {
        let checks = CheckSummary::from_checks(checks);
        Report {
            command: command.to_string(),
            seed,
            passed: checks.passed(),
            checks,
            assembled,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rows for CSV output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub trait Tabular {
    fn table(&self) -> Table;
}

/// Shortest round-trip form of a number, as used in every table.
pub fn cell(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

pub fn opt_cell(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_and_summary() {
        let checks = vec![
            Check::at_most("a", "0", 1.0, 2.0, 0.0),
            Check::at_most("a", "1", 2.0 + 1e-12, 2.0, 1e-9),
            Check::close("b", "0", 1.0, 1.1, 1e-3),
            Check::at_most_abs("c", "0", 1.0 + 1e-10, 1.0, 1e-9),
        ];
        assert!(checks[0].holds && checks[1].holds && !checks[2].holds && checks[3].holds);
        let s = CheckSummary::from_checks(&checks);
        assert_eq!((s.total, s.failed), (4, 1));
        assert!((s.worst_ratio["a"] - 1.0).abs() < 1e-11);
        assert!(!Check::at_most("nan", "", f64::NAN, 1.0, 0.0).holds);
    }

    #[test]
    fn cells_round_trip() {
        assert_eq!(cell(0.1), "0.1");
        assert_eq!(cell(f64::INFINITY), "inf");
        assert_eq!(cell(3.0), "3");
    }
}
