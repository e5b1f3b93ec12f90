//! Metrics JSON and per-stage CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricsLedger;
use crate::scenario::ScenarioKind;

/// Significant digits kept in reported reals.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] so float noise such as
/// `0.9 - 0.8 = 0.09999999999999998` reports as `0.1`.
pub fn round_report(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().expect("formatted float parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub acc_known: f64,
    pub acc_novel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub timesteps: Vec<ReportRow>,
    pub m_f: f64,
    pub m_d: Option<f64>,
    pub estimated_counts: Option<Vec<usize>>,
}

impl Report {
    /// Panics if the ledger lacks its initial record; build ledgers with the
    /// runner or check [`MetricsLedger::finalize`] first.
    pub fn new(kind: ScenarioKind, seed: u64, ledger: &MetricsLedger, estimated_counts: Option<Vec<usize>>) -> Self {
        let summary = ledger.finalize().expect("ledger has its initial record");
        Self {
            scenario: kind.to_string(),
            seed,
            timesteps: ledger
                .records
                .iter()
                .map(|r| ReportRow { t: r.t, acc_known: round_report(r.acc_known), acc_novel: r.acc_novel.map(round_report) })
                .collect(),
            m_f: round_report(summary.m_f),
            m_d: summary.m_d.map(round_report),
            estimated_counts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,acc_known,acc_novel\n");
        for r in &self.timesteps {
            let novel = r.acc_novel.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", r.t, r.acc_known, novel).expect("string write");
        }
        out
    }
}

/// Writes `metrics.json` and `metrics.csv` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::write(dir.join("metrics.json"), report.to_json())?;
    fs::write(dir.join("metrics.csv"), report.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forgetting_example_serializes_cleanly() {
        let ledger = MetricsLedger::from_known(&[0.9, 0.85, 0.80, 0.82]);
        let r = Report::new(ScenarioKind::CI, 7, &ledger, None);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["m_f"], serde_json::json!(0.1));
        assert!(v["timesteps"][0]["acc_novel"].is_null());
        assert!(v["m_d"].is_null());
        assert!(v["estimated_counts"].is_null());
        assert_eq!(v["scenario"], "CI");
        assert!(r.to_csv().starts_with("t,acc_known,acc_novel\n0,0.9,\n1,0.85,\n"));
    }

    #[test]
    fn rounding_keeps_precision() {
        assert_eq!(round_report(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_report(-0.1), -0.1);
        assert_eq!(round_report(0.0), 0.0);
    }
}
