//! Run reports: what was checked, against what, and whether it held.
//!
//! The JSON rendering is stable-key-ordered (struct order) and the file
//! artifact omits wall time, so a rerun of the same config produces the
//! same bytes on disk; timing appears only in the console rendering.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// One named comparison. `pass` is decided by the scenario (some checks
/// are one-sided); `value`, `reference`, and `tolerance` are what a
/// reader needs to judge the margin.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    /// Two-sided check: |value - reference| <= tolerance.
    pub fn within(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            reference,
            tolerance,
            pass: (value - reference).abs() <= tolerance,
        }
    }

    /// One-sided check: value <= limit.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            reference: limit,
            tolerance: 0.0,
            pass: value <= limit,
        }
    }

    /// One-sided check: value >= limit.
    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            reference: limit,
            tolerance: 0.0,
            pass: value >= limit,
        }
    }
}

/// Frequency dropped from a scan, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub omega: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<String>,
    pub exclusions: Vec<Exclusion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl RunReport {
    pub fn new(scenario: &str, config_bytes: &[u8], seed: u64) -> Self {
        RunReport {
            scenario: scenario.to_string(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            pass: true,
            checks: Vec::new(),
            artifacts: Vec::new(),
            exclusions: Vec::new(),
            wall_time_s: None,
        }
    }

    pub fn push_check(&mut self, check: CheckResult) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    /// Deterministic disk form: wall time stripped.
    pub fn artifact_json(&self) -> String {
        let mut stripped = self.clone();
        stripped.wall_time_s = None;
        let mut s = serde_json::to_string_pretty(&stripped).expect("report serializes");
        s.push('\n');
        s
    }

    /// Console rendering. Failing checks come first in the text form.
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Text => {
                let mut out = String::new();
                let _ = writeln!(out, "scenario: {}", self.scenario);
                let _ = writeln!(out, "config sha256: {}", self.config_sha256);
                let _ = writeln!(out, "seed: {}", self.seed);
                let (failed, passed): (Vec<_>, Vec<_>) =
                    self.checks.iter().partition(|c| !c.pass);
                for c in failed.iter().chain(passed.iter()) {
                    let verdict = if c.pass { "pass" } else { "FAIL" };
                    let _ = writeln!(
                        out,
                        "{verdict} {}: value {:e} reference {:e} tolerance {:e}",
                        c.name, c.value, c.reference, c.tolerance
                    );
                }
                if !self.exclusions.is_empty() {
                    let _ = writeln!(out, "excluded frequencies:");
                    for e in &self.exclusions {
                        let _ = writeln!(out, "  omega {}: {}", e.omega, e.reason);
                    }
                }
                if !self.artifacts.is_empty() {
                    let _ = writeln!(out, "artifacts:");
                    for a in &self.artifacts {
                        let _ = writeln!(out, "  {a}");
                    }
                }
                if let Some(t) = self.wall_time_s {
                    let _ = writeln!(out, "wall time: {t:.3} s");
                }
                let _ = writeln!(out, "overall: {}", if self.pass { "pass" } else { "FAIL" });
                out
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_orders_failures_first() {
        let mut r = RunReport::new("sequence", b"cfg", 7);
        r.push_check(CheckResult::within("mean", 1.0, 1.0, 0.1));
        r.push_check(CheckResult::at_most("deviation", 5.0, 4.0));
        r.push_check(CheckResult::at_least("margin", 0.2, 0.0));
        assert!(!r.pass);
        let txt = r.render(ReportFormat::Text);
        let fail_pos = txt.find("FAIL deviation").unwrap();
        let pass_pos = txt.find("pass mean").unwrap();
        assert!(fail_pos < pass_pos);
        assert_eq!(txt, r.render(ReportFormat::Text));
        assert_eq!(
            r.render(ReportFormat::Json),
            r.render(ReportFormat::Json)
        );
    }

    #[test]
    fn artifact_form_strips_wall_time() {
        let mut r = RunReport::new("sme", b"cfg", 1);
        r.wall_time_s = Some(1.25);
        assert!(r.render(ReportFormat::Json).contains("wall_time_s"));
        assert!(!r.artifact_json().contains("wall_time_s"));
        let with_other_time = {
            let mut r2 = r.clone();
            r2.wall_time_s = Some(9.0);
            r2.artifact_json()
        };
        assert_eq!(r.artifact_json(), with_other_time);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
