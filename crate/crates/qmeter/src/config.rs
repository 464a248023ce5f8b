//! Experiment configuration: one JSON file per run, schema-checked with
//! field paths in every error.
//!
//! A config names a scenario, a mandatory seed, and the sections that
//! scenario needs; unknown fields are rejected so stale configs fail
//! loudly instead of silently ignoring a typo. Semantic checks
//! (positivity, required sections) run after parsing and also name the
//! offending field.

use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::dynamics::{InitialState, ObjectModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    KernelAudit,
    Sequence,
    Sme,
    Spectrum,
    QuantumLimit,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::KernelAudit => "kernel-audit",
            Scenario::Sequence => "sequence",
            Scenario::Sme => "sme",
            Scenario::Spectrum => "spectrum",
            Scenario::QuantumLimit => "quantum-limit",
        }
    }
}

/// Kernel section. `dt` and `hbar` come from the top level so every
/// kernel in a run shares them.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// Parametric Gaussian kernel with imprecision `s_q`, cross
    /// correlation `s_qf`, and mean force `f_bar`.
    Gaussian {
        s_q: f64,
        #[serde(default)]
        s_qf: f64,
        #[serde(default)]
        f_bar: f64,
    },
    /// Kernel saturating the noise inequality at the model's response
    /// phase for `omega`; imprecision picked at the optimum unless
    /// overridden.
    QuantumLimited {
        omega: f64,
        #[serde(default)]
        s_q: Option<f64>,
        #[serde(default)]
        f_bar: f64,
    },
    /// Real Hermite-function superposition at the given length scale.
    Hermite {
        scale: f64,
        coeffs: Vec<(f64, f64)>,
    },
    /// Grid-sampled kernel from a CSV plus its JSON sidecar.
    GridCsv { path: PathBuf },
}

/// Uniform frequency grid, inclusive of both endpoints.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl OmegaGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|k| self.start + k as f64 * step).collect()
    }
}

fn default_hbar() -> f64 {
    1.0
}

fn default_fock_dim() -> usize {
    60
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Mandatory: every run is replayable from its config alone.
    pub seed: u64,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(default)]
    pub model: Option<ObjectModel>,
    #[serde(default)]
    pub init: Option<InitialState>,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    /// Kernel interval; also the sample spacing of synthesized records.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Number of measurements in a uniform schedule.
    #[serde(default)]
    pub n_measurements: Option<usize>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub n_traj: Option<usize>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default = "default_fock_dim")]
    pub fock_dim: usize,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub omega_grid: Option<OmegaGrid>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parse and validate; errors carry the JSON path of the offending
    /// field.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path)?;
        Self::from_json_bytes(&bytes)
    }

    fn require<'a, T>(opt: &'a Option<T>, field: &'static str, scenario: &str) -> Result<&'a T, ConfigError> {
        opt.as_ref().ok_or(ConfigError::Invalid {
            field,
            message: format!("required by the {scenario} scenario"),
        })
    }

    fn positive(value: f64, field: &'static str) -> Result<(), ConfigError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(ConfigError::Invalid {
                field,
                message: format!("must be finite and positive, got {value}"),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        Self::positive(self.hbar, "hbar")?;
        if let Some(dt) = self.dt {
            Self::positive(dt, "dt")?;
        }
        if let Some(d) = self.duration {
            Self::positive(d, "duration")?;
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ConfigError::Invalid {
                    field: "temperature",
                    message: format!("must be finite and nonnegative, got {t}"),
                });
            }
        }
        if self.fock_dim < 4 {
            return Err(ConfigError::Invalid {
                field: "fock_dim",
                message: format!("need at least 4 levels, got {}", self.fock_dim),
            });
        }
        if let Some(g) = &self.omega_grid {
            if g.count == 0 {
                return Err(ConfigError::Invalid {
                    field: "omega_grid.count",
                    message: "must be at least 1".into(),
                });
            }
            if !(g.start.is_finite() && g.stop.is_finite()) || (g.count > 1 && g.stop <= g.start) {
                return Err(ConfigError::Invalid {
                    field: "omega_grid",
                    message: format!("need finite start < stop, got [{}, {}]", g.start, g.stop),
                });
            }
        }
        if let Some(k) = &self.kernel {
            match k {
                KernelConfig::Gaussian { s_q, .. } => {
                    if !(s_q.is_finite() && *s_q > 0.0) {
                        return Err(ConfigError::Invalid {
                            field: "kernel.s_q",
                            message: format!("must be finite and positive, got {s_q}"),
                        });
                    }
                }
                KernelConfig::QuantumLimited { omega, s_q, .. } => {
                    if !omega.is_finite() {
                        return Err(ConfigError::Invalid {
                            field: "kernel.omega",
                            message: format!("must be finite, got {omega}"),
                        });
                    }
                    if let Some(s) = s_q {
                        if !(s.is_finite() && *s > 0.0) {
                            return Err(ConfigError::Invalid {
                                field: "kernel.s_q",
                                message: format!("must be finite and positive, got {s}"),
                            });
                        }
                    }
                }
                KernelConfig::Hermite { scale, coeffs } => {
                    if !(scale.is_finite() && *scale > 0.0) {
                        return Err(ConfigError::Invalid {
                            field: "kernel.scale",
                            message: format!("must be finite and positive, got {scale}"),
                        });
                    }
                    if coeffs.is_empty() {
                        return Err(ConfigError::Invalid {
                            field: "kernel.coeffs",
                            message: "need at least one coefficient".into(),
                        });
                    }
                }
                KernelConfig::GridCsv { .. } => {}
            }
        }
        let scenario = self.scenario.name();
        match self.scenario {
            Scenario::KernelAudit => {
                Self::require(&self.kernel, "kernel", scenario)?;
                Self::require(&self.dt, "dt", scenario)?;
            }
            Scenario::Sequence => {
                Self::require(&self.model, "model", scenario)?;
                Self::require(&self.kernel, "kernel", scenario)?;
                Self::require(&self.dt, "dt", scenario)?;
                let n = *Self::require(&self.n_measurements, "n_measurements", scenario)?;
                if n == 0 {
                    return Err(ConfigError::Invalid {
                        field: "n_measurements",
                        message: "must be at least 1".into(),
                    });
                }
                let traj = *Self::require(&self.n_traj, "n_traj", scenario)?;
                if traj < 100 {
                    return Err(ConfigError::Invalid {
                        field: "n_traj",
                        message: format!("need at least 100 trajectories, got {traj}"),
                    });
                }
            }
            Scenario::Sme => {
                Self::require(&self.model, "model", scenario)?;
                Self::require(&self.kernel, "kernel", scenario)?;
                Self::require(&self.dt, "dt", scenario)?;
                Self::require(&self.duration, "duration", scenario)?;
                let traj = *Self::require(&self.n_traj, "n_traj", scenario)?;
                if traj == 0 {
                    return Err(ConfigError::Invalid {
                        field: "n_traj",
                        message: "must be at least 1".into(),
                    });
                }
            }
            Scenario::Spectrum => {
                Self::require(&self.model, "model", scenario)?;
                Self::require(&self.kernel, "kernel", scenario)?;
                Self::require(&self.dt, "dt", scenario)?;
                let n = *Self::require(&self.n_samples, "n_samples", scenario)?;
                if n < 2 * crate::spectra::WELCH_WINDOW_LEN {
                    return Err(ConfigError::Invalid {
                        field: "n_samples",
                        message: format!(
                            "need at least {} samples for the fixed Welch window, got {n}",
                            2 * crate::spectra::WELCH_WINDOW_LEN
                        ),
                    });
                }
            }
            Scenario::QuantumLimit => {
                Self::require(&self.model, "model", scenario)?;
                Self::require(&self.omega_grid, "omega_grid", scenario)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_quantum_limit_config_parses() {
        let cfg = ExperimentConfig::from_json_bytes(
            br#"{
                "scenario": "quantum-limit",
                "seed": 42,
                "model": {"type": "damped_oscillator", "mass": 1.0, "omega0": 1.0, "gamma": 0.1},
                "omega_grid": {"start": 0.2, "stop": 2.0, "count": 181}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::QuantumLimit);
        assert_eq!(cfg.hbar, 1.0);
        let pts = cfg.omega_grid.unwrap().points();
        assert_eq!(pts.len(), 181);
        assert_eq!(pts[80], 1.0);
    }

    #[test]
    fn missing_seed_is_a_schema_error() {
        let err = ExperimentConfig::from_json_bytes(
            br#"{"scenario": "kernel-audit", "dt": 0.01, "kernel": {"type": "gaussian", "s_q": 1.0}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::from_json_bytes(
            br#"{"scenario": "kernel-audit", "seed": 1, "dt": 0.01,
                 "kernel": {"type": "gaussian", "s_q": 1.0, "sqf": 0.5}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kernel") && msg.contains("sqf"), "{msg}");
    }

    #[test]
    fn scenario_requirements_are_enforced() {
        let err = ExperimentConfig::from_json_bytes(
            br#"{"scenario": "sequence", "seed": 1, "dt": 0.01,
                 "model": {"type": "oscillator", "mass": 1.0, "omega0": 1.0},
                 "kernel": {"type": "gaussian", "s_q": 0.01}}"#,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "n_measurements",
                ..
            }
        ));
    }

    #[test]
    fn nonpositive_values_are_rejected_with_field() {
        let err = ExperimentConfig::from_json_bytes(
            br#"{"scenario": "kernel-audit", "seed": 1, "dt": -0.01,
                 "kernel": {"type": "gaussian", "s_q": 1.0}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "dt", .. }));
    }

    #[test]
    fn malformed_json_reports_a_path() {
        let err = ExperimentConfig::from_json_bytes(
            br#"{"scenario": "sme", "seed": 1, "model": {"type": "oscillator", "mass": "heavy", "omega0": 1.0}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model"), "{msg}");
    }
}
