//! Simulation and spectral analysis of continuously monitored quantum systems.
//!
//! A position measurement of finite resolution is modelled by a reduction
//! kernel `Omega(delta_q)` acting multiplicatively on the wavefunction. The
//! crate provides:
//!
//! * [`kernels`]: kernel construction, validation, and the noise functionals
//!   (imprecision `S_q`, back-action `S_F`, cross-correlation `S_qF`, mean
//!   force `F_bar`) together with the uncertainty-product bound they obey.
//! * [`dynamics`]: linear object models (free mass, oscillator, damped
//!   oscillator), their commutator kernel and susceptibility, and Gaussian
//!   initial states with their intrinsic correlation and spectrum.
//! * [`sequence`]: statistics of finite measurement sequences, analytic
//!   moment formulas cross-checked by Monte Carlo sampling and a
//!   grid-wavefunction brute-force evaluator.
//! * [`sme`]: trajectory integration of the conditioned density matrix in a
//!   truncated Fock basis, by exact Kraus application or by an
//!   Euler-Maruyama diffusive approximation, with the Lindblad mean map.
//! * [`spectra`]: Welch spectral estimation of measurement records, the
//!   channel-resolved analytic output spectrum, added-noise budgets, and the
//!   scan locating the minimal added noise over frequency.
//! * [`config`] / [`report`] / [`runner`]: the JSON experiment interface
//!   behind the `qmeter` binary.
//!
//! All quantities are kept in natural units; `hbar` (and where temperature
//! enters, `k_B`) are explicit model parameters defaulting to 1.

pub mod config;
pub mod dynamics;
pub mod fock;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod report;
pub mod runner;
pub mod sequence;
pub mod sme;
pub mod spectra;

pub use config::{ConfigError, ExperimentConfig, Scenario};
pub use dynamics::{GaussianState, InitialState, ObjectModel};
pub use kernels::{NoiseBudget, ReductionKernel};
pub use report::{ReportFormat, RunReport};
pub use runner::{run_experiment, RunOptions, RunnerError};
pub use sequence::{MeasurementRecord, MeasurementSchedule, MomentReport};
pub use sme::{DensityState, ForceStatistics, SmeEngine};
pub use spectra::{SpectrumTable, StationaryBudget};
