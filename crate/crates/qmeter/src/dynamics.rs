//! Measured-object models and their linear response.
//!
//! Every model here has a quadratic Hamiltonian, so Heisenberg position is
//! a linear combination of the initial quadratures,
//! `q(t) = A(t) q + B(t) p`, and the commutator
//! `k(t, t') = hbar [A(t) B(t') - A(t') B(t)]` is a c-number. The causal
//! susceptibility is `chi(tau) = -k(t, t - tau)/hbar` for `tau > 0` and
//! zero otherwise, with the convention `chi(0) = 0`.
//!
//! The damped oscillator exists only in the frequency domain: its
//! `chi(omega) = 1/[m (omega0^2 - omega^2 - i gamma omega)]` is well
//! defined, but time-domain ops error rather than pretend the object
//! alone stays Hamiltonian.
//!
//! Frequency-domain transforms follow `f(omega) = int f(tau) e^{i omega tau} dtau`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("{op} is undefined for the damped model; use the frequency domain")]
    TimeDomainUnavailable { op: &'static str },
    #[error("{0} diverges at zero frequency")]
    ZeroFrequency(&'static str),
}

/// Mechanical object carrying the measured position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectModel {
    FreeMass { mass: f64 },
    Oscillator { mass: f64, omega0: f64 },
    DampedOscillator { mass: f64, omega0: f64, gamma: f64 },
}

impl ObjectModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let good = match *self {
            ObjectModel::FreeMass { mass } => ok(mass),
            ObjectModel::Oscillator { mass, omega0 } => ok(mass) && ok(omega0),
            ObjectModel::DampedOscillator { mass, omega0, gamma } => {
                ok(mass) && ok(omega0) && ok(gamma)
            }
        };
        if good {
            Ok(())
        } else {
            Err(DynamicsError::InvalidModel(format!(
                "parameters must be finite and positive: {self:?}"
            )))
        }
    }

    pub fn mass(&self) -> f64 {
        match *self {
            ObjectModel::FreeMass { mass }
            | ObjectModel::Oscillator { mass, .. }
            | ObjectModel::DampedOscillator { mass, .. } => mass,
        }
    }

    /// Heisenberg coefficients `(A, B)` with `q(t) = A(t) q + B(t) p`.
    pub fn ab_coefficients(&self, t: f64) -> Result<(f64, f64), DynamicsError> {
        match *self {
            ObjectModel::FreeMass { mass } => Ok((1.0, t / mass)),
            ObjectModel::Oscillator { mass, omega0 } => {
                let (s, c) = (omega0 * t).sin_cos();
                Ok((c, s / (mass * omega0)))
            }
            ObjectModel::DampedOscillator { .. } => {
                Err(DynamicsError::TimeDomainUnavailable {
                    op: "ab_coefficients",
                })
            }
        }
    }

    /// Position commutator `-i [q(t), q(t')] = hbar [A(t)B(t') - A(t')B(t)]`.
    pub fn commutator_kernel(&self, hbar: f64, t: f64, tp: f64) -> Result<f64, DynamicsError> {
        match *self {
            ObjectModel::FreeMass { mass } => Ok(hbar * (tp - t) / mass),
            ObjectModel::Oscillator { mass, omega0 } => {
                Ok(hbar * (omega0 * (tp - t)).sin() / (mass * omega0))
            }
            ObjectModel::DampedOscillator { .. } => {
                Err(DynamicsError::TimeDomainUnavailable {
                    op: "commutator_kernel",
                })
            }
        }
    }

    /// Causal response to an impulsive force; `chi(0) = 0`.
    pub fn susceptibility_time(&self, tau: f64) -> Result<f64, DynamicsError> {
        if tau <= 0.0 {
            return match self {
                ObjectModel::DampedOscillator { .. } => {
                    Err(DynamicsError::TimeDomainUnavailable {
                        op: "susceptibility_time",
                    })
                }
                _ => Ok(0.0),
            };
        }
        match *self {
            ObjectModel::FreeMass { mass } => Ok(tau / mass),
            ObjectModel::Oscillator { mass, omega0 } => {
                Ok((omega0 * tau).sin() / (mass * omega0))
            }
            ObjectModel::DampedOscillator { .. } => Err(DynamicsError::TimeDomainUnavailable {
                op: "susceptibility_time",
            }),
        }
    }

    /// `chi(omega) = 1/[m (omega0^2 - omega^2 - i gamma omega)]`.
    pub fn susceptibility_freq(&self, omega: f64) -> Result<Complex64, DynamicsError> {
        let (mass, w0sq, gamma) = match *self {
            ObjectModel::FreeMass { mass } => (mass, 0.0, 0.0),
            ObjectModel::Oscillator { mass, omega0 } => (mass, omega0 * omega0, 0.0),
            ObjectModel::DampedOscillator { mass, omega0, gamma } => {
                (mass, omega0 * omega0, gamma)
            }
        };
        let denom = Complex64::new(mass * (w0sq - omega * omega), -mass * gamma * omega);
        if denom.norm_sqr() == 0.0 {
            return Err(DynamicsError::ZeroFrequency("susceptibility"));
        }
        Ok(denom.inv())
    }

    /// Symmetrized intrinsic position spectrum of the bath-coupled object,
    /// `S(omega) = hbar coth(hbar omega / 2 T) Im chi(omega)`; at `T = 0`
    /// this is `hbar |Im chi|`. Boltzmann constant is 1.
    pub fn initial_spectrum(
        &self,
        omega: f64,
        temperature: f64,
        hbar: f64,
    ) -> Result<f64, DynamicsError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(DynamicsError::InvalidState(format!(
                "temperature must be finite and nonnegative, got {temperature}"
            )));
        }
        let im_chi = self.susceptibility_freq(omega)?.im;
        if temperature == 0.0 {
            return Ok(hbar * im_chi.abs());
        }
        if omega == 0.0 {
            return Err(DynamicsError::ZeroFrequency("thermal occupation"));
        }
        let x = hbar * omega / (2.0 * temperature);
        Ok(hbar * im_chi / x.tanh())
    }
}

/// Gaussian phase-space state: means and a symmetric covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean_q: f64,
    pub mean_p: f64,
    pub cov_qq: f64,
    pub cov_qp: f64,
    pub cov_pp: f64,
}

impl GaussianState {
    pub fn det_cov(&self) -> f64 {
        self.cov_qq * self.cov_pp - self.cov_qp * self.cov_qp
    }

    /// Heisenberg admissibility `det Sigma >= hbar^2/4` up to roundoff.
    pub fn is_admissible(&self, hbar: f64) -> bool {
        self.cov_qq > 0.0
            && self.cov_pp > 0.0
            && self.det_cov() >= 0.25 * hbar * hbar * (1.0 - 1e-9)
    }

    /// `hbar / (2 sqrt(det Sigma))`; 1 for pure states.
    pub fn purity(&self, hbar: f64) -> f64 {
        0.5 * hbar / self.det_cov().sqrt()
    }

    /// Evolve freely for `t` under the model's symplectic map.
    pub fn propagate(&self, model: &ObjectModel, t: f64) -> Result<GaussianState, DynamicsError> {
        let (m00, m01, m10, m11) = match *model {
            ObjectModel::FreeMass { mass } => (1.0, t / mass, 0.0, 1.0),
            ObjectModel::Oscillator { mass, omega0 } => {
                let (s, c) = (omega0 * t).sin_cos();
                (c, s / (mass * omega0), -mass * omega0 * s, c)
            }
            ObjectModel::DampedOscillator { .. } => {
                return Err(DynamicsError::TimeDomainUnavailable { op: "propagate" })
            }
        };
        Ok(GaussianState {
            mean_q: m00 * self.mean_q + m01 * self.mean_p,
            mean_p: m10 * self.mean_q + m11 * self.mean_p,
            cov_qq: m00 * m00 * self.cov_qq
                + 2.0 * m00 * m01 * self.cov_qp
                + m01 * m01 * self.cov_pp,
            cov_qp: m00 * m10 * self.cov_qq
                + (m00 * m11 + m01 * m10) * self.cov_qp
                + m01 * m11 * self.cov_pp,
            cov_pp: m10 * m10 * self.cov_qq
                + 2.0 * m10 * m11 * self.cov_qp
                + m11 * m11 * self.cov_pp,
        })
    }
}

/// Initial state of the object before the first measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialState {
    /// Oscillator ground state.
    Ground,
    /// Oscillator thermal state at the given temperature.
    Thermal { temperature: f64 },
    /// Explicit Gaussian state (any model).
    Gaussian {
        #[serde(flatten)]
        state: GaussianState,
    },
}

impl InitialState {
    /// Concrete means and covariance for the given model.
    pub fn resolve(&self, model: &ObjectModel, hbar: f64) -> Result<GaussianState, DynamicsError> {
        match *self {
            InitialState::Ground => Self::thermal_state(model, hbar, 0.0),
            InitialState::Thermal { temperature } => {
                if !(temperature.is_finite() && temperature >= 0.0) {
                    return Err(DynamicsError::InvalidState(format!(
                        "temperature must be finite and nonnegative, got {temperature}"
                    )));
                }
                Self::thermal_state(model, hbar, temperature)
            }
            InitialState::Gaussian { state } => {
                if !state.is_admissible(hbar) {
                    return Err(DynamicsError::InvalidState(format!(
                        "covariance violates det Sigma >= hbar^2/4: det = {}, bound = {}",
                        state.det_cov(),
                        0.25 * hbar * hbar
                    )));
                }
                Ok(state)
            }
        }
    }

    fn thermal_state(
        model: &ObjectModel,
        hbar: f64,
        temperature: f64,
    ) -> Result<GaussianState, DynamicsError> {
        let (mass, omega0) = match *model {
            ObjectModel::Oscillator { mass, omega0 }
            | ObjectModel::DampedOscillator { mass, omega0, .. } => (mass, omega0),
            ObjectModel::FreeMass { .. } => {
                return Err(DynamicsError::InvalidState(
                    "a free mass has no normalizable ground or thermal state; \
                     give an explicit Gaussian state"
                        .into(),
                ))
            }
        };
        let occupancy = if temperature == 0.0 {
            1.0
        } else {
            1.0 / (0.5 * hbar * omega0 / temperature).tanh()
        };
        Ok(GaussianState {
            mean_q: 0.0,
            mean_p: 0.0,
            cov_qq: 0.5 * hbar / (mass * omega0) * occupancy,
            cov_qp: 0.0,
            cov_pp: 0.5 * hbar * mass * omega0 * occupancy,
        })
    }
}

/// Free-evolution position correlator of the initial state,
/// `B(t, t') = <{q(t), q(t')}/2> - <q(t)><q(t')>`.
pub fn initial_correlator(
    model: &ObjectModel,
    state: &GaussianState,
    t: f64,
    tp: f64,
) -> Result<f64, DynamicsError> {
    let (a1, b1) = model.ab_coefficients(t)?;
    let (a2, b2) = model.ab_coefficients(tp)?;
    Ok(a1 * a2 * state.cov_qq + (a1 * b2 + a2 * b1) * state.cov_qp + b1 * b2 * state.cov_pp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn free_mass_commutator_golden() {
        let m = ObjectModel::FreeMass { mass: 2.0 };
        assert_relative_eq!(m.commutator_kernel(1.0, 0.0, 1.0).unwrap(), 0.5);
        // antisymmetry
        assert_relative_eq!(m.commutator_kernel(1.0, 1.0, 0.0).unwrap(), -0.5);
    }

    #[test]
    fn susceptibility_is_causal_with_zero_at_origin() {
        let free = ObjectModel::FreeMass { mass: 1.0 };
        let osc = ObjectModel::Oscillator { mass: 1.0, omega0: 2.0 };
        assert_eq!(free.susceptibility_time(0.0).unwrap(), 0.0);
        assert_eq!(osc.susceptibility_time(-1.0).unwrap(), 0.0);
        assert_relative_eq!(free.susceptibility_time(2.0).unwrap(), 2.0);
        assert_relative_eq!(osc.susceptibility_time(1.0).unwrap(), 2.0_f64.sin() / 2.0);
    }

    #[test]
    fn damped_susceptibility_on_resonance() {
        let m = ObjectModel::DampedOscillator { mass: 1.0, omega0: 1.0, gamma: 0.1 };
        let chi = m.susceptibility_freq(1.0).unwrap();
        assert!(chi.re.abs() < 1e-12);
        assert_relative_eq!(chi.im, 10.0, max_relative = 1e-12);
        // consistency between time and frequency pictures for the undamped
        // oscillator: numerically transform chi(tau)
        let osc = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let omega = 0.5;
        let dt = 1e-4_f64;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut tau = dt;
        while tau < 2000.0 {
            // soft cutoff keeps the improper integral convergent
            let damp = (-tau * 5e-3).exp();
            acc += osc.susceptibility_time(tau).unwrap()
                * damp
                * (Complex64::i() * omega * tau).exp()
                * dt;
            tau += dt;
        }
        let chi_ref = ObjectModel::DampedOscillator { mass: 1.0, omega0: 1.0, gamma: 5e-3 }
            .susceptibility_freq(omega)
            .unwrap();
        assert_relative_eq!(acc.re, chi_ref.re, max_relative = 1e-2);
    }

    #[test]
    fn ground_state_correlator_oscillates() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let state = InitialState::Ground.resolve(&model, 1.0).unwrap();
        assert_relative_eq!(state.cov_qq, 0.5);
        assert_relative_eq!(state.cov_pp, 0.5);
        let b = initial_correlator(&model, &state, 0.0, std::f64::consts::PI).unwrap();
        assert_relative_eq!(b, -0.5, max_relative = 1e-12);
    }

    #[test]
    fn free_mass_mixed_state_correlator() {
        let model = ObjectModel::FreeMass { mass: 1.0 };
        let state = GaussianState {
            mean_q: 0.0,
            mean_p: 0.0,
            cov_qq: 1.0,
            cov_qp: 0.0,
            cov_pp: 1.0,
        };
        for t in [0.5, 1.0, 2.0] {
            let b = initial_correlator(&model, &state, t, t).unwrap();
            assert_relative_eq!(b, 1.0 + t * t, max_relative = 1e-12);
        }
    }

    #[test]
    fn thermal_occupancy_reduces_to_ground_at_zero() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let g = InitialState::Ground.resolve(&model, 1.0).unwrap();
        let t0 = InitialState::Thermal { temperature: 0.0 }.resolve(&model, 1.0).unwrap();
        assert_eq!(g, t0);
        let hot = InitialState::Thermal { temperature: 2.0 }.resolve(&model, 1.0).unwrap();
        assert_relative_eq!(hot.cov_qq, 0.5 / 0.25_f64.tanh(), max_relative = 1e-12);
        assert!(hot.purity(1.0) < 1.0);
    }

    #[test]
    fn fdt_spectrum_golden_and_symmetry() {
        let m = ObjectModel::DampedOscillator { mass: 1.0, omega0: 1.0, gamma: 0.1 };
        assert_relative_eq!(m.initial_spectrum(1.0, 0.0, 1.0).unwrap(), 10.0, max_relative = 1e-12);
        for &w in &[0.3, 0.9, 1.7] {
            let plus = m.initial_spectrum(w, 1.5, 1.0).unwrap();
            let minus = m.initial_spectrum(-w, 1.5, 1.0).unwrap();
            assert_relative_eq!(plus, minus, max_relative = 1e-12);
            assert!(plus >= 0.0);
        }
        assert!(m.initial_spectrum(0.0, 1.0, 1.0).is_err());
        assert!(m.initial_spectrum(0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn propagation_is_symplectic_and_spreads_free_mass() {
        let model = ObjectModel::FreeMass { mass: 2.0 };
        let s = GaussianState {
            mean_q: 1.0,
            mean_p: -0.5,
            cov_qq: 0.7,
            cov_qp: 0.1,
            cov_pp: 0.9,
        };
        let out = s.propagate(&model, 3.0).unwrap();
        assert_relative_eq!(out.det_cov(), s.det_cov(), max_relative = 1e-12);
        assert_relative_eq!(out.mean_q, 1.0 + 3.0 * -0.5 / 2.0);
        assert_relative_eq!(
            out.cov_qq,
            0.7 + 2.0 * 1.5 * 0.1 + 1.5 * 1.5 * 0.9,
            max_relative = 1e-12
        );
        // oscillator ground state is stationary
        let osc = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let g = InitialState::Ground.resolve(&osc, 1.0).unwrap();
        let rot = g.propagate(&osc, 0.7).unwrap();
        assert_relative_eq!(rot.cov_qq, g.cov_qq, max_relative = 1e-12);
        assert_relative_eq!(rot.cov_qp, g.cov_qp, epsilon = 1e-15);
    }

    #[test]
    fn inadmissible_covariance_is_rejected() {
        let bad = InitialState::Gaussian {
            state: GaussianState {
                mean_q: 0.0,
                mean_p: 0.0,
                cov_qq: 0.1,
                cov_qp: 0.0,
                cov_pp: 0.1,
            },
        };
        let model = ObjectModel::FreeMass { mass: 1.0 };
        assert!(bad.resolve(&model, 1.0).is_err());
        assert!(bad.resolve(&model, 0.1).is_ok());
    }
}
