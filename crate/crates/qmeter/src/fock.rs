//! Truncated oscillator number basis and its position grid.
//!
//! Operators live in the `dim` lowest number states of a reference
//! oscillator. Position is tridiagonal, `q_{n,n+1} = x_zp sqrt(n+1)` with
//! `x_zp = sqrt(hbar / 2 m omega0)`, and its eigendecomposition
//! `q = V diag(x) V^T` doubles as a discrete position representation:
//! conjugating by `V` turns any function of position into a diagonal
//! matrix over the grid `x`. The decomposition is computed once per space.
//!
//! Truncation is only trustworthy while population stays away from the
//! top of the ladder; callers watch [`FockSpace::top_occupancy`].

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::symmetric_eigen;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("invalid basis parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Number basis of a reference oscillator with a cached position grid.
#[derive(Debug, Clone)]
pub struct FockSpace {
    dim: usize,
    mass: f64,
    omega0: f64,
    hbar: f64,
    dvr_x: Vec<f64>,
    dvr_v: Array2<f64>,
}

impl FockSpace {
    pub fn oscillator(dim: usize, mass: f64, omega0: f64, hbar: f64) -> Result<Self, FockError> {
        if dim < 4 {
            return Err(FockError::InvalidParameter {
                name: "dim",
                reason: format!("need at least 4 levels, got {dim}"),
            });
        }
        for (name, v) in [("mass", mass), ("omega0", omega0), ("hbar", hbar)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FockError::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        let x_zp = (0.5 * hbar / (mass * omega0)).sqrt();
        let mut q = Array2::<f64>::zeros((dim, dim));
        for n in 0..dim - 1 {
            let v = x_zp * ((n + 1) as f64).sqrt();
            q[[n, n + 1]] = v;
            q[[n + 1, n]] = v;
        }
        let (dvr_x, dvr_v) = symmetric_eigen(&q);
        Ok(FockSpace {
            dim,
            mass,
            omega0,
            hbar,
            dvr_x,
            dvr_v,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Tridiagonal position operator in the number basis.
    pub fn position_matrix(&self) -> Array2<f64> {
        let x_zp = (0.5 * self.hbar / (self.mass * self.omega0)).sqrt();
        let mut q = Array2::<f64>::zeros((self.dim, self.dim));
        for n in 0..self.dim - 1 {
            let v = x_zp * ((n + 1) as f64).sqrt();
            q[[n, n + 1]] = v;
            q[[n + 1, n]] = v;
        }
        q
    }

    /// Momentum operator, `p_{n,n+1} = -i p_zp sqrt(n+1)` and h.c.
    pub fn momentum_matrix(&self) -> Array2<Complex64> {
        let p_zp = (0.5 * self.hbar * self.mass * self.omega0).sqrt();
        let mut p = Array2::<Complex64>::zeros((self.dim, self.dim));
        for n in 0..self.dim - 1 {
            let v = p_zp * ((n + 1) as f64).sqrt();
            p[[n, n + 1]] = Complex64::new(0.0, -v);
            p[[n + 1, n]] = Complex64::new(0.0, v);
        }
        p
    }

    /// Diagonal phases of `exp(-i H0 dt / hbar)` for the reference
    /// oscillator Hamiltonian.
    pub fn evolution_phases(&self, dt: f64) -> Vec<Complex64> {
        (0..self.dim)
            .map(|n| {
                let angle = -self.omega0 * (n as f64 + 0.5) * dt;
                Complex64::from_polar(1.0, angle)
            })
            .collect()
    }

    /// Position eigenvalues, ascending.
    pub fn dvr_points(&self) -> &[f64] {
        &self.dvr_x
    }

    /// Orthogonal map with `q = V diag(x) V^T`.
    pub fn dvr_transform(&self) -> &Array2<f64> {
        &self.dvr_v
    }

    /// Density matrix of the number ground state.
    pub fn ground_density(&self) -> Array2<Complex64> {
        let mut rho = Array2::<Complex64>::zeros((self.dim, self.dim));
        rho[[0, 0]] = Complex64::new(1.0, 0.0);
        rho
    }

    /// Density matrix of the normalized coherent state `|alpha>`.
    pub fn coherent_density(&self, alpha: Complex64) -> Array2<Complex64> {
        let mut amp = Vec::with_capacity(self.dim);
        let mut a = Complex64::new(1.0, 0.0);
        for n in 0..self.dim {
            if n > 0 {
                a *= alpha / (n as f64).sqrt();
            }
            amp.push(a);
        }
        let norm: f64 = amp.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut rho = Array2::<Complex64>::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            for j in 0..self.dim {
                rho[[i, j]] = amp[i] * amp[j].conj() / (norm * norm);
            }
        }
        rho
    }

    /// Combined population of the top `levels` number states.
    pub fn top_occupancy(&self, rho: &Array2<Complex64>, levels: usize) -> f64 {
        (self.dim.saturating_sub(levels)..self.dim)
            .map(|n| rho[[n, n]].re)
            .sum()
    }
}
