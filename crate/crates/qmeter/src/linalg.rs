//! Thin eigenvalue helpers on top of `nalgebra`.
//!
//! Hermitian complex matrices are handled through the standard real
//! embedding `H = X + iY -> [[X, -Y], [Y, X]]`, whose spectrum is that of
//! `H` with every eigenvalue doubled.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

/// Eigenvalues and eigenvectors of a real symmetric matrix, ascending.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let se = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs[[row, col]] = se.eigenvectors[(row, src)];
        }
    }
    (vals, vecs)
}

/// Eigenvalues of a Hermitian complex matrix, ascending.
pub fn hermitian_eigenvalues(a: &Array2<Complex64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut emb = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = a[[i, j]];
            emb[(i, j)] = v.re;
            emb[(n + i, n + j)] = v.re;
            emb[(i, n + j)] = -v.im;
            emb[(n + i, j)] = v.im;
        }
    }
    let se = emb.symmetric_eigen();
    let mut vals: Vec<f64> = se.eigenvalues.iter().cloned().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // doubled spectrum: every second entry
    vals.into_iter().step_by(2).collect()
}

/// Smallest eigenvalue of a Hermitian complex matrix.
pub fn min_eigenvalue_hermitian(a: &Array2<Complex64>) -> f64 {
    *hermitian_eigenvalues(a)
        .first()
        .expect("matrix must be non-empty")
}

/// Frobenius distance between two complex matrices.
pub fn frobenius_distance(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermitian_eigenvalues_of_pauli_like_matrix() {
        // [[1, i], [-i, 1]] has eigenvalues 0 and 2
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = Complex64::new(1.0, 0.0);
        a[[1, 1]] = Complex64::new(1.0, 0.0);
        a[[0, 1]] = Complex64::new(0.0, 1.0);
        a[[1, 0]] = Complex64::new(0.0, -1.0);
        let vals = hermitian_eigenvalues(&a);
        assert_relative_eq!(vals[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_eigen_recovers_diagonal() {
        let mut a = Array2::zeros((3, 3));
        a[[0, 0]] = 3.0;
        a[[1, 1]] = -1.0;
        a[[2, 2]] = 0.5;
        let (vals, _) = symmetric_eigen(&a);
        assert_relative_eq!(vals[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(vals[2], 3.0, epsilon = 1e-12);
    }
}
