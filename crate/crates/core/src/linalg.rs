//! Dense linear-algebra helpers.
//!
//! Everything here targets desk-scale problems (K <= 32, |S||A| <= 256),
//! so direct factorizations are used throughout: LU for solves, SVD for
//! singular values and spectral norms, Schur for eigenvalues. Determinism
//! is preferred over speed.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Solve `M x = rhs` by LU with full pivoting; errors on (numerical)
/// singularity.
pub fn solve(m: &Matrix, rhs: &Vector) -> Result<Vector> {
    let lu = m.clone().full_piv_lu();
    lu.solve(rhs)
        .ok_or_else(|| Error::SingularSystem(format!("{}x{} LU solve failed", m.nrows(), m.ncols())))
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vector {
    m.clone().svd(false, false).singular_values
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).max()
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value(m: &Matrix) -> f64 {
    singular_values(m).min()
}

/// Norm of `P` under the similarity transform `D^{1/2} P D^{-1/2}` with
/// `D = diag(d)`; `d` must be strictly positive.
pub fn weighted_operator_norm(p: &Matrix, d: &Vector) -> Result<f64> {
    if p.nrows() != p.ncols() || p.nrows() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} vs weight vector of length {}",
            p.nrows(),
            p.ncols(),
            d.len()
        )));
    }
    if d.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidInput(
            "weighted operator norm needs strictly positive weights".into(),
        ));
    }
    let sqrt_d: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
    let mut t = p.clone();
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            t[(i, j)] *= sqrt_d[i] / sqrt_d[j];
        }
    }
    Ok(spectral_norm(&t))
}

/// Eigenvalues of a general real square matrix.
///
/// Symmetric inputs take the robust symmetric path. For general matrices
/// the Schur iteration can stall on defective structured inputs (repeated
/// zero eigenvalues with nontrivial Jordan blocks), so the computation is
/// capped and retried under seeded random orthogonal similarity transforms,
/// which leave the spectrum exactly unchanged while breaking the structure
/// that stalls the QR sweep.
pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    let n = m.nrows();
    let symmetric = (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
    if symmetric {
        return m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .collect();
    }
    let attempt = |mat: Matrix| -> Option<Vec<Complex<f64>>> {
        nalgebra::linalg::Schur::try_new(mat, 1e-13, 200_000)
            .map(|s| s.complex_eigenvalues().iter().copied().collect())
    };
    if let Some(ev) = attempt(m.clone()) {
        return ev;
    }
    let mut rng = crate::rng::SplitMix64::new(0xE16E_5EED);
    for _ in 0..16 {
        let g = Matrix::from_fn(n, n, |_, _| rng.gauss());
        let q = g.qr().q();
        let rotated = q.transpose() * m * &q;
        if let Some(ev) = attempt(rotated) {
            return ev;
        }
    }
    unreachable!("Schur iteration failed under every similarity transform");
}

/// Largest real part among the eigenvalues.
pub fn max_real_eigenvalue(m: &Matrix) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral radius (largest eigenvalue modulus).
pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
