//! Feature matrices and the operations that depend on their geometry.

use crate::linalg::{self, Matrix, Vector};
use crate::mdp::StateActionDist;
use crate::{Error, Result};

/// Rank tolerance: a matrix counts as full column rank when its smallest
/// singular value exceeds this.
pub const RANK_TOL: f64 = 1e-10;

/// A real feature matrix (one row per state or state-action pair) with its
/// cached singular-value summary.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    x: Matrix,
    sigma_max: f64,
    sigma_min: f64,
}

/// Result of a column-rank check.
#[derive(Debug, Clone, Copy)]
pub struct RankReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub full_rank: bool,
}

impl FeatureMatrix {
    pub fn new(x: Matrix) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("empty feature matrix".into()));
        }
        let sv = linalg::singular_values(&x);
        Ok(Self {
            sigma_max: sv.max(),
            sigma_min: sv.min(),
            x,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vector {
        self.x.row(i).transpose()
    }

    /// Spectral norm `||X||`.
    pub fn norm(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Singular-value summary and the full-column-rank flag. A wide matrix
    /// (more columns than rows) can never have full column rank.
    pub fn check_rank(&self) -> RankReport {
        RankReport {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            full_rank: self.x.ncols() <= self.x.nrows() && self.sigma_min > RANK_TOL,
        }
    }

    /// Subtract the `d`-weighted feature mean from every row, so that the
    /// centered matrix annihilates `d`: `X_c^T d = 0`.
    pub fn center(&self, d: &StateActionDist) -> Result<FeatureMatrix> {
        if d.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "distribution of length {} vs {} feature rows",
                d.len(),
                self.rows()
            )));
        }
        let mean = self.x.transpose() * d.vector(); // K-vector
        let mut centered = self.x.clone();
        for i in 0..centered.nrows() {
            for j in 0..centered.ncols() {
                centered[(i, j)] -= mean[j];
            }
        }
        FeatureMatrix::new(centered)
    }

    /// Rescale so the spectral norm equals `target`.
    pub fn scale_to_norm(&self, target: f64) -> Result<FeatureMatrix> {
        if target <= 0.0 {
            return Err(Error::InvalidInput("target norm must be positive".into()));
        }
        if self.sigma_max == 0.0 {
            return Err(Error::InvalidInput("cannot rescale the zero matrix".into()));
        }
        FeatureMatrix::new(&self.x * (target / self.sigma_max))
    }
}

/// Ridge-regularized weighted projection onto the column space of `X`:
/// `X (X^T D X + eta I)^{-1} X^T D` with `D = diag(d)`.
///
/// For `eta = 0` this is the orthogonal projection in the `D`-weighted
/// inner product and requires full column rank.
pub fn projection_matrix(x: &FeatureMatrix, d: &StateActionDist, eta: f64) -> Result<Matrix> {
    if eta < 0.0 {
        return Err(Error::InvalidInput("ridge weight must be nonnegative".into()));
    }
    if d.len() != x.rows() {
        return Err(Error::DimensionMismatch(
            "distribution length differs from feature rows".into(),
        ));
    }
    let xd = x.matrix().transpose() * d.diagonal();
    let mut gram = &xd * x.matrix();
    let k = x.dim();
    for i in 0..k {
        gram[(i, i)] += eta;
    }
    if eta == 0.0 {
        let sv = linalg::singular_values(&gram);
        if sv.min() <= RANK_TOL * sv.max().max(1.0) {
            return Err(Error::SingularSystem(
                "X^T D X is singular and no ridge was supplied".into(),
            ));
        }
    }
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("X^T D X + eta I not invertible".into()))?;
    Ok(x.matrix() * inv * xd)
}
