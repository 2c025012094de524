//! Analytic fixed-point sweeps over Kolter's example.
//!
//! For each `(d1, eta)` grid point the regularized TD fixed point is solved
//! in closed form and scored by `||X w - v_pi||`. The `eta = 0` row can
//! contain a genuine singularity where `det(A)` crosses zero between grid
//! neighbours; those roots are located by bisection and reported as
//! explicit rows with an infinite error marker, since the fixed-point error
//! is unbounded as the weighting approaches the root.

use tdlab::envs::make_kolter;
use tdlab::linalg::Vector;
use tdlab::mdp::Policy;
use tdlab::oracles::{build_evaluation_operators_with_dist, evaluation_fixed_point_discounted};

use crate::config::{ExperimentConfig, GridSpec};
use crate::{HarnessError, Result};

/// One sweep entry. `singular = true` rows carry the bisected root location
/// and an infinite error.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub d1: f64,
    pub eta: f64,
    pub error: f64,
    pub singular: bool,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub epsilon: f64,
    pub gamma: f64,
    pub rows: Vec<SweepRow>,
}

/// `det(A + eta I)` as a function of the sampling weight.
fn system_determinant(epsilon: f64, gamma: f64, eta: f64, d1: f64) -> Result<f64> {
    let inst = make_kolter(epsilon, d1, gamma).map_err(HarnessError::Core)?;
    let pi = Policy::uniform(2, 1);
    let ops = build_evaluation_operators_with_dist(&inst.mdp, &inst.x, &inst.d_mu, &pi, gamma)
        .map_err(HarnessError::Core)?;
    let k = ops.dim();
    let m = &ops.a + eta * tdlab::linalg::Matrix::identity(k, k);
    Ok(m.determinant())
}

fn fixed_point_error(epsilon: f64, gamma: f64, eta: f64, d1: f64) -> Result<f64> {
    let inst = make_kolter(epsilon, d1, gamma).map_err(HarnessError::Core)?;
    let pi = Policy::uniform(2, 1);
    let ops = build_evaluation_operators_with_dist(&inst.mdp, &inst.x, &inst.d_mu, &pi, gamma)
        .map_err(HarnessError::Core)?;
    match evaluation_fixed_point_discounted(&ops, eta) {
        Ok(w) => {
            let approx: Vector = inst.x.matrix() * &w;
            Ok((approx - &inst.v_pi).norm())
        }
        Err(tdlab::Error::SingularFixedPoint(_)) => Ok(f64::INFINITY),
        Err(e) => Err(HarnessError::Core(e)),
    }
}

/// Bisect a sign change of `det(A + eta I)` inside `(lo, hi)`.
fn bisect_root(
    epsilon: f64,
    gamma: f64,
    eta: f64,
    mut lo: f64,
    mut hi: f64,
    f_lo: f64,
) -> Result<f64> {
    let mut sign_lo = f_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = system_determinant(epsilon, gamma, eta, mid)?;
        if f_mid == 0.0 || hi - lo < 1e-14 {
            return Ok(mid);
        }
        if f_mid.signum() == sign_lo {
            lo = mid;
            sign_lo = f_mid.signum();
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sweep the fixed-point error over the `d1` grid for each ridge weight.
pub fn sweep_fixed_points(config: &ExperimentConfig) -> Result<SweepTable> {
    if config.experiment.env != crate::config::EnvKind::Kolter {
        return Err(HarnessError::Config(
            "fixed-point sweeps are defined for the kolter environment".into(),
        ));
    }
    let section = &config.experiment.kolter;
    let grid = config
        .sweep
        .d1_grid
        .clone()
        .unwrap_or(GridSpec { start: 0.005, stop: 0.995, step: 0.005 });
    let points = grid.points();
    if points.is_empty() {
        return Err(HarnessError::Config("empty d1 grid".into()));
    }
    let etas = config.eta_values();

    let mut rows = Vec::new();
    for &eta in &etas {
        let mut dets = Vec::with_capacity(points.len());
        for &d1 in &points {
            rows.push(SweepRow {
                d1,
                eta,
                error: fixed_point_error(section.epsilon, section.gamma, eta, d1)?,
                singular: false,
            });
            dets.push(system_determinant(section.epsilon, section.gamma, eta, d1)?);
        }
        // locate determinant sign changes between neighbours: the fixed
        // point blows up at the enclosed root
        for i in 1..points.len() {
            if dets[i - 1] == 0.0 || dets[i] == 0.0 {
                continue; // exact zeros already yield infinite-error rows
            }
            if dets[i - 1].signum() != dets[i].signum() {
                let root = bisect_root(
                    section.epsilon,
                    section.gamma,
                    eta,
                    points[i - 1],
                    points[i],
                    dets[i - 1],
                )?;
                rows.push(SweepRow { d1: root, eta, error: f64::INFINITY, singular: true });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.eta
            .partial_cmp(&b.eta)
            .unwrap()
            .then(a.d1.partial_cmp(&b.d1).unwrap())
    });
    Ok(SweepTable { epsilon: section.epsilon, gamma: section.gamma, rows })
}

/// Render the sweep as CSV (`d1,eta,error,singular`); infinite errors are
/// written as `inf`.
pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = String::from("d1,eta,error,singular\n");
    for row in &table.rows {
        let err = if row.error.is_finite() {
            format!("{}", row.error)
        } else {
            "inf".to_string()
        };
        out.push_str(&format!("{},{},{},{}\n", row.d1, row.eta, err, row.singular));
    }
    out
}
