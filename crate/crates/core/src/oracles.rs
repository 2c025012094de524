//! Ground-truth machinery: evaluation operators, closed-form and iterative
//! fixed points, deterministic expected-update dynamics, and the bound
//! calculators that simulations are checked against.
//!
//! Operator conventions (everything desk-scale dense):
//!
//! * `A  = X^T D_mu (I - gamma P_pi) X`, `b = X^T D_mu r`, `C = X^T D_mu X`
//! * `Abar = X^T (D_mu - d_mu d_mu^T)(I - P_pi) X`,
//!   `bbar = X^T (D_mu - d_mu d_mu^T) r`
//!
//! The average-reward operator is written with the leading transpose; the
//! transpose-free form is dimensionally inconsistent and treated as a typo.

use nalgebra::Complex;

use crate::agents::{greedy_policy, mixture_policy, softmax_policy, BallPair};
use crate::features::{projection_matrix, FeatureMatrix, RANK_TOL};
use crate::linalg::{self, Matrix, Vector};
use crate::mdp::{
    build_transition_matrix, is_ergodic, stationary_distribution, Mdp, Policy, StateActionDist,
};
use crate::rng::SplitMix64;
use crate::{Error, Result};

const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// The evaluation operators for a fixed behavior/target policy pair,
/// together with enough context to evaluate fixed points and bounds.
#[derive(Debug, Clone)]
pub struct EvaluationOperators {
    pub a: Matrix,
    pub b: Vector,
    pub c: Matrix,
    pub a_bar: Matrix,
    pub b_bar: Vector,
    /// Stationary state-action distribution of the behavior chain.
    pub d_mu: Vector,
    /// Target-policy state-action transition matrix.
    pub p_pi: Matrix,
    /// Feature matrix (one row per pair).
    pub x: Matrix,
    /// Reward vector over pairs.
    pub r: Vector,
    pub gamma: f64,
}

/// Assemble the evaluation operators; errors when the behavior chain is not
/// ergodic.
pub fn build_evaluation_operators(
    mdp: &Mdp,
    x: &FeatureMatrix,
    mu: &Policy,
    pi: &Policy,
    gamma: f64,
) -> Result<EvaluationOperators> {
    if x.rows() != mdp.n_pairs() {
        return Err(Error::DimensionMismatch(format!(
            "feature matrix has {} rows for {} state-action pairs",
            x.rows(),
            mdp.n_pairs()
        )));
    }
    let p_mu = build_transition_matrix(mdp, mu)?;
    if !is_ergodic(&p_mu) {
        return Err(Error::NonErgodic("behavior state-action chain".into()));
    }
    let d_mu = stationary_distribution(&p_mu)?;
    let p_pi = build_transition_matrix(mdp, pi)?;
    let r = mdp.reward_vector();
    Ok(assemble_operators(x.matrix(), &d_mu, &p_pi, &r, gamma))
}

/// Assemble the evaluation operators under an explicit sampling weighting
/// instead of the chain's stationary distribution. This is the i.i.d.
/// sampling model where pairs are drawn from `d_mu` directly (Kolter's
/// free weighting is the canonical use).
pub fn build_evaluation_operators_with_dist(
    mdp: &Mdp,
    x: &FeatureMatrix,
    d_mu: &StateActionDist,
    pi: &Policy,
    gamma: f64,
) -> Result<EvaluationOperators> {
    if x.rows() != mdp.n_pairs() || d_mu.len() != mdp.n_pairs() {
        return Err(Error::DimensionMismatch(
            "features and weighting must cover all state-action pairs".into(),
        ));
    }
    let p_pi = build_transition_matrix(mdp, pi)?;
    let r = mdp.reward_vector();
    Ok(assemble_operators(x.matrix(), d_mu.vector(), &p_pi, &r, gamma))
}

fn assemble_operators(
    x: &Matrix,
    d_mu: &Vector,
    p_pi: &Matrix,
    r: &Vector,
    gamma: f64,
) -> EvaluationOperators {
    let n = x.nrows();
    let d = Matrix::from_diagonal(d_mu);
    let xd = x.transpose() * &d;
    let a = &xd * (Matrix::identity(n, n) - gamma * p_pi) * x;
    let b = &xd * r;
    let c = &xd * x;
    let centered = &d - d_mu * d_mu.transpose();
    let a_bar = x.transpose() * &centered * (Matrix::identity(n, n) - p_pi) * x;
    let b_bar = x.transpose() * &centered * r;
    EvaluationOperators {
        a,
        b,
        c,
        a_bar,
        b_bar,
        d_mu: d_mu.clone(),
        p_pi: p_pi.clone(),
        x: x.clone(),
        r: r.clone(),
        gamma,
    }
}

impl EvaluationOperators {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Regularized TD fixed point `(A + eta I) w = b`. A singular system with
/// `eta = 0` is reported, not solved: that is the blow-up regime.
pub fn evaluation_fixed_point_discounted(
    ops: &EvaluationOperators,
    eta: f64,
) -> Result<Vector> {
    let k = ops.dim();
    let m = &ops.a + eta * Matrix::identity(k, k);
    let sv = linalg::singular_values(&m);
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::SingularFixedPoint(format!(
            "A + {eta} I is numerically singular (sigma_min = {:.3e})",
            sv.min()
        )));
    }
    let w = linalg::solve(&m, &ops.b)
        .map_err(|_| Error::SingularFixedPoint("LU solve of A + eta I failed".into()))?;
    let residual = (&m * &w - &ops.b).norm();
    if residual > SOLVE_RESIDUAL_TOL * (1.0 + ops.b.norm()) {
        return Err(Error::SingularFixedPoint(format!(
            "solution residual {residual:.3e} above tolerance"
        )));
    }
    Ok(w)
}

/// Regularized average-reward TD fixed point: `w` solves
/// `(Abar + eta I) w = bbar`, and the limiting reward-rate estimate is
/// `rbar = d_mu^T (r + P_pi X w - X w)`.
pub fn evaluation_fixed_point_average(
    ops: &EvaluationOperators,
    eta: f64,
) -> Result<(Vector, f64)> {
    let k = ops.dim();
    let m = &ops.a_bar + eta * Matrix::identity(k, k);
    let sv = linalg::singular_values(&m);
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::SingularFixedPoint(format!(
            "Abar + {eta} I is numerically singular (sigma_min = {:.3e})",
            sv.min()
        )));
    }
    let w = linalg::solve(&m, &ops.b_bar)?;
    let xw = &ops.x * &w;
    let rbar = ops.d_mu.dot(&(&ops.r + &ops.p_pi * &xw - &xw));
    Ok((w, rbar))
}

/// Mean squared projected Bellman error `||A w - b||^2` in the
/// `C^{-1}`-weighted norm.
pub fn mspbe(w: &Vector, ops: &EvaluationOperators) -> Result<f64> {
    let resid = &ops.a * w - &ops.b;
    let sv = linalg::singular_values(&ops.c);
    if sv.min() <= RANK_TOL * sv.max().max(1.0) {
        return Err(Error::SingularSystem("C = X^T D X is singular".into()));
    }
    let y = linalg::solve(&ops.c, &resid)?;
    Ok(resid.dot(&y))
}

/// Which learner's mean-field dynamics are being queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFieldAlgorithm {
    /// Discounted evaluation: parameter is `w` (K).
    Alg1QEval,
    /// Average-reward evaluation: parameter is `[rbar; w]` (K+1).
    Alg2DiffQEval,
    /// Q-learning: parameter is `w` (K).
    Alg3QLearning,
    /// Gradient Q-learning: parameter is `[u; w]` (2K).
    Alg4GradientQ,
    /// Differential Q-learning: parameter is `[rbar; w]` (K+1).
    Alg5DiffQLearning,
}

/// How a policy is derived from a weight vector inside the mean field.
#[derive(Debug, Clone)]
pub enum PolicyFromValues {
    Fixed(Policy),
    Greedy,
    Softmax { tau: f64 },
    /// `(1 - epsilon) fixed + epsilon softmax(tau)`.
    Mixture { fixed: Policy, epsilon: f64, tau: f64 },
}

impl PolicyFromValues {
    fn realize(&self, x: &FeatureMatrix, mdp: &Mdp, weights: &Vector) -> Result<Policy> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        match self {
            PolicyFromValues::Fixed(p) => Ok(p.clone()),
            PolicyFromValues::Greedy => greedy_policy(x, ns, na, weights),
            PolicyFromValues::Softmax { tau } => softmax_policy(x, ns, na, weights, *tau),
            PolicyFromValues::Mixture { fixed, epsilon, tau } => {
                let soft = softmax_policy(x, ns, na, weights, *tau)?;
                mixture_policy(fixed, &soft, *epsilon)
            }
        }
    }
}

/// Context for expected-update dynamics: everything fixed except the target
/// weights.
#[derive(Debug, Clone)]
pub struct MeanField {
    pub mdp: Mdp,
    pub x: FeatureMatrix,
    pub gamma: f64,
    pub eta: f64,
    pub behavior: PolicyFromValues,
    pub target: PolicyFromValues,
    /// Applied to `theta` before policies and bootstrap terms, matching the
    /// projected update rules; `None` leaves `theta` untouched.
    pub balls: Option<BallPair>,
}

struct FrozenOperators {
    ops: EvaluationOperators,
}

impl MeanField {
    fn theta_for_policies(&self, alg: MeanFieldAlgorithm, theta: &Vector) -> Vector {
        match alg {
            MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => {
                theta.rows(1, theta.len() - 1).into_owned()
            }
            _ => theta.clone(),
        }
    }

    fn projected(&self, theta: &Vector) -> Vector {
        match self.balls {
            Some(b) => crate::agents::project_ball(theta, b.r1),
            None => theta.clone(),
        }
    }

    /// Build the behavior/target dependent operators at a frozen target.
    fn freeze(&self, alg: MeanFieldAlgorithm, theta: &Vector) -> Result<FrozenOperators> {
        let policy_weights = self.theta_for_policies(alg, theta);
        let mu = self
            .behavior
            .realize(&self.x, &self.mdp, &policy_weights)?;
        let pi = self.target.realize(&self.x, &self.mdp, &policy_weights)?;
        let ops = build_evaluation_operators(&self.mdp, &self.x, &mu, &pi, self.gamma)?;
        Ok(FrozenOperators { ops })
    }

    /// Exact mean-field update direction `hbar(theta) - Gbar(theta) params`
    /// for the given algorithm at frozen target weights.
    pub fn expected_dynamics(
        &self,
        alg: MeanFieldAlgorithm,
        theta: &Vector,
        params: &Vector,
    ) -> Result<Vector> {
        let theta = self.projected(theta);
        let k = self.x.dim();
        let frozen = self.freeze(alg, &theta)?;
        let ops = &frozen.ops;
        match alg {
            MeanFieldAlgorithm::Alg1QEval | MeanFieldAlgorithm::Alg3QLearning => {
                // h = b + gamma X^T D P X theta, G = C + eta I
                let h = &ops.b + self.gamma * ops.x.transpose()
                    * Matrix::from_diagonal(&ops.d_mu)
                    * &ops.p_pi
                    * &ops.x
                    * &theta;
                let g = &ops.c + self.eta * Matrix::identity(k, k);
                Ok(h - g * params)
            }
            MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => {
                Ok(self.stacked_h(ops, &theta) - self.stacked_g(ops) * params)
            }
            MeanFieldAlgorithm::Alg4GradientQ => {
                // params = [u; w]
                let g = self.gradient_q_g(ops);
                let mut h = Vector::zeros(2 * k);
                h.rows_mut(0, k).copy_from(&ops.b);
                Ok(h - g * params)
            }
        }
    }

    /// Stacked `[1, 0; 0, C + eta I]`.
    fn stacked_g(&self, ops: &EvaluationOperators) -> Matrix {
        let k = ops.dim();
        let mut g = Matrix::zeros(k + 1, k + 1);
        g[(0, 0)] = 1.0;
        let block = &ops.c + self.eta * Matrix::identity(k, k);
        g.view_mut((1, 1), (k, k)).copy_from(&block);
        g
    }

    /// Stacked `h1 + H2 theta` for the average-reward forms.
    fn stacked_h(&self, ops: &EvaluationOperators, theta: &Vector) -> Vector {
        let k = ops.dim();
        let theta_r = theta[0];
        let theta_w = theta.rows(1, k).into_owned();
        let d = Matrix::from_diagonal(&ops.d_mu);
        let n = ops.p_pi.nrows();
        let xw = &ops.x * &theta_w;
        let mut h = Vector::zeros(k + 1);
        // reward-rate row: d^T r + d^T (P - I) X theta_w
        h[0] = ops.d_mu.dot(&ops.r) + ops.d_mu.dot(&(&ops.p_pi * &xw - &xw));
        // weight rows: X^T D r - X^T d theta_r + X^T D P X theta_w
        let weight = ops.x.transpose() * &d * &ops.r
            - ops.x.transpose() * &ops.d_mu * theta_r
            + ops.x.transpose() * &d * &ops.p_pi * &xw;
        h.rows_mut(1, k).copy_from(&weight);
        debug_assert_eq!(n, ops.x.nrows());
        h
    }

    /// Stacked `[C, A; -A^T, eta I]` for Gradient Q.
    fn gradient_q_g(&self, ops: &EvaluationOperators) -> Matrix {
        let k = ops.dim();
        let mut g = Matrix::zeros(2 * k, 2 * k);
        g.view_mut((0, 0), (k, k)).copy_from(&ops.c);
        g.view_mut((0, k), (k, k)).copy_from(&ops.a);
        g.view_mut((k, 0), (k, k)).copy_from(&(-ops.a.transpose()));
        let ridge = self.eta * Matrix::identity(k, k);
        g.view_mut((k, k), (k, k)).copy_from(&ridge);
        g
    }

    /// The tracked solution the main network converges to at frozen target
    /// weights: `Gbar(theta)^{-1} hbar(theta)` (the `w` block for Gradient
    /// Q).
    pub fn w_star_map(&self, alg: MeanFieldAlgorithm, theta: &Vector) -> Result<Vector> {
        let theta = self.projected(theta);
        let k = self.x.dim();
        let frozen = self.freeze(alg, &theta)?;
        let ops = &frozen.ops;
        match alg {
            MeanFieldAlgorithm::Alg1QEval | MeanFieldAlgorithm::Alg3QLearning => {
                let h = &ops.b + self.gamma * ops.x.transpose()
                    * Matrix::from_diagonal(&ops.d_mu)
                    * &ops.p_pi
                    * &ops.x
                    * &theta;
                let g = &ops.c + self.eta * Matrix::identity(k, k);
                linalg::solve(&g, &h)
            }
            MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => {
                let g = self.stacked_g(ops);
                let h = self.stacked_h(ops, &theta);
                linalg::solve(&g, &h)
            }
            MeanFieldAlgorithm::Alg4GradientQ => {
                let g = self.gradient_q_g(ops);
                let mut h = Vector::zeros(2 * k);
                h.rows_mut(0, k).copy_from(&ops.b);
                let kappa = linalg::solve(&g, &h)?;
                Ok(kappa.rows(k, k).into_owned())
            }
        }
    }

    /// Operators at a frozen weight vector, exposed for the control fixed
    /// points: behavior and target policies are derived from `w`.
    pub fn operators_at(&self, alg: MeanFieldAlgorithm, weights: &Vector) -> Result<EvaluationOperators> {
        Ok(self.freeze(alg, weights)?.ops)
    }
}

/// Outcome of an iterative fixed-point search.
#[derive(Debug, Clone)]
pub struct FixedPointReport {
    /// Converged parameter (stacked for the average-reward forms).
    pub point: Vector,
    /// Residual of the defining linear system at the converged policies.
    pub residual: f64,
    pub iterations: u64,
    /// All starts agreed within `1e-8`.
    pub starts_agree: bool,
}

const FIXED_POINT_TOL: f64 = 1e-10;
const MAX_FIXED_POINT_ITERS: u64 = 1_000_000;
const DAMPING_TRIGGER: u64 = 10_000;

fn iterate_map<F>(map: F, start: Vector) -> Result<(Vector, u64)>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut theta = start;
    let mut damping = 1.0;
    let mut last_step = f64::INFINITY;
    for iter in 0..MAX_FIXED_POINT_ITERS {
        let next = map(&theta)?;
        let step = (&next - &theta).norm();
        if !step.is_finite() {
            return Err(Error::NoCertifiedFixedPoint(
                "fixed-point iteration diverged to non-finite values".into(),
            ));
        }
        theta = if damping < 1.0 {
            (1.0 - damping) * &theta + damping * next
        } else {
            next
        };
        if step <= FIXED_POINT_TOL {
            return Ok((theta, iter + 1));
        }
        // plain iteration is only guaranteed to contract under the norm
        // conditions; damp when it stalls
        if iter == DAMPING_TRIGGER && step >= last_step {
            damping = 0.5;
        }
        last_step = step;
    }
    Err(Error::NoCertifiedFixedPoint(format!(
        "no convergence within {MAX_FIXED_POINT_ITERS} iterations (last step {last_step:.3e})"
    )))
}

fn multi_start_points(dim: usize, scale: f64) -> Vec<Vector> {
    let mut starts = vec![Vector::zeros(dim)];
    let mut rng = SplitMix64::new(0x5EED);
    for _ in 0..4 {
        let v = Vector::from_fn(dim, |_, _| rng.gauss());
        let n = v.norm();
        starts.push(if n > 0.0 { v * (scale / n) } else { v });
    }
    starts
}

fn run_multi_start<F>(map: F, dim: usize, scale: f64) -> Result<FixedPointReport>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut found: Option<(Vector, u64)> = None;
    let mut agree = true;
    for start in multi_start_points(dim, scale) {
        let (point, iters) = iterate_map(&map, start)?;
        if let Some((ref existing, _)) = found {
            if (existing - &point).norm() > 1e-8 {
                agree = false;
            }
        } else {
            found = Some((point, iters));
        }
    }
    let (point, iterations) = found.expect("at least one start");
    Ok(FixedPointReport { point, residual: f64::NAN, iterations, starts_agree: agree })
}

fn start_scale(balls: Option<BallPair>) -> f64 {
    match balls {
        Some(b) => b.r2 / 2.0,
        None => 0.5,
    }
}

/// Control fixed point of Q-learning with a target network: iterate
/// `theta <- (X^T D_mu_theta X + eta I)^{-1} X^T D_mu_theta
/// (r + gamma P_pi_theta X theta)` from multiple starts and report the
/// residual of `(A + eta I) w - b` at the converged policies.
pub fn control_fixed_point_discounted(mf: &MeanField) -> Result<FixedPointReport> {
    let k = mf.x.dim();
    let alg = MeanFieldAlgorithm::Alg3QLearning;
    let map = |theta: &Vector| mf.w_star_map(alg, theta);
    let mut report = run_multi_start(map, k, start_scale(mf.balls))?;
    let ops = mf.operators_at(alg, &report.point)?;
    let m = &ops.a + mf.eta * Matrix::identity(k, k);
    report.residual = (m * &report.point - &ops.b).norm();
    Ok(report)
}

/// Fixed point of Gradient Q-learning: self-consistent solution of
/// `(A^T C^{-1} A + eta I) w = A^T C^{-1} b` with policies frozen at `w`.
pub fn gradient_q_fixed_point(mf: &MeanField) -> Result<FixedPointReport> {
    let k = mf.x.dim();
    let alg = MeanFieldAlgorithm::Alg4GradientQ;
    let map = |w: &Vector| -> Result<Vector> {
        let ops = mf.operators_at(alg, w)?;
        solve_gradient_q_system(&ops, mf.eta)
    };
    let mut report = run_multi_start(map, k, start_scale(mf.balls))?;
    let ops = mf.operators_at(alg, &report.point)?;
    let m = gradient_q_lhs(&ops, mf.eta)?;
    let rhs = gradient_q_rhs(&ops)?;
    report.residual = (m * &report.point - rhs).norm();
    Ok(report)
}

fn gradient_q_lhs(ops: &EvaluationOperators, eta: f64) -> Result<Matrix> {
    let k = ops.dim();
    let c_inv = ops
        .c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("C is singular".into()))?;
    Ok(ops.a.transpose() * &c_inv * &ops.a + eta * Matrix::identity(k, k))
}

fn gradient_q_rhs(ops: &EvaluationOperators) -> Result<Vector> {
    let c_inv = ops
        .c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("C is singular".into()))?;
    Ok(ops.a.transpose() * &c_inv * &ops.b)
}

fn solve_gradient_q_system(ops: &EvaluationOperators, eta: f64) -> Result<Vector> {
    linalg::solve(&gradient_q_lhs(ops, eta)?, &gradient_q_rhs(ops)?)
}

/// The regularized MSPBE objective with target weights `theta`:
/// `||A_theta w - b_theta||^2_{C_theta^{-1}} + eta ||w||^2`.
pub fn gradient_q_objective(
    mf: &MeanField,
    w: &Vector,
    theta: &Vector,
) -> Result<f64> {
    let ops = mf.operators_at(MeanFieldAlgorithm::Alg4GradientQ, theta)?;
    let resid = &ops.a * w - &ops.b;
    let y = linalg::solve(&ops.c, &resid)?;
    Ok(resid.dot(&y) + mf.eta * w.norm_squared())
}

/// Average-reward control fixed point (stacked `[rbar; w]`): iterate the
/// stacked map and report the residual of `(Abar + eta I) w - bbar` at the
/// converged policies.
pub fn diff_q_control_fixed_point(mf: &MeanField) -> Result<FixedPointReport> {
    let k = mf.x.dim();
    let alg = MeanFieldAlgorithm::Alg5DiffQLearning;
    let map = |u: &Vector| mf.w_star_map(alg, u);
    let mut report = run_multi_start(map, k + 1, start_scale(mf.balls))?;
    let w = report.point.rows(1, k).into_owned();
    let ops = mf.operators_at(alg, &report.point)?;
    let m = &ops.a_bar + mf.eta * Matrix::identity(k, k);
    report.residual = (m * &w - &ops.b_bar).norm();
    Ok(report)
}

/// Deterministic two-level mean-field iteration: at each outer step the
/// parameters are relaxed to equilibrium by repeated `expected_dynamics`
/// increments (the ODE view), then the target weights jump to the relaxed
/// solution. Converges to the same point as the algebraic maps whenever
/// those contract.
pub fn mean_field_fixed_point(
    mf: &MeanField,
    alg: MeanFieldAlgorithm,
    theta0: Vector,
) -> Result<Vector> {
    let k = mf.x.dim();
    let param_dim = match alg {
        MeanFieldAlgorithm::Alg1QEval | MeanFieldAlgorithm::Alg3QLearning => k,
        MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => k + 1,
        MeanFieldAlgorithm::Alg4GradientQ => 2 * k,
    };
    let mut theta = theta0;
    for _outer in 0..10_000 {
        // inner relaxation of the fast variables at frozen theta
        let mut params = Vector::zeros(param_dim);
        let mut step = 0.9 / (mf.x.norm().powi(2) + mf.eta + 1.0);
        let mut last = f64::INFINITY;
        let mut inner = 0u64;
        loop {
            let inc = mf.expected_dynamics(alg, &theta, &params)?;
            let n = inc.norm();
            if !n.is_finite() {
                return Err(Error::NoCertifiedFixedPoint(
                    "mean-field relaxation diverged".into(),
                ));
            }
            if n <= 1e-13 {
                break;
            }
            if n > 4.0 * last {
                step *= 0.5; // relaxation step too aggressive
            }
            params += step * inc;
            last = n;
            inner += 1;
            if inner > 5_000_000 {
                return Err(Error::NoCertifiedFixedPoint(
                    "inner mean-field relaxation stalled".into(),
                ));
            }
        }
        let new_theta = match alg {
            MeanFieldAlgorithm::Alg1QEval
            | MeanFieldAlgorithm::Alg3QLearning => params,
            MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => params,
            MeanFieldAlgorithm::Alg4GradientQ => params.rows(k, k).into_owned(),
        };
        let drift = (&new_theta - &theta).norm();
        theta = new_theta;
        if drift <= 1e-12 {
            return Ok(theta);
        }
    }
    Err(Error::NoCertifiedFixedPoint(
        "outer mean-field iteration did not converge".into(),
    ))
}

/// Sampled contraction probe on the tracked-solution map: returns the
/// maximum of `||w*(t1) - w*(t2)|| / ||t1 - t2||` over `pairs` random
/// target pairs drawn with entries in `[-scale, scale]`.
pub fn contraction_probe(
    mf: &MeanField,
    alg: MeanFieldAlgorithm,
    pairs: usize,
    scale: f64,
    seed: u64,
) -> Result<f64> {
    let dim = match alg {
        MeanFieldAlgorithm::Alg2DiffQEval | MeanFieldAlgorithm::Alg5DiffQLearning => {
            mf.x.dim() + 1
        }
        _ => mf.x.dim(),
    };
    let mut rng = SplitMix64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let t1 = Vector::from_fn(dim, |_, _| rng.uniform(-scale, scale));
        let t2 = Vector::from_fn(dim, |_, _| rng.uniform(-scale, scale));
        let gap = (&t1 - &t2).norm();
        if gap < 1e-12 {
            continue;
        }
        let w1 = mf.w_star_map(alg, &t1)?;
        let w2 = mf.w_star_map(alg, &t2)?;
        worst = worst.max((w1 - w2).norm() / gap);
    }
    Ok(worst)
}

/// Constants, bound and achieved error for the discounted evaluation
/// guarantee.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub xi: f64,
    pub eta: f64,
    pub c0: f64,
    pub c1: f64,
    pub x_norm: f64,
    pub p_pi_weighted_norm: f64,
    pub preconditions_met: bool,
    pub bound_value: f64,
    pub achieved_error: f64,
}

/// Evaluate the discounted-evaluation constants and bound at a solved fixed
/// point; never errors, reports instead.
pub fn theorem_constants_and_bound_discounted(
    ops: &EvaluationOperators,
    eta: f64,
    xi: f64,
    q_pi: &Vector,
    w_star: &Vector,
) -> BoundReport {
    let x = FeatureMatrix::new(ops.x.clone()).expect("nonempty");
    let x_norm = x.norm();
    let p_norm = linalg::weighted_operator_norm(&ops.p_pi, &ops.d_mu)
        .unwrap_or(f64::INFINITY);
    let c0 = 2.0 * (1.0 - xi) * eta.sqrt() / (ops.gamma * p_norm);
    let c1 = ops.r.norm() / (2.0 * xi * eta.sqrt()) + 1.0;

    let rank = x.check_rank();
    let d_min = ops.d_mu.min();
    let dist = StateActionDist::new(ops.d_mu.clone());
    let bound_value = match (&dist, rank.full_rank) {
        (Ok(d), true) => {
            let proj = projection_matrix(&x, d, 0.0);
            match proj {
                Ok(p) => {
                    let repr_err = (&p * q_pi - q_pi).norm();
                    (rank.sigma_max.powi(2)
                        / (rank.sigma_min.powi(4) * d_min.powf(2.5))
                        * q_pi.norm()
                        * eta
                        + repr_err)
                        / xi
                }
                Err(_) => f64::INFINITY,
            }
        }
        _ => f64::INFINITY,
    };
    let achieved_error = (&ops.x * w_star - q_pi).norm();
    let preconditions_met = (0.0 < xi && xi < 1.0)
        && eta > 0.0
        && x_norm < c0
        && rank.full_rank
        && d_min > 0.0;
    BoundReport {
        xi,
        eta,
        c0,
        c1,
        x_norm,
        p_pi_weighted_norm: p_norm,
        preconditions_met,
        bound_value,
        achieved_error,
    }
}

/// Bound report for the average-reward evaluation guarantee: the value
/// bound at the optimal offset and the reward-rate bound.
#[derive(Debug, Clone)]
pub struct AverageBoundReport {
    pub xi: f64,
    pub eta: f64,
    pub c0: f64,
    pub features_centered: bool,
    pub preconditions_met: bool,
    /// `||X w* - (qbar + c* 1)||` at the minimizing offset `c*`.
    pub value_error: f64,
    pub value_bound: f64,
    pub rate_error: f64,
    pub rate_bound: f64,
}

/// Feature-norm threshold under which the discounted tracked-solution map
/// is a `(1 - xi)`-contraction: `2 (1 - xi) sqrt(eta) / (gamma ||P||_D)`.
pub fn discounted_contraction_threshold(ops: &EvaluationOperators, eta: f64, xi: f64) -> f64 {
    let p_norm =
        linalg::weighted_operator_norm(&ops.p_pi, &ops.d_mu).unwrap_or(f64::INFINITY);
    2.0 * (1.0 - xi) * eta.sqrt() / (ops.gamma * p_norm)
}

/// Feature-norm threshold under which the stacked average-reward map is a
/// `(1 - xi)`-contraction. Depends on the instance only through the
/// weighting and the target transition matrix, so features may be rescaled
/// against it afterwards.
pub fn average_contraction_threshold(ops: &EvaluationOperators, eta: f64, xi: f64) -> f64 {
    let n = ops.p_pi.nrows();
    let d_mat = Matrix::from_diagonal(&ops.d_mu);
    let dp_norm = linalg::spectral_norm(&(&d_mat * &ops.p_pi));
    let row = ops.d_mu.transpose() * (&ops.p_pi - Matrix::identity(n, n));
    let row_norm = row.transpose().norm();
    let gate = 1.0f64.max(1.0 / eta);
    let denom = gate * (row_norm + 2f64.sqrt() * dp_norm).max(2f64.sqrt() * ops.d_mu.norm());
    ((1.0 - xi) / denom).min(((1.0 - xi) * eta / dp_norm).sqrt())
}

/// Evaluate the average-reward bounds. The offset family `qbar + c 1` is
/// minimized in closed form: the offset matching the mean gap minimizes the
/// Euclidean distance.
pub fn theorem_bound_average(
    ops: &EvaluationOperators,
    eta: f64,
    xi: f64,
    qbar_pi: &Vector,
    rbar_pi: f64,
    w_star: &Vector,
    rbar_star: f64,
) -> AverageBoundReport {
    let x = FeatureMatrix::new(ops.x.clone()).expect("nonempty");
    let n = ops.x.nrows();
    let xw = &ops.x * w_star;

    // optimal offset: mean of the gap
    let gap = &xw - qbar_pi;
    let c_star = gap.sum() / n as f64;
    let qbar_c = qbar_pi + Vector::from_element(n, c_star);
    let value_error = (&xw - &qbar_c).norm();

    let centered = (ops.x.transpose() * &ops.d_mu).amax() <= 1e-12;
    let rank = x.check_rank();
    let d_min = ops.d_mu.min();

    let row = ops.d_mu.transpose() * (&ops.p_pi - Matrix::identity(n, n));
    let row_norm = row.transpose().norm();
    let c0 = average_contraction_threshold(ops, eta, xi);

    let value_bound = if rank.full_rank && d_min > 0.0 {
        match StateActionDist::new(ops.d_mu.clone())
            .and_then(|d| projection_matrix(&x, &d, 0.0))
        {
            Ok(p) => {
                let repr_err = (&p * &qbar_c - &qbar_c).norm();
                (rank.sigma_max.powi(2) / (rank.sigma_min.powi(4) * d_min.powf(2.5))
                    * qbar_c.norm()
                    * eta
                    + repr_err)
                    / xi
            }
            Err(_) => f64::INFINITY,
        }
    } else {
        f64::INFINITY
    };

    let rate_error = (rbar_star - rbar_pi).abs();
    let rate_bound = row_norm * value_error;

    let preconditions_met = (0.0 < xi && xi < 1.0)
        && eta > 0.0
        && centered
        && x.norm() < c0
        && rank.full_rank
        && d_min > 0.0;

    AverageBoundReport {
        xi,
        eta,
        c0,
        features_centered: centered,
        preconditions_met,
        value_error,
        value_bound,
        rate_error,
        rate_bound,
    }
}

/// Eigenvalue report contrasting the semi-gradient expected update with the
/// target-network main-network Jacobian.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    /// Eigenvalues of `-(A + eta I)` (semi-gradient baseline Jacobian).
    pub baseline_eigenvalues: Vec<Complex<f64>>,
    /// Eigenvalues of `-(C + eta I)` (target-network main update Jacobian).
    pub target_main_eigenvalues: Vec<Complex<f64>>,
    /// Some baseline eigenvalue has positive real part.
    pub baseline_unstable: bool,
    /// Ridge weight that provably stabilizes the baseline:
    /// `||X||^2 ||D (I - gamma P)||`.
    pub sufficient_ridge: f64,
}

/// Eigen-decompose the expected-update Jacobians at ridge weight `eta`.
pub fn divergence_certificate(ops: &EvaluationOperators, eta: f64) -> DivergenceReport {
    let k = ops.dim();
    let baseline = -(&ops.a + eta * Matrix::identity(k, k));
    let target_main = -(&ops.c + eta * Matrix::identity(k, k));
    let baseline_eigenvalues = linalg::eigenvalues(&baseline);
    let target_main_eigenvalues = linalg::eigenvalues(&target_main);
    let baseline_unstable = baseline_eigenvalues.iter().any(|z| z.re > 0.0);
    let n = ops.p_pi.nrows();
    let d = Matrix::from_diagonal(&ops.d_mu);
    let x_norm = linalg::spectral_norm(&ops.x);
    let sufficient_ridge = x_norm * x_norm
        * linalg::spectral_norm(&(&d * (Matrix::identity(n, n) - ops.gamma * &ops.p_pi)));
    DivergenceReport {
        baseline_eigenvalues,
        target_main_eigenvalues,
        baseline_unstable,
        sufficient_ridge,
    }
}
