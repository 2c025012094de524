//! Finite MDPs, policies, induced chains and exact value functions.
//!
//! The induced state-action chain of a policy `pi` has transition matrix
//! `P_pi((s,a),(s',a')) = p(s'|s,a) pi(a'|s')`, laid out with the crate's
//! row-major pair indexing. Stationary distributions are computed from the
//! augmented linear system `[P^T - I; 1^T] d = [0; 1]` via its normal
//! equations, with a power-iteration fallback when that solve is
//! ill-conditioned.

use crate::linalg::{self, Matrix, Vector};
use crate::rng::SplitMix64;
use crate::{sa_index, Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const GREEDY_TIE_TOL: f64 = 1e-12;

/// A finite MDP with deterministic rewards `r(s, a)`.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `p[s][a][s']`, each `p[s][a]` a probability row.
    p: Vec<Vec<Vec<f64>>>,
    /// `r[s][a]`.
    r: Vec<Vec<f64>>,
    /// Discount; `None` for average-reward use.
    gamma: Option<f64>,
}

impl Mdp {
    pub fn new(
        p: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let n_states = p.len();
        if n_states == 0 {
            return Err(Error::InvalidInput("MDP needs at least one state".into()));
        }
        let n_actions = p[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidInput("MDP needs at least one action".into()));
        }
        if r.len() != n_states || r.iter().any(|row| row.len() != n_actions) {
            return Err(Error::DimensionMismatch(
                "reward table shape differs from transition tensor".into(),
            ));
        }
        for (s, per_action) in p.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "state {s} has {} action rows, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition row ({s},{a}) has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                if row.iter().any(|&x| x < 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "negative transition probability at ({s},{a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidInput(format!(
                        "transition row ({s},{a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if let Some(g) = gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::InvalidInput(format!(
                    "discount must lie in [0,1), got {g}"
                )));
            }
        }
        Ok(Self { n_states, n_actions, p, r, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn transition_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.p[s][a][s_next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s][a]
    }

    /// Reward table flattened over state-action pairs.
    pub fn reward_vector(&self) -> Vector {
        let mut v = Vector::zeros(self.n_pairs());
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                v[sa_index(s, a, self.n_actions)] = self.r[s][a];
            }
        }
        v
    }

    /// Draw `(reward, next state)` for executing `a` in `s`.
    pub fn sample_transition(&self, s: usize, a: usize, rng: &mut SplitMix64) -> (f64, usize) {
        let next = rng.choice(&self.p[s][a]);
        (self.r[s][a], next)
    }
}

/// How a policy table came to be; retained for logging and for policy
/// invariants (greedy tables must put uniform mass on the argmax set).
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyProvenance {
    Fixed,
    Softmax { temperature: f64 },
    Greedy,
    Mixture { weight_first: f64 },
}

/// A state-conditional action distribution table.
#[derive(Debug, Clone)]
pub struct Policy {
    table: Vec<Vec<f64>>,
    provenance: PolicyProvenance,
}

impl Policy {
    pub fn new(table: Vec<Vec<f64>>, provenance: PolicyProvenance) -> Result<Self> {
        if table.is_empty() || table[0].is_empty() {
            return Err(Error::InvalidInput("empty policy table".into()));
        }
        let n_actions = table[0].len();
        for (s, row) in table.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "policy row {s} has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative action probability in state {s}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { table, provenance })
    }

    /// Uniform policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let row = vec![1.0 / n_actions as f64; n_actions];
        Self {
            table: vec![row; n_states],
            provenance: PolicyProvenance::Fixed,
        }
    }

    /// Deterministic policy taking `action` everywhere.
    pub fn deterministic(n_states: usize, n_actions: usize, action: usize) -> Self {
        let mut row = vec![0.0; n_actions];
        row[action] = 1.0;
        Self {
            table: vec![row; n_states],
            provenance: PolicyProvenance::Fixed,
        }
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.table[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s]
    }

    pub fn provenance(&self) -> &PolicyProvenance {
        &self.provenance
    }

    pub fn sample_action(&self, s: usize, rng: &mut SplitMix64) -> usize {
        rng.choice(&self.table[s])
    }

    /// Pointwise convex combination `weight_first * self + (1-weight_first) * other`.
    pub fn mix(&self, other: &Policy, weight_first: f64) -> Result<Policy> {
        if self.n_states() != other.n_states() || self.n_actions() != other.n_actions() {
            return Err(Error::DimensionMismatch("mixture of unequal policy shapes".into()));
        }
        if !(0.0..=1.0).contains(&weight_first) {
            return Err(Error::InvalidInput(format!(
                "mixture weight must lie in [0,1], got {weight_first}"
            )));
        }
        let table = self
            .table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| weight_first * x + (1.0 - weight_first) * y)
                    .collect()
            })
            .collect();
        Policy::new(table, PolicyProvenance::Mixture { weight_first })
    }

    /// Check the greedy invariant: support exactly on `argmax` of `values`
    /// per state (ties within `1e-12`), uniform over the tied set.
    pub fn is_greedy_for(&self, values: &dyn Fn(usize, usize) -> f64) -> bool {
        for s in 0..self.n_states() {
            let vals: Vec<f64> = (0..self.n_actions()).map(|a| values(s, a)).collect();
            let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..self.n_actions())
                .filter(|&a| best - vals[a] <= GREEDY_TIE_TOL)
                .collect();
            let share = 1.0 / ties.len() as f64;
            for a in 0..self.n_actions() {
                let expected = if ties.contains(&a) { share } else { 0.0 };
                if (self.table[s][a] - expected).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

/// A distribution over state-action pairs together with its diagonal view.
#[derive(Debug, Clone)]
pub struct StateActionDist {
    d: Vector,
}

impl StateActionDist {
    pub fn new(d: Vector) -> Result<Self> {
        if d.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidInput("negative probability mass".into()));
        }
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self { d })
    }

    pub fn vector(&self) -> &Vector {
        &self.d
    }

    pub fn diagonal(&self) -> Matrix {
        Matrix::from_diagonal(&self.d)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.len() == 0
    }
}

/// Induced state-action transition matrix
/// `P_pi((s,a),(s',a')) = p(s'|s,a) pi(a'|s')`.
pub fn build_transition_matrix(mdp: &Mdp, pi: &Policy) -> Result<Matrix> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let na = mdp.n_actions();
    let n = mdp.n_pairs();
    let mut m = Matrix::zeros(n, n);
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let row = sa_index(s, a, na);
            for s2 in 0..mdp.n_states() {
                let p = mdp.transition_prob(s, a, s2);
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[(row, sa_index(s2, a2, na))] = p * pi.prob(s2, a2);
                }
            }
        }
    }
    Ok(m)
}

/// State-level transition matrix `P_pi(s, s') = sum_a pi(a|s) p(s'|s,a)`.
pub fn build_state_transition_matrix(mdp: &Mdp, pi: &Policy) -> Result<Matrix> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch("policy shape differs from MDP".into()));
    }
    let mut m = Matrix::zeros(mdp.n_states(), mdp.n_states());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let w = pi.prob(s, a);
            for s2 in 0..mdp.n_states() {
                m[(s, s2)] += w * mdp.transition_prob(s, a, s2);
            }
        }
    }
    Ok(m)
}

fn check_row_stochastic(p: &Matrix) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(Error::DimensionMismatch("transition matrix must be square".into()));
    }
    for i in 0..p.nrows() {
        let sum: f64 = p.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.row(i).iter().any(|&x| x < -1e-15) {
            return Err(Error::InvalidInput(format!(
                "row {i} of transition matrix is not a probability row (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic matrix, from the augmented
/// system `[P^T - I; 1^T] d = [0; 1]` solved by normal equations; falls back
/// to power iteration when the solve is ill-conditioned.
pub fn stationary_distribution(p: &Matrix) -> Result<Vector> {
    check_row_stochastic(p)?;
    let n = p.nrows();
    let mut l = Matrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = p[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        l[(n, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n + 1);
    rhs[n] = 1.0;

    // The augmented system loses column rank exactly when the stationary
    // distribution is not unique.
    let sv = linalg::singular_values(&l);
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::NoUniqueStationaryDistribution(
            "augmented system [P^T - I; 1^T] is rank deficient".into(),
        ));
    }

    let normal = l.transpose() * &l;
    let b = l.transpose() * rhs;
    let mut d = linalg::solve(&normal, &b)
        .map_err(|_| Error::NoUniqueStationaryDistribution("normal equations singular".into()))?;

    let residual = (p.transpose() * &d - &d).amax();
    if residual > STATIONARY_TOL || d.iter().any(|&x| x < -1e-9) {
        // fall back to power iteration on P^T
        d = Vector::from_element(n, 1.0 / n as f64);
        for _ in 0..200_000 {
            let next = p.transpose() * &d;
            let diff = (&next - &d).amax();
            d = next;
            if diff < 1e-14 {
                break;
            }
        }
        if (p.transpose() * &d - &d).amax() > STATIONARY_TOL {
            return Err(Error::NoUniqueStationaryDistribution(
                "power iteration did not converge".into(),
            ));
        }
    }
    // clear rounding dust and renormalize
    for x in d.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = d.iter().sum();
    d /= sum;
    Ok(d)
}

/// Stationary state-action distribution of the chain induced by `pi`.
pub fn stationary_state_action_dist(mdp: &Mdp, pi: &Policy) -> Result<StateActionDist> {
    let p = build_transition_matrix(mdp, pi)?;
    StateActionDist::new(stationary_distribution(&p)?)
}

/// True iff the chain is irreducible and aperiodic on its support graph.
pub fn is_ergodic(p: &Matrix) -> bool {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return false;
    }
    let edge = |i: usize, j: usize| p[(i, j)] > 1e-15;

    // irreducibility: every node reachable from 0, and 0 reachable from all
    let reach = |transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let connected = if transpose { edge(j, i) } else { edge(i, j) };
                if connected && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    if reach(false).iter().any(|&x| !x) || reach(true).iter().any(|&x| !x) {
        return false;
    }

    // aperiodicity: gcd over edges (u,v) of (level[u] + 1 - level[v]) is 1,
    // with BFS levels from node 0
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    level[0] = 0;
    queue.push_back(0usize);
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if edge(i, j) && level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut g: i64 = 0;
    for i in 0..n {
        for j in 0..n {
            if edge(i, j) {
                let diff = level[i] as i64 + 1 - level[j] as i64;
                g = gcd(g, diff.abs());
            }
        }
    }
    g == 1
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact action values: solves `(I - gamma P_pi) q = r`.
pub fn exact_q_pi(mdp: &Mdp, pi: &Policy, gamma: f64) -> Result<Vector> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("discount {gamma} outside [0,1)")));
    }
    let p = build_transition_matrix(mdp, pi)?;
    let n = mdp.n_pairs();
    let m = Matrix::identity(n, n) - gamma * &p;
    let q = linalg::solve(&m, &mdp.reward_vector())?;
    debug_assert!((&q - mdp.reward_vector() - gamma * &p * &q).amax() <= 1e-10);
    Ok(q)
}

/// Optimal action values by value iteration to Bellman residual `1e-12`.
pub fn exact_q_star(mdp: &Mdp, gamma: f64) -> Result<Vector> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("discount {gamma} outside [0,1)")));
    }
    let na = mdp.n_actions();
    let r = mdp.reward_vector();
    let mut q = Vector::zeros(mdp.n_pairs());
    for _ in 0..2_000_000 {
        let mut next = r.clone();
        let mut residual = 0.0f64;
        for s in 0..mdp.n_states() {
            for a in 0..na {
                let idx = sa_index(s, a, na);
                let mut exp = 0.0;
                for s2 in 0..mdp.n_states() {
                    let p = mdp.transition_prob(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    let best = (0..na)
                        .map(|a2| q[sa_index(s2, a2, na)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    exp += p * best;
                }
                next[idx] += gamma * exp;
                residual = residual.max((next[idx] - q[idx]).abs());
            }
        }
        q = next;
        if residual <= 1e-12 {
            break;
        }
    }
    Ok(q)
}

/// Reward rate and the differential action values normalized so that
/// `d_pi^T qbar = 0`; errors when the on-policy chain is not ergodic.
pub fn reward_rate_and_differential_q(mdp: &Mdp, pi: &Policy) -> Result<(f64, Vector)> {
    let p = build_transition_matrix(mdp, pi)?;
    if !is_ergodic(&p) {
        return Err(Error::NonErgodic("on-policy state-action chain".into()));
    }
    let d = stationary_distribution(&p)?;
    let r = mdp.reward_vector();
    let rbar = d.dot(&r);

    // (I - P + 1 d^T) qbar = r - rbar 1 has a unique solution, which
    // satisfies both the differential Bellman equation and d^T qbar = 0.
    let n = mdp.n_pairs();
    let ones = Vector::from_element(n, 1.0);
    let m = Matrix::identity(n, n) - &p + &ones * d.transpose();
    let rhs = &r - rbar * &ones;
    let qbar = linalg::solve(&m, &rhs)?;
    debug_assert!((&qbar - (&r - rbar * &ones + &p * &qbar)).amax() <= 1e-10);
    Ok((rbar, qbar))
}
