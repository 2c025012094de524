//! Benchmark instances: Baird's star problem, Kolter's two-state chain,
//! and a seeded random-MDP generator.

use crate::features::FeatureMatrix;
use crate::linalg::{Matrix, Vector};
use crate::mdp::{Mdp, Policy, StateActionDist};
use crate::rng::SplitMix64;
use crate::{sa_index, Error, Result};

/// Baird's 7-state star problem: two actions (solid always jumps to the
/// hub state `s7`, dashed jumps uniformly to one of `s1..s6`), all rewards
/// zero, discount 0.99.
///
/// Action indices: 0 = solid, 1 = dashed.
///
/// The evaluation features are the classic 7x8 state features
/// `[2I 0 1; 0^T 1 2]`; the control features are the 14x15 block matrix
/// whose solid rows reuse the evaluation features and whose dashed rows are
/// indicators. Feature rows follow the crate's pair indexing
/// `(s, a) -> s * 2 + a`; [`BairdInstance::control_feature_row`] maps a
/// pair to its row for callers that iterate actions explicitly.
#[derive(Debug, Clone)]
pub struct BairdInstance {
    pub mdp: Mdp,
    /// 7x8 state features for policy evaluation.
    pub x_eval: FeatureMatrix,
    /// 14x15 state-action features for control, in pair-index row order.
    pub x_ctrl: FeatureMatrix,
    pub w0_eval: Vector,
    pub w0_ctrl: Vector,
    /// Behavior policy: solid with probability 6/7, dashed 1/7.
    pub mu0: Policy,
    /// Target policy: always solid.
    pub target: Policy,
    pub mode: BairdMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BairdMode {
    Evaluation,
    Control,
}

pub const BAIRD_SOLID: usize = 0;
pub const BAIRD_DASHED: usize = 1;
pub const BAIRD_GAMMA: f64 = 0.99;

impl BairdInstance {
    pub fn n_states(&self) -> usize {
        7
    }

    /// Row of the control feature matrix for the pair `(s, a)`.
    pub fn control_feature_row(&self, s: usize, a: usize) -> usize {
        sa_index(s, a, 2)
    }
}

/// Build the Baird instance for the requested mode.
pub fn make_baird(mode: BairdMode) -> BairdInstance {
    let n = 7;
    // transitions: solid -> s7 surely; dashed -> uniform over s1..s6
    let mut p = vec![vec![vec![0.0; n]; 2]; n];
    for s in 0..n {
        p[s][BAIRD_SOLID][6] = 1.0;
        for s2 in 0..6 {
            p[s][BAIRD_DASHED][s2] = 1.0 / 6.0;
        }
    }
    let r = vec![vec![0.0; 2]; n];
    let mdp = Mdp::new(p, r, Some(BAIRD_GAMMA)).expect("static Baird tables are valid");

    // evaluation features [2I 0 1; 0^T 1 2]
    let mut xe = Matrix::zeros(7, 8);
    for i in 0..6 {
        xe[(i, i)] = 2.0;
        xe[(i, 7)] = 1.0;
    }
    xe[(6, 6)] = 1.0;
    xe[(6, 7)] = 2.0;

    // control features: solid rows reuse the evaluation features (columns
    // 0..8), dashed rows are indicators (columns 8..15)
    let mut xc = Matrix::zeros(14, 15);
    for s in 0..7 {
        let solid_row = sa_index(s, BAIRD_SOLID, 2);
        for j in 0..8 {
            xc[(solid_row, j)] = xe[(s, j)];
        }
        let dashed_row = sa_index(s, BAIRD_DASHED, 2);
        xc[(dashed_row, 8 + s)] = 1.0;
    }

    let w0_eval = Vector::from_row_slice(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0]);
    let w0_ctrl = Vector::from_row_slice(&[
        1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
    ]);

    let mu0 = Policy::new(
        vec![vec![6.0 / 7.0, 1.0 / 7.0]; 7],
        crate::mdp::PolicyProvenance::Fixed,
    )
    .expect("static policy");
    let target = Policy::deterministic(7, 2, BAIRD_SOLID);

    BairdInstance {
        mdp,
        x_eval: FeatureMatrix::new(xe).expect("nonempty"),
        x_ctrl: FeatureMatrix::new(xc).expect("nonempty"),
        w0_eval,
        w0_ctrl,
        mu0,
        target,
        mode,
    }
}

/// Kolter's two-state chain: `P = [[0.5, 0.5], [0.5, 0.5]]`, state values
/// pinned to `[1, 1.05]` by reward construction, one feature column
/// `[1; 1.05 + epsilon]`, and a free sampling weight `d1` on state 1.
#[derive(Debug, Clone)]
pub struct KolterInstance {
    pub mdp: Mdp,
    pub x: FeatureMatrix,
    pub v_pi: Vector,
    pub d_mu: StateActionDist,
    pub epsilon: f64,
    pub d1: f64,
    pub gamma: f64,
}

/// Build Kolter's example. The rewards are constructed as
/// `r = (I - gamma P) v_pi`, so the true state values are exactly
/// `[1, 1.05]` for any discount.
pub fn make_kolter(epsilon: f64, d1: f64, gamma: f64) -> Result<KolterInstance> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if !(0.0 < d1 && d1 < 1.0) {
        return Err(Error::InvalidInput(format!("d1 must lie in (0,1), got {d1}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let p_chain = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
    let v_pi = Vector::from_row_slice(&[1.0, 1.05]);
    let r = (Matrix::identity(2, 2) - gamma * &p_chain) * &v_pi;

    let p = vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]];
    let rt = vec![vec![r[0]], vec![r[1]]];
    let mdp = Mdp::new(p, rt, Some(gamma))?;

    let x = FeatureMatrix::new(Matrix::from_row_slice(2, 1, &[1.0, 1.05 + epsilon]))?;
    let d_mu = StateActionDist::new(Vector::from_row_slice(&[d1, 1.0 - d1]))?;

    Ok(KolterInstance { mdp, x, v_pi, d_mu, epsilon, d1, gamma })
}

/// Seeded random MDP with ergodicity guaranteed by mixing every transition
/// row with the uniform distribution; rewards uniform in `[-1, 1]`,
/// features standard Gaussian.
pub fn make_random_mdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    feature_dim: usize,
    mixing: f64,
) -> Result<(Mdp, FeatureMatrix)> {
    if !(0.0 < mixing && mixing <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "mixing must lie in (0,1], got {mixing}"
        )));
    }
    if n_states == 0 || n_actions == 0 || feature_dim == 0 {
        return Err(Error::InvalidInput("dimensions must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut p = Vec::with_capacity(n_states);
    let mut r = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut per_a = Vec::with_capacity(n_actions);
        let mut per_r = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.next_f64()).collect();
            let total: f64 = raw.iter().sum();
            let row: Vec<f64> = raw
                .iter()
                .map(|x| (1.0 - mixing) * x / total + mixing / n_states as f64)
                .collect();
            per_a.push(row);
            per_r.push(rng.uniform(-1.0, 1.0));
        }
        p.push(per_a);
        r.push(per_r);
    }
    let mdp = Mdp::new(p, r, None)?;
    let x = Matrix::from_fn(n_states * n_actions, feature_dim, |_, _| rng.gauss());
    Ok((mdp, FeatureMatrix::new(x)?))
}

/// A seeded random soft policy (every action has positive probability).
pub fn make_random_soft_policy(seed: u64, n_states: usize, n_actions: usize) -> Policy {
    let mut rng = SplitMix64::new(seed);
    let table = (0..n_states)
        .map(|_| {
            let raw: Vec<f64> = (0..n_actions).map(|_| 0.3 + rng.next_f64()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    Policy::new(table, crate::mdp::PolicyProvenance::Fixed).expect("rows normalized")
}
