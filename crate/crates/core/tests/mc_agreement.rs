//! Statistical agreement between the sampled per-step updates and the
//! deterministic expected-update dynamics: with states drawn from the
//! stationary distribution and a unit step size, the average of many
//! sampled increments must match the mean field within three standard
//! errors, component by component.

use tdlab::agents::{
    self, softmax_policy, AlgorithmId, ControlTransition, EvalTransition, LearnerState,
    StepParams,
};
use tdlab::envs::{make_random_mdp, make_random_soft_policy};
use tdlab::linalg::{Matrix, Vector};
use tdlab::mdp::{build_transition_matrix, stationary_distribution, Policy};
use tdlab::oracles::{MeanField, MeanFieldAlgorithm, PolicyFromValues};
use tdlab::rng::SplitMix64;
use tdlab::sa_index;

const SAMPLES: usize = 100_000;

struct Harness {
    mdp: tdlab::mdp::Mdp,
    x: tdlab::features::FeatureMatrix,
    gamma: f64,
    eta: f64,
    tau: f64,
}

impl Harness {
    fn new(seed: u64) -> Self {
        let (mdp, x_raw) = make_random_mdp(seed, 4, 2, 3, 0.3).unwrap();
        let x = x_raw.scale_to_norm(0.5).unwrap();
        Self { mdp, x, gamma: 0.9, eta: 0.1, tau: 1.0 }
    }

    fn params(&self) -> StepParams {
        StepParams { eta: self.eta, gamma: self.gamma, tau: self.tau, projections: None }
    }

    fn next_rows(&self, s2: usize) -> Matrix {
        let na = self.mdp.n_actions();
        let mut rows = Matrix::zeros(na, self.x.dim());
        for a in 0..na {
            rows.row_mut(a)
                .copy_from(&self.x.matrix().row(sa_index(s2, a, na)));
        }
        rows
    }

    fn expected_next_feature(&self, pi: &Policy, s2: usize) -> Vector {
        let na = self.mdp.n_actions();
        let mut out = Vector::zeros(self.x.dim());
        for a in 0..na {
            out += self.x.row(sa_index(s2, a, na)) * pi.prob(s2, a);
        }
        out
    }
}

/// Accumulates per-component means and standard errors.
struct Welford {
    n: f64,
    mean: Vector,
    m2: Vector,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: Vector::zeros(dim), m2: Vector::zeros(dim) }
    }

    fn push(&mut self, value: &Vector) {
        self.n += 1.0;
        for i in 0..value.len() {
            let delta = value[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (value[i] - self.mean[i]);
        }
    }

    fn assert_matches(&self, expected: &Vector, label: &str) {
        for i in 0..expected.len() {
            let se = (self.m2[i] / (self.n * (self.n - 1.0))).sqrt();
            let gap = (self.mean[i] - expected[i]).abs();
            assert!(
                gap <= 3.0 * se + 1e-9,
                "{label}[{i}]: sampled {} vs expected {} (se {se:.3e})",
                self.mean[i],
                expected[i]
            );
        }
    }
}

fn draw_pair(d: &Vector, rng: &mut SplitMix64) -> usize {
    let probs: Vec<f64> = d.iter().copied().collect();
    rng.choice(&probs)
}

#[test]
fn alg1_sampled_increments_match_mean_field() {
    let h = Harness::new(71);
    let mu = Policy::uniform(4, 2);
    let pi = make_random_soft_policy(72, 4, 2);
    let p_mu = build_transition_matrix(&h.mdp, &mu).unwrap();
    let d = stationary_distribution(&p_mu).unwrap();

    let mut rng = SplitMix64::new(1);
    let theta = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let w = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let mut state = LearnerState::init(AlgorithmId::Alg1QEval, w.clone());
    state.theta = theta.clone();

    let mf = MeanField {
        mdp: h.mdp.clone(),
        x: h.x.clone(),
        gamma: h.gamma,
        eta: h.eta,
        behavior: PolicyFromValues::Fixed(mu),
        target: PolicyFromValues::Fixed(pi.clone()),
        balls: None,
    };
    let expected = mf
        .expected_dynamics(MeanFieldAlgorithm::Alg1QEval, &theta, &w)
        .unwrap();

    let mut stats = Welford::new(3);
    let na = h.mdp.n_actions();
    for _ in 0..SAMPLES {
        let pair = draw_pair(&d, &mut rng);
        let (s, a) = (pair / na, pair % na);
        let (reward, s2) = h.mdp.sample_transition(s, a, &mut rng);
        let tr = EvalTransition {
            x: h.x.row(pair),
            reward,
            x_bar_next: h.expected_next_feature(&pi, s2),
        };
        // unit step, frozen target: the w-increment is the raw update
        let next = agents::step_alg1(&state, &tr, 1.0, 0.0, &h.params());
        stats.push(&(next.w - &state.w));
    }
    stats.assert_matches(&expected, "alg1 increment");
}

#[test]
fn alg3_sampled_increments_match_mean_field() {
    let h = Harness::new(73);
    let mut rng = SplitMix64::new(2);
    let theta = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let w = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let mut state = LearnerState::init(AlgorithmId::Alg3QLearning, w.clone());
    state.theta = theta.clone();

    // behavior is a softmax in theta: frozen while theta is frozen
    let mu_theta = softmax_policy(&h.x, 4, 2, &theta, h.tau).unwrap();
    let p_mu = build_transition_matrix(&h.mdp, &mu_theta).unwrap();
    let d = stationary_distribution(&p_mu).unwrap();

    let mf = MeanField {
        mdp: h.mdp.clone(),
        x: h.x.clone(),
        gamma: h.gamma,
        eta: h.eta,
        behavior: PolicyFromValues::Softmax { tau: h.tau },
        target: PolicyFromValues::Greedy,
        balls: None,
    };
    let expected = mf
        .expected_dynamics(MeanFieldAlgorithm::Alg3QLearning, &theta, &w)
        .unwrap();

    let mut stats = Welford::new(3);
    let na = h.mdp.n_actions();
    for _ in 0..SAMPLES {
        let pair = draw_pair(&d, &mut rng);
        let (s, a) = (pair / na, pair % na);
        let (reward, s2) = h.mdp.sample_transition(s, a, &mut rng);
        let tr = ControlTransition { x: h.x.row(pair), reward, next_rows: h.next_rows(s2) };
        let next = agents::step_alg3(&state, &tr, 1.0, 0.0, &h.params());
        stats.push(&(next.w - &state.w));
    }
    stats.assert_matches(&expected, "alg3 increment");
}

#[test]
fn alg4_sampled_increments_match_mean_field() {
    let h = Harness::new(74);
    let mut rng = SplitMix64::new(3);
    let theta = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let w = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let u = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let mut state = LearnerState::init(AlgorithmId::Alg4GradientQ, w.clone());
    state.theta = theta.clone();
    state.u = u.clone();

    let mu_theta = softmax_policy(&h.x, 4, 2, &theta, h.tau).unwrap();
    let p_mu = build_transition_matrix(&h.mdp, &mu_theta).unwrap();
    let d = stationary_distribution(&p_mu).unwrap();

    let mf = MeanField {
        mdp: h.mdp.clone(),
        x: h.x.clone(),
        gamma: h.gamma,
        eta: h.eta,
        behavior: PolicyFromValues::Softmax { tau: h.tau },
        target: PolicyFromValues::Softmax { tau: h.tau },
        balls: None,
    };
    let mut stacked = Vector::zeros(6);
    stacked.rows_mut(0, 3).copy_from(&u);
    stacked.rows_mut(3, 3).copy_from(&w);
    let expected = mf
        .expected_dynamics(MeanFieldAlgorithm::Alg4GradientQ, &theta, &stacked)
        .unwrap();

    let mut stats = Welford::new(6);
    let na = h.mdp.n_actions();
    for _ in 0..SAMPLES {
        let pair = draw_pair(&d, &mut rng);
        let (s, a) = (pair / na, pair % na);
        let (reward, s2) = h.mdp.sample_transition(s, a, &mut rng);
        let tr = ControlTransition { x: h.x.row(pair), reward, next_rows: h.next_rows(s2) };
        let next = agents::step_alg4(&state, &tr, 1.0, 0.0, &h.params());
        let mut inc = Vector::zeros(6);
        inc.rows_mut(0, 3).copy_from(&(&next.u - &state.u));
        inc.rows_mut(3, 3).copy_from(&(&next.w - &state.w));
        stats.push(&inc);
    }
    stats.assert_matches(&expected, "alg4 stacked increment");
}

#[test]
fn alg5_sampled_increments_match_mean_field() {
    let h = Harness::new(75);
    let mut rng = SplitMix64::new(4);
    // stacked target [theta_r; theta_w]
    let theta = Vector::from_fn(4, |_, _| rng.uniform(-0.5, 0.5));
    let w = Vector::from_fn(3, |_, _| rng.uniform(-0.5, 0.5));
    let rbar = rng.uniform(-0.5, 0.5);
    let mut state = LearnerState::init(AlgorithmId::Alg5DiffQLearning, w.clone());
    state.theta = theta.clone();
    state.rbar = rbar;

    let theta_w = theta.rows(1, 3).into_owned();
    let mu_theta = softmax_policy(&h.x, 4, 2, &theta_w, h.tau).unwrap();
    let p_mu = build_transition_matrix(&h.mdp, &mu_theta).unwrap();
    let d = stationary_distribution(&p_mu).unwrap();

    let mf = MeanField {
        mdp: h.mdp.clone(),
        x: h.x.clone(),
        gamma: 0.0,
        eta: h.eta,
        behavior: PolicyFromValues::Softmax { tau: h.tau },
        target: PolicyFromValues::Greedy,
        balls: None,
    };
    let mut stacked = Vector::zeros(4);
    stacked[0] = rbar;
    stacked.rows_mut(1, 3).copy_from(&w);
    let expected = mf
        .expected_dynamics(MeanFieldAlgorithm::Alg5DiffQLearning, &theta, &stacked)
        .unwrap();

    let mut stats = Welford::new(4);
    let na = h.mdp.n_actions();
    let params = StepParams { eta: h.eta, gamma: 0.0, tau: h.tau, projections: None };
    for _ in 0..SAMPLES {
        let pair = draw_pair(&d, &mut rng);
        let (s, a) = (pair / na, pair % na);
        let (reward, s2) = h.mdp.sample_transition(s, a, &mut rng);
        let tr = ControlTransition { x: h.x.row(pair), reward, next_rows: h.next_rows(s2) };
        let next = agents::step_alg5(&state, &tr, 1.0, 0.0, &params);
        let mut inc = Vector::zeros(4);
        inc[0] = next.rbar - state.rbar;
        inc.rows_mut(1, 3).copy_from(&(&next.w - &state.w));
        stats.push(&inc);
    }
    stats.assert_matches(&expected, "alg5 stacked increment");
}
