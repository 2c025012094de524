//! Seeded experiment runs.
//!
//! One run = one (sweep point, replication) pair, driven by its own
//! SplitMix64 stream derived from the base seed and the pair index, so the
//! result set is independent of scheduling and thread count.
//!
//! Environment drivers:
//!
//! * `baird-eval` / `baird-control` — by default the synchronous protocol:
//!   states i.i.d. uniform, actions from the behavior policy, successors
//!   from the kernel (see [`BairdSampling`](crate::config::BairdSampling)).
//! * `kolter` — states i.i.d. from the free weighting `(d1, 1 - d1)`.
//! * `random` — a trajectory under the behavior policy.
//!
//! Divergence is capped: when `||w||` exceeds the configured cap the run
//! terminates with `value-exceeded-cap` and no non-finite value ever
//! reaches an output row.

use rayon::prelude::*;
use tdlab::agents::{
    self, AlgorithmId, BehaviorSpec, ControlTransition, EvalTransition, LearnerState,
    StepParams, TdTransition,
};
use tdlab::envs::{self, BairdMode};
use tdlab::features::FeatureMatrix;
use tdlab::linalg::{Matrix, Vector};
use tdlab::mdp::{self, Mdp, Policy};
use tdlab::rng::SplitMix64;
use tdlab::sa_index;

use crate::config::{BairdSampling, EnvKind, ExperimentConfig, ThetaInit};
use crate::{HarnessError, Result};

/// One logged metric row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: u64,
    pub value_error: f64,
    pub w_norm: f64,
    pub theta_norm: f64,
    pub rbar: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    ValueExceededCap,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::ValueExceededCap => "value-exceeded-cap",
        }
    }
}

/// Full record of a single run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub env: String,
    pub algorithm: String,
    pub fingerprint: String,
    pub sweep_index: usize,
    pub sweep_key: String,
    pub sweep_value: String,
    pub eta: f64,
    pub seed_index: u64,
    pub rows: Vec<RunRow>,
    pub final_w: Vec<f64>,
    pub final_rbar: f64,
    pub termination: Termination,
    pub termination_t: u64,
    /// Max of the value-error metric over every step (not just logged ones).
    pub max_value_error: f64,
    /// Max over steps of `||theta_t - theta_{t-1}|| - beta_t (r1 + r2)`;
    /// `-inf` when projections are disabled.
    pub max_drift_violation: f64,
    /// First step at which the value error exceeded each tracked threshold.
    pub crossings: Vec<(f64, Option<u64>)>,
}

struct Recorder {
    rows: Vec<RunRow>,
    max_value_error: f64,
    max_drift_violation: f64,
    crossings: Vec<(f64, Option<u64>)>,
    horizon: u64,
}

impl Recorder {
    fn new(thresholds: &[f64], horizon: u64) -> Self {
        Self {
            rows: Vec::new(),
            max_value_error: 0.0,
            max_drift_violation: f64::NEG_INFINITY,
            crossings: thresholds.iter().map(|&x| (x, None)).collect(),
            horizon,
        }
    }

    fn should_log(&self, t: u64) -> bool {
        t <= 1_000 || t % 10 == 0 || t == self.horizon
    }

    fn observe(
        &mut self,
        t: u64,
        value_error: f64,
        state: &LearnerState,
        drift: f64,
        drift_allowance: Option<f64>,
        force_log: bool,
    ) {
        self.max_value_error = self.max_value_error.max(value_error);
        for (threshold, at) in self.crossings.iter_mut() {
            if at.is_none() && value_error > *threshold {
                *at = Some(t);
            }
        }
        if let Some(allowance) = drift_allowance {
            self.max_drift_violation = self.max_drift_violation.max(drift - allowance);
        }
        if force_log || self.should_log(t) {
            let row = RunRow {
                t,
                value_error,
                w_norm: state.w.norm(),
                theta_norm: state.theta.norm(),
                rbar: state.rbar,
                drift,
            };
            // the divergence cap fires before anything overflows, so this
            // only guards genuinely pathological inputs
            let finite = row.value_error.is_finite()
                && row.w_norm.is_finite()
                && row.theta_norm.is_finite()
                && row.rbar.is_finite()
                && row.drift.is_finite();
            if finite {
                self.rows.push(row);
            }
        }
    }
}

/// Per-run stream: a pure function of `(base seed, sweep index, seed index)`.
pub fn run_stream(base_seed: u64, sweep_index: usize, seed_index: u64) -> SplitMix64 {
    SplitMix64::derive(base_seed, ((sweep_index as u64) << 32) | seed_index)
}

/// A notice when the environment's feature matrix fails the
/// linear-independence assumption (the Baird evaluation features are wide
/// by construction, so the full-rank assumption fails there and
/// experiment logs must say so).
pub fn feature_rank_note(config: &ExperimentConfig) -> Result<Option<String>> {
    let (features, label) = match config.experiment.env {
        EnvKind::BairdEval => (envs::make_baird(BairdMode::Evaluation).x_eval, "baird-eval"),
        EnvKind::BairdControl => {
            (envs::make_baird(BairdMode::Control).x_ctrl, "baird-control")
        }
        EnvKind::Kolter => {
            let s = &config.experiment.kolter;
            (
                envs::make_kolter(s.epsilon, s.d1, s.gamma)
                    .map_err(HarnessError::Core)?
                    .x,
                "kolter",
            )
        }
        EnvKind::Random => (RandomRuntime::build(config)?.x, "random"),
    };
    let report = features.check_rank();
    Ok(if report.full_rank {
        None
    } else {
        Some(format!(
            "{label} features are not full column rank ({}x{}, sigma_min {:.3e}); \
             the linear-independence assumption does not hold for this instance",
            features.rows(),
            features.dim(),
            report.sigma_min
        ))
    })
}

/// Container text of the environment instance (MDP plus features), for
/// archival next to the experiment outputs.
pub fn instance_container(config: &ExperimentConfig) -> Result<String> {
    Ok(match config.experiment.env {
        EnvKind::BairdEval => {
            let b = envs::make_baird(BairdMode::Evaluation);
            tdlab::container::to_text(&b.mdp, Some(&b.x_eval))
        }
        EnvKind::BairdControl => {
            let b = envs::make_baird(BairdMode::Control);
            tdlab::container::to_text(&b.mdp, Some(&b.x_ctrl))
        }
        EnvKind::Kolter => {
            let s = &config.experiment.kolter;
            let k = envs::make_kolter(s.epsilon, s.d1, s.gamma).map_err(HarnessError::Core)?;
            tdlab::container::to_text(&k.mdp, Some(&k.x))
        }
        EnvKind::Random => {
            let rt = RandomRuntime::build(config)?;
            tdlab::container::to_text(&rt.mdp, Some(&rt.x))
        }
    })
}

/// Execute every (sweep point x replication) run, in parallel when `jobs`
/// exceeds one. Results are ordered by (sweep, seed) regardless of
/// scheduling.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<Vec<RunResult>> {
    config.validate()?;
    let etas = config.eta_values();
    let fingerprint = config.fingerprint();
    let mut tasks = Vec::new();
    for (sweep_index, &eta) in etas.iter().enumerate() {
        for seed_index in 0..config.experiment.replications {
            tasks.push((sweep_index, eta, seed_index));
        }
    }
    let worker = |&(sweep_index, eta, seed_index): &(usize, f64, u64)| {
        run_single(config, eta, sweep_index, seed_index, &fingerprint)
    };
    if jobs <= 1 {
        tasks.iter().map(worker).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HarnessError::Runtime(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(worker).collect())
    }
}

fn theta_allowance(p: &StepParams, beta: f64) -> Option<f64> {
    p.projections.map(|b| beta * (b.r1 + b.r2))
}

fn init_state(alg: AlgorithmId, w0: Vector, theta0: ThetaInit) -> LearnerState {
    match theta0 {
        ThetaInit::W0 => LearnerState::init(alg, w0),
        ThetaInit::Zero => {
            let k = w0.len();
            let dim = if alg.is_average_reward() { k + 1 } else { k };
            LearnerState::init_with_theta(alg, w0, Vector::zeros(dim))
                .expect("dimensions are consistent by construction")
        }
    }
}

fn run_single(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
) -> Result<RunResult> {
    let mut rng = run_stream(config.experiment.seed, sweep_index, seed_index);
    let alg = config.algorithm.id;
    let params = |gamma: f64| StepParams {
        eta,
        gamma,
        tau: config.algorithm.tau,
        projections: config.algorithm.projections,
    };
    match config.experiment.env {
        EnvKind::BairdEval => {
            let inst = envs::make_baird(BairdMode::Evaluation);
            drive_baird_eval(config, eta, sweep_index, seed_index, fingerprint, &inst, params(envs::BAIRD_GAMMA), &mut rng)
        }
        EnvKind::BairdControl => {
            let inst = envs::make_baird(BairdMode::Control);
            drive_baird_control(config, eta, sweep_index, seed_index, fingerprint, &inst, params(envs::BAIRD_GAMMA), &mut rng)
        }
        EnvKind::Kolter => {
            let section = &config.experiment.kolter;
            let inst = envs::make_kolter(section.epsilon, section.d1, section.gamma)
                .map_err(HarnessError::Core)?;
            drive_kolter(config, eta, sweep_index, seed_index, fingerprint, &inst, params(section.gamma), &mut rng)
        }
        EnvKind::Random => {
            let rt = RandomRuntime::build(config)?;
            drive_random(config, eta, sweep_index, seed_index, fingerprint, &rt, params(rt.gamma), &mut rng)
        }
    }
    .map(|mut result| {
        result.algorithm = alg.name().to_string();
        result
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
    recorder: Recorder,
    state: &LearnerState,
    termination: Termination,
    termination_t: u64,
) -> RunResult {
    RunResult {
        env: config.experiment.env.name().to_string(),
        algorithm: String::new(), // filled by run_single
        fingerprint: fingerprint.to_string(),
        sweep_index,
        sweep_key: "eta".to_string(),
        sweep_value: format!("{eta}"),
        eta,
        seed_index,
        rows: recorder.rows,
        final_w: state.w.iter().copied().collect(),
        final_rbar: state.rbar,
        termination,
        termination_t,
        max_value_error: recorder.max_value_error,
        max_drift_violation: recorder.max_drift_violation,
        crossings: recorder.crossings,
    }
}

/// Shared loop tail: metric, cap check, recording.
struct LoopGuard {
    cap: f64,
}

impl LoopGuard {
    fn exceeded(&self, state: &LearnerState) -> bool {
        let n = state.w.norm();
        !n.is_finite() || n > self.cap
    }
}

#[allow(clippy::too_many_arguments)]
fn drive_baird_eval(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
    inst: &envs::BairdInstance,
    params: StepParams,
    rng: &mut SplitMix64,
) -> Result<RunResult> {
    if !matches!(
        config.algorithm.id,
        AlgorithmId::Alg1TdVariant | AlgorithmId::BaselineTdRidge
    ) {
        return Err(HarnessError::Config(format!(
            "{} is not a state-value evaluation learner; baird-eval supports \
             alg1_td_variant and baseline_td_ridge",
            config.algorithm.id.name()
        )));
    }
    let x = &inst.x_eval;
    let horizon = config.experiment.horizon;
    let mut recorder = Recorder::new(&config.experiment.track_crossings, horizon);
    let guard = LoopGuard { cap: config.experiment.cap };
    let mut state = init_state(config.algorithm.id, inst.w0_eval.clone(), config.algorithm.theta0);

    let uniform = config.experiment.baird.sampling == BairdSampling::Uniform;
    let mut s = rng.below(7);
    let value_error = |st: &LearnerState| (x.matrix() * &st.w).norm();
    recorder.observe(0, value_error(&state), &state, 0.0, None, true);

    for t in 1..=horizon {
        if uniform {
            s = rng.below(7);
        }
        let a = inst.mu0.sample_action(s, rng);
        let mu_p = inst.mu0.prob(s, a);
        if mu_p == 0.0 {
            return Err(HarnessError::Core(tdlab::Error::UndefinedRatio));
        }
        let rho = inst.target.prob(s, a) / mu_p;
        let (reward, s2) = inst.mdp.sample_transition(s, a, rng);
        let tr = TdTransition {
            x: x.row(s),
            reward,
            x_next: x.row(s2),
            rho,
        };
        let alpha = config.algorithm.alpha.at(t - 1);
        let beta = config.algorithm.beta.at(t - 1);
        let prev_theta = state.theta.clone();
        state = match config.algorithm.id {
            AlgorithmId::Alg1TdVariant => {
                agents::step_alg1_td_variant(&state, &tr, alpha, beta, &params)
            }
            _ => agents::step_baseline_td_is(&state, &tr, alpha, &params),
        };
        state.last_pair = Some((s, a));
        s = s2;
        let drift = (&state.theta - prev_theta).norm();
        let exceeded = guard.exceeded(&state);
        recorder.observe(
            t,
            value_error(&state),
            &state,
            drift,
            theta_allowance(&params, beta),
            exceeded,
        );
        if exceeded {
            return Ok(finish(
                config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
                Termination::ValueExceededCap, t,
            ));
        }
    }
    Ok(finish(
        config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
        Termination::Completed, horizon,
    ))
}

fn baird_next_rows(inst: &envs::BairdInstance, s2: usize) -> Matrix {
    let x = inst.x_ctrl.matrix();
    let mut rows = Matrix::zeros(2, x.ncols());
    rows.row_mut(0).copy_from(&x.row(sa_index(s2, 0, 2)));
    rows.row_mut(1).copy_from(&x.row(sa_index(s2, 1, 2)));
    rows
}

/// Behavior action probabilities at `s` for a two-action control learner.
fn control_behavior_row(
    behavior: BehaviorSpec,
    fixed: &Policy,
    x: &FeatureMatrix,
    n_actions: usize,
    s: usize,
    values_weights: &Vector,
    tau: f64,
) -> Vec<f64> {
    let softmax_row = |v: &Vector| -> Vec<f64> {
        let prefs: Vec<f64> = (0..n_actions)
            .map(|a| x.row(sa_index(s, a, n_actions)).dot(v) / tau)
            .collect();
        let m = prefs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = prefs.iter().map(|p| (p - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    };
    match behavior {
        BehaviorSpec::Fixed => (0..n_actions).map(|a| fixed.prob(s, a)).collect(),
        BehaviorSpec::SoftmaxValues => softmax_row(values_weights),
        BehaviorSpec::MixtureFixedSoftmax { epsilon } => {
            let soft = softmax_row(values_weights);
            (0..n_actions)
                .map(|a| (1.0 - epsilon) * fixed.prob(s, a) + epsilon * soft[a])
                .collect()
        }
    }
}

/// The weight vector that drives value-dependent behavior policies.
fn behavior_weights(alg: AlgorithmId, state: &LearnerState) -> Vector {
    if alg.uses_target_network() {
        if alg.is_average_reward() {
            state.theta_w()
        } else {
            state.theta.clone()
        }
    } else {
        state.w.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn drive_baird_control(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
    inst: &envs::BairdInstance,
    params: StepParams,
    rng: &mut SplitMix64,
) -> Result<RunResult> {
    if !matches!(
        config.algorithm.id,
        AlgorithmId::Alg3QLearning | AlgorithmId::Alg4GradientQ | AlgorithmId::BaselineQRidge
    ) {
        return Err(HarnessError::Config(format!(
            "{} is not a discounted control learner; baird-control supports \
             alg3_q_learning, alg4_gradient_q and baseline_q_ridge",
            config.algorithm.id.name()
        )));
    }
    let x = &inst.x_ctrl;
    let horizon = config.experiment.horizon;
    let mut recorder = Recorder::new(&config.experiment.track_crossings, horizon);
    let guard = LoopGuard { cap: config.experiment.cap };
    let mut state = init_state(config.algorithm.id, inst.w0_ctrl.clone(), config.algorithm.theta0);

    let uniform = config.experiment.baird.sampling == BairdSampling::Uniform;
    let mut s = rng.below(7);
    // q* is identically zero (all rewards vanish)
    let value_error = |st: &LearnerState| (x.matrix() * &st.w).norm();
    recorder.observe(0, value_error(&state), &state, 0.0, None, true);

    for t in 1..=horizon {
        if uniform {
            s = rng.below(7);
        }
        let weights = behavior_weights(config.algorithm.id, &state);
        let probs = control_behavior_row(
            config.algorithm.behavior,
            &inst.mu0,
            x,
            2,
            s,
            &weights,
            config.algorithm.tau,
        );
        let a = rng.choice(&probs);
        let (reward, s2) = inst.mdp.sample_transition(s, a, rng);
        let tr = ControlTransition {
            x: x.row(sa_index(s, a, 2)),
            reward,
            next_rows: baird_next_rows(inst, s2),
        };
        let alpha = config.algorithm.alpha.at(t - 1);
        let beta = config.algorithm.beta.at(t - 1);
        let prev_theta = state.theta.clone();
        state = match config.algorithm.id {
            AlgorithmId::Alg3QLearning => agents::step_alg3(&state, &tr, alpha, beta, &params),
            AlgorithmId::Alg4GradientQ => agents::step_alg4(&state, &tr, alpha, beta, &params),
            _ => agents::step_baseline_q(&state, &tr, alpha, &params),
        };
        state.last_pair = Some((s, a));
        s = s2;
        let drift = (&state.theta - prev_theta).norm();
        let exceeded = guard.exceeded(&state);
        recorder.observe(
            t,
            value_error(&state),
            &state,
            drift,
            theta_allowance(&params, beta),
            exceeded,
        );
        if exceeded {
            return Ok(finish(
                config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
                Termination::ValueExceededCap, t,
            ));
        }
    }
    Ok(finish(
        config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
        Termination::Completed, horizon,
    ))
}

#[allow(clippy::too_many_arguments)]
fn drive_kolter(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
    inst: &envs::KolterInstance,
    params: StepParams,
    rng: &mut SplitMix64,
) -> Result<RunResult> {
    if !matches!(
        config.algorithm.id,
        AlgorithmId::Alg1QEval | AlgorithmId::Alg1TdVariant | AlgorithmId::BaselineTdRidge
    ) {
        return Err(HarnessError::Config(format!(
            "{} is not an evaluation learner; kolter supports alg1_q_eval, \
             alg1_td_variant and baseline_td_ridge",
            config.algorithm.id.name()
        )));
    }
    let x = &inst.x;
    let horizon = config.experiment.horizon;
    let mut recorder = Recorder::new(&config.experiment.track_crossings, horizon);
    let guard = LoopGuard { cap: config.experiment.cap };
    let k = x.dim();
    let mut state = init_state(config.algorithm.id, Vector::zeros(k), config.algorithm.theta0);
    let weights = [inst.d1, 1.0 - inst.d1];
    let value_error = |st: &LearnerState| (x.matrix() * &st.w - &inst.v_pi).norm();
    recorder.observe(0, value_error(&state), &state, 0.0, None, true);

    for t in 1..=horizon {
        // single action; states drawn i.i.d. from the free weighting
        let s = rng.choice(&weights);
        let (reward, s2) = inst.mdp.sample_transition(s, 0, rng);
        let alpha = config.algorithm.alpha.at(t - 1);
        let beta = config.algorithm.beta.at(t - 1);
        let prev_theta = state.theta.clone();
        state = match config.algorithm.id {
            AlgorithmId::Alg1QEval => {
                let tr = EvalTransition { x: x.row(s), reward, x_bar_next: x.row(s2) };
                agents::step_alg1(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::Alg1TdVariant => {
                let tr = TdTransition { x: x.row(s), reward, x_next: x.row(s2), rho: 1.0 };
                agents::step_alg1_td_variant(&state, &tr, alpha, beta, &params)
            }
            _ => {
                let tr = TdTransition { x: x.row(s), reward, x_next: x.row(s2), rho: 1.0 };
                agents::step_baseline_td_is(&state, &tr, alpha, &params)
            }
        };
        state.last_pair = Some((s, 0));
        let drift = (&state.theta - prev_theta).norm();
        let exceeded = guard.exceeded(&state);
        recorder.observe(
            t,
            value_error(&state),
            &state,
            drift,
            theta_allowance(&params, beta),
            exceeded,
        );
        if exceeded {
            return Ok(finish(
                config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
                Termination::ValueExceededCap, t,
            ));
        }
    }
    Ok(finish(
        config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
        Termination::Completed, horizon,
    ))
}

/// Assembled random-environment pieces shared by all replications.
pub struct RandomRuntime {
    pub mdp: Mdp,
    pub x: FeatureMatrix,
    pub behavior: Policy,
    pub target: Policy,
    pub gamma: f64,
    pub q_ref: Vector,
}

impl RandomRuntime {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let section = &config.experiment.random;
        let (mdp, x_raw) = envs::make_random_mdp(
            section.seed,
            section.n_states,
            section.n_actions,
            section.feature_dim,
            section.mixing,
        )?;
        let behavior = Policy::uniform(section.n_states, section.n_actions);
        let target = envs::make_random_soft_policy(
            section.target_policy_seed,
            section.n_states,
            section.n_actions,
        );
        let mut x = x_raw;
        if section.center_features {
            let d = mdp::stationary_state_action_dist(&mdp, &behavior)?;
            x = x.center(&d)?;
        }
        if let Some(target_norm) = section.scale_x {
            x = x.scale_to_norm(target_norm)?;
        }
        let alg = config.algorithm.id;
        let q_ref = if alg.is_average_reward() {
            if alg.is_control() {
                Vector::zeros(mdp.n_pairs())
            } else {
                let (_, qbar) = mdp::reward_rate_and_differential_q(&mdp, &target)?;
                qbar
            }
        } else if alg.is_control() {
            mdp::exact_q_star(&mdp, section.gamma)?
        } else {
            mdp::exact_q_pi(&mdp, &target, section.gamma)?
        };
        Ok(Self { mdp, x, behavior, target, gamma: section.gamma, q_ref })
    }

    fn expected_next_feature(&self, s2: usize) -> Vector {
        let na = self.mdp.n_actions();
        let mut out = Vector::zeros(self.x.dim());
        for a in 0..na {
            out += self.x.row(sa_index(s2, a, na)) * self.target.prob(s2, a);
        }
        out
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
}

#[allow(clippy::too_many_arguments)]
fn drive_random(
    config: &ExperimentConfig,
    eta: f64,
    sweep_index: usize,
    seed_index: u64,
    fingerprint: &str,
    rt: &RandomRuntime,
    params: StepParams,
    rng: &mut SplitMix64,
) -> Result<RunResult> {
    let alg = config.algorithm.id;
    if matches!(alg, AlgorithmId::Alg1TdVariant) {
        return Err(HarnessError::Config(
            "alg1_td_variant is a state-value learner; the random environment \
             uses state-action features"
                .into(),
        ));
    }
    let x = &rt.x;
    let na = rt.mdp.n_actions();
    let horizon = config.experiment.horizon;
    let mut recorder = Recorder::new(&config.experiment.track_crossings, horizon);
    let guard = LoopGuard { cap: config.experiment.cap };
    let k = x.dim();
    let mut state = init_state(alg, Vector::zeros(k), config.algorithm.theta0);
    let value_error = |st: &LearnerState| (x.matrix() * &st.w - &rt.q_ref).norm();
    recorder.observe(0, value_error(&state), &state, 0.0, None, true);

    let mut s = rng.below(rt.mdp.n_states());
    let mut a = rt.behavior.sample_action(s, rng);

    for t in 1..=horizon {
        let (reward, s2) = rt.mdp.sample_transition(s, a, rng);
        // next behavior action: fixed policy for evaluation learners,
        // value-dependent for control learners
        let a2 = if alg.is_control() {
            let weights = behavior_weights(alg, &state);
            let probs = control_behavior_row(
                config.algorithm.behavior,
                &rt.behavior,
                x,
                na,
                s2,
                &weights,
                config.algorithm.tau,
            );
            rng.choice(&probs)
        } else {
            rt.behavior.sample_action(s2, rng)
        };

        let alpha = config.algorithm.alpha.at(t - 1);
        let beta = config.algorithm.beta.at(t - 1);
        let prev_theta = state.theta.clone();
        let x_t = x.row(sa_index(s, a, na));
        state = match alg {
            AlgorithmId::Alg1QEval => {
                let tr = EvalTransition {
                    x: x_t,
                    reward,
                    x_bar_next: rt.expected_next_feature(s2),
                };
                agents::step_alg1(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::Alg2DiffQEval => {
                let tr = EvalTransition {
                    x: x_t,
                    reward,
                    x_bar_next: rt.expected_next_feature(s2),
                };
                agents::step_alg2(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::Alg3QLearning => {
                let tr = ControlTransition { x: x_t, reward, next_rows: rt.next_rows(s2) };
                agents::step_alg3(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::Alg4GradientQ => {
                let tr = ControlTransition { x: x_t, reward, next_rows: rt.next_rows(s2) };
                agents::step_alg4(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::Alg5DiffQLearning => {
                let tr = ControlTransition { x: x_t, reward, next_rows: rt.next_rows(s2) };
                agents::step_alg5(&state, &tr, alpha, beta, &params)
            }
            AlgorithmId::BaselineTdRidge => {
                let tr = EvalTransition {
                    x: x_t,
                    reward,
                    x_bar_next: rt.expected_next_feature(s2),
                };
                agents::step_baseline_td_expected(&state, &tr, alpha, &params)
            }
            AlgorithmId::BaselineQRidge => {
                let tr = ControlTransition { x: x_t, reward, next_rows: rt.next_rows(s2) };
                agents::step_baseline_q(&state, &tr, alpha, &params)
            }
            AlgorithmId::BaselineDiffTd => {
                let tr = EvalTransition {
                    x: x_t,
                    reward,
                    x_bar_next: rt.expected_next_feature(s2),
                };
                agents::step_baseline_diff_td(&state, &tr, alpha, &params)
            }
            AlgorithmId::BaselineDiffQ => {
                let tr = ControlTransition { x: x_t, reward, next_rows: rt.next_rows(s2) };
                agents::step_baseline_diff_q(&state, &tr, alpha, &params)
            }
            AlgorithmId::Alg1TdVariant => unreachable!("rejected above"),
        };
        state.last_pair = Some((s, a));
        s = s2;
        a = a2;
        let drift = (&state.theta - prev_theta).norm();
        let exceeded = guard.exceeded(&state);
        recorder.observe(
            t,
            value_error(&state),
            &state,
            drift,
            theta_allowance(&params, beta),
            exceeded,
        );
        if exceeded {
            return Ok(finish(
                config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
                Termination::ValueExceededCap, t,
            ));
        }
    }
    Ok(finish(
        config, eta, sweep_index, seed_index, fingerprint, recorder, &state,
        Termination::Completed, horizon,
    ))
}
