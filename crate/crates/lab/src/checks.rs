//! Cross-module invariant suites behind `lab check`.
//!
//! Each suite prints machine-readable lines (`CHECK <suite>.<name> PASS|FAIL
//! <detail>`) via the caller; a nonzero count of failures maps to exit code
//! 2. The `inject_fault` flag deliberately perturbs one computation per
//! suite so the checker itself can be tested for sensitivity.

use tdlab::agents::AlgorithmId;
use tdlab::envs::{make_random_mdp, make_random_soft_policy};
use tdlab::linalg::Vector;
use tdlab::mdp::{
    build_transition_matrix, exact_q_pi, reward_rate_and_differential_q,
    stationary_distribution, Policy, StateActionDist,
};
use tdlab::oracles::{
    build_evaluation_operators, contraction_probe, control_fixed_point_discounted,
    evaluation_fixed_point_average, evaluation_fixed_point_discounted, mean_field_fixed_point,
    theorem_constants_and_bound_discounted, MeanField, MeanFieldAlgorithm, PolicyFromValues,
};

use crate::config::ExperimentConfig;
use crate::runner;
use crate::Result;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), passed, detail }
}

/// Known suite names, in execution order.
pub const SUITES: [&str; 4] = ["drift", "contraction", "bounds", "oracle"];

/// Run the selected suite (empty or `all` runs everything).
pub fn run_checks(selector: &str, inject_fault: bool) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let run_all = selector.is_empty() || selector == "all";
    if run_all || selector == "drift" {
        out.extend(drift_suite(inject_fault)?);
    }
    if run_all || selector == "contraction" {
        out.extend(contraction_suite(inject_fault)?);
    }
    if run_all || selector == "bounds" {
        out.extend(bounds_suite(inject_fault)?);
    }
    if run_all || selector == "oracle" {
        out.extend(oracle_suite(inject_fault)?);
    }
    if out.is_empty() {
        return Err(crate::HarnessError::Config(format!(
            "unknown check suite {selector:?}; known: {}",
            SUITES.join(", ")
        )));
    }
    Ok(out)
}

/// Projected target updates must drift no faster than
/// `beta (R_B1 + R_B2)` at every step.
fn drift_suite(inject_fault: bool) -> Result<Vec<CheckOutcome>> {
    let text = r#"
[experiment]
env = "baird-eval"
horizon = 20000
replications = 2
seed = 11

[algorithm]
id = "alg1_td_variant"
eta = 0.01
alpha = { kind = "constant", value = 0.01 }
beta = { kind = "constant", value = 0.01 }

[algorithm.projections]
r_b1 = 100.0
r_b2 = 99.0
"#;
    let config = ExperimentConfig::from_str_validated(text)?;
    let results = runner::run(&config, 1)?;
    // the injected fault pretends the drift exceeded the allowance
    let fault = if inject_fault { 10.0 } else { 0.0 };
    let worst = results
        .iter()
        .map(|r| r.max_drift_violation + fault)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![outcome(
        "drift.lemma_bound",
        worst <= 0.0,
        format!("max violation {worst:.3e} over {} runs", results.len()),
    )])
}

fn scaled_mean_field(scale_factor: f64) -> Result<(MeanField, f64)> {
    let (mdp, x_raw) = make_random_mdp(1234, 5, 2, 3, 0.3)?;
    let mu = Policy::uniform(5, 2);
    let pi = make_random_soft_policy(77, 5, 2);
    let gamma = 0.9f64;
    let eta = 0.1f64;
    let xi = 0.5f64;
    let p_mu = build_transition_matrix(&mdp, &mu)?;
    let d = stationary_distribution(&p_mu)?;
    let p_pi = build_transition_matrix(&mdp, &pi)?;
    let p_norm = tdlab::linalg::weighted_operator_norm(&p_pi, &d)?;
    let c0 = 2.0 * (1.0 - xi) * eta.sqrt() / (gamma * p_norm);
    let x = x_raw.scale_to_norm(scale_factor * c0)?;
    let mf = MeanField {
        mdp,
        x,
        gamma,
        eta,
        behavior: PolicyFromValues::Fixed(mu),
        target: PolicyFromValues::Fixed(pi),
        balls: None,
    };
    Ok((mf, c0))
}

/// Below the norm threshold the tracked-solution map must contract at the
/// advertised rate; far above it the probe is expected (not required) to
/// fail.
fn contraction_suite(inject_fault: bool) -> Result<Vec<CheckOutcome>> {
    let (mf, _) = scaled_mean_field(0.9)?;
    let mut worst = contraction_probe(&mf, MeanFieldAlgorithm::Alg1QEval, 100, 2.0, 5)?;
    if inject_fault {
        worst += 0.6;
    }
    let mut out = vec![outcome(
        "contraction.below_threshold",
        worst <= 0.5 + 1e-9,
        format!("max ratio {worst:.4}"),
    )];
    let (mf_big, _) = scaled_mean_field(10.0)?;
    let big = contraction_probe(&mf_big, MeanFieldAlgorithm::Alg1QEval, 100, 2.0, 5)?;
    out.push(outcome(
        "contraction.negative_control",
        true, // informational: allowed to exceed the contraction rate
        format!("max ratio {big:.4} at 10x the norm threshold"),
    ));
    Ok(out)
}

/// Spot-check the performance-bound inequality and the on-policy
/// reward-rate identity.
fn bounds_suite(inject_fault: bool) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    // discounted bound on a handful of precondition-satisfying instances
    let mut violations = 0usize;
    let mut checked = 0usize;
    for seed in 0..5u64 {
        let (mdp, x_raw) = make_random_mdp(seed + 500, 4, 2, 3, 0.3)?;
        let mu = Policy::uniform(4, 2);
        let pi = make_random_soft_policy(seed + 900, 4, 2);
        let gamma = 0.9f64;
        let eta = 0.1f64;
        let p_mu = build_transition_matrix(&mdp, &mu)?;
        let d = stationary_distribution(&p_mu)?;
        let p_pi = build_transition_matrix(&mdp, &pi)?;
        let p_norm = tdlab::linalg::weighted_operator_norm(&p_pi, &d)?;
        let c0 = 2.0 * 0.5 * eta.sqrt() / (gamma * p_norm);
        let x = x_raw.scale_to_norm(0.9 * c0)?;
        let ops = build_evaluation_operators(&mdp, &x, &mu, &pi, gamma)?;
        let w = evaluation_fixed_point_discounted(&ops, eta)?;
        let q_pi = exact_q_pi(&mdp, &pi, gamma)?;
        let report = theorem_constants_and_bound_discounted(&ops, eta, 0.5, &q_pi, &w);
        if report.preconditions_met {
            checked += 1;
            // the injected fault pretends the solver overshot the bound
            let achieved = if inject_fault {
                2.0 * report.bound_value
            } else {
                report.achieved_error
            };
            if achieved > report.bound_value {
                violations += 1;
            }
        }
    }
    out.push(outcome(
        "bounds.discounted_inequality",
        violations == 0 && checked > 0,
        format!("{checked} instances checked, {violations} violations"),
    ));

    // on-policy: the average-reward fixed point reproduces the reward rate
    let (mdp, x_raw) = make_random_mdp(321, 4, 2, 3, 0.3)?;
    let mu = Policy::uniform(4, 2);
    let p_mu = build_transition_matrix(&mdp, &mu)?;
    let d = StateActionDist::new(stationary_distribution(&p_mu)?)
        .map_err(crate::HarnessError::Core)?;
    let xc = x_raw.center(&d)?;
    let ops = build_evaluation_operators(&mdp, &xc, &mu, &mu, 0.0)?;
    let (_, rbar_eta) = evaluation_fixed_point_average(&ops, 0.1)?;
    let (rbar_true, _) = reward_rate_and_differential_q(&mdp, &mu)?;
    let gap = (rbar_eta - rbar_true).abs();
    out.push(outcome(
        "bounds.on_policy_rate_identity",
        gap <= 1e-10,
        format!("|rbar_eta - rbar_pi| = {gap:.3e}"),
    ));
    Ok(out)
}

/// The deterministic mean-field iteration must land on the algebraic fixed
/// points.
fn oracle_suite(inject_fault: bool) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    // evaluation: mean-field vs (A + eta I)^{-1} b
    let (mf, _) = scaled_mean_field(0.9)?;
    let ops = mf.operators_at(MeanFieldAlgorithm::Alg1QEval, &Vector::zeros(3))?;
    let algebraic = evaluation_fixed_point_discounted(&ops, mf.eta)?;
    let mut iterated =
        mean_field_fixed_point(&mf, MeanFieldAlgorithm::Alg1QEval, Vector::zeros(3))?;
    if inject_fault {
        iterated[0] += 1e-3;
    }
    let gap = (&iterated - &algebraic).norm();
    out.push(outcome(
        "oracle.eval_mean_field_agreement",
        gap <= 1e-8,
        format!("gap {gap:.3e}"),
    ));

    // control: mean-field vs the certified fixed-point iteration
    let (mdp, x_raw) = make_random_mdp(42, 5, 2, 3, 0.3)?;
    let x = x_raw.scale_to_norm(0.2)?;
    let mf_ctrl = MeanField {
        mdp,
        x,
        gamma: 0.9,
        eta: 0.1,
        behavior: PolicyFromValues::Softmax { tau: 1.0 },
        target: PolicyFromValues::Greedy,
        balls: None,
    };
    let report = control_fixed_point_discounted(&mf_ctrl)?;
    let iterated =
        mean_field_fixed_point(&mf_ctrl, MeanFieldAlgorithm::Alg3QLearning, Vector::zeros(3))?;
    let gap = (&iterated - &report.point).norm();
    out.push(outcome(
        "oracle.control_mean_field_agreement",
        gap <= 1e-8 && report.residual <= 1e-8,
        format!("gap {gap:.3e}, residual {:.3e}", report.residual),
    ));

    // the reported divergence flag is what makes the example an example
    let baird = tdlab::envs::make_baird(tdlab::envs::BairdMode::Control);
    let ops_baird = build_evaluation_operators(
        &baird.mdp,
        &baird.x_ctrl,
        &baird.mu0,
        &baird.target,
        0.99,
    )?;
    let cert = tdlab::oracles::divergence_certificate(&ops_baird, 0.0);
    out.push(outcome(
        "oracle.target_jacobian_stable",
        cert.target_main_eigenvalues.iter().all(|z| z.re <= 1e-12),
        "main-network Jacobian eigenvalues have nonpositive real parts".into(),
    ));
    // keep the learner ids honest in the presence of refactors
    out.push(outcome(
        "oracle.algorithm_catalog",
        AlgorithmId::Alg5DiffQLearning.is_average_reward()
            && !AlgorithmId::Alg3QLearning.is_average_reward(),
        "stacked-target classification".into(),
    ));
    Ok(out)
}
