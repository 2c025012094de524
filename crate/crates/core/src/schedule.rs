//! Step-size schedules and the two-timescale admissibility check.

use serde::{Deserialize, Serialize};

/// A positive nonincreasing step-size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// `value` at every step.
    Constant { value: f64 },
    /// `scale * (t + 1)^{-exponent}`.
    Polynomial { scale: f64, exponent: f64 },
}

impl Schedule {
    pub fn at(&self, t: u64) -> f64 {
        match self {
            Schedule::Constant { value } => *value,
            Schedule::Polynomial { scale, exponent } => {
                scale * ((t + 1) as f64).powf(-exponent)
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Schedule::Constant { value } => *value > 0.0,
            Schedule::Polynomial { scale, exponent } => *scale > 0.0 && *exponent >= 0.0,
        }
    }
}

/// Verdict on a main/target step-size pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    /// Main rates are square-summable but not summable.
    pub alpha_admissible: bool,
    /// Target rates are square-summable but not summable.
    pub beta_admissible: bool,
    /// Some `d > 0` makes `sum_t (beta_t / alpha_t)^d` finite.
    pub two_timescale: bool,
    /// Constant rates: runnable, but outside the convergence theory.
    pub experiment_mode: bool,
    pub notes: Vec<String>,
}

impl ScheduleReport {
    pub fn admissible(&self) -> bool {
        self.alpha_admissible && self.beta_admissible && self.two_timescale
    }
}

/// Check a step-size pair symbolically from the exponents.
///
/// A polynomial rate `(t+1)^{-p}` is admissible iff `p` lies in `(0.5, 1]`
/// (square-summable, not summable). The two-timescale ratio condition holds
/// iff the target exponent strictly exceeds the main exponent: then any
/// `d > 1/(q - p)` makes the ratio-power series summable. Constant rates are
/// flagged as experiment mode rather than failed.
pub fn check_schedules(alpha: &Schedule, beta: &Schedule) -> ScheduleReport {
    let mut notes = Vec::new();
    let mut experiment_mode = false;

    let admissible_exponent = |p: f64| p > 0.5 && p <= 1.0;

    let (alpha_admissible, pa) = match alpha {
        Schedule::Constant { value } => {
            experiment_mode = true;
            notes.push(format!(
                "alpha constant {value}: experiment mode, no convergence guarantee"
            ));
            (false, None)
        }
        Schedule::Polynomial { exponent, .. } => {
            let ok = admissible_exponent(*exponent);
            if !ok {
                notes.push(format!(
                    "alpha exponent {exponent} outside (0.5, 1]: fails (square-)summability"
                ));
            }
            (ok, Some(*exponent))
        }
    };
    let (beta_admissible, pb) = match beta {
        Schedule::Constant { value } => {
            experiment_mode = true;
            notes.push(format!(
                "beta constant {value}: experiment mode, no convergence guarantee"
            ));
            (false, None)
        }
        Schedule::Polynomial { exponent, .. } => {
            let ok = admissible_exponent(*exponent);
            if !ok {
                notes.push(format!(
                    "beta exponent {exponent} outside (0.5, 1]: fails (square-)summability"
                ));
            }
            (ok, Some(*exponent))
        }
    };

    let two_timescale = match (pa, pb) {
        (Some(p), Some(q)) => {
            if q > p {
                notes.push(format!(
                    "ratio exponent {} > 0: any d > {} certifies the ratio series",
                    q - p,
                    1.0 / (q - p)
                ));
                true
            } else {
                notes.push("beta must decay strictly faster than alpha".into());
                false
            }
        }
        _ => false,
    };

    ScheduleReport {
        alpha_admissible,
        beta_admissible,
        two_timescale,
        experiment_mode,
        notes,
    }
}
