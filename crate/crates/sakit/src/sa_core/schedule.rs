use super::constants::Ext;
use crate::{Error, Result};

/// Step-size policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant {
        gamma: f64,
    },
    /// `γ_T = sqrt(2 V̄ / (η0 L_V T)) ∧ γ_max/2`, the horizon-dependent constant step that
    /// balances the initial-condition and noise terms of the constant-step bound.
    HorizonTuned {
        v_bar: f64,
        eta0: f64,
        l_v: f64,
        gamma_max: Ext,
        horizon: usize,
    },
    /// `γ_{k+1} = γ̃ / (k + 1 + T0)^β`.
    Polynomial {
        gamma_tilde: f64,
        t0: usize,
        beta: f64,
    },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { gamma } => positive("gamma", gamma),
            StepSchedule::HorizonTuned { .. } => horizon_tuned(self).map(|_| ()),
            StepSchedule::Polynomial { gamma_tilde, beta, .. } => {
                positive("gamma_tilde", gamma_tilde)?;
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::InvalidSchedule(format!("beta = {beta} must lie in (0, 1]")));
                }
                Ok(())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, StepSchedule::Polynomial { .. })
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!("{name} = {x} must be finite and positive")))
    }
}

fn horizon_tuned(s: &StepSchedule) -> Result<f64> {
    let StepSchedule::HorizonTuned { v_bar, eta0, l_v, gamma_max, horizon } = *s else { unreachable!() };
    if horizon == 0 {
        return Err(Error::InvalidSchedule("horizon T must be at least 1".into()));
    }
    positive("L_V", l_v)?;
    if !(v_bar >= 0.0 && eta0 >= 0.0) {
        return Err(Error::InvalidSchedule(format!("V_bar = {v_bar} and eta0 = {eta0} must be non-negative")));
    }
    if let Ext::Finite(g) = gamma_max {
        positive("gamma_max", g)?;
    }
    let tuned = if eta0 == 0.0 { f64::INFINITY } else { (2.0 * v_bar / (eta0 * l_v * horizon as f64)).sqrt() };
    let gamma = gamma_max.half().min_with(tuned);
    positive("tuned gamma", gamma)?;
    Ok(gamma)
}

/// The step `γ_{k+1}` used for the update that produces `w_{k+1}` from `w_k`.
pub fn schedule_gamma(s: &StepSchedule, k: usize) -> Result<f64> {
    match *s {
        StepSchedule::Constant { gamma } => positive("gamma", gamma).map(|_| gamma),
        StepSchedule::HorizonTuned { .. } => horizon_tuned(s),
        StepSchedule::Polynomial { gamma_tilde, t0, beta } => {
            s.validate()?;
            Ok(gamma_tilde / ((k + 1 + t0) as f64).powf(beta))
        }
    }
}

/// Checks `γ_k/γ_{k+1} ≤ 1 + γ_{k+1} (ρ − b1)/4` and monotonicity for `k = 1..=horizon`.
///
/// The fast-rate analysis needs this joint condition on the schedule parameters; it is
/// verified numerically instead of through closed-form admissible sets.
pub fn check_ratio_condition(s: &StepSchedule, rho_minus_b1: f64, horizon: usize) -> Result<()> {
    let mut prev = schedule_gamma(s, 0)?;
    for k in 1..=horizon {
        let next = schedule_gamma(s, k)?;
        if next > prev {
            return Err(Error::HypothesisViolated(format!("step increases at k = {k}")));
        }
        if prev / next > 1.0 + next * rho_minus_b1 / 4.0 {
            return Err(Error::HypothesisViolated(format!(
                "ratio condition fails at k = {k}: {prev}/{next} > 1 + {next}·{rho_minus_b1}/4"
            )));
        }
        prev = next;
    }
    Ok(())
}
