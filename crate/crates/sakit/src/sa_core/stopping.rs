use rand::Rng;

use super::constants::DerivedConstants;
use super::engine::{ParamVec, TrajectoryLog};
use crate::sampling::sample_categorical;
use crate::{Error, Result};

/// How the output of a run is chosen among its iterates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoppingRule {
    /// `w_T`.
    Last,
    /// `w_R` with `P(R = k) ∝ γ_{k+1} ω_{k+1}`.
    RandomWeighted,
    /// `Σ_k p_k w_k` with the same weights (Polyak–Ruppert style averaging).
    WeightedAverage,
}

/// Normalised weights `γ_{k+1} ω_{k+1} / Σ_l γ_{l+1} ω_{l+1}`.
pub fn stopping_weights(gammas: &[f64], omegas: &[f64]) -> Result<Vec<f64>> {
    if gammas.len() != omegas.len() {
        return Err(Error::DimensionMismatch { expected: gammas.len(), got: omegas.len() });
    }
    if gammas.is_empty() {
        return Err(Error::MissingIterates);
    }
    let raw: Vec<f64> = gammas.iter().zip(omegas).map(|(g, o)| g * o).collect();
    if let Some(index) = raw.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveWeight { index, gamma: gammas[index] });
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / total).collect())
}

/// `ω_{k+1}` for each logged step.
pub fn omegas_for(dc: &DerivedConstants, gammas: &[f64]) -> Vec<f64> {
    gammas.iter().map(|&g| dc.omega(g)).collect()
}

fn log_weights(log: &TrajectoryLog, dc: &DerivedConstants) -> Result<Vec<f64>> {
    let gammas: Vec<f64> = log.records.iter().map(|r| r.gamma).collect();
    stopping_weights(&gammas, &omegas_for(dc, &gammas))
}

/// Picks the output iterate of a run according to `rule`.
pub fn select_output<R: Rng + ?Sized>(
    log: &TrajectoryLog,
    rule: StoppingRule,
    dc: &DerivedConstants,
    rng: &mut R,
) -> Result<ParamVec> {
    if log.records.is_empty() {
        return Err(Error::MissingIterates);
    }
    if rule == StoppingRule::Last {
        return Ok(log.final_w.clone());
    }
    let iterates = log.iterates.as_ref().ok_or(Error::MissingIterates)?;
    if iterates.len() != log.records.len() {
        return Err(Error::MissingIterates);
    }
    let weights = log_weights(log, dc)?;
    Ok(match rule {
        StoppingRule::RandomWeighted => iterates[sample_categorical(&weights, rng)].clone(),
        StoppingRule::WeightedAverage => {
            let mut avg = ParamVec::zeros(log.final_w.len());
            for (p, w) in weights.iter().zip(iterates) {
                avg.axpy(*p, w, 1.0);
            }
            avg
        }
        StoppingRule::Last => unreachable!(),
    })
}
