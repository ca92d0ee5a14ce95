//! Empirical verification of the assumption constants, the one-step descent inequality,
//! convergence rates and the non-asymptotic bounds.
//!
//! Monte-Carlo checks use a 3-standard-error acceptance band: a measured quantity passes when
//! it is below its bound plus three standard errors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::problems_td::TdProblem;
use crate::sa_core::{
    derive_constants, schedule_gamma, DerivedConstants, Ext, FieldOracle, Lyapunov, ParamVec, RegimeConstants, SaRng,
    StepSchedule,
};
use crate::spider::{spider_constant_bound, SpiderConstants};
use crate::{Error, Result};

/// Absolute slack for checks that are exact up to rounding.
const ROUNDING: f64 = 1e-10;

fn rounding_slack(x: f64) -> f64 {
    ROUNDING * (1.0 + x.abs())
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pointwise mean and standard error across replicate curves of equal length.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let len = curves.first().ok_or(Error::MissingIterates)?.len();
    if let Some(c) = curves.iter().find(|c| c.len() != len) {
        return Err(Error::DimensionMismatch { expected: len, got: c.len() });
    }
    Ok((0..len).map(|k| mean_se(&curves.iter().map(|c| c[k]).collect::<Vec<_>>())).collect())
}

/// Bias, variance and growth measurements at one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionPoint {
    pub w: ParamVec,
    pub lyap_w: f64,
    /// `‖E H − h‖²`, estimated without the `tr Cov/N` inflation of the plug-in estimate.
    pub measured_bias2: f64,
    pub bias2_se: f64,
    /// `τ0 + τ1 W(w)`.
    pub bound_bias2: f64,
    /// `E‖H − E H‖²`.
    pub measured_var: f64,
    pub var_se: f64,
    /// `σ²0 + σ²1 W(w)`.
    pub bound_var: f64,
    /// `‖h(w)‖² ≤ c_h0 + c_h1 W(w)`, checked exactly.
    pub growth_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub points: Vec<AssumptionPoint>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.pass)
    }
}

/// Draws `n_samples` oracle outputs at every test point and compares the conditional bias and
/// variance with the bounds of `rc`. Failures are recorded in the report, not raised.
///
/// Each point gets its own generator seeded from `rng`, so points run in parallel and the
/// report does not depend on the thread count.
pub fn certify_assumption_a1(
    field: &dyn FieldOracle,
    lyap: &dyn Lyapunov,
    rc: &RegimeConstants,
    test_points: &[ParamVec],
    n_samples: usize,
    rng: &mut SaRng,
) -> Result<AssumptionReport> {
    if n_samples < 2 {
        return Err(Error::InsufficientPoints(format!("{n_samples} oracle samples")));
    }
    let seeds: Vec<u64> = test_points.iter().map(|_| rng.random()).collect();
    let points = test_points
        .par_iter()
        .zip(seeds)
        .map(|(w, seed)| certify_point(field, lyap, rc, w, n_samples, &mut SaRng::seed_from_u64(seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AssumptionReport { points })
}

fn certify_point(
    field: &dyn FieldOracle,
    lyap: &dyn Lyapunov,
    rc: &RegimeConstants,
    w: &ParamVec,
    n: usize,
    rng: &mut SaRng,
) -> Result<AssumptionPoint> {
    let h = field
        .mean_field(w)
        .ok_or_else(|| Error::RegimeUnavailable("certification needs the exact mean field".into()))?;
    let d = h.len();
    let samples: Vec<ParamVec> = (0..n).map(|_| field.sample(w, rng)).collect();
    let nf = n as f64;
    let mean = samples.iter().fold(ParamVec::zeros(d), |a, x| a + x) / nf;
    let mut cov = DMatrix::zeros(d, d);
    let mut r = Vec::with_capacity(n);
    for x in &samples {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
        r.push(c.norm_squared());
    }
    cov /= nf - 1.0;
    let bias = &mean - &h;
    let trace = cov.trace();
    let measured_bias2 = bias.norm_squared() - trace / nf;
    let bias2_se = (4.0 * bias.dot(&(&cov * &bias)) / nf + 2.0 * (&cov * &cov).trace() / (nf * nf)).sqrt();
    let (_, var_se) = mean_se(&r);
    let measured_var = r.iter().sum::<f64>() / (nf - 1.0);
    let lyap_w = lyap.w(w);
    let bound_bias2 = rc.tau0 + rc.tau1 * lyap_w;
    let bound_var = rc.sigma2_0 + rc.sigma2_1 * lyap_w;
    let growth_bound = rc.c_h0 + rc.c_h1 * lyap_w;
    let growth_ok = h.norm_squared() <= growth_bound + rounding_slack(growth_bound);
    let pass = growth_ok
        && measured_bias2 <= bound_bias2 + 3.0 * bias2_se + rounding_slack(bound_bias2)
        && measured_var <= bound_var + 3.0 * var_se + rounding_slack(bound_var);
    Ok(AssumptionPoint {
        w: w.clone(),
        lyap_w,
        measured_bias2,
        bias2_se,
        bound_bias2,
        measured_var,
        var_se,
        bound_var,
        growth_ok,
        pass,
    })
}

/// Which one-step descent inequality is checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsVariant {
    /// `E V(w⁺) ≤ V(w) − ½γω(γ) W(w) + γ b0 + γ² L_V η0/2`.
    General,
    /// For `∇V = −h` and `γ ≤ 1/L_V`:
    /// `E V(w⁺) ≤ V(w) − ½γ((ρ − τ1) − γ L_V σ²1) W(w) + ½γ τ0 + ½γ² L_V σ²0`.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsCheck {
    /// Monte-Carlo estimate of `E V(w + γ H(w, X))`.
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub v_w: f64,
    pub pass: bool,
}

/// Checks the one-step descent inequality at a fixed `w`.
///
/// The inequality holds conditionally on the past; at a deterministic point this is the
/// expectation over one oracle draw, which is what is estimated here.
#[allow(clippy::too_many_arguments)]
pub fn robbins_siegmund_check(
    field: &dyn FieldOracle,
    lyap: &dyn Lyapunov,
    rc: &RegimeConstants,
    w: &ParamVec,
    gamma: f64,
    n_samples: usize,
    rng: &mut SaRng,
    variant: RsVariant,
) -> Result<RsCheck> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidSchedule(format!("gamma = {gamma} must be finite and positive")));
    }
    let v_w = lyap.v(w);
    let lw = lyap.w(w);
    let rhs = match variant {
        RsVariant::General => {
            let dc = derive_constants(rc)?;
            v_w - 0.5 * gamma * dc.omega(gamma) * lw + gamma * dc.b0 + gamma * gamma * rc.l_v * dc.eta0 / 2.0
        }
        RsVariant::Gradient => {
            if gamma > 1.0 / rc.l_v {
                return Err(Error::HypothesisViolated(format!("gamma = {gamma} exceeds 1/L_V = {}", 1.0 / rc.l_v)));
            }
            let omega2 = (rc.rho - rc.tau1) - gamma * rc.l_v * rc.sigma2_1;
            v_w - 0.5 * gamma * omega2 * lw + 0.5 * gamma * rc.tau0 + 0.5 * gamma * gamma * rc.l_v * rc.sigma2_0
        }
    };
    let vals: Vec<f64> = (0..n_samples.max(1))
        .map(|_| {
            let mut next = w.clone();
            next.axpy(gamma, &field.sample(w, rng), 1.0);
            lyap.v(&next)
        })
        .collect();
    let (lhs, lhs_se) = mean_se(&vals);
    Ok(RsCheck { lhs, lhs_se, rhs, v_w, pass: lhs <= rhs + 3.0 * lhs_se + rounding_slack(rhs) })
}

/// Least-squares fit of `log value = intercept + slope · log T`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits a power law to `(T, value)` pairs: at least four points spanning at least two decades
/// of `T`, all coordinates positive.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientPoints(format!("{} points, need 4", points.len())));
    }
    if points.iter().any(|&(t, v)| !(t > 0.0 && v > 0.0 && t.is_finite() && v.is_finite())) {
        return Err(Error::InsufficientPoints("coordinates must be positive and finite".into()));
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &(t, _)| (a.min(t), b.max(t)));
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(Error::InsufficientPoints(format!("T spans {lo}..{hi}, need two decades")));
    }
    Ok(least_squares(points))
}

/// [`fit_rate`], refitted on the final decade of `T` when the full fit has `r² < 0.98`, as
/// happens when an initial-condition transient bends the curve.
pub fn fit_rate_with_transient(points: &[(f64, f64)]) -> Result<RateFit> {
    let full = fit_rate(points)?;
    if full.r2 >= 0.98 {
        return Ok(full);
    }
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let tail: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= hi / 10.0 * (1.0 - 1e-12)).collect();
    if tail.len() < 2 {
        return Ok(full);
    }
    Ok(least_squares(&tail))
}

fn least_squares(points: &[(f64, f64)]) -> RateFit {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    RateFit { points: points.to_vec(), slope, intercept: my - slope * mx, r2 }
}

/// The non-asymptotic bounds that [`bound_curve`] evaluates.
///
/// For averaged quantities entry `t − 1` of the curve is the bound at horizon `t`; for
/// last-iterate quantities it is the bound on `E W(w_t)`.
#[derive(Clone, Copy, Debug)]
pub enum BoundSpec<'a> {
    /// Weighted average `Σ γ_{k+1}ω_{k+1} E W(w_k) / Σ γω` of the first `t` iterates:
    /// `[2V̄ + L_V η0 Σγ² + 2 b0 Σγ] / Σ γω`.
    WeightedAverage { rc: &'a RegimeConstants, v_bar: f64, schedule: &'a StepSchedule },
    /// Uniform average at a constant `γ ≤ γ_max/2`: `B + (2V̄ + L_V η0 t γ²)/(γ t (ρ − b1))`.
    ConstantStepAverage { rc: &'a RegimeConstants, v_bar: f64, gamma: f64 },
    /// Uniform average at the horizon-tuned step of each horizon `t`:
    /// `B + 2√(2V̄η0L_V)/(√t(ρ − b1)) ∨ 8V̄/(γ_max t(ρ − b1))`.
    TunedStepAverage { rc: &'a RegimeConstants, v_bar: f64 },
    /// `E W(w_t) ≤ Λ_{1:t} W0 + Σ_j Λ_{j+1:t} b_j` with `λ_k = 1 − γ_k(ρ − b1) + γ_k² L_V η1/2`
    /// and `b_k = γ_k b0 + γ_k² L_V η0/2`, for `V = W`.
    LastIterate { rc: &'a RegimeConstants, w0: f64, schedule: &'a StepSchedule },
    /// The `γ̃/(k + 1 + T0)` schedule with `γ̃ ≥ 6/(ρ − b1)` and `T0 ≥ 2γ̃/γ_max`:
    /// `B + (T0/(t + T0))^{γ̃(ρ−b1)/2} W0 + 2L_V η0 γ̃/((t + T0)(ρ − b1))`.
    LastIterateDiminishing { rc: &'a RegimeConstants, w0: f64, schedule: &'a StepSchedule },
    /// TD(0) averaged iterate at the robust constant step, see [`TdProblem::robust_bound`].
    TdAveraged { td: &'a TdProblem, v_bar: f64 },
    /// TD(0) last iterate under the diminishing schedule, see [`TdProblem::fast_bound`].
    TdLastIterate { td: &'a TdProblem, schedule: &'a StepSchedule, w0: &'a ParamVec },
    /// SA-SPIDER average of `W` plus oracle error at a constant step.
    Spider { consts: SpiderConstants, k_in: usize, b_vr: usize, gamma: f64, delta1: f64 },
    /// Gauss–Southwell coordinate descent at `γ = 1/(8dL)`: `32 d² L (F(w0) − F*)/t`.
    GaussSouthwell { d: usize, l: f64, delta: f64 },
}

/// Gauss–Southwell step `1/(8 d L)`.
pub fn gauss_southwell_step(d: usize, l: f64) -> f64 {
    1.0 / (8.0 * d as f64 * l)
}

fn step_sequence(schedule: &StepSchedule, horizon: usize) -> Result<Option<Vec<f64>>> {
    if let StepSchedule::Constant { gamma } = *schedule {
        if gamma == 0.0 {
            return Ok(None);
        }
    }
    (0..horizon).map(|k| schedule_gamma(schedule, k)).collect::<Result<Vec<_>>>().map(Some)
}

fn derived_with(rc: &RegimeConstants, v_bar: f64) -> Result<DerivedConstants> {
    Ok(derive_constants(rc)?.with_v_bar(v_bar))
}

/// Evaluates a bound at horizons `1..=horizon`. A zero step gives `+∞` everywhere.
pub fn bound_curve(spec: &BoundSpec, horizon: usize) -> Result<Vec<f64>> {
    let inf = vec![f64::INFINITY; horizon];
    match *spec {
        BoundSpec::WeightedAverage { rc, v_bar, schedule } => {
            let dc = derived_with(rc, v_bar)?;
            let Some(gs) = step_sequence(schedule, horizon)? else { return Ok(inf) };
            let (mut s1, mut s2, mut sw) = (0.0, 0.0, 0.0);
            Ok(gs
                .iter()
                .map(|&g| {
                    s1 += g;
                    s2 += g * g;
                    sw += g * dc.omega(g);
                    if sw > 0.0 {
                        (2.0 * v_bar + rc.l_v * dc.eta0 * s2 + 2.0 * dc.b0 * s1) / sw
                    } else {
                        f64::INFINITY
                    }
                })
                .collect())
        }
        BoundSpec::ConstantStepAverage { rc, v_bar, gamma } => {
            let dc = derived_with(rc, v_bar)?;
            if gamma == 0.0 {
                return Ok(inf);
            }
            if let Ext::Finite(gm) = dc.gamma_max {
                if gamma > gm / 2.0 {
                    return Err(Error::HypothesisViolated(format!(
                        "gamma = {gamma} exceeds gamma_max/2 = {}",
                        gm / 2.0
                    )));
                }
            }
            Ok((1..=horizon)
                .map(|t| {
                    let t = t as f64;
                    dc.bias_floor + (2.0 * v_bar + rc.l_v * dc.eta0 * t * gamma * gamma) / (gamma * t * dc.rho_minus_b1)
                })
                .collect())
        }
        BoundSpec::TunedStepAverage { rc, v_bar } => {
            let dc = derived_with(rc, v_bar)?;
            Ok((1..=horizon)
                .map(|t| {
                    let t = t as f64;
                    let noise = 2.0 * (2.0 * v_bar * dc.eta0 * rc.l_v).sqrt() / (t.sqrt() * dc.rho_minus_b1);
                    let init = match dc.gamma_max {
                        Ext::Finite(g) => 8.0 * v_bar / (g * t * dc.rho_minus_b1),
                        Ext::Unbounded => 0.0,
                    };
                    dc.bias_floor + noise.max(init)
                })
                .collect())
        }
        BoundSpec::LastIterate { rc, w0, schedule } => {
            let dc = derive_constants(rc)?;
            let Some(gs) = step_sequence(schedule, horizon)? else { return Ok(inf) };
            let mut bound = w0;
            Ok(gs
                .iter()
                .map(|&g| {
                    // `E W ≥ 0`, so a negative contraction factor can be replaced by zero.
                    let lambda = (1.0 - g * dc.rho_minus_b1 + g * g * rc.l_v * dc.eta1 / 2.0).max(0.0);
                    bound = lambda * bound + g * dc.b0 + g * g * rc.l_v * dc.eta0 / 2.0;
                    bound
                })
                .collect())
        }
        BoundSpec::LastIterateDiminishing { rc, w0, schedule } => {
            let StepSchedule::Polynomial { gamma_tilde, t0, beta } = *schedule else {
                return Err(Error::InvalidSchedule("the diminishing-step bound needs a 1/k schedule".into()));
            };
            if beta != 1.0 {
                return Err(Error::InvalidSchedule(format!("beta = {beta}, the bound needs beta = 1")));
            }
            let dc = derive_constants(rc)?;
            let a = dc.rho_minus_b1;
            if gamma_tilde < 6.0 / a {
                return Err(Error::HypothesisViolated(format!(
                    "gamma_tilde = {gamma_tilde} is below 6/(rho − b1) = {}",
                    6.0 / a
                )));
            }
            if let Ext::Finite(gm) = dc.gamma_max {
                if (t0 as f64) < 2.0 * gamma_tilde / gm {
                    return Err(Error::HypothesisViolated(format!(
                        "T0 = {t0} is below 2 gamma_tilde/gamma_max = {}",
                        2.0 * gamma_tilde / gm
                    )));
                }
            }
            let t0 = t0 as f64;
            Ok((1..=horizon)
                .map(|t| {
                    let tt = t as f64 + t0;
                    dc.bias_floor
                        + (t0 / tt).powf(gamma_tilde * a / 2.0) * w0
                        + 2.0 * rc.l_v * dc.eta0 * gamma_tilde / (tt * a)
                })
                .collect())
        }
        BoundSpec::TdAveraged { td, v_bar } => (1..=horizon).map(|t| td.robust_bound(v_bar, t)).collect(),
        BoundSpec::TdLastIterate { td, schedule, w0 } => {
            (1..=horizon).map(|t| td.fast_bound(schedule, w0, t)).collect()
        }
        BoundSpec::Spider { consts, k_in, b_vr, gamma, delta1 } => {
            Ok((1..=horizon).map(|t| spider_constant_bound(&consts, gamma, k_in, b_vr, delta1, t)).collect())
        }
        BoundSpec::GaussSouthwell { d, l, delta } => {
            let d = d as f64;
            Ok((1..=horizon).map(|t| 32.0 * d * d * l * delta / t as f64).collect())
        }
    }
}

/// Both sides of `Σ_{j=1}^{k} γ_j Π_{l=j+1}^{k} (1 − aγ_l) = (1 − Π_{l=1}^{k} (1 − aγ_l))/a`,
/// with `k = gammas.len()`.
pub fn summation_identity(gammas: &[f64], a: f64) -> (f64, f64) {
    let mut lhs = 0.0;
    let mut tail = 1.0;
    for &g in gammas.iter().rev() {
        lhs += g * tail;
        tail *= 1.0 - a * g;
    }
    (lhs, (1.0 - tail) / a)
}

/// `Σ_{j=1}^{k} γ_j² Π_{l=j+1}^{k} (1 − aγ_l)`, bounded by `γ_k/(a − b)` when
/// `γ_j/γ_{j+1} ≤ 1 + bγ_{j+1}`.
pub fn summation_of_squares(gammas: &[f64], a: f64) -> f64 {
    let mut sum = 0.0;
    let mut tail = 1.0;
    for &g in gammas.iter().rev() {
        sum += g * g * tail;
        tail *= 1.0 - a * g;
    }
    sum
}
