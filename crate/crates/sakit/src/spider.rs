//! SA-SPIDER: variance-reduced SA for finite-sum mean fields `h = (1/n) Σ_i h_i`.
//!
//! Iterations are indexed by an outer epoch `t ∈ 1..=k_out` and an inner step
//! `k ∈ 0..k_in`. Each epoch resets the control variate with one full pass, then updates it
//! with path differences on mini-batches:
//!
//! ```text
//! w_{t,0} = w_{t,-1} = w_{t-1,k_in},   H_{t,0} = h(w_{t,0})
//! H_{t,k+1} = H_{t,k} + (1/b) Σ_{i∈B} [h_i(w_{t,k}) − h_i(w_{t,k−1})]
//! w_{t,k+1} = w_{t,k} + γ_{t,k+1} H_{t,k+1}
//! ```

use crate::problems_sgd::FiniteSumProblem;
use crate::sa_core::{check_finite, Lyapunov, ParamVec, Record, RunSeed, TrajectoryLog};
use crate::sampling::{sample_indices, Replacement};
use crate::{Error, Result};

/// A finite-sum mean field with Lipschitz components.
pub trait ComponentField: Send + Sync {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;
    /// `h_i(w)`.
    fn component(&self, i: usize, w: &ParamVec) -> ParamVec;
    /// A Lipschitz constant `L̄_i` of `h_i`.
    fn lipschitz(&self, i: usize) -> f64;

    /// `h(w) = (1/n) Σ_i h_i(w)`.
    fn mean_field(&self, w: &ParamVec) -> ParamVec {
        let mut h = ParamVec::zeros(self.dim());
        for i in 0..self.n() {
            h += self.component(i, w);
        }
        h / self.n() as f64
    }

    /// `L̄² = (1/n) Σ_i L̄_i²`.
    fn l_bar2(&self) -> f64 {
        (0..self.n()).map(|i| self.lipschitz(i).powi(2)).sum::<f64>() / self.n() as f64
    }
}

/// `h_i = −∇f_i` with `L̄_i = ‖Q_i‖`.
impl ComponentField for FiniteSumProblem {
    fn n(&self) -> usize {
        FiniteSumProblem::n(self)
    }

    fn dim(&self) -> usize {
        FiniteSumProblem::dim(self)
    }

    fn component(&self, i: usize, w: &ParamVec) -> ParamVec {
        -self.component_gradient(i, w)
    }

    fn lipschitz(&self, i: usize) -> f64 {
        self.component_lipschitz()[i]
    }

    fn mean_field(&self, w: &ParamVec) -> ParamVec {
        -self.full_gradient(w)
    }
}

/// Inner-loop steps `γ_{t,k+1}`, the same in every epoch.
#[derive(Clone, Debug, PartialEq)]
pub enum SpiderStep {
    Constant(f64),
    /// `γ_{t,1}, …, γ_{t,k_in}`, non-increasing.
    Inner(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpiderConfig {
    pub k_in: usize,
    pub k_out: usize,
    pub b_vr: usize,
    pub replacement: Replacement,
    pub step: SpiderStep,
}

impl SpiderConfig {
    pub fn constant(k_in: usize, k_out: usize, b_vr: usize, gamma: f64) -> Self {
        Self { k_in, k_out, b_vr, replacement: Replacement::Without, step: SpiderStep::Constant(gamma) }
    }

    /// Total number of SA updates `T = k_in k_out`.
    pub fn horizon(&self) -> usize {
        self.k_in * self.k_out
    }

    /// `γ_{t,k+1}` for inner index `k ∈ 0..k_in`.
    pub fn gamma(&self, k: usize) -> f64 {
        match &self.step {
            SpiderStep::Constant(g) => *g,
            SpiderStep::Inner(gs) => gs[k],
        }
    }

    /// Structural checks: positive sizes, a batch that fits, and positive non-increasing steps.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigViolation(m));
        if self.k_in == 0 || self.k_out == 0 || self.b_vr == 0 {
            return bad("k_in, k_out and b_vr must be at least 1".into());
        }
        if self.replacement == Replacement::Without && self.b_vr > n {
            return bad(format!("b_vr = {} exceeds n = {n} without replacement", self.b_vr));
        }
        let gammas: Vec<f64> = (0..self.k_in)
            .map(|k| match &self.step {
                SpiderStep::Inner(gs) if gs.len() != self.k_in => f64::NAN,
                _ => self.gamma(k),
            })
            .collect();
        if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("steps must be positive and finite, one per inner iteration".into());
        }
        if gammas.windows(2).any(|p| p[1] > p[0]) {
            return bad("steps must be non-increasing within an epoch".into());
        }
        Ok(())
    }

    /// Checks `(1 ∨ c_h1) γ_{t,k} λ_{t,k} < ρ/2` for every inner step.
    pub fn check_hypothesis(&self, c: &SpiderConstants) -> Result<()> {
        for k in 0..self.k_in {
            let g = self.gamma(k);
            let lhs = c.c_h1.max(1.0) * g * c.lambda(g, self.k_in, self.b_vr);
            if !(lhs < c.rho / 2.0) {
                return Err(Error::ConfigViolation(format!(
                    "step {g} violates the variance-reduction step condition ({lhs} ≥ {})",
                    c.rho / 2.0
                )));
            }
        }
        Ok(())
    }
}

/// One logged inner step: the quantities at `w_{t,k}` and the error of `H_{t,k+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiderRecord {
    pub t: usize,
    pub k: usize,
    /// `γ_{t,k+1}`.
    pub gamma: f64,
    pub lyap_w: f64,
    pub lyap_v: f64,
    /// `‖h(w_{t,k})‖²`.
    pub normh2: f64,
    /// `‖H_{t,k+1} − h(w_{t,k})‖²`.
    pub err2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpiderLog {
    pub replicate: u64,
    pub records: Vec<SpiderRecord>,
    pub final_w: ParamVec,
    /// Component evaluations per epoch, `n + 2 k_in b_vr` each.
    pub epoch_calls: Vec<usize>,
    /// `‖H_{t,0} − h(w_{t,−1})‖` at every epoch start, zero by construction.
    pub reset_errors: Vec<f64>,
}

impl SpiderLog {
    pub fn oracle_calls(&self) -> usize {
        self.epoch_calls.iter().sum()
    }

    /// Flattens the doubly indexed log with `k ↦ (t − 1) k_in + k`.
    pub fn to_trajectory(&self) -> TrajectoryLog {
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| Record { k, gamma: r.gamma, lyap_w: r.lyap_w, lyap_v: r.lyap_v, normh2: r.normh2 })
            .collect();
        TrajectoryLog { replicate: self.replicate, records, final_w: self.final_w.clone(), iterates: None }
    }
}

/// `H + (1/|B|) Σ_{i∈B} [h_i(w) − h_i(w_prev)]`.
pub fn spider_increment(
    cf: &dyn ComponentField,
    h_prev: &ParamVec,
    w: &ParamVec,
    w_prev: &ParamVec,
    batch: &[usize],
) -> ParamVec {
    let mut diff = ParamVec::zeros(cf.dim());
    for &i in batch {
        diff += cf.component(i, w) - cf.component(i, w_prev);
    }
    h_prev + diff / batch.len() as f64
}

/// Runs SA-SPIDER from `w_init`.
///
/// The batch drawn at each epoch start is discarded, as the full pass makes it unnecessary;
/// drawing it keeps the random stream aligned with the algorithm as written.
pub fn run_spider(
    cf: &dyn ComponentField,
    lyap: &dyn Lyapunov,
    config: &SpiderConfig,
    w_init: &ParamVec,
    seed: RunSeed,
) -> Result<SpiderLog> {
    let n = cf.n();
    config.validate(n)?;
    if w_init.len() != cf.dim() {
        return Err(Error::DimensionMismatch { expected: cf.dim(), got: w_init.len() });
    }
    check_finite(w_init, 0)?;
    let mut rng = seed.rng();
    let mut w = w_init.clone();
    let mut records = Vec::with_capacity(config.horizon());
    let mut epoch_calls = Vec::with_capacity(config.k_out);
    let mut reset_errors = Vec::with_capacity(config.k_out);
    for t in 1..=config.k_out {
        let mut w_prev = w.clone();
        sample_indices(n, config.b_vr, config.replacement, &mut rng)?;
        let mut h_vr = cf.mean_field(&w);
        reset_errors.push((&h_vr - cf.mean_field(&w_prev)).norm());
        let mut calls = n;
        for k in 0..config.k_in {
            let batch = sample_indices(n, config.b_vr, config.replacement, &mut rng)?;
            h_vr = spider_increment(cf, &h_vr, &w, &w_prev, &batch);
            calls += 2 * batch.len();
            let gamma = config.gamma(k);
            let h = cf.mean_field(&w);
            records.push(SpiderRecord {
                t,
                k,
                gamma,
                lyap_w: lyap.w(&w),
                lyap_v: lyap.v(&w),
                normh2: h.norm_squared(),
                err2: (&h_vr - &h).norm_squared(),
            });
            w_prev.copy_from(&w);
            w.axpy(gamma, &h_vr, 1.0);
            check_finite(&w, records.len())?;
        }
        epoch_calls.push(calls);
    }
    Ok(SpiderLog { replicate: seed.replicate, records, final_w: w, epoch_calls, reset_errors })
}

/// Problem constants entering the SA-SPIDER analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiderConstants {
    pub rho: f64,
    pub l_v: f64,
    pub l_bar2: f64,
    pub c_v: f64,
    pub c_h0: f64,
    pub c_h1: f64,
}

impl SpiderConstants {
    /// Constants of the stochastic-gradient finite sum with `V = F`, `W = ‖∇F‖²`.
    pub fn for_gradient(p: &FiniteSumProblem) -> Self {
        Self { rho: 1.0, l_v: p.l_grad(), l_bar2: ComponentField::l_bar2(p), c_v: 1.0, c_h0: 0.0, c_h1: 1.0 }
    }

    /// `λ(γ) = L_V + γ L̄² (c_V²/ρ + ρ) k_in / b_vr`.
    pub fn lambda(&self, gamma: f64, k_in: usize, b_vr: usize) -> f64 {
        self.l_v + gamma * self.l_bar2 * self.a2() * k_in as f64 / b_vr as f64
    }

    /// `c_V²/ρ + ρ`.
    fn a2(&self) -> f64 {
        self.c_v * self.c_v / self.rho + self.rho
    }

    pub fn gamma_max(&self, k_in: usize, b_vr: usize) -> f64 {
        spider_gamma_max(self.rho, self.l_v, self.l_bar2.sqrt(), self.c_v, self.c_h1, k_in, b_vr)
    }

    /// `Δ2 = 2 L_V ρ + γ_max L̄² (c_V² + ρ²) k_in / b_vr`.
    pub fn delta2(&self, k_in: usize, b_vr: usize) -> f64 {
        2.0 * self.l_v * self.rho
            + self.gamma_max(k_in, b_vr) * self.l_bar2 * (self.c_v * self.c_v + self.rho * self.rho) * k_in as f64
                / b_vr as f64
    }
}

/// The largest constant step satisfying `(1 ∨ c_h1) γ λ(γ) < ρ/2`.
///
/// It is the positive root of `c (L_V γ + A γ²) = ρ/2` with `A = L̄²(c_V² + ρ²) k_in/(ρ b_vr)`
/// and `c = 1 ∨ c_h1`, evaluated in the rationalised form `(ρ/c) / (L_V + sqrt(L_V² + 2Aρ/c))`
/// which stays exact when `L̄ = 0`.
pub fn spider_gamma_max(rho: f64, l_v: f64, l_bar: f64, c_v: f64, c_h1: f64, k_in: usize, b_vr: usize) -> f64 {
    let c = c_h1.max(1.0);
    let a = l_bar * l_bar * (c_v * c_v + rho * rho) * k_in as f64 / (rho * b_vr as f64);
    (rho / c) / (l_v + (l_v * l_v + 2.0 * a * rho / c).sqrt())
}

/// `γ_T = sqrt(2Δ1ρ/(TΔ2)) ∧ γ_max/2`, or `γ_max/2` when `c_h0 = 0`.
pub fn spider_step_tuned(delta1: f64, delta2: f64, rho: f64, t: usize, c_h0: f64, gamma_max_vr: f64) -> f64 {
    if c_h0 == 0.0 {
        return gamma_max_vr / 2.0;
    }
    (2.0 * delta1 * rho / (t as f64 * delta2)).sqrt().min(gamma_max_vr / 2.0)
}

/// `B^vr = L_V Σ γ² + (L̄² k_in / b_vr)(c_V²/ρ + ρ) Σ γ³` over all `(t, k)`.
pub fn spider_b_vr(c: &SpiderConstants, config: &SpiderConfig) -> f64 {
    let (mut s2, mut s3) = (0.0, 0.0);
    for k in 0..config.k_in {
        let g = config.gamma(k);
        s2 += g * g;
        s3 += g * g * g;
    }
    let epochs = config.k_out as f64;
    epochs * (c.l_v * s2 + c.l_bar2 * config.k_in as f64 / config.b_vr as f64 * c.a2() * s3)
}

/// Right-hand side of the aggregate SA-SPIDER bound, `Δ1 + c_h0 B^vr`.
pub fn spider_theorem_rhs(c: &SpiderConstants, config: &SpiderConfig, delta1: f64) -> f64 {
    delta1 + c.c_h0 * spider_b_vr(c, config)
}

/// Weights `(γ(ρ/2 − c_h1 γ λ), γ(ρ/2 − γ λ))` of `W(w_{t,k})` and of the oracle error in
/// the aggregate bound, for inner index `k`.
pub fn spider_theorem_weights(c: &SpiderConstants, config: &SpiderConfig, k: usize) -> (f64, f64) {
    let g = config.gamma(k);
    let lam = c.lambda(g, config.k_in, config.b_vr);
    (g * (c.rho / 2.0 - c.c_h1 * g * lam), g * (c.rho / 2.0 - g * lam))
}

/// Left-hand side of the aggregate bound evaluated on one trajectory.
pub fn spider_theorem_lhs(c: &SpiderConstants, config: &SpiderConfig, records: &[SpiderRecord]) -> f64 {
    records
        .iter()
        .map(|r| {
            let (a, b) = spider_theorem_weights(c, config, r.k);
            a * r.lyap_w + b * r.err2
        })
        .sum()
}

/// Constant-step bound on `(1/T) Σ (E W(w_{t,k}) + E‖H_{t,k+1} − h(w_{t,k})‖²)`:
/// `Δ1/(γT m) + γ c_h0 (L_V + γ_max L̄²(c_V²+ρ²)k_in/(ρ b_vr))/m` with
/// `m = ρ/2 − γ λ(γ)(1 ∨ c_h1)`. Infinite when `m ≤ 0` or `γ = 0`.
pub fn spider_constant_bound(c: &SpiderConstants, gamma: f64, k_in: usize, b_vr: usize, delta1: f64, t: usize) -> f64 {
    let margin = c.rho / 2.0 - gamma * c.lambda(gamma, k_in, b_vr) * c.c_h1.max(1.0);
    if !(gamma > 0.0 && margin > 0.0) {
        return f64::INFINITY;
    }
    let gmax = c.gamma_max(k_in, b_vr);
    let kb = k_in as f64 / b_vr as f64;
    delta1 / (gamma * t as f64 * margin)
        + gamma * c.c_h0 * (c.l_v + gmax * c.l_bar2 * (c.c_v * c.c_v + c.rho * c.rho) * kb / c.rho) / margin
}

/// Bound of the same average at the tuned step: `4Δ1/(γTρ) + 2γ c_h0 Δ2/ρ²`.
pub fn spider_tuned_bound(c: &SpiderConstants, gamma: f64, k_in: usize, b_vr: usize, delta1: f64, t: usize) -> f64 {
    if !(gamma > 0.0) {
        return f64::INFINITY;
    }
    4.0 * delta1 / (gamma * t as f64 * c.rho) + 2.0 * gamma * c.c_h0 * c.delta2(k_in, b_vr) / (c.rho * c.rho)
}

/// Component evaluations of a full run: `n k_out + 2 k_out k_in b_vr`.
pub fn spider_calls(n: usize, k_in: usize, k_out: usize, b_vr: usize) -> usize {
    n * k_out + 2 * k_out * k_in * b_vr
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiderBudget {
    pub k_in: usize,
    pub k_out: usize,
    pub b_vr: usize,
    /// Iterations the tuned bound needs to reach ε.
    pub iterations: f64,
    pub total_calls: usize,
}

/// Sizes of an ε-stationary SA-SPIDER run with `k_in = b_vr = ⌈√n⌉`.
///
/// With `c_h0 = 0` the tuned step is `γ_max/2` and the bound `4Δ1/(γTρ) ≤ ε` needs
/// `T ≥ 8Δ1/(γ_max ρ ε)`. Otherwise `T ≥ 8(1+c_h0)²Δ1Δ2/(ρ³ε²) ∨ 8Δ1ρ/(Δ2 γ_max²)`.
pub fn spider_oracle_budget(n: usize, eps: f64, c: &SpiderConstants, delta1: f64) -> Result<SpiderBudget> {
    if n == 0 {
        return Err(Error::EmptyProblem);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::EpsilonOutOfRange { eps, upper: f64::INFINITY });
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let gmax = c.gamma_max(side, side);
    let rho = c.rho;
    let iterations = if c.c_h0 == 0.0 {
        8.0 * delta1 / (gmax * rho * eps)
    } else {
        let d2 = c.delta2(side, side);
        (8.0 * (1.0 + c.c_h0).powi(2) * delta1 * d2 / (rho.powi(3) * eps * eps))
            .max(8.0 * delta1 * rho / (d2 * gmax * gmax))
    };
    let k_out = ((iterations / side as f64).ceil() as usize).max(1);
    Ok(SpiderBudget { k_in: side, k_out, b_vr: side, iterations, total_calls: spider_calls(n, side, k_out, side) })
}
