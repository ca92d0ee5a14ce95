//! Policy evaluation on finite Markov reward processes with linear value-function
//! approximation: the TD(0) random field, its exact mean field and projected-Bellman fixed
//! point, and the constants that make TD(0) an instance of the general SA analysis.
//!
//! Transitions are drawn i.i.d. from the stationary distribution (`s ~ π`, `s' ~ P(s, ·)`),
//! as in a replay buffer, rather than along a single trajectory.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::linalg::{rank, solve, sym_eig_extremes};
use crate::sa_core::{Ext, FieldOracle, Lyapunov, ParamVec, RegimeConstants, SaRng, StepSchedule};
use crate::sampling::sample_categorical;
use crate::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-10;

/// A finite Markov reward process `(S, P, R, λ)` with its stationary distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Mrp {
    p: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda: f64,
    pi: DVector<f64>,
    r_bar: DVector<f64>,
}

/// Whether every state reaches every other state through positive-probability transitions.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let reach_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for t in 0..n {
                let edge = if forward { p[(s, t)] } else { p[(t, s)] };
                if edge > 0.0 && !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    n > 0 && reach_all(true) && reach_all(false)
}

/// The stationary distribution `π = πP` of an irreducible stochastic matrix.
pub fn stationary_dist(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 {
        return Err(Error::EmptyProblem);
    }
    if p.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.ncols() });
    }
    if !is_irreducible(p) {
        return Err(Error::Reducible);
    }
    // (Pᵀ − I)π = 0 has a one-dimensional kernel; swap one equation for Σπ = 1.
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = solve(&a, &rhs, "stationary system")?;
    Ok(pi.map(|x| x.max(0.0)) / pi.map(|x| x.max(0.0)).sum())
}

impl Mrp {
    pub fn new(p: DMatrix<f64>, r: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = p.nrows();
        if n == 0 {
            return Err(Error::EmptyProblem);
        }
        if p.ncols() != n || r.nrows() != n || r.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if p.ncols() != n { p.ncols() } else { r.nrows().max(r.ncols()) },
            });
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::HypothesisViolated(format!("discount lambda = {lambda} must lie in (0, 1)")));
        }
        for s in 0..n {
            let row = p.row(s);
            if row.iter().any(|&x| !(x >= 0.0)) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::HypothesisViolated(format!("row {s} of P is not a probability vector")));
            }
        }
        if r.iter().any(|x| !(x.abs() <= 1.0)) {
            return Err(Error::HypothesisViolated("rewards must satisfy |R(s, s')| <= 1".into()));
        }
        let pi = stationary_dist(&p)?;
        let r_bar = DVector::from_fn(n, |s, _| p.row(s).dot(&r.row(s)));
        Ok(Self { p, r, lambda, pi, r_bar })
    }

    /// Dirichlet(1) transition rows mixed with 1% of the uniform kernel, which makes the chain
    /// irreducible, and rewards uniform in `[−1, 1]`.
    pub fn random<R: Rng + ?Sized>(n: usize, lambda: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyProblem);
        }
        let eps = 0.01;
        let unit = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            let draws: Vec<f64> = (0..n).map(|_| unit.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            for (t, x) in draws.into_iter().enumerate() {
                p[(s, t)] = (1.0 - eps) * x / total + eps / n as f64;
            }
        }
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        Self::new(p, r, lambda)
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn reward(&self, s: usize, s_next: usize) -> f64 {
        self.r[(s, s_next)]
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.pi
    }

    /// `R̄(s) = Σ_{s'} P(s, s') R(s, s')`.
    pub fn mean_reward(&self) -> &DVector<f64> {
        &self.r_bar
    }

    /// `[TV](s) = R̄(s) + λ Σ_{s'} P(s, s') V(s')`.
    pub fn bellman_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.r_bar + (&self.p * v) * self.lambda
    }

    /// The true value function, the fixed point of the Bellman operator.
    pub fn value_function(&self) -> Result<DVector<f64>> {
        let n = self.n();
        solve(&(DMatrix::identity(n, n) - &self.p * self.lambda), &self.r_bar, "Bellman system")
    }

    /// `‖v‖²_{D_π}`.
    pub fn d_norm2(&self, v: &DVector<f64>) -> f64 {
        v.iter().zip(self.pi.iter()).map(|(x, p)| p * x * x).sum()
    }

    /// One transition drawn from the stationary distribution.
    pub fn sample_transition<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let s = sample_categorical(self.pi.as_slice(), rng);
        let row: Vec<f64> = self.p.row(s).iter().copied().collect();
        (s, sample_categorical(&row, rng))
    }
}

/// A feature matrix `Φ` whose rows `φ(s)` have norm at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    phi: DMatrix<f64>,
    full_rank: bool,
}

impl Features {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::EmptyProblem);
        }
        for s in 0..phi.nrows() {
            let norm = phi.row(s).norm();
            if norm > 1.0 + 1e-12 {
                return Err(Error::HypothesisViolated(format!("feature row {s} has norm {norm} > 1")));
            }
        }
        let full_rank = rank(&phi) == phi.ncols();
        Ok(Self { phi, full_rank })
    }

    /// The identity features `Φ = I`.
    pub fn tabular(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    /// Gaussian rows scaled to unit norm, redrawn until the matrix has rank `d`.
    pub fn random_normalized<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        if d > n {
            return Err(Error::RankDeficient(format!("{d} features cannot be independent on {n} states")));
        }
        loop {
            let mut phi = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
            for mut row in phi.row_iter_mut() {
                let norm = row.norm();
                row /= norm;
            }
            let f = Self::new(phi)?;
            if f.full_rank {
                return Ok(f);
            }
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    pub fn phi(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }
}

/// An MRP with features and everything TD(0) needs precomputed.
#[derive(Clone, Debug)]
pub struct TdProblem {
    mrp: Mrp,
    features: Features,
    /// `Σ_π = ΦᵀD_πΦ`.
    sigma: DMatrix<f64>,
    /// `A = ΦᵀD_π(λP − I)Φ`, so that `h(w) = A w + b`.
    a: DMatrix<f64>,
    b: DVector<f64>,
    w_star: ParamVec,
    v_min: f64,
}

impl TdProblem {
    pub fn new(mrp: Mrp, features: Features) -> Result<Self> {
        if features.phi.nrows() != mrp.n() {
            return Err(Error::DimensionMismatch { expected: mrp.n(), got: features.phi.nrows() });
        }
        if !features.full_rank {
            return Err(Error::RankDeficient("feature matrix".into()));
        }
        let phi = &features.phi;
        let d_pi = DMatrix::from_diagonal(&mrp.pi);
        let phit_d = phi.transpose() * &d_pi;
        let sigma = &phit_d * phi;
        let n = mrp.n();
        let a = &phit_d * ((&mrp.p * mrp.lambda - DMatrix::identity(n, n)) * phi);
        let b = &phit_d * &mrp.r_bar;
        let w_star = solve(&a, &(-&b), "projected Bellman system")?;
        let (v_min, _) = sym_eig_extremes(&sigma);
        Ok(Self { mrp, features, sigma, a, b, w_star, v_min })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, lambda: f64, rng: &mut R) -> Result<Self> {
        let mrp = Mrp::random(n, lambda, rng)?;
        let features = Features::random_normalized(n, d, rng)?;
        Self::new(mrp, features)
    }

    pub fn mrp(&self) -> &Mrp {
        &self.mrp
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Smallest eigenvalue of the feature covariance `ΦᵀD_πΦ`.
    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn feature_covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// The projected-Bellman fixed point, the unique root of the mean field.
    pub fn solve_fixed_point(&self) -> &ParamVec {
        &self.w_star
    }

    /// `(R(s, s') + λφ(s')ᵀw − φ(s)ᵀw) φ(s)`.
    pub fn td0_field(&self, w: &ParamVec, s: usize, s_next: usize) -> ParamVec {
        let phi_s = self.features.phi(s);
        let delta = self.mrp.reward(s, s_next) + self.mrp.lambda * self.features.phi(s_next).dot(w) - phi_s.dot(w);
        phi_s * delta
    }

    /// `ΦᵀD_π(TΦw − Φw)`.
    pub fn td_mean_field(&self, w: &ParamVec) -> ParamVec {
        &self.a * w + &self.b
    }

    /// `Φw`.
    pub fn value_of(&self, w: &ParamVec) -> DVector<f64> {
        &self.features.phi * w
    }

    /// `W(w) = ‖Φ(w − w*)‖²_{D_π}`.
    pub fn w_error(&self, w: &ParamVec) -> f64 {
        let e = w - &self.w_star;
        e.dot(&(&self.sigma * &e))
    }

    /// `V(w) = ½‖w − w*‖²`.
    pub fn v_error(&self, w: &ParamVec) -> f64 {
        0.5 * (w - &self.w_star).norm_squared()
    }

    /// The squared `D_π`-norm of the value function that enters the variance constant: the
    /// larger of the true value function and the projected fixed point `Φw*`.
    pub fn value_norm2(&self) -> Result<f64> {
        let v_true = self.mrp.value_function()?;
        Ok(self.mrp.d_norm2(&v_true).max(self.mrp.d_norm2(&self.value_of(&self.w_star))))
    }

    /// The variance bound `σ²_0 = 6(1 + (λ² + 1)‖V*‖²_{D_π})`.
    pub fn sigma2_0(&self) -> Result<f64> {
        let l = self.mrp.lambda;
        Ok(6.0 * (1.0 + (l * l + 1.0) * self.value_norm2()?))
    }

    /// The looser `η_0 = 6(1 + 2‖V*‖²_{D_π})` used by the constant-step averaged bound.
    pub fn robust_eta0(&self) -> Result<f64> {
        Ok(6.0 * (1.0 + 2.0 * self.value_norm2()?))
    }

    /// Constants for `V = ½‖w − w*‖²` and `W = ‖Φ(w − w*)‖²_{D_π}`.
    pub fn td_constants(&self) -> Result<RegimeConstants> {
        let l = self.mrp.lambda;
        Ok(RegimeConstants {
            c_h0: 0.0,
            c_h1: (1.0 + l).powi(2),
            tau0: 0.0,
            tau1: 0.0,
            sigma2_0: self.sigma2_0()?,
            sigma2_1: 2.0 * (1.0 + l).powi(2),
            l_v: 1.0,
            rho: 1.0 - l,
            c_v: if self.v_min > 0.0 { Ext::Finite(1.0 / self.v_min.sqrt()) } else { Ext::Unbounded },
            v_star: 0.0,
        })
    }

    /// Constants with `W = V = ½‖w − w*‖²`.
    ///
    /// From `v_min‖x‖² ≤ ‖x‖²_Σ ≤ ‖x‖²`: the drift is `ρ = 2v_min(1 − λ)`, and both the
    /// mean-field and the variance slopes double because `‖Φ(w − w*)‖²_{D_π} ≤ 2V`.
    pub fn td_constants_vw(&self) -> Result<RegimeConstants> {
        let l = self.mrp.lambda;
        Ok(RegimeConstants {
            c_h1: 2.0 * (1.0 + l).powi(2),
            sigma2_1: 4.0 * (1.0 + l).powi(2),
            rho: 2.0 * self.v_min * (1.0 - l),
            c_v: Ext::Finite(2f64.sqrt()),
            ..self.td_constants()?
        })
    }

    /// The `W = V` constants as printed in the literature: `ρ = 2√v_min(1 − λ)` and the
    /// variance slope left at `2(1 + λ)²`. Kept for comparison; [`TdProblem::td_constants_vw`]
    /// is the bundle the analysis supports.
    pub fn td_constants_vw_literal(&self) -> Result<RegimeConstants> {
        let l = self.mrp.lambda;
        Ok(RegimeConstants {
            c_h1: 2.0 * (1.0 + l).powi(2),
            rho: 2.0 * self.v_min.sqrt() * (1.0 - l),
            c_v: Ext::Finite(2f64.sqrt()),
            ..self.td_constants()?
        })
    }

    /// `γ_max = 2(1 − λ)/(3(1 + λ)²)` of the averaged-iterate analysis.
    pub fn robust_gamma_max(&self) -> f64 {
        let l = self.mrp.lambda;
        2.0 * (1.0 - l) / (3.0 * (1.0 + l).powi(2))
    }

    /// The constant step `sqrt(2V̄/(η0 T)) ∧ γ_max/2` with the looser `η0`.
    pub fn robust_step(&self, v_bar: f64, horizon: usize) -> Result<f64> {
        let eta0 = self.robust_eta0()?;
        Ok((2.0 * v_bar / (eta0 * horizon as f64)).sqrt().min(self.robust_gamma_max() / 2.0))
    }

    /// Bound on `E‖Φ(w̄_T − w*)‖²_{D_π}` for the uniform average of `w_0, …, w_{T−1}` run with
    /// [`TdProblem::robust_step`]:
    /// `2√(12 V̄ (1 + 2‖V*‖²))/(√T(1 − λ)) ∨ 12V̄(1 + λ)²/(T(1 − λ)²)`.
    pub fn robust_bound(&self, v_bar: f64, horizon: usize) -> Result<f64> {
        let l = self.mrp.lambda;
        let t = horizon as f64;
        let noise = 2.0 * (2.0 * v_bar * self.robust_eta0()?).sqrt() / (t.sqrt() * (1.0 - l));
        let init = 12.0 * v_bar * (1.0 + l).powi(2) / (t * (1.0 - l).powi(2));
        Ok(noise.max(init))
    }

    /// The diminishing schedule `γ̃/(k + 1 + T0)` with `γ̃ = factor · 6/ρ` and the smallest
    /// admissible `T0 ≥ 2γ̃/γ_max`, both for the corrected `W = V` constants.
    pub fn fast_schedule(&self, factor: f64) -> Result<StepSchedule> {
        if !(factor >= 1.0) {
            return Err(Error::InvalidSchedule(format!("gamma_tilde factor {factor} must be at least 1")));
        }
        let rc = self.td_constants_vw()?;
        let eta1 = rc.c_h1 + rc.sigma2_1;
        let gamma_max = 2.0 * rc.rho / eta1;
        let gamma_tilde = factor * 6.0 / rc.rho;
        let t0 = (2.0 * gamma_tilde / gamma_max).ceil() as usize;
        Ok(StepSchedule::Polynomial { gamma_tilde, t0, beta: 1.0 })
    }

    /// Bound on `E‖w_T − w*‖²` under `schedule` (which must come from
    /// [`TdProblem::fast_schedule`]) started at `w0`:
    /// `(T0/(T + T0))^{γ̃ρ/2} ‖w0 − w*‖² + 4 σ²_0 γ̃/((T + T0)ρ)`.
    pub fn fast_bound(&self, schedule: &StepSchedule, w0: &ParamVec, horizon: usize) -> Result<f64> {
        let StepSchedule::Polynomial { gamma_tilde, t0, beta } = *schedule else {
            return Err(Error::InvalidSchedule("the last-iterate bound needs a 1/k schedule".into()));
        };
        if beta != 1.0 {
            return Err(Error::InvalidSchedule("the last-iterate bound needs beta = 1".into()));
        }
        let rc = self.td_constants_vw()?;
        let (t, t0) = (horizon as f64, t0 as f64);
        let init = (t0 / (t + t0)).powf(gamma_tilde * rc.rho / 2.0) * (w0 - &self.w_star).norm_squared();
        Ok(init + 4.0 * rc.sigma2_0 * gamma_tilde / ((t + t0) * rc.rho))
    }
}

/// The TD(0) oracle with stationary i.i.d. transitions.
#[derive(Clone, Copy, Debug)]
pub struct TdOracle<'a> {
    problem: &'a TdProblem,
}

impl<'a> TdOracle<'a> {
    pub fn new(problem: &'a TdProblem) -> Self {
        Self { problem }
    }
}

impl FieldOracle for TdOracle<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        let (s, s_next) = self.problem.mrp.sample_transition(rng);
        self.problem.td0_field(w, s, s_next)
    }

    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        Some(self.problem.td_mean_field(w))
    }
}

/// `V = ½‖w − w*‖²` with either `W = ‖Φ(w − w*)‖²_{D_π}` or `W = V`.
#[derive(Clone, Copy, Debug)]
pub struct TdLyapunov<'a> {
    problem: &'a TdProblem,
    w_equals_v: bool,
}

impl<'a> TdLyapunov<'a> {
    pub fn new(problem: &'a TdProblem) -> Self {
        Self { problem, w_equals_v: false }
    }

    pub fn w_equals_v(problem: &'a TdProblem) -> Self {
        Self { problem, w_equals_v: true }
    }
}

impl Lyapunov for TdLyapunov<'_> {
    fn v(&self, w: &ParamVec) -> f64 {
        self.problem.v_error(w)
    }

    fn w(&self, w: &ParamVec) -> f64 {
        if self.w_equals_v {
            self.problem.v_error(w)
        } else {
            self.problem.w_error(w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa_core::{derive_constants, replicate_rng};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state_constant(lambda: f64) -> Mrp {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        Mrp::new(p, DMatrix::from_element(2, 2, 1.0), lambda).unwrap()
    }

    fn gauss(d: usize, rng: &mut ChaCha8Rng) -> ParamVec {
        DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
    }

    fn power_iteration(p: &DMatrix<f64>) -> DVector<f64> {
        let n = p.nrows();
        let mut x = DVector::from_element(n, 1.0 / n as f64).transpose();
        for _ in 0..10_000 {
            x = &x * p;
        }
        x.transpose()
    }

    #[test]
    fn doubly_stochastic_stationary() {
        let p = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.8, 0.2]);
        let pi = stationary_dist(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-14 && (pi[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_is_reducible() {
        assert_eq!(stationary_dist(&DMatrix::identity(3, 3)), Err(Error::Reducible));
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mrp::random(10, 0.5, &mut rng).unwrap();
        let oracle = power_iteration(m.transition());
        assert!((m.stationary() - oracle).amax() < 1e-10);
        assert!((m.stationary().transpose() * m.transition() - m.stationary().transpose()).amax() < 1e-10);
        assert!((m.stationary().sum() - 1.0).abs() < 1e-12);
        assert!(m.stationary().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn bellman_basics() {
        let m = two_state_constant(0.5);
        assert_eq!(m.bellman_apply(&DVector::zeros(2)), DVector::from_element(2, 1.0));
        let c = 3.0;
        assert_eq!(m.bellman_apply(&DVector::from_element(2, c)), DVector::from_element(2, 1.0 + 0.5 * c));
    }

    #[test]
    fn bellman_iteration_reaches_the_geometric_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mrp::random(6, 0.5, &mut rng).unwrap();
        let mut v = DVector::zeros(6);
        for _ in 0..50 {
            v = m.bellman_apply(&v);
        }
        // Σ_k λ^k P^k R̄, summed until the terms vanish.
        let mut series = DVector::zeros(6);
        let mut term = m.mean_reward().clone();
        for _ in 0..200 {
            series += &term;
            term = (m.transition() * term) * 0.5;
        }
        assert!((v - &series).amax() < 1e-10);
        assert!((m.value_function().unwrap() - series).amax() < 1e-10);
    }

    #[test]
    fn constant_reward_two_state_fixed_point() {
        let m = two_state_constant(0.5);
        let f = Features::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let td = TdProblem::new(m, f).unwrap();
        assert!((td.solve_fixed_point()[0] - 2.0).abs() < 1e-12);
        let w = DVector::from_element(1, 2.0);
        for s in 0..2 {
            for t in 0..2 {
                assert_eq!(td.td0_field(&w, s, t), DVector::zeros(1));
            }
        }
        // ‖V*‖² = 4, so σ²_0 = 6(1 + 1.25·4) = 36.
        assert!((td.sigma2_0().unwrap() - 36.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_max_of_the_table_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let dc = derive_constants(&td.td_constants().unwrap()).unwrap();
        let l = 0.5f64;
        let expected = 2.0 * (1.0 - l) / (3.0 * (1.0 + l).powi(2));
        assert!((dc.gamma_max.finite().unwrap() - expected).abs() < 1e-14);
        assert!((td.robust_gamma_max() - expected).abs() < 1e-14);
    }

    #[test]
    fn tabular_fixed_point_is_the_value_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mrp::random(5, 0.7, &mut rng).unwrap();
        let mut v = DVector::zeros(5);
        for _ in 0..300 {
            v = m.bellman_apply(&v);
        }
        let td = TdProblem::new(m, Features::tabular(5).unwrap()).unwrap();
        assert!((td.solve_fixed_point() - v).amax() < 1e-10);
    }

    #[test]
    fn mean_field_root_and_affinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        assert!(td.td_mean_field(td.solve_fixed_point()).norm() < 1e-10);
        let w = gauss(3, &mut rng);
        let h0 = td.td_mean_field(&DVector::zeros(3));
        let lhs = td.td_mean_field(&(&w * 2.5)) - &h0;
        assert!((lhs - (td.td_mean_field(&w) - &h0) * 2.5).amax() < 1e-12);
    }

    #[test]
    fn mean_field_matches_enumeration_and_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let w = gauss(3, &mut rng);
        let m = td.mrp();
        let mut exact = DVector::zeros(3);
        for s in 0..10 {
            for t in 0..10 {
                exact += td.td0_field(&w, s, t) * (m.stationary()[s] * m.transition()[(s, t)]);
            }
        }
        assert!((&exact - td.td_mean_field(&w)).amax() < 1e-12);

        let oracle = TdOracle::new(&td);
        let mut r = replicate_rng(6, 0);
        let n = 100_000;
        let draws: Vec<ParamVec> = (0..n).map(|_| oracle.sample(&w, &mut r)).collect();
        for i in 0..3 {
            let mean = draws.iter().map(|x| x[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - exact[i]).abs() <= 3.0 * (var / n as f64).sqrt(), "coord {i}");
        }
    }

    #[test]
    fn projected_bellman_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let m = td.mrp();
        let phi = td.features().matrix();
        let d_pi = DMatrix::from_diagonal(m.stationary());
        let proj = phi * solve_mat(td.feature_covariance(), &(phi.transpose() * &d_pi));
        for _ in 0..1000 {
            let (a, b) = (gauss(3, &mut rng), gauss(3, &mut rng));
            let ta = &proj * m.bellman_apply(&(phi * &a));
            let tb = &proj * m.bellman_apply(&(phi * &b));
            let lhs = m.d_norm2(&(ta - tb)).sqrt();
            let rhs = 0.5 * m.d_norm2(&(phi * (&a - &b))).sqrt();
            assert!(lhs <= rhs * (1.0 + 1e-10));
        }
    }

    fn solve_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.clone().lu().solve(b).unwrap()
    }

    #[test]
    fn drift_norm_and_sandwich_inequalities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let ws = td.solve_fixed_point().clone();
        let v = td.v_min();
        for _ in 0..1000 {
            let w = gauss(3, &mut rng) * 4.0;
            let e = &w - &ws;
            let wv = td.w_error(&w);
            let h = td.td_mean_field(&w);
            assert!(e.dot(&h) <= -(1.0 - 0.5) * wv + 1e-10);
            assert!(h.norm_squared() <= 2.25 * wv + 1e-10);
            let sig = wv.sqrt();
            assert!(v.sqrt() * e.norm() <= sig * (1.0 + 1e-12) && sig <= e.norm() * (1.0 + 1e-12));
            // The corrected W = V drift.
            let rc = td.td_constants_vw().unwrap();
            assert!(e.dot(&h) <= -rc.rho * td.v_error(&w) + 1e-10);
        }
    }

    #[test]
    fn sampled_second_moment_respects_the_variance_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let rc = td.td_constants().unwrap();
        let oracle = TdOracle::new(&td);
        let mut r = replicate_rng(10, 0);
        for _ in 0..10 {
            let w = td.solve_fixed_point() + gauss(3, &mut rng);
            let h = td.td_mean_field(&w);
            let n = 20_000;
            let xs: Vec<f64> = (0..n).map(|_| (oracle.sample(&w, &mut r) - &h).norm_squared()).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
            assert!(m <= rc.sigma2_0 + rc.sigma2_1 * td.w_error(&w) + 3.0 * se);
        }
    }

    #[test]
    fn fast_schedule_meets_its_hypotheses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let td = TdProblem::random(10, 3, 0.5, &mut rng).unwrap();
        let s = td.fast_schedule(1.0).unwrap();
        let rc = td.td_constants_vw().unwrap();
        let dc = derive_constants(&rc).unwrap();
        let StepSchedule::Polynomial { gamma_tilde, t0, .. } = s else { unreachable!() };
        assert!(gamma_tilde * rc.rho >= 6.0 * (1.0 - 1e-12));
        assert!(t0 as f64 >= 2.0 * gamma_tilde / dc.gamma_max.finite().unwrap());
        crate::sa_core::check_ratio_condition(&s, dc.rho_minus_b1, 10_000).unwrap();
    }

    #[test]
    fn invalid_inputs() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(Mrp::new(p.clone(), DMatrix::from_element(2, 2, 2.0), 0.5).is_err());
        assert!(Mrp::new(p.clone(), DMatrix::zeros(2, 2), 1.0).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(Mrp::new(bad, DMatrix::zeros(2, 2), 0.5).is_err());
        let m = Mrp::new(p, DMatrix::zeros(2, 2), 0.5).unwrap();
        let dup = Features::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!(matches!(TdProblem::new(m, dup), Err(Error::RankDeficient(_))));
        assert!(Features::new(DMatrix::from_element(2, 1, 1.5)).is_err());
    }
}
