//! Finite-sum quadratic problems and their stochastic-gradient oracles.
//!
//! Each component is `f_i(w) = ½ wᵀQ_i w − b_iᵀw`, so every smoothness, strong-convexity and
//! dispersion constant is computed exactly. The oracle returns the negated mini-batch
//! gradient, which makes `h = −∇F` the mean field of the SA recursion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{solve, sym_eig_extremes};
use crate::sa_core::{Ext, FieldOracle, Lyapunov, ParamVec, RegimeConstants, SaRng};
use crate::sampling::{sample_indices, Replacement};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticComponent {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinibatchSpec {
    pub b: usize,
    pub replacement: Replacement,
}

impl MinibatchSpec {
    pub fn single() -> Self {
        Self { b: 1, replacement: Replacement::With }
    }

    pub fn new(b: usize, replacement: Replacement) -> Self {
        Self { b, replacement }
    }

    /// Variance of a mini-batch mean relative to the variance of one uniform draw.
    pub fn variance_factor(&self, n: usize) -> f64 {
        let b = self.b as f64;
        match self.replacement {
            Replacement::With => 1.0 / b,
            Replacement::Without if n == 1 => 0.0,
            Replacement::Without => (n as f64 - b) / (b * (n as f64 - 1.0)),
        }
    }
}

/// The (V, W) pairs the stochastic-gradient analysis can use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgdRegime {
    /// `V = F`, `W = ‖∇F‖²`.
    Nonconvex,
    /// `V = ½‖w − w*‖²`, `W = ⟨∇F(w), w − w*⟩`, `c_V = ∞`.
    Convex,
    /// Same pair as [`SgdRegime::Convex`] with `c_V = 1/√μ`.
    StronglyConvex,
    /// `V = W = ½‖w − w*‖²`, `ρ = 2μ`.
    StronglyConvexVW,
}

#[derive(Clone, Debug)]
pub struct FiniteSumProblem {
    components: Vec<QuadraticComponent>,
    dim: usize,
    q_bar: DMatrix<f64>,
    b_bar: DVector<f64>,
    shared_q: bool,
    lipschitz: Vec<f64>,
    l_grad: f64,
    mu: f64,
    w_star: Option<ParamVec>,
}

impl FiniteSumProblem {
    pub fn new(components: Vec<QuadraticComponent>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyProblem)?;
        let dim = first.b.len();
        let mut lipschitz = Vec::with_capacity(components.len());
        for c in &components {
            if c.q.nrows() != dim || c.q.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.q.nrows() });
            }
            if c.b.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.b.len() });
            }
            let asym = (&c.q - c.q.transpose()).amax();
            if asym > 1e-12 * c.q.amax().max(1.0) {
                return Err(Error::HypothesisViolated("component matrix is not symmetric".into()));
            }
            let (lo, hi) = sym_eig_extremes(&c.q);
            if lo < -1e-12 * hi.abs().max(1.0) {
                return Err(Error::HypothesisViolated(format!("component matrix has eigenvalue {lo} < 0")));
            }
            lipschitz.push(hi);
        }
        let n = components.len() as f64;
        let q_bar = components.iter().fold(DMatrix::zeros(dim, dim), |acc, c| acc + &c.q) / n;
        let b_bar = components.iter().fold(DVector::zeros(dim), |acc, c| acc + &c.b) / n;
        let shared_q = components.iter().all(|c| c.q == first.q);
        let (mu, l_grad) = sym_eig_extremes(&q_bar);
        let mu = mu.max(0.0);
        let w_star = if mu > 0.0 { Some(solve(&q_bar, &b_bar, "mean Hessian")?) } else { None };
        Ok(Self { components, dim, q_bar, b_bar, shared_q, lipschitz, l_grad, mu, w_star })
    }

    /// All components share `q`; the linear terms differ.
    pub fn shared(q: DMatrix<f64>, bs: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(bs.into_iter().map(|b| QuadraticComponent { q: q.clone(), b }).collect())
    }

    /// Random shared-Hessian instance: the eigenvalues of `Q` are evenly spaced in `[mu, l]`
    /// with a Haar-random eigenbasis, and `b_i = c + spread·ξ_i` with Gaussian `c` and `ξ_i`.
    pub fn random_shared<R: Rng + ?Sized>(
        n: usize,
        d: usize,
        mu: f64,
        l: f64,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::EmptyProblem);
        }
        let q = random_spd(d, mu, l, rng);
        let c = gaussian_vector(d, rng);
        let bs = (0..n).map(|_| &c + gaussian_vector(d, rng) * spread).collect();
        Self::shared(q, bs)
    }

    /// Random instance with a separate Hessian per component: each `Q_i` has eigenvalues evenly
    /// spaced in `[mu, l]` and its own Haar-random eigenbasis, and the linear terms are drawn as
    /// in [`FiniteSumProblem::random_shared`]. The mean Hessian keeps its spectrum in `[mu, l]`.
    pub fn random_distinct<R: Rng + ?Sized>(
        n: usize,
        d: usize,
        mu: f64,
        l: f64,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::EmptyProblem);
        }
        let c = gaussian_vector(d, rng);
        let components = (0..n)
            .map(|_| {
                let q = random_spd(d, mu, l, rng);
                QuadraticComponent { q, b: &c + gaussian_vector(d, rng) * spread }
            })
            .collect();
        Self::new(components)
    }

    /// Records a minimiser for instances whose mean Hessian is singular.
    pub fn with_minimizer(mut self, w_star: ParamVec) -> Result<Self> {
        if w_star.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: w_star.len() });
        }
        if self.full_gradient(&w_star).norm() > 1e-8 * (1.0 + self.b_bar.norm()) {
            return Err(Error::HypothesisViolated("supplied minimiser is not stationary".into()));
        }
        self.w_star = Some(w_star);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[QuadraticComponent] {
        &self.components
    }

    pub fn component_lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    /// `L_∇F`, the largest eigenvalue of the mean Hessian.
    pub fn l_grad(&self) -> f64 {
        self.l_grad
    }

    /// `μ`, the smallest eigenvalue of the mean Hessian.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mean_hessian(&self) -> &DMatrix<f64> {
        &self.q_bar
    }

    pub fn w_star(&self) -> Option<&ParamVec> {
        self.w_star.as_ref()
    }

    pub fn shares_hessian(&self) -> bool {
        self.shared_q
    }

    /// `M = max_i sup_w ‖∇f_i(w) − ∇F(w)‖`, finite only when the Hessians are shared; then
    /// `∇f_i − ∇F = b̄ − b_i` does not depend on `w`.
    pub fn dispersion(&self) -> Option<f64> {
        self.shared_q.then(|| self.components.iter().map(|c| (&self.b_bar - &c.b).norm()).fold(0.0, f64::max))
    }

    pub fn objective(&self, w: &ParamVec) -> f64 {
        0.5 * w.dot(&(&self.q_bar * w)) - self.b_bar.dot(w)
    }

    pub fn full_gradient(&self, w: &ParamVec) -> ParamVec {
        &self.q_bar * w - &self.b_bar
    }

    pub fn component_gradient(&self, i: usize, w: &ParamVec) -> ParamVec {
        let c = &self.components[i];
        &c.q * w - &c.b
    }

    /// `F_* = F(w*)`, available when a minimiser is known.
    pub fn f_star(&self) -> Option<f64> {
        self.w_star.as_ref().map(|w| self.objective(w))
    }

    fn require_w_star(&self) -> Result<&ParamVec> {
        self.w_star.as_ref().ok_or_else(|| Error::RegimeUnavailable("no known minimiser".into()))
    }
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Symmetric positive definite matrix with eigenvalues evenly spaced in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let u = g.qr().q();
    let eig = DVector::from_fn(d, |i, _| if d == 1 { hi } else { lo + (hi - lo) * i as f64 / (d - 1) as f64 });
    let q: DMatrix<f64> = &u * DMatrix::from_diagonal(&eig) * u.transpose();
    (&q + q.transpose()) * 0.5
}

/// `−(1/b) Σ_{i∈B} ∇f_i(w)` with `B` drawn per `batch`.
///
/// A full batch without replacement is the exact field and draws no randomness.
pub fn sgd_field(p: &FiniteSumProblem, w: &ParamVec, batch: MinibatchSpec, rng: &mut SaRng) -> Result<ParamVec> {
    if w.len() != p.dim {
        return Err(Error::DimensionMismatch { expected: p.dim, got: w.len() });
    }
    if batch.b == p.n() && batch.replacement == Replacement::Without {
        return Ok(-p.full_gradient(w));
    }
    let idx = sample_indices(p.n(), batch.b, batch.replacement, rng)?;
    let mut g = ParamVec::zeros(p.dim);
    if p.shared_q {
        for &i in &idx {
            g += &p.components[i].b;
        }
        g /= idx.len() as f64;
        g -= &p.components[0].q * w;
    } else {
        for &i in &idx {
            g -= p.component_gradient(i, w);
        }
        g /= idx.len() as f64;
    }
    Ok(g)
}

/// The mini-batch stochastic-gradient oracle as a [`FieldOracle`].
#[derive(Clone, Copy, Debug)]
pub struct SgdOracle<'a> {
    problem: &'a FiniteSumProblem,
    batch: MinibatchSpec,
}

impl<'a> SgdOracle<'a> {
    pub fn new(problem: &'a FiniteSumProblem, batch: MinibatchSpec) -> Result<Self> {
        if batch.b == 0 || (batch.replacement == Replacement::Without && batch.b > problem.n()) {
            return Err(Error::BatchTooLarge { batch: batch.b, n: problem.n() });
        }
        Ok(Self { problem, batch })
    }
}

impl FieldOracle for SgdOracle<'_> {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        sgd_field(self.problem, w, self.batch, rng).expect("batch validated at construction")
    }

    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        Some(-self.problem.full_gradient(w))
    }
}

/// The (V, W) pair of a regime, evaluated exactly.
#[derive(Clone, Copy, Debug)]
pub struct SgdLyapunov<'a> {
    problem: &'a FiniteSumProblem,
    regime: SgdRegime,
}

impl<'a> SgdLyapunov<'a> {
    pub fn new(problem: &'a FiniteSumProblem, regime: SgdRegime) -> Result<Self> {
        if regime != SgdRegime::Nonconvex {
            problem.require_w_star()?;
        }
        Ok(Self { problem, regime })
    }
}

impl Lyapunov for SgdLyapunov<'_> {
    fn v(&self, w: &ParamVec) -> f64 {
        lyapunov_v(self.problem, self.regime, w)
    }

    fn w(&self, w: &ParamVec) -> f64 {
        lyapunov_w(self.problem, self.regime, w)
    }
}

/// `V(w)` for the regime.
///
/// # Panics
/// When the regime needs a minimiser and the problem has none; [`SgdLyapunov::new`] and
/// [`sgd_constants`] check this up front.
pub fn lyapunov_v(p: &FiniteSumProblem, regime: SgdRegime, w: &ParamVec) -> f64 {
    match regime {
        SgdRegime::Nonconvex => p.objective(w),
        _ => 0.5 * (w - p.require_w_star().expect("regime needs w*")).norm_squared(),
    }
}

/// `W(w)` for the regime; see [`lyapunov_v`] for the panic condition.
pub fn lyapunov_w(p: &FiniteSumProblem, regime: SgdRegime, w: &ParamVec) -> f64 {
    match regime {
        SgdRegime::Nonconvex => p.full_gradient(w).norm_squared(),
        SgdRegime::Convex | SgdRegime::StronglyConvex => {
            p.full_gradient(w).dot(&(w - p.require_w_star().expect("regime needs w*")))
        }
        SgdRegime::StronglyConvexVW => lyapunov_v(p, regime, w),
    }
}

/// The assumption constants of the stochastic-gradient oracle in `regime`.
///
/// The variance constant is `σ²_0 = M² · c(b)` where `c(b)` is the mini-batch variance factor
/// (`1/b` with replacement, `(n−b)/(b(n−1))` without). A with-replacement batch of size `n`
/// gives the textbook `M²/n`.
pub fn sgd_constants(p: &FiniteSumProblem, regime: SgdRegime, batch: MinibatchSpec) -> Result<RegimeConstants> {
    let m = p.dispersion().ok_or_else(|| {
        Error::RegimeUnavailable("bounded dispersion M needs every component to share its Hessian".into())
    })?;
    if batch.b == 0 || (batch.replacement == Replacement::Without && batch.b > p.n()) {
        return Err(Error::BatchTooLarge { batch: batch.b, n: p.n() });
    }
    let sigma2_0 = m * m * batch.variance_factor(p.n());
    let l = p.l_grad;
    let base = RegimeConstants {
        c_h0: 0.0,
        c_h1: 1.0,
        tau0: 0.0,
        tau1: 0.0,
        sigma2_0,
        sigma2_1: 0.0,
        l_v: l,
        rho: 1.0,
        c_v: Ext::Finite(1.0),
        v_star: 0.0,
    };
    if regime != SgdRegime::Nonconvex {
        p.require_w_star()?;
    }
    let strongly = || {
        if p.mu > 0.0 {
            Ok(p.mu)
        } else {
            Err(Error::RegimeUnavailable("strong convexity needs mu > 0".into()))
        }
    };
    Ok(match regime {
        SgdRegime::Nonconvex => RegimeConstants { v_star: p.f_star().unwrap_or(f64::NEG_INFINITY), ..base },
        SgdRegime::Convex => RegimeConstants { c_h1: l, l_v: 1.0, c_v: Ext::Unbounded, ..base },
        SgdRegime::StronglyConvex => {
            let mu = strongly()?;
            RegimeConstants { c_h1: l, l_v: 1.0, c_v: Ext::Finite(1.0 / mu.sqrt()), ..base }
        }
        SgdRegime::StronglyConvexVW => {
            let mu = strongly()?;
            RegimeConstants { c_h1: 2.0 * l * l, l_v: 1.0, rho: 2.0 * mu, c_v: Ext::Finite(2f64.sqrt()), ..base }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sa_core::{derive_constants, replicate_rng};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> FiniteSumProblem {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let bs = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-1.0, 2.0]),
            DVector::from_vec(vec![0.5, -0.5]),
        ];
        FiniteSumProblem::shared(q, bs).unwrap()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn distinct_instance_keeps_spectra_in_range() {
        let p = FiniteSumProblem::random_distinct(6, 4, 0.2, 1.5, 1.0, &mut replicate_rng(3, 0)).unwrap();
        assert!(!p.shares_hessian());
        assert!(p.dispersion().is_none());
        for &l in p.component_lipschitz() {
            assert!((l - 1.5).abs() < 1e-9, "component Lipschitz {l}");
        }
        assert!(p.mu() >= 0.2 - 1e-9 && p.l_grad() <= 1.5 + 1e-9);
        assert!(p.full_gradient(p.w_star().unwrap()).norm() < 1e-9);
    }

    #[test]
    fn singleton_problem_is_deterministic() {
        let q = DMatrix::identity(2, 2) * 3.0;
        let p = FiniteSumProblem::shared(q, vec![DVector::from_vec(vec![1.0, -2.0])]).unwrap();
        let w = DVector::from_vec(vec![0.3, 0.4]);
        let mut rng = replicate_rng(0, 0);
        let g = sgd_field(&p, &w, MinibatchSpec::single(), &mut rng).unwrap();
        assert_eq!(g, -p.component_gradient(0, &w));
    }

    #[test]
    fn unbiased_at_the_minimiser() {
        let p = toy();
        let w = p.w_star().unwrap().clone();
        let mut rng = replicate_rng(1, 0);
        for coord in 0..2 {
            let xs: Vec<f64> =
                (0..100_000).map(|_| sgd_field(&p, &w, MinibatchSpec::single(), &mut rng).unwrap()[coord]).collect();
            let (m, se) = mean_and_se(&xs);
            assert!(m.abs() <= 3.0 * se, "coord {coord}: mean {m}, se {se}");
        }
    }

    #[test]
    fn singleton_enumeration_is_exactly_unbiased() {
        let p = toy();
        let w = DVector::from_vec(vec![0.7, -1.1]);
        let avg = (0..p.n()).fold(DVector::zeros(2), |acc, i| acc - p.component_gradient(i, &w)) / p.n() as f64;
        assert!((avg + p.full_gradient(&w)).amax() < 1e-12);
    }

    #[test]
    fn single_draw_variance_matches_enumeration() {
        let p = toy();
        let w = DVector::from_vec(vec![0.2, 0.9]);
        let g = p.full_gradient(&w);
        let exact = (0..p.n()).map(|i| (p.component_gradient(i, &w) - &g).norm_squared()).sum::<f64>() / p.n() as f64;
        let mut rng = replicate_rng(2, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| (sgd_field(&p, &w, MinibatchSpec::single(), &mut rng).unwrap() + &g).norm_squared())
            .collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - exact).abs() <= 3.0 * se, "mc {m}, exact {exact}, se {se}");
    }

    #[test]
    fn minibatch_variance_factor_matches_enumeration() {
        // Without replacement, b = 2 of n = 3: average the three pairs by hand.
        let p = toy();
        let w = DVector::from_vec(vec![0.0, 0.0]);
        let g = p.full_gradient(&w);
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let exact = pairs
            .iter()
            .map(|&(i, j)| ((p.component_gradient(i, &w) + p.component_gradient(j, &w)) / 2.0 - &g).norm_squared())
            .sum::<f64>()
            / 3.0;
        let single = (0..3).map(|i| (p.component_gradient(i, &w) - &g).norm_squared()).sum::<f64>() / 3.0;
        let factor = MinibatchSpec::new(2, Replacement::Without).variance_factor(3);
        assert!((exact - single * factor).abs() < 1e-12);
    }

    #[test]
    fn table_rows() {
        let p = toy();
        let m = p.dispersion().unwrap();
        let batch = MinibatchSpec::new(p.n(), Replacement::With);
        let rc = sgd_constants(&p, SgdRegime::Nonconvex, batch).unwrap();
        assert_eq!((rc.c_h0, rc.c_h1, rc.tau0, rc.tau1), (0.0, 1.0, 0.0, 0.0));
        assert!((rc.sigma2_0 - m * m / p.n() as f64).abs() < 1e-14);
        assert_eq!((rc.sigma2_1, rc.l_v, rc.rho, rc.c_v), (0.0, p.l_grad(), 1.0, Ext::Finite(1.0)));
        assert_eq!(rc.v_star, p.f_star().unwrap());

        let rc = sgd_constants(&p, SgdRegime::Convex, batch).unwrap();
        assert_eq!((rc.c_h1, rc.l_v, rc.rho, rc.c_v), (p.l_grad(), 1.0, 1.0, Ext::Unbounded));

        let rc = sgd_constants(&p, SgdRegime::StronglyConvex, batch).unwrap();
        assert_eq!(rc.c_v, Ext::Finite(1.0 / p.mu().sqrt()));

        let rc = sgd_constants(&p, SgdRegime::StronglyConvexVW, batch).unwrap();
        assert_eq!(rc.rho, 2.0 * p.mu());
        assert_eq!(rc.c_h1, 2.0 * p.l_grad() * p.l_grad());
        assert_eq!(rc.c_v, Ext::Finite(2f64.sqrt()));
    }

    #[test]
    fn identity_quadratic_gamma_max() {
        let p = FiniteSumProblem::shared(DMatrix::identity(1, 1), vec![DVector::from_vec(vec![1.0]); 4]).unwrap();
        assert_eq!((p.l_grad(), p.mu()), (1.0, 1.0));
        let rc = sgd_constants(&p, SgdRegime::Nonconvex, MinibatchSpec::single()).unwrap();
        assert_eq!(derive_constants(&rc).unwrap().gamma_max, Ext::Finite(2.0));
    }

    #[test]
    fn dispersion_needs_shared_hessian() {
        let comps = vec![
            QuadraticComponent { q: DMatrix::identity(1, 1), b: DVector::from_vec(vec![0.0]) },
            QuadraticComponent { q: DMatrix::identity(1, 1) * 2.0, b: DVector::from_vec(vec![1.0]) },
        ];
        let p = FiniteSumProblem::new(comps).unwrap();
        assert_eq!(p.dispersion(), None);
        assert!(matches!(
            sgd_constants(&p, SgdRegime::Nonconvex, MinibatchSpec::single()),
            Err(Error::RegimeUnavailable(_))
        ));
        assert_eq!(p.component_lipschitz(), &[1.0, 2.0]);
    }

    #[test]
    fn w_is_zero_at_the_minimiser_in_every_regime() {
        let p = toy();
        let w = p.w_star().unwrap().clone();
        for regime in [SgdRegime::Nonconvex, SgdRegime::Convex, SgdRegime::StronglyConvex, SgdRegime::StronglyConvexVW]
        {
            assert!(lyapunov_w(&p, regime, &w).abs() < 1e-24, "{regime:?}");
        }
    }

    #[test]
    fn cocoercivity_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FiniteSumProblem::random_shared(5, 4, 0.1, 2.0, 1.0, &mut rng).unwrap();
        for _ in 0..1000 {
            let w = gaussian_vector(4, &mut rng) * 3.0;
            let lhs = p.full_gradient(&w).norm_squared();
            let rhs = p.l_grad() * lyapunov_w(&p, SgdRegime::Convex, &w);
            assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn nonconvex_drift_identity() {
        // ∇V = ∇F and h = −∇F, so ⟨∇V, h⟩ = −W exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = FiniteSumProblem::random_shared(3, 3, 0.5, 1.5, 1.0, &mut rng).unwrap();
        let oracle = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        for _ in 0..20 {
            let w = gaussian_vector(3, &mut rng);
            let h = oracle.mean_field(&w).unwrap();
            let lhs = p.full_gradient(&w).dot(&h);
            assert!((lhs + lyapunov_w(&p, SgdRegime::Nonconvex, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_monotonicity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = FiniteSumProblem::random_shared(4, 5, 0.3, 3.0, 0.5, &mut rng).unwrap();
        assert!((p.mu() - 0.3).abs() < 1e-10 && (p.l_grad() - 3.0).abs() < 1e-10);
        for _ in 0..1000 {
            let (a, b) = (gaussian_vector(5, &mut rng), gaussian_vector(5, &mut rng));
            let lhs = (p.full_gradient(&a) - p.full_gradient(&b)).dot(&(&a - &b));
            assert!(lhs >= p.mu() * (&a - &b).norm_squared() * (1.0 - 1e-10));
        }
    }

    #[test]
    fn sampled_variance_respects_table_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = FiniteSumProblem::random_shared(6, 3, 0.5, 1.0, 1.0, &mut rng).unwrap();
        for batch in [
            MinibatchSpec::single(),
            MinibatchSpec::new(3, Replacement::Without),
            MinibatchSpec::new(6, Replacement::With),
        ] {
            let rc = sgd_constants(&p, SgdRegime::Nonconvex, batch).unwrap();
            let w = gaussian_vector(3, &mut rng);
            let g = p.full_gradient(&w);
            let mut r = replicate_rng(7, 0);
            let xs: Vec<f64> =
                (0..20_000).map(|_| (sgd_field(&p, &w, batch, &mut r).unwrap() + &g).norm_squared()).collect();
            let (m, se) = mean_and_se(&xs);
            assert!(m <= rc.sigma2_0 + 3.0 * se, "{batch:?}: {m} > {}", rc.sigma2_0);
        }
    }
}
