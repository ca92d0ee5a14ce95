//! Stochastic EM in sufficient-statistic space for models with a finite latent space.
//!
//! An EM step is `θ ← T(s̄(θ))` where `s̄(θ) = (1/n) Σ_i E_{π_i(·;θ)}[S_i(Z)]`. Written on
//! `w = s`, EM is the SA recursion for the mean field `h(w) = s̄(T(w)) − w`; the stochastic
//! variants replace `s̄` by a mini-batch average, by exact posterior sampling (SAEM), or by
//! self-normalised importance sampling (SAEM-IS).
//!
//! The concrete model is a one-dimensional Gaussian mixture with unit variances whose weights
//! and means are both estimated. The statistic is `S(z, y) = (e_z, e_z y) ∈ R^{2K}` and
//! `T(s) = (s⁰/Σs⁰, s¹/s⁰)`. Every sampled statistic has `Σs⁰ = 1`, so iterates started on
//! that slice stay on it.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::sa_core::{Ext, FieldOracle, Lyapunov, ParamVec, RegimeConstants, SaRng};
use crate::sampling::{sample_categorical, sample_indices, Replacement};
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A model with a finite latent space written in sufficient-statistic form.
pub trait ExpFamilyModel: Send + Sync {
    type Theta: Clone + Send + Sync;

    /// Number of observations.
    fn n(&self) -> usize;
    /// Number of latent labels.
    fn latent_card(&self) -> usize;
    /// Dimension of the statistic space.
    fn stat_dim(&self) -> usize;
    /// `S_i(z)`.
    fn statistic(&self, i: usize, z: usize) -> DVector<f64>;
    /// `log p_i(z; θ)`, the unnormalised complete-data log density.
    fn log_joint(&self, i: usize, z: usize, theta: &Self::Theta) -> f64;
    /// The closed-form M-step.
    fn t_map(&self, s: &DVector<f64>) -> Self::Theta;
    /// The objective `F(θ)` (negative normalised log-likelihood), minimised by EM.
    fn objective(&self, theta: &Self::Theta) -> f64;
    /// Importance proposal `π̃_i(·; θ)`, strictly positive.
    fn proposal(&self, i: usize, theta: &Self::Theta) -> Vec<f64>;

    /// `π_i(·; θ) ∝ p_i(·; θ)`, normalised in log space.
    fn posterior(&self, i: usize, theta: &Self::Theta) -> Result<Vec<f64>> {
        let logs: Vec<f64> = (0..self.latent_card()).map(|z| self.log_joint(i, z, theta)).collect();
        normalise_logs(&logs).ok_or(Error::DegeneratePosterior { index: i })
    }

    /// `s̄_i(θ) = E_{π_i}[S_i(Z)]`.
    fn sbar_i(&self, i: usize, theta: &Self::Theta) -> Result<DVector<f64>> {
        let post = self.posterior(i, theta)?;
        let mut s = DVector::zeros(self.stat_dim());
        for (z, p) in post.into_iter().enumerate() {
            if p > 0.0 {
                s.axpy(p, &self.statistic(i, z), 1.0);
            }
        }
        Ok(s)
    }

    /// `s̄(θ) = (1/n) Σ_i s̄_i(θ)`.
    fn sbar(&self, theta: &Self::Theta) -> Result<DVector<f64>> {
        let mut s = DVector::zeros(self.stat_dim());
        for i in 0..self.n() {
            s += self.sbar_i(i, theta)?;
        }
        Ok(s / self.n() as f64)
    }

    /// `χ_i(θ) = Σ_z π_i(z)²/π̃_i(z)`.
    fn chi(&self, i: usize, theta: &Self::Theta) -> Result<f64> {
        let post = self.posterior(i, theta)?;
        let prop = self.proposal(i, theta);
        Ok(post.iter().zip(&prop).map(|(p, q)| p * p / q).sum())
    }
}

/// Softmax of log weights; `None` when no weight is finite or an input is NaN.
fn normalise_logs(logs: &[f64]) -> Option<Vec<f64>> {
    if logs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|x| x / total).collect())
}

/// `h(w) = s̄(T(w)) − w`.
pub fn em_mean_field<M: ExpFamilyModel>(model: &M, w: &ParamVec) -> Result<ParamVec> {
    Ok(model.sbar(&model.t_map(w))? - w)
}

/// One deterministic EM step in statistic space, `w ↦ s̄(T(w))`.
pub fn em_step<M: ExpFamilyModel>(model: &M, w: &ParamVec) -> Result<ParamVec> {
    model.sbar(&model.t_map(w))
}

/// `(1/b) Σ_{i∈B} s̄_i(T(w)) − w` with `B` drawn uniformly without replacement.
pub fn minibatch_em_field<M: ExpFamilyModel, R: Rng + ?Sized>(
    model: &M,
    w: &ParamVec,
    b: usize,
    rng: &mut R,
) -> Result<ParamVec> {
    let idx = sample_indices(model.n(), b, Replacement::Without, rng)?;
    minibatch_statistic(model, &model.t_map(w), &idx).map(|s| s - w)
}

/// `(1/|B|) Σ_{i∈B} s̄_i(θ)` for an explicit index set.
pub fn minibatch_statistic<M: ExpFamilyModel>(model: &M, theta: &M::Theta, idx: &[usize]) -> Result<DVector<f64>> {
    let mut s = DVector::zeros(model.stat_dim());
    for &i in idx {
        s += model.sbar_i(i, theta)?;
    }
    Ok(s / idx.len() as f64)
}

/// `(1/n) Σ_i (1/m) Σ_j S_i(Z_i^j) − w` with `Z_i^j` drawn from the posterior at `T(w)`.
pub fn saem_field_exact<M: ExpFamilyModel, R: Rng + ?Sized>(
    model: &M,
    w: &ParamVec,
    m: usize,
    rng: &mut R,
) -> Result<ParamVec> {
    if m == 0 {
        return Err(Error::BatchTooLarge { batch: 0, n: model.n() });
    }
    let theta = model.t_map(w);
    let mut s = DVector::zeros(model.stat_dim());
    for i in 0..model.n() {
        let post = model.posterior(i, &theta)?;
        for _ in 0..m {
            s += model.statistic(i, sample_categorical(&post, rng));
        }
    }
    Ok(s / (model.n() * m) as f64 - w)
}

/// Self-normalised importance-sampling version of [`saem_field_exact`]: per observation,
/// `Σ_j ω_j S_i(Z^j) / Σ_j ω_j` with `Z^j ~ π̃_i` and `ω_j = p_i(Z^j)/π̃_i(Z^j)`.
pub fn saem_field_is<M: ExpFamilyModel, R: Rng + ?Sized>(
    model: &M,
    w: &ParamVec,
    m: usize,
    rng: &mut R,
) -> Result<ParamVec> {
    if m == 0 {
        return Err(Error::BatchTooLarge { batch: 0, n: model.n() });
    }
    let theta = model.t_map(w);
    let mut s = DVector::zeros(model.stat_dim());
    let mut draws = Vec::with_capacity(m);
    let mut logw = Vec::with_capacity(m);
    for i in 0..model.n() {
        let prop = model.proposal(i, &theta);
        draws.clear();
        logw.clear();
        for _ in 0..m {
            let z = sample_categorical(&prop, rng);
            draws.push(z);
            logw.push(model.log_joint(i, z, &theta) - prop[z].ln());
        }
        let weights = normalise_logs(&logw).ok_or(Error::ZeroWeightSum)?;
        for (&z, wt) in draws.iter().zip(weights) {
            s.axpy(wt, &model.statistic(i, z), 1.0);
        }
    }
    Ok(s / model.n() as f64 - w)
}

/// Which stochastic approximation of `s̄` the oracle uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmSampler {
    /// Exact `s̄`: deterministic EM when run with `γ = 1`.
    Full,
    Minibatch {
        b: usize,
    },
    SaemExact {
        m: usize,
    },
    SaemIs {
        m: usize,
    },
}

/// The stochastic-EM field as a [`FieldOracle`].
#[derive(Clone, Copy, Debug)]
pub struct EmOracle<'a, M> {
    model: &'a M,
    sampler: EmSampler,
}

impl<'a, M: ExpFamilyModel> EmOracle<'a, M> {
    pub fn new(model: &'a M, sampler: EmSampler) -> Result<Self> {
        let size = match sampler {
            EmSampler::Full => 1,
            EmSampler::Minibatch { b } => {
                if b > model.n() {
                    return Err(Error::BatchTooLarge { batch: b, n: model.n() });
                }
                b
            }
            EmSampler::SaemExact { m } | EmSampler::SaemIs { m } => m,
        };
        if size == 0 {
            return Err(Error::BatchTooLarge { batch: 0, n: model.n() });
        }
        Ok(Self { model, sampler })
    }
}

impl<M: ExpFamilyModel> FieldOracle for EmOracle<'_, M> {
    fn dim(&self) -> usize {
        self.model.stat_dim()
    }

    /// # Panics
    /// When a posterior is degenerate, which needs NaN input.
    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        let out = match self.sampler {
            EmSampler::Full => em_mean_field(self.model, w),
            EmSampler::Minibatch { b } => minibatch_em_field(self.model, w, b, rng),
            EmSampler::SaemExact { m } => saem_field_exact(self.model, w, m, rng),
            EmSampler::SaemIs { m } => saem_field_is(self.model, w, m, rng),
        };
        out.expect("posterior is well defined for finite iterates")
    }

    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        em_mean_field(self.model, w).ok()
    }
}

/// `V = F ∘ T` and `W = ‖h‖²`.
#[derive(Clone, Copy, Debug)]
pub struct EmLyapunov<'a, M> {
    model: &'a M,
}

impl<'a, M: ExpFamilyModel> EmLyapunov<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self { model }
    }
}

impl<M: ExpFamilyModel> Lyapunov for EmLyapunov<'_, M> {
    fn v(&self, w: &ParamVec) -> f64 {
        self.model.objective(&self.model.t_map(w))
    }

    fn w(&self, w: &ParamVec) -> f64 {
        em_mean_field(self.model, w).map_or(f64::NAN, |h| h.norm_squared())
    }
}

/// Mixture weights and means.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub weights: DVector<f64>,
    pub means: DVector<f64>,
}

/// Importance proposal of the Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proposal {
    /// `1/K` for every label.
    Uniform,
    /// The exact posterior, which turns SAEM-IS into SAEM with exact sampling.
    Posterior,
}

/// A one-dimensional Gaussian mixture with unit variances and unknown weights and means.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    y: Vec<f64>,
    k: usize,
    proposal: Proposal,
}

impl Gmm {
    pub fn new(y: Vec<f64>, k: usize) -> Result<Self> {
        if y.is_empty() || k == 0 {
            return Err(Error::EmptyProblem);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::HypothesisViolated("observations must be finite".into()));
        }
        Ok(Self { y, k, proposal: Proposal::Uniform })
    }

    /// `n` draws from the mixture with the given weights and means.
    pub fn synthetic<R: Rng + ?Sized>(n: usize, weights: &[f64], means: &[f64], rng: &mut R) -> Result<Self> {
        if weights.len() != means.len() {
            return Err(Error::DimensionMismatch { expected: weights.len(), got: means.len() });
        }
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let y = (0..n).map(|_| means[sample_categorical(&probs, rng)] + unit.sample(rng)).collect();
        Self::new(y, weights.len())
    }

    pub fn with_proposal(mut self, proposal: Proposal) -> Self {
        self.proposal = proposal;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    pub fn components(&self) -> usize {
        self.k
    }

    /// `s* = sup_{i,z} ‖S_i(z)‖ = sqrt(1 + max y²)`.
    pub fn s_star(&self) -> f64 {
        (1.0 + self.y.iter().map(|v| v * v).fold(0.0, f64::max)).sqrt()
    }

    /// Statistic of the parameter `θ`: `(α, α μ)`, a point on the slice `Σs⁰ = 1` with `T(s) = θ`.
    pub fn stat_of(&self, theta: &GmmParams) -> DVector<f64> {
        let k = self.k;
        DVector::from_fn(2 * k, |j, _| if j < k { theta.weights[j] } else { theta.weights[j - k] * theta.means[j - k] })
    }

    /// Posterior responsibilities of every observation.
    fn responsibilities(&self, theta: &GmmParams) -> Vec<Vec<f64>> {
        (0..self.y.len()).map(|i| self.posterior(i, theta).unwrap_or_else(|_| vec![f64::NAN; self.k])).collect()
    }

    /// `∇_θ F` split into the weight and mean parts, with the weights treated as free
    /// variables of the mixture density.
    fn objective_grad(&self, theta: &GmmParams) -> (DVector<f64>, DVector<f64>) {
        let n = self.y.len() as f64;
        let r = self.responsibilities(theta);
        let mut ga = DVector::zeros(self.k);
        let mut gm = DVector::zeros(self.k);
        for (i, ri) in r.iter().enumerate() {
            for k in 0..self.k {
                if theta.weights[k] > 0.0 {
                    ga[k] -= ri[k] / theta.weights[k];
                }
                gm[k] -= ri[k] * (self.y[i] - theta.means[k]);
            }
        }
        (ga / n, gm / n)
    }

    /// `∇_θ F` with respect to the means only.
    pub fn mean_gradient(&self, theta: &GmmParams) -> DVector<f64> {
        self.objective_grad(theta).1
    }

    /// `∇(F ∘ T)(w)` by the chain rule through `α = s⁰/Σs⁰` and `μ = s¹/s⁰`.
    pub fn lyapunov_grad(&self, w: &ParamVec) -> ParamVec {
        let k = self.k;
        let theta = self.t_map(w);
        let (ga, gm) = self.objective_grad(&theta);
        let s0 = w.rows(0, k);
        let total = s0.sum();
        let ga_dot_alpha: f64 = (0..k).map(|j| ga[j] * s0[j]).sum::<f64>() / (total * total);
        let mut g = ParamVec::zeros(2 * k);
        for j in 0..k {
            g[j] = ga[j] / total - ga_dot_alpha - gm[j] * theta.means[j] / s0[j];
            g[k + j] = gm[j] / s0[j];
        }
        g
    }

    /// Random points of the slice `Σs⁰ = 1`: convex combinations of `s̄(θ_j)` at random
    /// parameters, which is the region EM-type iterates explore.
    pub fn probe_points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<ParamVec>> {
        let (lo, hi) = self.y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let unit = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
        let dirichlet = |len: usize, rng: &mut R| {
            let g: Vec<f64> = (0..len).map(|_| unit.sample(rng)).collect();
            let t: f64 = g.iter().sum();
            DVector::from_iterator(len, g.into_iter().map(|x| x / t))
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mix = dirichlet(3, rng);
            let mut w = ParamVec::zeros(2 * self.k);
            for j in 0..3 {
                let theta = GmmParams {
                    weights: dirichlet(self.k, rng),
                    means: DVector::from_fn(self.k, |_, _| rng.random_range(lo..=hi)),
                };
                w.axpy(mix[j], &self.sbar(&theta)?, 1.0);
            }
            out.push(w);
        }
        Ok(out)
    }

    /// Runs deterministic EM from `w` until `‖h‖ < tol` or `max_iter` steps.
    pub fn run_em(&self, w: &ParamVec, tol: f64, max_iter: usize) -> Result<ParamVec> {
        let mut w = w.clone();
        for _ in 0..max_iter {
            let next = em_step(self, &w)?;
            let done = (&next - &w).norm() < tol;
            w = next;
            if done {
                break;
            }
        }
        Ok(w)
    }
}

impl ExpFamilyModel for Gmm {
    type Theta = GmmParams;

    fn n(&self) -> usize {
        self.y.len()
    }

    fn latent_card(&self) -> usize {
        self.k
    }

    fn stat_dim(&self) -> usize {
        2 * self.k
    }

    fn statistic(&self, i: usize, z: usize) -> DVector<f64> {
        let mut s = DVector::zeros(2 * self.k);
        s[z] = 1.0;
        s[self.k + z] = self.y[i];
        s
    }

    fn log_joint(&self, i: usize, z: usize, theta: &GmmParams) -> f64 {
        let d = self.y[i] - theta.means[z];
        theta.weights[z].ln() - 0.5 * d * d - LN_SQRT_2PI
    }

    /// Components with non-positive mass get weight zero and mean zero, so the map is total.
    fn t_map(&self, s: &DVector<f64>) -> GmmParams {
        let k = self.k;
        let mass: Vec<f64> = (0..k).map(|j| s[j].max(0.0)).collect();
        let total: f64 = mass.iter().sum();
        GmmParams {
            weights: DVector::from_fn(k, |j, _| mass[j] / total),
            means: DVector::from_fn(k, |j, _| if mass[j] > 0.0 { s[k + j] / s[j] } else { 0.0 }),
        }
    }

    fn objective(&self, theta: &GmmParams) -> f64 {
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let logs: Vec<f64> = (0..self.k).map(|z| self.log_joint(i, z, theta)).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += max + logs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        }
        -total / self.y.len() as f64
    }

    fn proposal(&self, i: usize, theta: &GmmParams) -> Vec<f64> {
        match self.proposal {
            Proposal::Uniform => vec![1.0 / self.k as f64; self.k],
            Proposal::Posterior => self.posterior(i, theta).expect("finite parameters"),
        }
    }
}

/// Constants of the stochastic-EM analysis for one model instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmConstants {
    pub n: usize,
    /// Lower and upper spectral bounds of `B(w)` in `∇V = −B h`.
    pub v_min: f64,
    pub v_max: f64,
    pub l_v: f64,
    /// Per-observation variance constants of `s̄_i` and of `S_i(Z)`.
    pub sigma_bar2_0: f64,
    pub sigma_bar2_1: f64,
    pub s_star: f64,
    /// `χ̄² ≤ c_χ0 + c_χ1 W` for the importance proposal.
    pub c_chi_0: f64,
    pub c_chi_1: f64,
    /// Lower bound of `V = F ∘ T`.
    pub f_star: f64,
}

impl EmConstants {
    /// Estimates the constants of a Gaussian mixture numerically.
    ///
    /// `v_min` and `v_max` are the extreme ratios `−⟨∇V, h⟩/‖h‖²` and `‖∇V‖/‖h‖` over
    /// `probes` random points of the slice; `L_V` is the largest finite-difference ratio
    /// `‖∇V(w + δu) − ∇V(w)‖/δ` at the same points; `F*` is the best EM fixed point over
    /// `restarts` starts. The uniform proposal gives `χ_i ≤ K`, so `c_χ0 = K²`.
    pub fn estimate<R: Rng + ?Sized>(model: &Gmm, probes: usize, restarts: usize, rng: &mut R) -> Result<Self> {
        let mut v_min = f64::INFINITY;
        let mut v_max: f64 = 0.0;
        let mut l_v: f64 = 0.0;
        let step = 1e-5;
        let d = model.stat_dim();
        for w in model.probe_points(probes, rng)? {
            let h = em_mean_field(model, &w)?;
            let g = model.lyapunov_grad(&w);
            let h2 = h.norm_squared();
            if h2 > 1e-16 {
                v_min = v_min.min(-g.dot(&h) / h2);
                v_max = v_max.max(g.norm() / h2.sqrt());
            }
            // A tangent direction of the slice keeps the perturbed point admissible.
            let mut u = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let shift = u.rows(0, model.k).sum() / model.k as f64;
            for j in 0..model.k {
                u[j] -= shift;
            }
            let u = u.normalize();
            let g2 = model.lyapunov_grad(&(&w + &u * step));
            l_v = l_v.max((g2 - g).norm() / step);
        }
        if !(v_min > 0.0) {
            return Err(Error::HypothesisViolated(format!("estimated v_min = {v_min} is not positive")));
        }
        let mut f_star = f64::INFINITY;
        for w in model.probe_points(restarts.max(1), rng)? {
            let fixed = model.run_em(&w, 1e-12, 20_000)?;
            f_star = f_star.min(model.objective(&model.t_map(&fixed)));
        }
        let k = model.k as f64;
        Ok(Self {
            n: model.n(),
            v_min,
            v_max,
            l_v,
            sigma_bar2_0: model.s_star().powi(2),
            sigma_bar2_1: 0.0,
            s_star: model.s_star(),
            c_chi_0: k * k,
            c_chi_1: 0.0,
            f_star,
        })
    }

    /// The regime constants of the oracle `sampler`, with `W = ‖h‖²`, `ρ = v_min`,
    /// `c_V = v_max`.
    pub fn regime(&self, sampler: EmSampler) -> RegimeConstants {
        let base = RegimeConstants {
            c_h0: 0.0,
            c_h1: 1.0,
            tau0: 0.0,
            tau1: 0.0,
            sigma2_0: 0.0,
            sigma2_1: 0.0,
            l_v: self.l_v,
            rho: self.v_min,
            c_v: Ext::Finite(self.v_max),
            v_star: self.f_star,
        };
        let (s0, s1) = (self.sigma_bar2_0, self.sigma_bar2_1);
        match sampler {
            EmSampler::Full => base,
            EmSampler::Minibatch { b } => {
                let b = b as f64;
                RegimeConstants { sigma2_0: s0 / b, sigma2_1: s1 / b, ..base }
            }
            EmSampler::SaemExact { m } => {
                let nm = (self.n * m) as f64;
                RegimeConstants { sigma2_0: s0 / nm, sigma2_1: s1 / nm, ..base }
            }
            EmSampler::SaemIs { m } => {
                let mf = m as f64;
                let nm = self.n as f64 * mf;
                let ss = self.s_star * self.s_star;
                RegimeConstants {
                    tau0: 144.0 * ss * self.c_chi_0 / (mf * mf),
                    tau1: 144.0 * ss * self.c_chi_1 / (mf * mf),
                    sigma2_0: 4.0 * ss * (self.c_chi_0 + self.c_chi_1).sqrt() / nm,
                    sigma2_1: 4.0 * ss * self.c_chi_1.sqrt() / nm,
                    ..base
                }
            }
        }
    }

    /// `c_b` with `b0 = c_b/m` for SAEM-IS: `6 s* v_max √c_χ0`.
    pub fn c_b(&self) -> f64 {
        6.0 * self.s_star * self.v_max * self.c_chi_0.sqrt()
    }

    /// Per-sample variance constants `(σ̄0², σ̄1²)` with `η0 ≤ σ̄0²/m`, `η1 ≤ 1 + σ̄1²/m` for
    /// SAEM-IS and every `m ≥ 1`.
    pub fn saem_is_sigma_bar(&self) -> (f64, f64) {
        let s = self.s_star;
        let n = self.n as f64;
        let (r0, r1) = (self.c_chi_0.sqrt(), self.c_chi_1.sqrt());
        let s0 = 12.0 * s * r0 + 144.0 * s * s * self.c_chi_0 + 4.0 * s * s * (self.c_chi_0 + self.c_chi_1).sqrt() / n;
        let s1 = 12.0 * s * (r0 + 2.0 * r1) + 144.0 * s * s * self.c_chi_1 + 4.0 * s * s * r1 / n;
        (s0, s1)
    }
}

/// Which stochastic EM the budget is for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EmAlgo {
    Minibatch,
    SaemEs,
    /// SAEM-IS with the split `κ` between the bias and the optimisation error.
    SaemIs {
        kappa: f64,
    },
}

/// Cost of one unit of work.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitCosts {
    /// One per-observation conditional expectation `s̄_i`.
    pub cost_sbar: f64,
    /// One M-step `T`.
    pub cost_t: f64,
    /// One Monte Carlo draw.
    pub cost_mc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmPrecision {
    High,
    Low,
}

/// Iterations, batch (or Monte Carlo) size, step and total cost reaching `E‖h(w_R)‖² ≤ ε`.
///
/// `t` and `size` are the real-valued minimisers; the integer run parameters are their
/// ceilings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmBudget {
    pub t: f64,
    pub size: f64,
    pub gamma: f64,
    pub total_cost: f64,
    pub regime: EmPrecision,
}

impl EmBudget {
    pub fn iterations(&self) -> u64 {
        self.t.ceil() as u64
    }

    pub fn batch(&self) -> usize {
        (self.size.ceil() as usize).max(1)
    }
}

/// The ε-budget of stochastic EM: the high/low-precision split, the optimal batch or Monte
/// Carlo size, the step and the total cost.
pub fn em_cost_budget(c: &EmConstants, v_bar: f64, algo: EmAlgo, eps: f64, costs: UnitCosts) -> Result<EmBudget> {
    let (v, l) = (c.v_min, c.l_v);
    let n = c.n as f64;
    let (s0, s1) = match algo {
        EmAlgo::SaemIs { .. } => c.saem_is_sigma_bar(),
        _ => (c.sigma_bar2_0, c.sigma_bar2_1),
    };
    let upper = if s1 > 0.0 { 2.0 * s0 / s1 } else { f64::INFINITY };
    let in_range = |upper_ok: bool| eps > 0.0 && eps.is_finite() && upper_ok;
    match algo {
        EmAlgo::Minibatch | EmAlgo::SaemEs => {
            if !in_range(eps < upper) {
                return Err(Error::EpsilonOutOfRange { eps, upper });
            }
            // Both follow the same algebra with an effective sample count `b` (mini-batch) or
            // `n m` (SAEM); `per_unit` is the cost of one unit of that count.
            let per_unit = if algo == EmAlgo::Minibatch { costs.cost_sbar } else { costs.cost_mc };
            let b_star = (s1 * costs.cost_t / per_unit).sqrt();
            let high = s1 == 0.0 || eps <= 2.0 * s0 / (b_star + s1);
            let (count, t, regime) = if high {
                let count = 2.0 * s0 / eps - s1;
                (count, 8.0 * v_bar * l * s0 / (v * v * count * eps * eps), EmPrecision::High)
            } else {
                (b_star, 4.0 * v_bar * l * (1.0 + s1 / b_star) / (v * v * eps), EmPrecision::Low)
            };
            let gamma = if high { v * count * eps / (2.0 * s0 * l) } else { v * count / (l * (count + s1)) };
            let size = if algo == EmAlgo::Minibatch { count } else { count / n };
            Ok(EmBudget { t, size, gamma, total_cost: t * (count * per_unit + costs.cost_t), regime })
        }
        EmAlgo::SaemIs { kappa } => {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(Error::ConfigViolation(format!("kappa = {kappa} must lie in (0, 1)")));
            }
            let cb = c.c_b();
            let worst = if s1 > 0.0 { 2.0 * s0 } else { 0.0 };
            if 4.0 * cb / ((1.0 - kappa) * v) + worst > 2.0 * s0 / kappa {
                return Err(Error::EpsilonOutOfRange { eps, upper });
            }
            if !in_range(eps <= upper) {
                return Err(Error::EpsilonOutOfRange { eps, upper });
            }
            let m_star = (s1 * costs.cost_t / (n * costs.cost_mc)).sqrt();
            let bias_m = 4.0 * cb / ((1.0 - kappa) * v * eps);
            let high = s1 == 0.0 || kappa * eps <= 2.0 * s0 / (m_star + s1);
            let (m, t, regime) = if high {
                let m = 2.0 * s0 / (kappa * eps) - s1;
                (m, 32.0 * l * v_bar * s0 / (v * v * m * kappa * kappa * eps * eps), EmPrecision::High)
            } else {
                let m = m_star.max(bias_m);
                (m, 16.0 * v_bar * l * (1.0 + s1 / m) / (v * v * kappa * eps), EmPrecision::Low)
            };
            let b1 = 6.0 * c.s_star * c.v_max * (c.c_chi_0.sqrt() + 2.0 * c.c_chi_1.sqrt()) / m;
            let gamma = (2.0 * v_bar * m / (s0 * l * t)).sqrt().min((v - b1) / (l * (1.0 + s1 / m)));
            Ok(EmBudget { t, size: m, gamma, total_cost: t * (n * m * costs.cost_mc + costs.cost_t), regime })
        }
    }
}
