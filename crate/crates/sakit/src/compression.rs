//! Compression operators, the three ways of placing them inside an SA recursion, and the
//! transformation of the field constants each placement induces.
//!
//! The placements are:
//! * [`CompressedField`]: `w ← w + γ C(H(w, X))`;
//! * [`PerturbedIterate`]: `w ← w + γ H(C(w), X)`, the straight-through estimator;
//! * [`LowPrecision`]: `w ← C(w + γ̄ H(w, X))`, written as a field `(C(w + γ̄H) − w)/γ̄`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::sa_core::{Ext, FieldOracle, ParamVec, RegimeConstants, SaRng};
use crate::sampling::{sample_indices, Replacement};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressionOp {
    Identity,
    /// Keep the `h` largest-magnitude coordinates, lowest index first on ties.
    TopH {
        h: usize,
    },
    /// Keep `h` coordinates chosen uniformly, multiplied by `d/h` when `scaled`.
    RandH {
        h: usize,
        scaled: bool,
    },
    /// Unbiased coordinate-wise rounding to the lattice `ΔZ`.
    StochasticRound {
        delta: f64,
    },
    /// Round half away from zero to the lattice `ΔZ`.
    DeterministicRound {
        delta: f64,
    },
}

impl CompressionOp {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            CompressionOp::Identity => Ok(()),
            CompressionOp::TopH { h } | CompressionOp::RandH { h, .. } => {
                if h == 0 || h > d {
                    Err(Error::ConfigViolation(format!("sparsifier keeps h = {h} of d = {d} coordinates")))
                } else {
                    Ok(())
                }
            }
            CompressionOp::StochasticRound { delta } | CompressionOp::DeterministicRound { delta } => {
                if delta > 0.0 && delta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::ConfigViolation(format!("quantizer step must be positive, got {delta}")))
                }
            }
        }
    }

    /// The compressor certificates this operator carries in dimension `d`.
    pub fn profile(&self, d: usize) -> Result<CompressorProfile> {
        self.validate(d)?;
        let df = d as f64;
        let none = CompressorProfile {
            dim: d,
            deterministic: matches!(
                self,
                CompressionOp::Identity | CompressionOp::TopH { .. } | CompressionOp::DeterministicRound { .. }
            ),
            contractive_delta: None,
            unbiased_omega: None,
            uniform_kappa: None,
            linear_delta: None,
        };
        Ok(match *self {
            CompressionOp::Identity => CompressorProfile {
                contractive_delta: Some(1.0),
                unbiased_omega: Some(0.0),
                uniform_kappa: Some(0.0),
                linear_delta: Some(0.0),
                ..none
            },
            CompressionOp::TopH { h } => CompressorProfile { contractive_delta: Some(h as f64 / df), ..none },
            CompressionOp::RandH { h, scaled: true } => {
                CompressorProfile { unbiased_omega: Some(df / h as f64 - 1.0), ..none }
            }
            CompressionOp::RandH { h, scaled: false } => {
                CompressorProfile { contractive_delta: Some(h as f64 / df), ..none }
            }
            // Each coordinate is a two-point variable on an interval of length Δ, so its
            // variance is at most Δ²/4.
            CompressionOp::StochasticRound { delta } => {
                CompressorProfile { uniform_kappa: Some(df * delta * delta / 4.0), linear_delta: Some(delta), ..none }
            }
            // The pointwise error is at most dΔ²/4; the looser dΔ² is the certificate used in
            // the literature and is what we report.
            CompressionOp::DeterministicRound { delta } => {
                CompressorProfile { uniform_kappa: Some(df * delta * delta), ..none }
            }
        })
    }
}

impl fmt::Display for CompressionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CompressionOp::Identity => write!(f, "identity"),
            CompressionOp::TopH { h } => write!(f, "top:{h}"),
            CompressionOp::RandH { h, scaled: true } => write!(f, "rand:{h}:scaled"),
            CompressionOp::RandH { h, scaled: false } => write!(f, "rand:{h}"),
            CompressionOp::StochasticRound { delta } => write!(f, "sround:{delta}"),
            CompressionOp::DeterministicRound { delta } => write!(f, "dround:{delta}"),
        }
    }
}

impl FromStr for CompressionOp {
    type Err = Error;

    /// Parses `identity`, `top:h`, `rand:h`, `rand:h:scaled`, `sround:delta` or `dround:delta`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ConfigViolation(format!("unrecognised compression operator '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let real = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let op = match parts.as_slice() {
            ["identity"] => CompressionOp::Identity,
            ["top", h] => CompressionOp::TopH { h: int(h)? },
            ["rand", h] => CompressionOp::RandH { h: int(h)?, scaled: false },
            ["rand", h, "scaled"] => CompressionOp::RandH { h: int(h)?, scaled: true },
            ["sround", d] => CompressionOp::StochasticRound { delta: real(d)? },
            ["dround", d] => CompressionOp::DeterministicRound { delta: real(d)? },
            _ => return Err(bad()),
        };
        if let CompressionOp::StochasticRound { delta } | CompressionOp::DeterministicRound { delta } = op {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(bad());
            }
        }
        Ok(op)
    }
}

/// Certificates a compressor satisfies. Absent entries are not claimed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressorProfile {
    pub dim: usize,
    /// The operator uses no randomness.
    pub deterministic: bool,
    /// `E‖C(x) − x‖² ≤ (1 − δ)‖x‖²`.
    pub contractive_delta: Option<f64>,
    /// `E C(x) = x` and `E‖C(x) − x‖² ≤ ω‖x‖²`.
    pub unbiased_omega: Option<f64>,
    /// `E‖C(x) − x‖² ≤ κ`.
    pub uniform_kappa: Option<f64>,
    /// Unbiased, idempotent on its image, and linear with resolution `Δ`.
    pub linear_delta: Option<f64>,
}

/// Deterministic rounding of one coordinate, half away from zero.
pub fn round_deterministic(x: f64, delta: f64) -> f64 {
    x.signum() * delta * (x.abs() / delta + 0.5).floor()
}

/// Stochastic rounding of one coordinate given a uniform draw `u ∈ [0, 1)`.
///
/// Rounds up when `u < frac(x/Δ)`, which makes lattice points fixed with probability one.
pub fn round_stochastic(x: f64, delta: f64, u: f64) -> f64 {
    let scaled = x / delta;
    let low = scaled.floor();
    if u < scaled - low {
        delta * (low + 1.0)
    } else {
        delta * low
    }
}

/// Indices of the `h` largest-magnitude coordinates, ties broken by lowest index.
fn top_indices(x: &ParamVec, h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    idx.truncate(h);
    idx
}

pub fn compress<R: Rng + ?Sized>(op: &CompressionOp, x: &ParamVec, rng: &mut R) -> ParamVec {
    let d = x.len();
    match *op {
        CompressionOp::Identity => x.clone(),
        CompressionOp::TopH { h } => {
            let mut out = ParamVec::zeros(d);
            for i in top_indices(x, h.min(d)) {
                out[i] = x[i];
            }
            out
        }
        CompressionOp::RandH { h, scaled } => {
            let h = h.min(d);
            let scale = if scaled { d as f64 / h as f64 } else { 1.0 };
            let mut out = ParamVec::zeros(d);
            let idx = sample_indices(d, h, Replacement::Without, rng).expect("1 <= h <= d");
            for i in idx {
                out[i] = scale * x[i];
            }
            out
        }
        CompressionOp::StochasticRound { delta } => x.map(|xi| round_stochastic(xi, delta, rng.random::<f64>())),
        CompressionOp::DeterministicRound { delta } => x.map(|xi| round_deterministic(xi, delta)),
    }
}

/// `C(H(w, X))`.
#[derive(Clone, Debug)]
pub struct CompressedField<F> {
    inner: F,
    op: CompressionOp,
}

impl<F: FieldOracle> CompressedField<F> {
    pub fn new(inner: F, op: CompressionOp) -> Result<Self> {
        op.validate(inner.dim())?;
        Ok(Self { inner, op })
    }
}

pub fn wrap_compressed_field<F: FieldOracle>(inner: F, op: CompressionOp) -> Result<CompressedField<F>> {
    CompressedField::new(inner, op)
}

impl<F: FieldOracle> FieldOracle for CompressedField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        let raw = self.inner.sample(w, rng);
        compress(&self.op, &raw, rng)
    }

    /// The inner mean field, reported for monitoring.
    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        self.inner.mean_field(w)
    }

    fn required_step(&self) -> Option<f64> {
        self.inner.required_step()
    }
}

/// `H(C(w), X)`.
#[derive(Clone, Debug)]
pub struct PerturbedIterate<F> {
    inner: F,
    op: CompressionOp,
}

impl<F: FieldOracle> PerturbedIterate<F> {
    pub fn new(inner: F, op: CompressionOp) -> Result<Self> {
        op.validate(inner.dim())?;
        Ok(Self { inner, op })
    }
}

pub fn wrap_perturbed_iterate<F: FieldOracle>(inner: F, op: CompressionOp) -> Result<PerturbedIterate<F>> {
    PerturbedIterate::new(inner, op)
}

impl<F: FieldOracle> FieldOracle for PerturbedIterate<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        let point = compress(&self.op, w, rng);
        self.inner.sample(&point, rng)
    }

    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        self.inner.mean_field(w)
    }

    fn required_step(&self) -> Option<f64> {
        self.inner.required_step()
    }
}

/// `(C(w + γ̄ H(w, X)) − w)/γ̄`, only meaningful with the constant step `γ̄`.
#[derive(Clone, Debug)]
pub struct LowPrecision<F> {
    inner: F,
    op: CompressionOp,
    gamma_bar: f64,
}

impl<F: FieldOracle> LowPrecision<F> {
    pub fn new(inner: F, op: CompressionOp, gamma_bar: f64) -> Result<Self> {
        op.validate(inner.dim())?;
        if !(gamma_bar > 0.0 && gamma_bar.is_finite()) {
            return Err(Error::InvalidSchedule(format!("low-precision step must be positive, got {gamma_bar}")));
        }
        Ok(Self { inner, op, gamma_bar })
    }

    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }
}

pub fn wrap_low_precision<F: FieldOracle>(inner: F, op: CompressionOp, gamma_bar: f64) -> Result<LowPrecision<F>> {
    LowPrecision::new(inner, op, gamma_bar)
}

impl<F: FieldOracle> FieldOracle for LowPrecision<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, w: &ParamVec, rng: &mut SaRng) -> ParamVec {
        let raw = self.inner.sample(w, rng);
        let target = w + &raw * self.gamma_bar;
        (compress(&self.op, &target, rng) - w) / self.gamma_bar
    }

    fn mean_field(&self, w: &ParamVec) -> Option<ParamVec> {
        self.inner.mean_field(w)
    }

    fn required_step(&self) -> Option<f64> {
        Some(self.gamma_bar)
    }
}

/// Where the compressor sits in the recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Field,
    Perturbed,
    LowPrecision,
}

/// Free parameters and problem constants some placements need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationExtras {
    /// Young parameters of the contractive bound; unbounded by default.
    pub zeta1: Ext,
    pub zeta2: Ext,
    /// Young parameter of the perturbed-iterate bound; one by default.
    pub zeta: Ext,
    /// Lipschitz constant of the mean field `h`.
    pub lip_h: Option<f64>,
    /// Lipschitz constant of `w ↦ E[H(w, X)]` given the past.
    pub lip_mean_h: Option<f64>,
    /// Constant step of the low-precision recursion.
    pub gamma_bar: Option<f64>,
}

impl Default for PropagationExtras {
    fn default() -> Self {
        Self {
            zeta1: Ext::Unbounded,
            zeta2: Ext::Unbounded,
            zeta: Ext::Finite(1.0),
            lip_h: None,
            lip_mean_h: None,
            gamma_bar: None,
        }
    }
}

fn finite_or_violation(x: Ext, what: &str) -> Result<f64> {
    x.finite().ok_or_else(|| {
        Error::HypothesisViolated(format!(
            "{what} is unbounded: an infinite Young parameter multiplies a positive constant"
        ))
    })
}

/// Constants of `C(H)` for a contractive compressor with parameter `δ`.
pub fn contractive_constants(rc: &RegimeConstants, delta: f64, zeta1: Ext, zeta2: Ext) -> Result<RegimeConstants> {
    let keep = 1.0 - delta;
    let inv1 = zeta1.one_plus_inverse();
    let inv2 = zeta2.one_plus_inverse();
    let tau_of = |tau: f64, c_h: f64, s2: f64, what: &str| -> Result<f64> {
        let a = finite_or_violation(zeta1.one_plus().times(tau), what)?;
        let b = finite_or_violation(zeta2.one_plus().times(tau), what)?;
        Ok(a + inv1 * keep * b + inv2 * inv1 * keep * c_h + inv1 * keep * s2)
    };
    let sigma_of = |tau: f64, c_h: f64, s2: f64, what: &str| -> Result<f64> {
        let b = finite_or_violation(zeta2.one_plus().times(tau), what)?;
        Ok(keep * (b + inv2 * c_h) + keep * s2)
    };
    Ok(RegimeConstants {
        tau0: tau_of(rc.tau0, rc.c_h0, rc.sigma2_0, "tau0")?,
        tau1: tau_of(rc.tau1, rc.c_h1, rc.sigma2_1, "tau1")?,
        sigma2_0: sigma_of(rc.tau0, rc.c_h0, rc.sigma2_0, "sigma2_0")?,
        sigma2_1: sigma_of(rc.tau1, rc.c_h1, rc.sigma2_1, "sigma2_1")?,
        ..*rc
    })
}

/// Constants of `C(H)` for an unbiased compressor with parameter `ω`.
pub fn unbiased_constants(rc: &RegimeConstants, omega: f64) -> RegimeConstants {
    RegimeConstants {
        sigma2_0: (1.0 + omega) * rc.sigma2_0 + 2.0 * omega * (rc.c_h0 + rc.tau0),
        sigma2_1: (1.0 + omega) * rc.sigma2_1 + 2.0 * omega * (rc.c_h1 + rc.tau1),
        ..*rc
    }
}

/// Constants of `H(C(w))` for a compressor with uniform error `κ`.
pub fn perturbed_constants(
    rc: &RegimeConstants,
    kappa: f64,
    zeta: Ext,
    lip_h: f64,
    lip_mean_h: f64,
) -> Result<RegimeConstants> {
    if rc.tau1 != 0.0 || rc.sigma2_1 != 0.0 {
        return Err(Error::HypothesisViolated("perturbed-iterate constants need tau1 = 0 and sigma2_1 = 0".into()));
    }
    Ok(RegimeConstants {
        tau0: finite_or_violation(zeta.one_plus().times(rc.tau0), "tau0")?
            + zeta.one_plus_inverse() * lip_h * lip_h * kappa,
        tau1: 0.0,
        sigma2_0: rc.sigma2_0 + lip_mean_h * lip_mean_h * kappa,
        sigma2_1: 0.0,
        ..*rc
    })
}

/// Constants of the low-precision field for a linear quantizer with resolution `Δ` in
/// dimension `d` and constant step `γ̄`.
pub fn low_precision_constants(rc: &RegimeConstants, delta: f64, d: usize, gamma_bar: f64) -> RegimeConstants {
    let f = delta * (d as f64).sqrt() / (2.0 * gamma_bar);
    RegimeConstants {
        sigma2_0: rc.sigma2_0 + f * (3.0 + rc.tau0 + rc.c_h0 + rc.sigma2_0),
        sigma2_1: rc.sigma2_1 + f * (rc.tau1 + rc.c_h1 + rc.sigma2_1),
        ..*rc
    }
}

/// Transforms the field constants of `rc` for a compressor placed as `placement`.
///
/// On the field placement an unbiased certificate is preferred, since it keeps the bias
/// unchanged; otherwise the contractive bound is used.
pub fn propagate_constants(
    profile: &CompressorProfile,
    placement: Placement,
    rc: &RegimeConstants,
    extras: &PropagationExtras,
) -> Result<RegimeConstants> {
    let missing = |what: &str| Error::HypothesisViolated(format!("{placement:?} placement needs {what}"));
    match placement {
        Placement::Field => {
            let mut out = if let Some(omega) = profile.unbiased_omega {
                unbiased_constants(rc, omega)
            } else if let Some(delta) = profile.contractive_delta {
                contractive_constants(rc, delta, extras.zeta1, extras.zeta2)?
            } else {
                return Err(missing("a contractive or unbiased certificate"));
            };
            // A deterministic compressor applied to a noiseless field is itself noiseless; the
            // general bound would charge it a variance it cannot have.
            if profile.deterministic && rc.sigma2_0 == 0.0 && rc.sigma2_1 == 0.0 {
                out.sigma2_0 = 0.0;
                out.sigma2_1 = 0.0;
            }
            Ok(out)
        }
        Placement::Perturbed => {
            let kappa = profile.uniform_kappa.ok_or_else(|| missing("a uniform-error certificate"))?;
            let lip_h = extras.lip_h.ok_or_else(|| missing("the Lipschitz constant of h"))?;
            let lip_mean_h =
                extras.lip_mean_h.ok_or_else(|| missing("the Lipschitz constant of the conditional mean"))?;
            perturbed_constants(rc, kappa, extras.zeta, lip_h, lip_mean_h)
        }
        Placement::LowPrecision => {
            let delta = profile.linear_delta.ok_or_else(|| missing("a linear-quantizer certificate"))?;
            let gamma_bar = extras.gamma_bar.ok_or_else(|| missing("the constant step"))?;
            Ok(low_precision_constants(rc, delta, profile.dim, gamma_bar))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems_sgd::SgdOracle;
    use crate::problems_sgd::{FiniteSumProblem, MinibatchSpec};
    use crate::sa_core::replicate_rng;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn v(xs: &[f64]) -> ParamVec {
        DVector::from_vec(xs.to_vec())
    }

    fn gauss(d: usize, rng: &mut ChaCha8Rng) -> ParamVec {
        DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
    }

    fn base_rc() -> RegimeConstants {
        RegimeConstants {
            c_h0: 0.0,
            c_h1: 1.0,
            tau0: 0.0,
            tau1: 0.0,
            sigma2_0: 0.0,
            sigma2_1: 0.0,
            l_v: 1.0,
            rho: 1.0,
            c_v: Ext::Finite(1.0),
            v_star: 0.0,
        }
    }

    #[test]
    fn top1_definition() {
        let mut rng = replicate_rng(0, 0);
        assert_eq!(compress(&CompressionOp::TopH { h: 1 }, &v(&[3.0, -1.0, 2.0]), &mut rng), v(&[3.0, 0.0, 0.0]));
        assert_eq!(compress(&CompressionOp::TopH { h: 1 }, &v(&[1.0, -1.0, 1.0]), &mut rng), v(&[1.0, 0.0, 0.0]));
        assert_eq!(compress(&CompressionOp::TopH { h: 2 }, &v(&[1.0, -4.0, 2.0]), &mut rng), v(&[0.0, -4.0, 2.0]));
    }

    #[test]
    fn deterministic_rounding_examples() {
        assert_eq!(round_deterministic(0.6, 1.0), 1.0);
        assert_eq!(round_deterministic(-0.4, 1.0), 0.0);
        assert_eq!(round_deterministic(0.5, 1.0), 1.0);
        assert_eq!(round_deterministic(-0.5, 1.0), -1.0);
        assert_eq!(round_deterministic(1.26, 0.25), 1.25);
    }

    #[test]
    fn stochastic_rounding_is_bernoulli() {
        let mut rng = replicate_rng(1, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| round_stochastic(0.3, 1.0, rng.random::<f64>())).sum::<f64>() / n as f64;
        assert!((mean - 0.3).abs() <= 3.0 * (0.21f64 / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn stochastic_rounding_is_unbiased_on_a_grid() {
        // Exact expectation: the up-probability is the fractional part.
        for i in -40..=40 {
            let x = i as f64 * 0.0371;
            let delta = 0.25;
            let low = (x / delta).floor();
            let p = x / delta - low;
            let mean = p * delta * (low + 1.0) + (1.0 - p) * delta * low;
            assert!((mean - x).abs() < 1e-14);
        }
    }

    #[test]
    fn rounding_outputs_lie_on_the_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let delta = 0.3;
        for op in [CompressionOp::StochasticRound { delta }, CompressionOp::DeterministicRound { delta }] {
            for _ in 0..200 {
                let y = compress(&op, &gauss(5, &mut rng), &mut rng);
                for yi in y.iter() {
                    let k = yi / delta;
                    assert!((k - k.round()).abs() < 1e-9, "{op}: {yi}");
                }
            }
        }
    }

    #[test]
    fn stochastic_rounding_fixes_lattice_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = CompressionOp::StochasticRound { delta: 0.5 };
        let x = v(&[1.5, -2.0, 0.0, 3.5]);
        for _ in 0..1000 {
            assert_eq!(compress(&op, &x, &mut rng), x);
        }
    }

    #[test]
    fn sparsifiers_keep_at_most_h_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for op in [
            CompressionOp::TopH { h: 3 },
            CompressionOp::RandH { h: 3, scaled: true },
            CompressionOp::RandH { h: 3, scaled: false },
        ] {
            for _ in 0..100 {
                let y = compress(&op, &gauss(8, &mut rng), &mut rng);
                assert!(y.iter().filter(|&&t| t != 0.0).count() <= 3);
            }
        }
    }

    #[test]
    fn top_h_contraction_and_tightness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, h) = (10, 3);
        let op = CompressionOp::TopH { h };
        let delta = op.profile(d).unwrap().contractive_delta.unwrap();
        for _ in 0..10_000 {
            let x = gauss(d, &mut rng);
            let err = (compress(&op, &x, &mut rng) - &x).norm_squared();
            assert!(err <= (1.0 - delta) * x.norm_squared() * (1.0 + 1e-12));
        }
        let flat = DVector::from_element(d, -0.7);
        let err = (compress(&op, &flat, &mut rng) - &flat).norm_squared();
        assert!((err - (1.0 - delta) * flat.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn scaled_rand_h_is_unbiased_with_its_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (d, h) = (6, 2);
        let op = CompressionOp::RandH { h, scaled: true };
        let omega = op.profile(d).unwrap().unbiased_omega.unwrap();
        let x = gauss(d, &mut rng);
        // Every h-subset is equally likely, so the exact law is the average over subsets.
        let n = 60_000;
        let mut mean = ParamVec::zeros(d);
        let mut err = 0.0;
        for _ in 0..n {
            let y = compress(&op, &x, &mut rng);
            err += (&y - &x).norm_squared();
            mean += y;
        }
        mean /= n as f64;
        err /= n as f64;
        let exact_err = omega * x.norm_squared();
        assert!((err - exact_err).abs() < 0.05 * exact_err, "{err} vs {exact_err}");
        for i in 0..d {
            let se = (x[i] * x[i] * omega / n as f64).sqrt();
            assert!((mean[i] - x[i]).abs() <= 4.0 * se + 1e-12);
        }
    }

    #[test]
    fn deterministic_rounding_uniform_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 4;
        let delta = 0.2;
        let op = CompressionOp::DeterministicRound { delta };
        let kappa = op.profile(d).unwrap().uniform_kappa.unwrap();
        for _ in 0..10_000 {
            let x = gauss(d, &mut rng) * 5.0;
            let err = (compress(&op, &x, &mut rng) - &x).norm_squared();
            assert!(err <= d as f64 * delta * delta / 4.0 + 1e-12);
            assert!(err <= kappa);
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["identity", "top:3", "rand:2", "rand:2:scaled", "sround:0.5", "dround:0.125"] {
            let op: CompressionOp = s.parse().unwrap();
            assert_eq!(op.to_string(), s);
        }
        for s in ["top", "top:x", "rand:2:foo", "sround:-1", "dround:0", "bogus:1"] {
            assert!(s.parse::<CompressionOp>().is_err(), "{s}");
        }
    }

    #[test]
    fn contractive_constants_for_a_top1_gradient() {
        let d = 7;
        let p = CompressionOp::TopH { h: 1 }.profile(d).unwrap();
        let rc = propagate_constants(&p, Placement::Field, &base_rc(), &PropagationExtras::default()).unwrap();
        assert_eq!((rc.tau0, rc.sigma2_0, rc.sigma2_1), (0.0, 0.0, 0.0));
        assert!((rc.tau1 - (1.0 - 1.0 / d as f64)).abs() < 1e-15);
        assert_eq!((rc.c_h0, rc.c_h1), (0.0, 1.0));
    }

    #[test]
    fn contractive_constants_hand_expansion() {
        let rc =
            RegimeConstants { c_h0: 0.5, c_h1: 2.0, tau0: 0.1, tau1: 0.2, sigma2_0: 0.3, sigma2_1: 0.4, ..base_rc() };
        let (z1, z2, delta) = (2.0, 0.5, 0.25);
        let out = contractive_constants(&rc, delta, Ext::Finite(z1), Ext::Finite(z2)).unwrap();
        let k = 1.0 - delta;
        let t0 = (1.0 + z1 + (1.0 + z2) * (1.0 + 1.0 / z1) * k) * 0.1
            + (1.0 + 1.0 / z2) * (1.0 + 1.0 / z1) * k * 0.5
            + (1.0 + 1.0 / z1) * k * 0.3;
        let s1 = k * ((1.0 + z2) * 0.2 + (1.0 + 1.0 / z2) * 2.0) + k * 0.4;
        assert!((out.tau0 - t0).abs() < 1e-14);
        assert!((out.sigma2_1 - s1).abs() < 1e-14);
    }

    #[test]
    fn unbounded_zeta_with_bias_is_rejected() {
        let rc = RegimeConstants { tau0: 0.1, ..base_rc() };
        assert!(matches!(
            contractive_constants(&rc, 0.5, Ext::Unbounded, Ext::Finite(1.0)),
            Err(Error::HypothesisViolated(_))
        ));
    }

    #[test]
    fn identity_unbiased_leaves_constants() {
        let rc = RegimeConstants { tau0: 0.1, sigma2_0: 0.2, c_h0: 0.3, ..base_rc() };
        assert_eq!(unbiased_constants(&rc, 0.0), rc);
        let p = CompressionOp::Identity.profile(3).unwrap();
        assert_eq!(propagate_constants(&p, Placement::Field, &rc, &PropagationExtras::default()).unwrap(), rc);
    }

    #[test]
    fn unbiased_variance_inflation() {
        let rc = RegimeConstants { c_h0: 1.0, tau0: 0.5, sigma2_0: 2.0, c_h1: 3.0, sigma2_1: 1.0, ..base_rc() };
        let out = unbiased_constants(&rc, 2.0);
        assert_eq!(out.sigma2_0, 3.0 * 2.0 + 4.0 * 1.5);
        assert_eq!(out.sigma2_1, 3.0 * 1.0 + 4.0 * 3.0);
        assert_eq!((out.tau0, out.tau1), (rc.tau0, rc.tau1));
    }

    #[test]
    fn perturbed_constants_straight_through() {
        let rc = RegimeConstants { sigma2_0: 0.7, ..base_rc() };
        let out = perturbed_constants(&rc, 0.2, Ext::Unbounded, 3.0, 3.0).unwrap();
        assert!((out.tau0 - 9.0 * 0.2).abs() < 1e-15);
        assert!((out.sigma2_0 - (0.7 + 9.0 * 0.2)).abs() < 1e-15);
        let biased = RegimeConstants { tau1: 0.1, ..rc };
        assert!(perturbed_constants(&biased, 0.2, Ext::Unbounded, 3.0, 3.0).is_err());
        let p = CompressionOp::DeterministicRound { delta: 0.5 }.profile(2).unwrap();
        assert!(propagate_constants(&p, Placement::Perturbed, &rc, &PropagationExtras::default()).is_err());
    }

    #[test]
    fn low_precision_variance_term() {
        let rc = RegimeConstants { c_h0: 0.2, tau0: 0.1, sigma2_0: 0.4, ..base_rc() };
        let (delta, d, g) = (0.01, 16, 0.05);
        let p = CompressionOp::StochasticRound { delta }.profile(d).unwrap();
        let extras = PropagationExtras { gamma_bar: Some(g), ..Default::default() };
        let out = propagate_constants(&p, Placement::LowPrecision, &rc, &extras).unwrap();
        let f = delta * 4.0 / (2.0 * g);
        assert!((out.sigma2_0 - rc.sigma2_0 - f * (3.0 + 0.1 + 0.2 + 0.4)).abs() < 1e-14);
        assert!((out.sigma2_1 - f * 1.0).abs() < 1e-14);
        assert_eq!((out.tau0, out.c_h0), (rc.tau0, rc.c_h0));
    }

    fn quad3() -> FiniteSumProblem {
        let q = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.0]);
        FiniteSumProblem::shared(q, vec![v(&[1.0, -2.0, 0.5])]).unwrap()
    }

    #[test]
    fn identity_and_full_projection_leave_samples_unchanged() {
        let p = quad3();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let w = v(&[0.1, 0.2, -0.3]);
        for op in [CompressionOp::Identity, CompressionOp::TopH { h: 3 }] {
            let f = wrap_compressed_field(inner, op).unwrap();
            let (mut a, mut b) = (replicate_rng(9, 0), replicate_rng(9, 0));
            assert_eq!(f.sample(&w, &mut a), inner.sample(&w, &mut b));
        }
        let f = wrap_perturbed_iterate(inner, CompressionOp::Identity).unwrap();
        assert_eq!(f.sample(&w, &mut replicate_rng(1, 1)), inner.sample(&w, &mut replicate_rng(1, 1)));
        let f = wrap_low_precision(inner, CompressionOp::Identity, 0.125).unwrap();
        assert!((f.sample(&w, &mut replicate_rng(1, 1)) - inner.sample(&w, &mut replicate_rng(1, 1))).amax() < 1e-12);
    }

    #[test]
    fn top1_gradient_is_gauss_southwell() {
        let p = quad3();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let f = wrap_compressed_field(inner, CompressionOp::TopH { h: 1 }).unwrap();
        let gamma = 0.1;
        let mut w = v(&[2.0, -1.0, 0.5]);
        let mut hand = w.clone();
        let mut rng = replicate_rng(0, 0);
        for _ in 0..50 {
            w += f.sample(&w, &mut rng) * gamma;
            let g = p.full_gradient(&hand);
            let mut best = 0;
            for i in 1..3 {
                if g[i].abs() > g[best].abs() {
                    best = i;
                }
            }
            hand[best] -= gamma * g[best];
            assert_eq!(w, hand);
        }
    }

    #[test]
    fn perturbed_iterate_at_lattice_points() {
        let p = quad3();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let f = wrap_perturbed_iterate(inner, CompressionOp::DeterministicRound { delta: 0.5 }).unwrap();
        let w = v(&[1.5, -0.5, 2.0]);
        assert_eq!(f.sample(&w, &mut replicate_rng(0, 0)), -p.full_gradient(&w));
    }

    #[test]
    fn perturbed_iterate_bias_in_one_dimension() {
        // Exact enumeration over a grid of offsets: the bias is L·(Q(w) − w) and its square is
        // at most L²Δ²/4 ≤ L²κ.
        let l = 2.0;
        let p = FiniteSumProblem::shared(DMatrix::from_element(1, 1, l), vec![v(&[0.3])]).unwrap();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let delta = 0.5;
        let op = CompressionOp::DeterministicRound { delta };
        let kappa = op.profile(1).unwrap().uniform_kappa.unwrap();
        let f = wrap_perturbed_iterate(inner, op).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=200 {
            let w = v(&[-1.0 + i as f64 * 0.01]);
            let bias = (f.sample(&w, &mut replicate_rng(0, 0)) + p.full_gradient(&w)).norm_squared();
            worst = worst.max(bias);
        }
        assert!(worst <= l * l * delta * delta / 4.0 + 1e-12);
        assert!(worst <= l * l * kappa);
    }

    #[test]
    fn low_precision_reproduces_the_rounded_recursion() {
        let p = quad3();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let op = CompressionOp::StochasticRound { delta: 0.25 };
        let g = 0.125;
        let f = wrap_low_precision(inner, op, g).unwrap();
        let mut w = v(&[0.5, 0.25, -1.0]);
        let (mut r1, mut r2) = (replicate_rng(3, 0), replicate_rng(3, 0));
        let mut direct = w.clone();
        for _ in 0..100 {
            w += f.sample(&w, &mut r1) * g;
            let raw = inner.sample(&direct, &mut r2);
            direct = compress(&op, &(&direct + raw * g), &mut r2);
            assert!((&w - &direct).amax() < 1e-12);
        }
    }

    #[test]
    fn low_precision_unbiased_at_lattice_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = FiniteSumProblem::random_shared(5, 3, 0.5, 1.0, 1.0, &mut rng).unwrap();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let f = wrap_low_precision(inner, CompressionOp::StochasticRound { delta: 0.1 }, 0.3).unwrap();
        let w = v(&[0.5, -0.2, 1.0]);
        let h = -p.full_gradient(&w);
        let n = 100_000;
        let mut r = replicate_rng(12, 0);
        let draws: Vec<ParamVec> = (0..n).map(|_| f.sample(&w, &mut r)).collect();
        for i in 0..3 {
            let m = draws.iter().map(|x| x[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - h[i]).abs() <= 3.0 * (var / n as f64).sqrt(), "coord {i}");
        }
    }

    #[test]
    fn low_precision_vanishing_resolution() {
        let p = quad3();
        let inner = SgdOracle::new(&p, MinibatchSpec::single()).unwrap();
        let f = wrap_low_precision(inner, CompressionOp::StochasticRound { delta: 1e-12 }, 0.1).unwrap();
        let w = v(&[0.3, 0.1, -0.2]);
        assert!((f.sample(&w, &mut replicate_rng(0, 0)) + p.full_gradient(&w)).amax() < 1e-6);
        assert_eq!(f.required_step(), Some(0.1));
    }
}
