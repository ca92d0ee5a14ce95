use crate::{Error, Result};

/// A non-negative quantity that may be unbounded.
///
/// Used for `γ_max`, `c_V` and the Young-inequality parameters. Keeping the unbounded case as
/// its own variant avoids `0 · ∞ = NaN` inside the constant algebra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ext {
    Finite(f64),
    Unbounded,
}

impl Ext {
    pub fn finite(self) -> Option<f64> {
        match self {
            Ext::Finite(x) => Some(x),
            Ext::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Ext::Unbounded)
    }

    /// `self ∧ x`; the unbounded variant returns `x`.
    pub fn min_with(self, x: f64) -> f64 {
        match self {
            Ext::Finite(g) => g.min(x),
            Ext::Unbounded => x,
        }
    }

    pub fn half(self) -> Ext {
        self.scale(0.5)
    }

    pub fn scale(self, c: f64) -> Ext {
        match self {
            Ext::Finite(g) => Ext::Finite(c * g),
            Ext::Unbounded => Ext::Unbounded,
        }
    }

    /// Whether `x` lies strictly below this bound.
    pub fn exceeds(self, x: f64) -> bool {
        match self {
            Ext::Finite(g) => x < g,
            Ext::Unbounded => true,
        }
    }

    /// `self · x` with the convention `∞ · 0 = 0`.
    pub fn times(self, x: f64) -> Ext {
        match self {
            Ext::Finite(g) => Ext::Finite(g * x),
            Ext::Unbounded if x == 0.0 => Ext::Finite(0.0),
            Ext::Unbounded => Ext::Unbounded,
        }
    }

    /// `1 + 1/ζ`, equal to one when `ζ` is unbounded.
    pub fn one_plus_inverse(self) -> f64 {
        match self {
            Ext::Finite(z) => 1.0 + 1.0 / z,
            Ext::Unbounded => 1.0,
        }
    }

    /// `1 + ζ`.
    pub fn one_plus(self) -> Ext {
        match self {
            Ext::Finite(z) => Ext::Finite(1.0 + z),
            Ext::Unbounded => Ext::Unbounded,
        }
    }
}

/// The constants of the field assumption (bias `τ`, variance `σ²`, field growth `c_h`) and of
/// the Lyapunov assumption (`L_V`, drift `ρ`, gradient growth `c_V`, lower bound `V_*`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeConstants {
    pub c_h0: f64,
    pub c_h1: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub sigma2_0: f64,
    pub sigma2_1: f64,
    pub l_v: f64,
    pub rho: f64,
    pub c_v: Ext,
    pub v_star: f64,
}

impl RegimeConstants {
    pub fn is_unbiased(&self) -> bool {
        self.tau0 == 0.0 && self.tau1 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c_h0", self.c_h0),
            ("c_h1", self.c_h1),
            ("tau0", self.tau0),
            ("tau1", self.tau1),
            ("sigma2_0", self.sigma2_0),
            ("sigma2_1", self.sigma2_1),
        ];
        for (name, value) in named {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::HypothesisViolated(format!("{name} = {value} must be finite and non-negative")));
            }
        }
        if !(self.l_v > 0.0 && self.l_v.is_finite()) {
            return Err(Error::HypothesisViolated(format!("L_V = {} must be positive", self.l_v)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::HypothesisViolated(format!("rho = {} must be positive", self.rho)));
        }
        if let Ext::Finite(c) = self.c_v {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::HypothesisViolated(format!("c_V = {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Constants derived from a [`RegimeConstants`] bundle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    pub b0: f64,
    pub b1: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub gamma_max: Ext,
    /// Non-vanishing bias floor `B = 2 b0 / (ρ − b1)`.
    pub bias_floor: f64,
    /// `E V(w_0) − V_*`, zero until set with [`DerivedConstants::with_v_bar`].
    pub v_bar: f64,
    pub rho_minus_b1: f64,
    pub l_v: f64,
}

impl DerivedConstants {
    pub fn with_v_bar(mut self, v_bar: f64) -> Self {
        self.v_bar = v_bar;
        self
    }

    /// `ω = 2(ρ − b1) − γ L_V η1`, the weight attached to step `γ`.
    pub fn omega(&self, gamma: f64) -> f64 {
        2.0 * self.rho_minus_b1 - gamma * self.l_v * self.eta1
    }
}

/// Turns the assumption constants into the bias terms `b0, b1`, the second-moment constants
/// `η0, η1`, the step limit `γ_max` and the bias floor `B`.
pub fn derive_constants(rc: &RegimeConstants) -> Result<DerivedConstants> {
    rc.validate()?;
    let (st0, st1) = (rc.tau0.sqrt(), rc.tau1.sqrt());
    let (b0, b1) = match rc.c_v {
        Ext::Unbounded if !rc.is_unbiased() => return Err(Error::InfiniteCvWithBias { tau0: rc.tau0, tau1: rc.tau1 }),
        Ext::Unbounded => (0.0, 0.0),
        Ext::Finite(c) => (c * st0 / 2.0, c * (st0 / 2.0 + st1)),
    };
    if b1 >= rc.rho {
        return Err(Error::BiasTooLarge { b1, rho: rc.rho });
    }
    let (sc0, sc1) = (rc.c_h0.sqrt(), rc.c_h1.sqrt());
    let eta =
        |sigma2: f64, tau: f64, c_h: f64| sigma2 + tau + c_h + c_h.sqrt() * (st0 + st1) + tau.sqrt() * (sc0 + sc1);
    let eta0 = eta(rc.sigma2_0, rc.tau0, rc.c_h0);
    let eta1 = eta(rc.sigma2_1, rc.tau1, rc.c_h1);
    let rho_minus_b1 = rc.rho - b1;
    let gamma_max = if eta1 == 0.0 { Ext::Unbounded } else { Ext::Finite(2.0 * rho_minus_b1 / (rc.l_v * eta1)) };
    Ok(DerivedConstants {
        b0,
        b1,
        eta0,
        eta1,
        gamma_max,
        bias_floor: 2.0 * b0 / rho_minus_b1,
        v_bar: 0.0,
        rho_minus_b1,
        l_v: rc.l_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uso(c_h: (f64, f64), sigma2: (f64, f64), l_v: f64, rho: f64, c_v: Ext) -> RegimeConstants {
        RegimeConstants {
            c_h0: c_h.0,
            c_h1: c_h.1,
            tau0: 0.0,
            tau1: 0.0,
            sigma2_0: sigma2.0,
            sigma2_1: sigma2.1,
            l_v,
            rho,
            c_v,
            v_star: 0.0,
        }
    }

    #[test]
    fn sgd_nonconvex_row() {
        // smooth nonconvex SGD: eta1 = 1, gamma_max = 2/L, no bias floor
        let l = 4.0;
        let dc = derive_constants(&uso((0.0, 1.0), (0.3, 0.0), l, 1.0, Ext::Finite(1.0))).unwrap();
        assert_eq!(dc.eta1, 1.0);
        assert_eq!(dc.gamma_max, Ext::Finite(2.0 / l));
        assert_eq!(dc.bias_floor, 0.0);
    }

    #[test]
    fn td_row_gamma_max() {
        // lambda = 0.5: c_h1 = (1+λ)², sigma2_1 = 2(1+λ)², rho = 1 − λ, L_V = 1
        let lam: f64 = 0.5;
        let rc = uso((0.0, (1.0 + lam).powi(2)), (36.0, 2.0 * (1.0 + lam).powi(2)), 1.0, 1.0 - lam, Ext::Finite(3.0));
        let dc = derive_constants(&rc).unwrap();
        assert!((dc.eta1 - 6.75).abs() < 1e-12);
        let expected = 2.0 * (1.0 - lam) / (3.0 * (1.0 + lam).powi(2));
        assert!((dc.gamma_max.finite().unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.148148).abs() < 1e-5);
    }

    #[test]
    fn unbiased_oracle_collapses_eta() {
        let dc = derive_constants(&uso((0.7, 0.2), (1.5, 0.4), 1.0, 1.0, Ext::Finite(2.0))).unwrap();
        assert_eq!((dc.b0, dc.b1), (0.0, 0.0));
        assert!((dc.eta0 - 2.2).abs() < 1e-12);
        assert!((dc.eta1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn eta_with_bias_matches_hand_expansion() {
        let rc = RegimeConstants {
            c_h0: 1.0,
            c_h1: 4.0,
            tau0: 0.04,
            tau1: 0.01,
            sigma2_0: 0.5,
            sigma2_1: 0.25,
            l_v: 2.0,
            rho: 1.0,
            c_v: Ext::Finite(2.0),
            v_star: 0.0,
        };
        let dc = derive_constants(&rc).unwrap();
        // b0 = 2·0.2/2, b1 = 2·(0.1 + 0.1)
        assert!((dc.b0 - 0.2).abs() < 1e-12);
        assert!((dc.b1 - 0.4).abs() < 1e-12);
        // eta0 = 0.5 + 0.04 + 1 + 1·(0.2+0.1) + 0.2·(1+2)
        assert!((dc.eta0 - 2.44).abs() < 1e-12);
        // eta1 = 0.25 + 0.01 + 4 + 2·0.3 + 0.1·3
        assert!((dc.eta1 - 5.16).abs() < 1e-12);
        assert!((dc.gamma_max.finite().unwrap() - 2.0 * 0.6 / (2.0 * 5.16)).abs() < 1e-12);
        assert!((dc.bias_floor - 0.4 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_eta1_means_unbounded_step() {
        let dc = derive_constants(&uso((1.0, 0.0), (1.0, 0.0), 1.0, 1.0, Ext::Unbounded)).unwrap();
        assert_eq!(dc.gamma_max, Ext::Unbounded);
        assert_eq!(dc.gamma_max.min_with(0.3), 0.3);
    }

    #[test]
    fn bias_checks() {
        let mut rc = uso((0.0, 1.0), (0.0, 0.0), 1.0, 1.0, Ext::Unbounded);
        rc.tau0 = 0.1;
        assert!(matches!(derive_constants(&rc), Err(Error::InfiniteCvWithBias { .. })));
        rc.c_v = Ext::Finite(1.0);
        rc.tau1 = 1.0;
        assert!(matches!(derive_constants(&rc), Err(Error::BiasTooLarge { .. })));
    }

    #[test]
    fn ext_arithmetic_guards_zero_times_infinity() {
        assert_eq!(Ext::Unbounded.times(0.0), Ext::Finite(0.0));
        assert_eq!(Ext::Unbounded.times(1.0), Ext::Unbounded);
        assert_eq!(Ext::Unbounded.one_plus_inverse(), 1.0);
        assert!(Ext::Unbounded.exceeds(1e300));
        assert!(!Ext::Finite(1.0).exceeds(1.0));
    }
}
