use super::constants::{DerivedConstants, Ext, RegimeConstants};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    High,
    Low,
}

/// Iterations and constant step that guarantee `E W(w_R) ≤ ε` for `R` uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonBudget {
    pub t: u64,
    pub gamma: f64,
    pub regime: Precision,
}

/// `T(ε) = 8V̄η0L_V/(ε²ρ²) ∨ 8V̄/(γ_max ε ρ)` for an unbiased oracle.
///
/// The high-precision regime is `ε ≤ 2η0/η1` and uses `γ = ρε/(2η0L_V)`; otherwise the step is
/// `γ_max/2`. With `η0 = 0` every ε is in the low-precision regime.
pub fn epsilon_budget(dc: &DerivedConstants, rc: &RegimeConstants, eps: f64) -> Result<EpsilonBudget> {
    if !rc.is_unbiased() {
        return Err(Error::BiasedOracle { tau0: rc.tau0, tau1: rc.tau1 });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::EpsilonOutOfRange { eps, upper: f64::INFINITY });
    }
    let rho = dc.rho_minus_b1;
    let (v, eta0, l) = (dc.v_bar, dc.eta0, dc.l_v);
    let noise = 8.0 * v * eta0 * l / (eps * eps * rho * rho);
    let drift = match dc.gamma_max {
        Ext::Finite(g) => 8.0 * v / (g * eps * rho),
        Ext::Unbounded => 0.0,
    };
    let high = eta0 > 0.0 && (dc.eta1 == 0.0 || eps <= 2.0 * eta0 / dc.eta1);
    let (regime, gamma) = if high {
        (Precision::High, rho * eps / (2.0 * eta0 * l))
    } else {
        let g = dc.gamma_max.half().finite().ok_or_else(|| {
            Error::RegimeUnavailable("noiseless oracle with unbounded step: no finite budget step".into())
        })?;
        (Precision::Low, g)
    };
    Ok(EpsilonBudget { t: noise.max(drift).ceil() as u64, gamma, regime })
}
