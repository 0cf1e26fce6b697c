//! Basic reproduction numbers of the periodic linearized infection
//! equation and the perturbation bound eps_sup.
//!
//! R0^eps is characterized as the unique r > 0 for which scaling the
//! delayed infection term by 1/r makes the Poincare map of
//! I' = (1/r) e^{-int gamma_L} beta(t-tau)(S0 - eps) I(t-tau) - gamma(t) I
//! neutrally stable (spectral radius 1). This reproduces the
//! next-generation R0 for periodic delay systems and the closed form
//! beta S0 e^{-gamma_L tau}/gamma in the autonomous case, and it
//! satisfies sign(R0^eps - 1) = sign(lambda(eps)).

use crate::coefficients::ModelParams;
use crate::delay_ode::{linearized_eq, poincare_spectral_radius, LinearDelayEq};
use crate::error::{KmError, Result};

/// Threshold quantities at one perturbation level.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ThresholdReport {
    pub eps: f64,
    pub r0_eps: f64,
    /// Floquet exponent of the linearized equation at this eps.
    pub lambda: f64,
    /// Final bisection bracket width of the R0 solve.
    pub bracket: f64,
}

/// Floquet exponent lambda(eps) of the eps-perturbed linearization;
/// strictly decreasing in eps.
pub fn floquet_exponent_linearized(p: &ModelParams, eps: f64) -> Result<f64> {
    let eq = linearized_eq(p, eps)?;
    Ok(poincare_spectral_radius(&eq, 1)?.lambda)
}

fn scaled_eq(p: &ModelParams, eps: f64, r: f64) -> Result<LinearDelayEq> {
    let base = linearized_eq(p, eps)?;
    let period = base.period;
    let tau = base.tau;
    let for_a = base.clone();
    Ok(LinearDelayEq::new_unchecked(
        period,
        tau,
        move |t| for_a.a(t),
        move |t| base.b(t) / r,
    ))
}

const R0_TOL: f64 = 1e-10;

/// Reproduction number at perturbation eps: bisection on the scaling r
/// until the scaled equation is neutrally stable.
pub fn compute_r0_eps(p: &ModelParams, eps: f64) -> Result<ThresholdReport> {
    let lambda = floquet_exponent_linearized(p, eps)?;
    let exponent_at = |r: f64| -> Result<f64> {
        let eq = scaled_eq(p, eps, r)?;
        // overflow during the period advance means unbounded growth
        match poincare_spectral_radius(&eq, 1) {
            Ok(fl) => Ok(fl.lambda),
            Err(KmError::Divergence(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    // lambda(r) is strictly decreasing in r; expand a bracket around the
    // sign change from the epidemiological starting box
    let mut lo = 1e-6_f64;
    let mut hi = 1e6_f64;
    let mut expansions = 0;
    while exponent_at(lo)? < 0.0 {
        hi = lo;
        lo /= 64.0;
        expansions += 1;
        if expansions > 40 {
            return Err(KmError::Bracketing("R0 bracket expansion failed downward".into()));
        }
    }
    while exponent_at(hi)? > 0.0 {
        lo = hi;
        hi *= 64.0;
        expansions += 1;
        if expansions > 40 {
            return Err(KmError::Bracketing("R0 bracket expansion failed upward".into()));
        }
    }
    while hi - lo > R0_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if exponent_at(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdReport {
        eps,
        r0_eps: 0.5 * (lo + hi),
        lambda,
        bracket: hi - lo,
    })
}

/// The largest perturbation keeping R0^eps above 1:
/// eps_sup = sup { eps in (0, S0) : R0^eps > 1 }. By the threshold
/// equivalence sign(R0^eps - 1) = sign(lambda(eps)) and strict
/// monotonicity this is the root of lambda(eps) = 0, located by
/// bisection (one Floquet solve per probe instead of a nested R0 solve).
pub fn epsilon_sup(p: &ModelParams) -> Result<f64> {
    let lambda0 = floquet_exponent_linearized(p, 0.0)?;
    if lambda0 <= 0.0 {
        return Err(KmError::Precondition(format!(
            "eps_sup requires R0 > 1 (lambda(0) = {lambda0:.3e} <= 0)"
        )));
    }
    let mut lo = 0.0_f64;
    let mut hi = p.s0 * (1.0 - 1e-12);
    if floquet_exponent_linearized(p, hi)? >= 0.0 {
        return Err(KmError::Bracketing(
            "lambda(eps) stays positive up to S0; cannot bracket eps_sup".into(),
        ));
    }
    while hi - lo > 1e-9 * p.s0 {
        let mid = 0.5 * (lo + hi);
        if floquet_exponent_linearized(p, mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
