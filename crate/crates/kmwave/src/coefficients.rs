//! T-periodic coefficients and the Gaussian latent-mobility kernel.
//!
//! Every closed-form kernel identity used downstream lives here: the
//! survival-weighted Gaussian moment `kernel_weight`, the truncated
//! kernel mass and its inverse. Closed forms are exact on purpose;
//! they anchor the tolerances of the threshold and wave-speed modules.

use crate::error::{KmError, Result};
use serde::{Deserialize, Serialize};

/// Functional form of a T-periodic scalar coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PeriodicForm {
    /// Constant value over the whole period.
    Constant { value: f64 },
    /// Seasonal forcing `mean * (1 + amplitude * cos(2 pi t / T))`,
    /// amplitude in [0, 1).
    Cosine { mean: f64, amplitude: f64 },
    /// Uniform samples over one period, periodic cubic interpolation.
    /// `samples[k]` is the value at `t = k T / N`.
    Tabulated { samples: Vec<f64> },
}

/// A T-periodic scalar function with exact period reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicFn {
    pub period: f64,
    #[serde(flatten)]
    pub form: PeriodicForm,
}

impl PeriodicFn {
    pub fn constant(period: f64, value: f64) -> Self {
        PeriodicFn {
            period,
            form: PeriodicForm::Constant { value },
        }
    }

    pub fn cosine(period: f64, mean: f64, amplitude: f64) -> Self {
        PeriodicFn {
            period,
            form: PeriodicForm::Cosine { mean, amplitude },
        }
    }

    pub fn tabulated(period: f64, samples: Vec<f64>) -> Self {
        PeriodicFn {
            period,
            form: PeriodicForm::Tabulated { samples },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(KmError::Config(format!(
                "period must be positive and finite, got {}",
                self.period
            )));
        }
        match &self.form {
            PeriodicForm::Constant { value } => {
                if !value.is_finite() {
                    return Err(KmError::Config("constant coefficient must be finite".into()));
                }
            }
            PeriodicForm::Cosine { mean, amplitude } => {
                if !mean.is_finite() || !amplitude.is_finite() {
                    return Err(KmError::Config("cosine coefficient must be finite".into()));
                }
                if !(*amplitude >= 0.0 && *amplitude < 1.0) {
                    return Err(KmError::Config(format!(
                        "cosine amplitude must lie in [0, 1), got {amplitude}"
                    )));
                }
            }
            PeriodicForm::Tabulated { samples } => {
                if samples.len() < 4 {
                    return Err(KmError::Config(
                        "tabulated coefficient needs at least 4 samples per period".into(),
                    ));
                }
                if samples.iter().any(|v| !v.is_finite()) {
                    return Err(KmError::Config("tabulated samples must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Reduce `t` to [0, T). The reduction uses a single floor of t/T so
    /// that `eval(t + T)` and `eval(t)` agree to machine precision
    /// instead of drifting with repeated subtraction.
    fn reduce(&self, t: f64) -> f64 {
        let s = t / self.period;
        let frac = s - s.floor();
        // frac can land exactly on 1.0 for t slightly below a period mark
        let frac = if frac >= 1.0 { frac - 1.0 } else { frac };
        frac * self.period
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.form {
            PeriodicForm::Constant { value } => *value,
            PeriodicForm::Cosine { mean, amplitude } => {
                let phase = 2.0 * std::f64::consts::PI * (t / self.period - (t / self.period).floor());
                mean * (1.0 + amplitude * phase.cos())
            }
            PeriodicForm::Tabulated { samples } => {
                let n = samples.len();
                let u = self.reduce(t) / self.period * n as f64;
                let k = u.floor() as usize % n;
                let frac = u - u.floor();
                // periodic Catmull-Rom through the samples
                let idx = |j: isize| samples[((k as isize + j).rem_euclid(n as isize)) as usize];
                let (p0, p1, p2, p3) = (idx(-1), idx(0), idx(1), idx(2));
                let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
                let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
                let c = 0.5 * (p2 - p0);
                ((a * frac + b) * frac + c) * frac + p1
            }
        }
    }

    /// Exact integral over one full period.
    pub fn period_integral(&self) -> f64 {
        match &self.form {
            PeriodicForm::Constant { value } => value * self.period,
            // the cosine integrates to zero over a period
            PeriodicForm::Cosine { mean, .. } => mean * self.period,
            PeriodicForm::Tabulated { .. } => {
                adaptive_simpson(|t| self.eval(t), 0.0, self.period, 1e-13)
            }
        }
    }

    /// Mean value over one period.
    pub fn mean(&self) -> f64 {
        self.period_integral() / self.period
    }

    /// Minimum over one period (exact for constant/cosine, dense scan
    /// for tabulated).
    pub fn min_over_period(&self) -> f64 {
        match &self.form {
            PeriodicForm::Constant { value } => *value,
            PeriodicForm::Cosine { mean, amplitude } => {
                (mean * (1.0 - amplitude)).min(mean * (1.0 + amplitude))
            }
            PeriodicForm::Tabulated { samples } => {
                let n = samples.len().max(64) * 8;
                (0..n)
                    .map(|k| self.eval(k as f64 * self.period / n as f64))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.min_over_period() > 0.0
    }
}

/// Integral of a periodic coefficient over [t0, t1]; closed form for the
/// constant and cosine families, adaptive Simpson for tabulated ones.
pub fn integrate_periodic(f: &PeriodicFn, t0: f64, t1: f64) -> Result<f64> {
    if t1 < t0 {
        return Err(KmError::Argument(format!(
            "integrate_periodic requires t0 <= t1, got [{t0}, {t1}]"
        )));
    }
    match &f.form {
        PeriodicForm::Constant { value } => Ok(value * (t1 - t0)),
        PeriodicForm::Cosine { mean, amplitude } => {
            let w = 2.0 * std::f64::consts::PI / f.period;
            Ok(mean * ((t1 - t0) + amplitude / w * ((w * t1).sin() - (w * t0).sin())))
        }
        PeriodicForm::Tabulated { .. } => {
            // split off whole periods so long intervals stay cheap and exact
            let periods = ((t1 - t0) / f.period).floor();
            let bulk = periods * f.period_integral();
            let a = t0 + periods * f.period;
            Ok(bulk + adaptive_simpson(|t| f.eval(t), a, t1, 1e-13))
        }
    }
}

/// Adaptive Simpson with a Richardson-style acceptance test.
fn adaptive_simpson(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: impl Fn(f64) -> f64 + Copy,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Full parameter record of the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// Diffusivity of the susceptible class.
    pub d1: f64,
    /// Diffusivity of the infectious class.
    pub d2: f64,
    /// Diffusivity during the latent stage (kernel variance 2 d_latent tau).
    pub d_latent: f64,
    /// Latent period.
    pub tau: f64,
    /// Initial susceptible density.
    pub s0: f64,
    /// Infection coefficient beta(t).
    pub beta: PeriodicFn,
    /// Removal rate gamma(t).
    pub gamma: PeriodicFn,
    /// Latent-stage removal rate gamma_L(t).
    pub gamma_latent: PeriodicFn,
}

impl ModelParams {
    pub fn period(&self) -> f64 {
        self.beta.period
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d_latent", self.d_latent),
            ("tau", self.tau),
            ("s0", self.s0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(KmError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, f) in [
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("gamma_latent", &self.gamma_latent),
        ] {
            f.validate()?;
            if !f.is_strictly_positive() {
                return Err(KmError::Config(format!(
                    "{name} must be strictly positive over the period"
                )));
            }
        }
        let t = self.beta.period;
        if (self.gamma.period - t).abs() > 1e-12 * t
            || (self.gamma_latent.period - t).abs() > 1e-12 * t
        {
            return Err(KmError::Config(
                "beta, gamma and gamma_latent must share the same period".into(),
            ));
        }
        Ok(())
    }

    /// Latent-stage survival factor `exp(-int_{t-tau}^{t} gamma_L)`.
    pub fn survival(&self, t: f64) -> f64 {
        let integral = integrate_periodic(&self.gamma_latent, t - self.tau, t)
            .expect("t-tau <= t always holds");
        (-integral).exp()
    }

    /// The survival factor as a reusable closure. Constant and cosine
    /// coefficients use their closed forms; tabulated ones are
    /// pre-integrated onto a fine periodic table so per-step evaluation
    /// stays cheap.
    pub fn survival_function(&self) -> std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match &self.gamma_latent.form {
            PeriodicForm::Constant { value } => {
                let factor = (-value * self.tau).exp();
                std::sync::Arc::new(move |_| factor)
            }
            PeriodicForm::Cosine { .. } => {
                let gl = self.gamma_latent.clone();
                let tau = self.tau;
                std::sync::Arc::new(move |t| {
                    (-integrate_periodic(&gl, t - tau, t).expect("ordered interval")).exp()
                })
            }
            PeriodicForm::Tabulated { .. } => {
                let period = self.gamma_latent.period;
                let n = 1024usize;
                let samples: Vec<f64> = (0..=n)
                    .map(|k| {
                        let t = k as f64 * period / n as f64;
                        integrate_periodic(&self.gamma_latent, t - self.tau, t)
                            .expect("ordered interval")
                    })
                    .collect();
                let table = PeriodicFn::tabulated(period, samples[..n].to_vec());
                std::sync::Arc::new(move |t| (-table.eval(t)).exp())
            }
        }
    }

    /// Default desk-scale configuration used throughout the test suites:
    /// T = 1, tau = 1, beta = 2 (1 + a cos 2 pi t), gamma = 1,
    /// gamma_L = 0.1, d1 = d2 = d_latent = 1, S0 = 1.
    pub fn desk_default(amplitude: f64) -> Self {
        ModelParams {
            d1: 1.0,
            d2: 1.0,
            d_latent: 1.0,
            tau: 1.0,
            s0: 1.0,
            beta: PeriodicFn::cosine(1.0, 2.0, amplitude),
            gamma: PeriodicFn::constant(1.0, 1.0),
            gamma_latent: PeriodicFn::constant(1.0, 0.1),
        }
    }
}

/// Exponentially weighted mass of the kernel Gamma:
/// `int Gamma(t, t - tau; y) e^{mu y} dy
///  = exp(-int_{t-tau}^{t} gamma_L) * exp(d_latent tau mu^2)`
/// by the Gaussian moment-generating identity.
pub fn kernel_weight(p: &ModelParams, t: f64, mu: f64) -> f64 {
    p.survival(t) * (p.d_latent * p.tau * mu * mu).exp()
}

/// Mass of the bare heat kernel on [-ell, ell]:
/// `erf(ell / sqrt(4 d_latent tau))`, in (0, 1).
pub fn truncated_gaussian_mass(d_latent: f64, tau: f64, ell: f64) -> Result<f64> {
    if !(ell > 0.0) {
        return Err(KmError::Argument(format!("ell must be positive, got {ell}")));
    }
    Ok(libm::erf(ell / (4.0 * d_latent * tau).sqrt()))
}

/// Inverse of `truncated_gaussian_mass` in ell: returns the half-width
/// whose truncated mass equals `mass`.
pub fn ell_for_mass(d_latent: f64, tau: f64, mass: f64) -> Result<f64> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(KmError::Argument(format!(
            "mass must lie strictly inside (0, 1), got {mass}"
        )));
    }
    // Newton on erf(x) = mass with a bisection safeguard on [0, 8].
    let (mut lo, mut hi) = (0.0_f64, 8.0_f64);
    let mut x = 1.0_f64;
    for _ in 0..200 {
        let f = libm::erf(x) - mass;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let df = 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
        let mut next = x - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x * (4.0 * d_latent * tau).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn integrate_constant_over_delay_window() {
        let f = PeriodicFn::constant(1.0, 0.7);
        let v = integrate_periodic(&f, 2.3 - 0.4, 2.3).unwrap();
        assert_abs_diff_eq!(v, 0.7 * 0.4, epsilon = 1e-14);
    }

    #[test]
    fn integrate_cosine_full_period() {
        let f = PeriodicFn::cosine(1.0, 1.3, 0.5);
        let v = integrate_periodic(&f, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 1.3, epsilon = 1e-13);
    }

    #[test]
    fn integrate_cosine_partial_period() {
        // f = 1 + 0.5 cos(2 pi t), integral over [0, 0.25]
        let f = PeriodicFn::cosine(1.0, 1.0, 0.5);
        let v = integrate_periodic(&f, 0.0, 0.25).unwrap();
        let expected = 0.25 + 0.5 / (2.0 * std::f64::consts::PI);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-13);
    }

    #[test]
    fn integrate_rejects_reversed_interval() {
        let f = PeriodicFn::constant(1.0, 1.0);
        assert!(integrate_periodic(&f, 1.0, 0.0).is_err());
    }

    #[test]
    fn tabulated_matches_cosine() {
        let reference = PeriodicFn::cosine(2.0, 1.0, 0.3);
        let n = 256;
        let samples: Vec<f64> = (0..n).map(|k| reference.eval(2.0 * k as f64 / n as f64)).collect();
        let tab = PeriodicFn::tabulated(2.0, samples);
        for k in 0..37 {
            let t = 0.137 + 0.2 * k as f64;
            assert_abs_diff_eq!(tab.eval(t), reference.eval(t), epsilon = 1e-7);
        }
        let v = integrate_periodic(&tab, 0.3, 1.1).unwrap();
        let expected = integrate_periodic(&reference, 0.3, 1.1).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-8);
    }

    #[test]
    fn kernel_weight_trivial_cases() {
        let mut p = ModelParams::desk_default(0.0);
        p.gamma_latent = PeriodicFn::constant(1.0, 0.0);
        assert_abs_diff_eq!(kernel_weight(&p, 0.4, 0.0), 1.0, epsilon = 1e-14);

        let mut p = ModelParams::desk_default(0.0);
        p.gamma_latent = PeriodicFn::constant(1.0, 0.3);
        assert_abs_diff_eq!(kernel_weight(&p, 1.7, 0.0), (-0.3f64).exp(), epsilon = 1e-14);

        // mu = 1, d_latent = 1, tau = 1, gamma_L -> 0 gives e
        let mut p = ModelParams::desk_default(0.0);
        p.gamma_latent = PeriodicFn::constant(1.0, 0.0);
        assert_abs_diff_eq!(kernel_weight(&p, 0.0, 1.0), std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn kernel_mass_equals_survival_factor() {
        let p = ModelParams::desk_default(0.2);
        for k in 0..100 {
            let t = -7.0 + 0.173 * k as f64;
            let survival = (-integrate_periodic(&p.gamma_latent, t - p.tau, t).unwrap()).exp();
            assert_abs_diff_eq!(kernel_weight(&p, t, 0.0), survival, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_weight_periodic_and_even() {
        let mut p = ModelParams::desk_default(0.2);
        p.gamma_latent = PeriodicFn::cosine(1.0, 0.1, 0.4);
        for k in 0..20 {
            let t = -3.0 + 0.41 * k as f64;
            let mu = 0.1 + 0.2 * k as f64;
            assert_abs_diff_eq!(
                kernel_weight(&p, t + p.period(), mu),
                kernel_weight(&p, t, mu),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                kernel_weight(&p, t, -mu),
                kernel_weight(&p, t, mu),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn truncated_mass_examples() {
        // ell far in the tail captures the full mass
        let full = truncated_gaussian_mass(1.0, 1.0, 100.0 * 2.0).unwrap();
        assert!((full - 1.0).abs() < 1e-15);

        // erf(1) against an independent series oracle
        let v = truncated_gaussian_mass(1.0, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(v, crate::oracles::erf_series(1.0), epsilon = 1e-12);

        // scale invariance in d_latent * tau
        let a = truncated_gaussian_mass(1.0, 2.0, (8.0f64).sqrt() * 0.7).unwrap();
        let b = truncated_gaussian_mass(2.0, 1.0, (8.0f64).sqrt() * 0.7).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);

        assert!(truncated_gaussian_mass(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ell_for_mass_round_trips() {
        let mass = libm::erf(1.0);
        let ell = ell_for_mass(1.0, 1.0, mass).unwrap();
        assert_abs_diff_eq!(ell, 2.0, epsilon = 1e-10);

        for &ell in &[0.5, 1.0, 3.0] {
            let m = truncated_gaussian_mass(0.7, 1.3, ell).unwrap();
            let back = ell_for_mass(0.7, 1.3, m).unwrap();
            assert_abs_diff_eq!(back, ell, epsilon = 1e-10 * ell.max(1.0));
        }

        assert!(ell_for_mass(1.0, 1.0, 0.0).is_err());
        assert!(ell_for_mass(1.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn truncated_mass_monotone_in_ell(a in 0.05f64..5.0, b in 0.05f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let ma = truncated_gaussian_mass(1.0, 1.0, lo).unwrap();
            let mb = truncated_gaussian_mass(1.0, 1.0, hi).unwrap();
            prop_assert!(ma < mb);
            prop_assert!(ma > 0.0 && mb < 1.0);
        }

        #[test]
        fn periodicity_of_eval(t in -50.0f64..50.0) {
            let f = PeriodicFn::cosine(1.5, 2.0, 0.4);
            let diff = (f.eval(t + 1.5) - f.eval(t)).abs();
            prop_assert!(diff < 1e-11);
        }
    }
}
