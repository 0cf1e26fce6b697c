//! Independent reference computations used by the test suites.
//!
//! Nothing here is called from the production paths; these routines
//! deliberately take different algorithmic routes (series expansions,
//! scalar Newton solves, brute-force grid scans) so they can serve as
//! oracles for the Floquet, threshold and wave-speed machinery.

/// Error function by Taylor series (small x) or the complementary
/// asymptotic-free continued expansion via the incomplete gamma series
/// (large x). Accurate to ~1e-15 on [0, 6].
pub fn erf_series(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_series(-x);
    }
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    if x < 3.0 {
        // erf(x) = 2/sqrt(pi) * sum_k (-1)^k x^{2k+1} / (k! (2k+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for k in 1..200 {
            term *= -x2 / k as f64;
            let add = term / (2.0 * k as f64 + 1.0);
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        two_over_sqrt_pi * sum
    } else {
        // upper tail: erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(...))))
        // evaluated by backward recurrence
        let mut t = 0.0;
        for n in (1..=80).rev() {
            t = (n as f64 / 2.0) / (x + t);
        }
        let erfc = (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + t);
        1.0 - erfc
    }
}

/// Principal real root of the autonomous delay characteristic equation
/// `lambda = a + b e^{-lambda tau}` with `b >= 0`. The right side minus
/// the left is strictly decreasing, so the real root is unique; Newton
/// with a bisection safeguard.
pub fn characteristic_root(a: f64, b: f64, tau: f64) -> f64 {
    assert!(b >= 0.0, "characteristic oracle needs b >= 0");
    if b == 0.0 {
        return a;
    }
    let g = |lam: f64| a + b * (-lam * tau).exp() - lam;
    // bracket: g(a) = b e^{-a tau} > 0, expand upward until g < 0
    let mut lo = a;
    let mut hi = a + b.max(1.0);
    while g(hi) > 0.0 {
        hi += (hi - lo).max(1.0);
    }
    let mut lam = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = g(lam);
        if val > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        let deriv = -b * tau * (-lam * tau).exp() - 1.0;
        let mut next = lam - val / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - lam).abs() <= 1e-14 * lam.abs().max(1.0) {
            return next;
        }
        lam = next;
    }
    lam
}

/// Autonomous dispersion zero: the speed c(mu) solving
/// `d2 mu^2 - c mu - gamma + beta_s0 e^{-gl tau + d_l tau mu^2 - c mu tau} = 0`
/// by bisection in c (the left side is strictly decreasing in c).
pub fn autonomous_c_of_mu(
    d2: f64,
    d_l: f64,
    tau: f64,
    beta_s0: f64,
    gamma: f64,
    gl: f64,
    mu: f64,
) -> f64 {
    let f = |c: f64| {
        let expo = -gl * tau + d_l * tau * mu * mu - c * mu * tau;
        let gain = if expo > 700.0 { f64::INFINITY } else { beta_s0 * expo.exp() };
        d2 * mu * mu - c * mu - gamma + gain
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        assert!(hi < 1e12, "autonomous oracle failed to bracket c({mu})");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Brute-force minimal speed for the autonomous model: dense mu grid plus
/// three rounds of local refinement of `autonomous_c_of_mu`.
pub fn autonomous_c_star(
    d2: f64,
    d_l: f64,
    tau: f64,
    beta_s0: f64,
    gamma: f64,
    gl: f64,
) -> f64 {
    let eval = |mu: f64| autonomous_c_of_mu(d2, d_l, tau, beta_s0, gamma, gl, mu);
    let mut lo = 1e-3_f64;
    let mut hi = 1e2_f64;
    let mut best_mu = lo;
    for _round in 0..4 {
        let n = 400;
        let mut best = f64::INFINITY;
        for k in 0..=n {
            let mu = lo * (hi / lo).powf(k as f64 / n as f64);
            let c = eval(mu);
            if c < best {
                best = c;
                best_mu = mu;
            }
        }
        let spread = (hi / lo).powf(1.5 / n as f64);
        lo = best_mu / spread;
        hi = best_mu * spread;
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    eval(best_mu)
}
