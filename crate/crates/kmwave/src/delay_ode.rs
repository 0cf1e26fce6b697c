//! Method-of-steps integration of delay differential equations with
//! T-periodic coefficients, Poincare maps on history segments and the
//! Floquet (principal eigenvalue) machinery, plus the kinetic systems
//! of the model.

use crate::coefficients::ModelParams;
use crate::error::{KmError, Result};
use std::sync::Arc;

/// A function on [-tau, 0]: the state of a delay equation. Uniform
/// samples with stored derivatives give piecewise-cubic dense output.
#[derive(Debug, Clone)]
pub struct HistorySegment<const N: usize> {
    pub tau: f64,
    pub values: Vec<[f64; N]>,
    pub derivs: Vec<[f64; N]>,
}

fn hermite(theta: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + theta) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

fn hermite_deriv(theta: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let t2 = theta * theta;
    ((6.0 * t2 - 6.0 * theta) * y0
        + (3.0 * t2 - 4.0 * theta + 1.0) * h * d0
        + (-6.0 * t2 + 6.0 * theta) * y1
        + (3.0 * t2 - 2.0 * theta) * h * d1)
        / h
}

impl<const N: usize> HistorySegment<N> {
    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        self.tau / (self.n_nodes() - 1) as f64
    }

    pub fn constant(tau: f64, n_nodes: usize, value: [f64; N]) -> Self {
        assert!(n_nodes >= 2 && tau > 0.0);
        HistorySegment {
            tau,
            values: vec![value; n_nodes],
            derivs: vec![[0.0; N]; n_nodes],
        }
    }

    /// Sample a function of s in [-tau, 0]; derivatives are recovered
    /// from the samples by finite differences (4th order interior).
    pub fn from_fn(tau: f64, n_nodes: usize, f: impl Fn(f64) -> [f64; N]) -> Self {
        assert!(n_nodes >= 5 && tau > 0.0);
        let h = tau / (n_nodes - 1) as f64;
        let values: Vec<[f64; N]> = (0..n_nodes).map(|i| f(-tau + i as f64 * h)).collect();
        let mut derivs = vec![[0.0; N]; n_nodes];
        for c in 0..N {
            let v = |i: usize| values[i][c];
            for i in 0..n_nodes {
                derivs[i][c] = if i >= 2 && i + 2 < n_nodes {
                    (-v(i + 2) + 8.0 * v(i + 1) - 8.0 * v(i - 1) + v(i - 2)) / (12.0 * h)
                } else if i == 0 {
                    (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
                } else if i == n_nodes - 1 {
                    (3.0 * v(i) - 4.0 * v(i - 1) + v(i - 2)) / (2.0 * h)
                } else if i == 1 {
                    (v(2) - v(0)) / (2.0 * h)
                } else {
                    (v(i + 1) - v(i - 1)) / (2.0 * h)
                };
            }
        }
        HistorySegment { tau, values, derivs }
    }

    /// Dense evaluation at s in [-tau, 0]. Slight extrapolation past
    /// either end reuses the boundary cubic (needed when the delay is
    /// shorter than the integration step).
    pub fn eval(&self, s: f64) -> [f64; N] {
        let h = self.spacing();
        let u = (s + self.tau) / h;
        let last = self.n_nodes() - 2;
        let i = (u.floor() as isize).clamp(0, last as isize) as usize;
        let theta = u - i as f64;
        let mut out = [0.0; N];
        for c in 0..N {
            out[c] = hermite(
                theta,
                h,
                self.values[i][c],
                self.derivs[i][c],
                self.values[i + 1][c],
                self.derivs[i + 1][c],
            );
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
        for d in &mut self.derivs {
            for x in d.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(f64::INFINITY, |m, x| m.min(*x))
    }
}

/// Dense solution record built up during one `advance` call.
struct Trajectory<'a, const N: usize> {
    t0: f64,
    step: f64,
    /// (value, derivative) at t0 + i * step
    nodes: Vec<([f64; N], [f64; N])>,
    init: &'a HistorySegment<N>,
}

impl<'a, const N: usize> Trajectory<'a, N> {
    fn eval_with_deriv(&self, s: f64) -> ([f64; N], [f64; N]) {
        if s <= self.t0 {
            // inside (or marginally before) the initial history
            let local = (s - self.t0).max(-self.init.tau);
            let h = self.init.spacing();
            let u = (local + self.init.tau) / h;
            let last = self.init.n_nodes() - 2;
            let i = (u.floor() as isize).clamp(0, last as isize) as usize;
            let theta = u - i as f64;
            let mut y = [0.0; N];
            let mut d = [0.0; N];
            for c in 0..N {
                y[c] = hermite(
                    theta,
                    h,
                    self.init.values[i][c],
                    self.init.derivs[i][c],
                    self.init.values[i + 1][c],
                    self.init.derivs[i + 1][c],
                );
                d[c] = hermite_deriv(
                    theta,
                    h,
                    self.init.values[i][c],
                    self.init.derivs[i][c],
                    self.init.values[i + 1][c],
                    self.init.derivs[i + 1][c],
                );
            }
            (y, d)
        } else {
            let u = (s - self.t0) / self.step;
            let last = self.nodes.len() - 2;
            let i = (u.floor() as isize).clamp(0, last as isize) as usize;
            let theta = u - i as f64;
            let (y0, d0) = self.nodes[i];
            let (y1, d1) = self.nodes[i + 1];
            let mut y = [0.0; N];
            let mut d = [0.0; N];
            for c in 0..N {
                y[c] = hermite(theta, self.step, y0[c], d0[c], y1[c], d1[c]);
                d[c] = hermite_deriv(theta, self.step, y0[c], d0[c], y1[c], d1[c]);
            }
            (y, d)
        }
    }

    fn eval(&self, s: f64) -> [f64; N] {
        self.eval_with_deriv(s).0
    }
}

fn check_finite<const N: usize>(y: &[f64; N], t: f64) -> Result<()> {
    if y.iter().any(|x| !x.is_finite()) {
        return Err(KmError::Divergence(format!("state not finite at t = {t}")));
    }
    Ok(())
}

/// Advance a delay equation by `duration` from the given history segment
/// (history anchored at time `t0`), classical 4th-order steps with cubic
/// Hermite dense output for delayed lookups.
///
/// `step` must divide `duration`; when `tau >= step` it must also divide
/// `tau` so delayed lookups land inside completed history. When
/// `tau < step` (short-delay regime) the delayed argument overlaps the
/// current step and the step is resolved by fixed-point iteration on its
/// own Hermite interpolant.
pub fn advance_observed<const N: usize>(
    rhs: &(impl Fn(f64, &[f64; N], &[f64; N]) -> [f64; N] + ?Sized),
    seg: &HistorySegment<N>,
    t0: f64,
    duration: f64,
    step: f64,
    mut observer: impl FnMut(f64, &[f64; N]),
) -> Result<HistorySegment<N>> {
    if !(duration > 0.0) {
        return Err(KmError::Argument(format!("duration must be positive, got {duration}")));
    }
    let n_steps_f = duration / step;
    let n_steps = n_steps_f.round();
    if (n_steps_f - n_steps).abs() > 1e-9 * n_steps_f.max(1.0) {
        return Err(KmError::Argument(format!(
            "duration {duration} is not an integer multiple of step {step}"
        )));
    }
    let n_steps = n_steps as usize;
    let tau = seg.tau;
    let overlapping = tau < step;
    if !overlapping {
        let ratio = tau / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(KmError::Argument(format!(
                "delay {tau} is not an integer multiple of step {step}"
            )));
        }
    }

    let y0 = seg.eval(0.0);
    let mut traj = Trajectory {
        t0,
        step,
        nodes: Vec::with_capacity(n_steps + 1),
        init: seg,
    };
    let d0 = rhs(t0, &y0, &traj.eval(t0 - tau));
    traj.nodes.push((y0, d0));
    observer(t0, &y0);

    for k in 0..n_steps {
        let t = t0 + k as f64 * step;
        let (y, f0) = traj.nodes[k];

        // one RK4 pass; delayed lookups go through `delayed`
        let rk4 = |delayed: &dyn Fn(f64) -> [f64; N]| -> ([f64; N], [f64; N]) {
            let half = 0.5 * step;
            let k1 = rhs(t, &y, &delayed(t - tau));
            let mut y2 = y;
            for c in 0..N {
                y2[c] = y[c] + half * k1[c];
            }
            let dm = delayed(t + half - tau);
            let k2 = rhs(t + half, &y2, &dm);
            let mut y3 = y;
            for c in 0..N {
                y3[c] = y[c] + half * k2[c];
            }
            let k3 = rhs(t + half, &y3, &dm);
            let mut y4 = y;
            for c in 0..N {
                y4[c] = y[c] + step * k3[c];
            }
            let k4 = rhs(t + step, &y4, &delayed(t + step - tau));
            let mut out = y;
            for c in 0..N {
                out[c] = y[c] + step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            (out, k1)
        };

        let (y_next, f_next) = if !overlapping {
            let (y_next, _) = rk4(&|s| traj.eval(s));
            check_finite(&y_next, t + step)?;
            let yd = traj.eval(t + step - tau);
            let f_next = rhs(t + step, &y_next, &yd);
            (y_next, f_next)
        } else {
            // delayed argument may fall inside the current step: iterate
            // on a provisional Hermite interpolant for the step
            let mut prov: ([f64; N], [f64; N]) = (y, f0);
            for _sweep in 0..3 {
                let frozen = prov;
                let delayed = |s: f64| -> [f64; N] {
                    if s <= t {
                        traj.eval(s)
                    } else {
                        let theta = (s - t) / step;
                        let mut out = [0.0; N];
                        for c in 0..N {
                            out[c] = hermite(theta, step, y[c], f0[c], frozen.0[c], frozen.1[c]);
                        }
                        out
                    }
                };
                let (y_next, _) = rk4(&delayed);
                let yd = delayed(t + step - tau);
                let f_next = rhs(t + step, &y_next, &yd);
                prov = (y_next, f_next);
            }
            check_finite(&prov.0, t + step)?;
            prov
        };
        traj.nodes.push((y_next, f_next));
        observer(t + step, &y_next);
    }

    // resample the final tau-window into a fresh history segment
    let t_end = t0 + n_steps as f64 * step;
    let n_nodes = if overlapping {
        33
    } else {
        (tau / step).round() as usize + 1
    };
    let h = tau / (n_nodes - 1) as f64;
    let mut values = Vec::with_capacity(n_nodes);
    let mut derivs = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let s = t_end - tau + i as f64 * h;
        let (v, d) = traj.eval_with_deriv(s);
        values.push(v);
        derivs.push(d);
    }
    Ok(HistorySegment { tau, values, derivs })
}

pub fn advance<const N: usize>(
    rhs: &(impl Fn(f64, &[f64; N], &[f64; N]) -> [f64; N] + ?Sized),
    seg: &HistorySegment<N>,
    t0: f64,
    duration: f64,
    step: f64,
) -> Result<HistorySegment<N>> {
    advance_observed(rhs, seg, t0, duration, step, |_, _| {})
}

/// Continued-fraction rational approximation of x with bounded
/// denominator; returns (p, q) with |x - p/q| <= 1e-9 max(x, 1).
fn rational_approx(x: f64, max_den: u64) -> Option<(u64, u64)> {
    let (mut h0, mut h1) = (1u64, x.floor() as u64);
    let (mut k0, mut k1) = (0u64, 1u64);
    let mut frac = x - x.floor();
    for _ in 0..64 {
        if (x - h1 as f64 / k1 as f64).abs() <= 1e-9 * x.max(1.0) {
            return Some((h1, k1));
        }
        if frac.abs() < 1e-15 {
            break;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        frac = inv - a;
        let a = a as u64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    if (x - h1 as f64 / k1 as f64).abs() <= 1e-9 * x.max(1.0) {
        Some((h1, k1))
    } else {
        None
    }
}

/// Step size dividing both the period and (when feasible) the delay.
/// `steps_per_unit` is the target resolution per min(tau, T). Delays far
/// below the period resolution fall into the short-delay regime where
/// the step only divides the period.
pub fn commensurate_step(tau: f64, period: f64, steps_per_unit: usize) -> Result<f64> {
    if !(tau > 0.0 && period > 0.0) {
        return Err(KmError::Argument("tau and period must be positive".into()));
    }
    let short_delay_cutoff = period / (4.0 * steps_per_unit as f64);
    if let Some((p, q)) = rational_approx(tau / period, 4096) {
        if p == 0 {
            return Err(KmError::Argument("tau/period underflowed to zero".into()));
        }
        let n0 = (steps_per_unit as f64 * (period / tau).max(1.0)).ceil() as u64;
        let n = q * n0.div_ceil(q);
        if n <= 2_000_000 {
            return Ok(period / n as f64);
        }
    }
    if tau < short_delay_cutoff {
        return Ok(period / (4 * steps_per_unit) as f64);
    }
    Err(KmError::Config(format!(
        "tau/period = {} is not a small rational; choose commensurate tau and period",
        tau / period
    )))
}

/// Uniform samples of a P-periodic function, endpoint included, with
/// periodic cubic interpolation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PeriodicSamples {
    pub period: f64,
    /// values at i * period / (len - 1); first and last describe the
    /// same phase
    pub values: Vec<f64>,
}

impl PeriodicSamples {
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let s = t / self.period;
        let frac = s - s.floor();
        let u = frac * n as f64;
        let k = (u.floor() as usize).min(n - 1);
        let theta = u - k as f64;
        let wrap = |j: isize| {
            let idx = (k as isize + j).rem_euclid(n as isize) as usize;
            self.values[idx]
        };
        let (p0, p1, p2, p3) = (wrap(-1), wrap(0), wrap(1), wrap(2));
        let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
        let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
        let c = 0.5 * (p2 - p0);
        ((a * theta + b) * theta + c) * theta + p1
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, x| m.min(*x))
    }
}

/// Scalar linear delay equation x'(t) = a(t) x(t) + b(t) x(t - tau) with
/// T-periodic coefficients and positive delayed coefficient.
#[derive(Clone)]
pub struct LinearDelayEq {
    pub period: f64,
    pub tau: f64,
    a: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    b: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl LinearDelayEq {
    pub fn new(
        period: f64,
        tau: f64,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let eq = Self::new_unchecked(period, tau, a, b);
        for k in 0..256 {
            let t = k as f64 * period / 256.0;
            if !(eq.b(t) > 0.0) {
                return Err(KmError::Argument(format!(
                    "delayed coefficient must be strictly positive, b({t}) = {}",
                    eq.b(t)
                )));
            }
        }
        Ok(eq)
    }

    /// Skips the positivity scan; used for test reductions with b = 0.
    pub fn new_unchecked(
        period: f64,
        tau: f64,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LinearDelayEq {
            period,
            tau,
            a: Arc::new(a),
            b: Arc::new(b),
        }
    }

    pub fn a(&self, t: f64) -> f64 {
        (self.a)(t)
    }

    pub fn b(&self, t: f64) -> f64 {
        (self.b)(t)
    }

    /// Exponential shift x = e^{-s t} y: a -> a - s, b -> b e^{-s tau}.
    pub fn shifted(&self, s: f64) -> Self {
        let a = self.a.clone();
        let b = self.b.clone();
        let tau = self.tau;
        LinearDelayEq {
            period: self.period,
            tau,
            a: Arc::new(move |t| a(t) - s),
            b: Arc::new(move |t| b(t) * (-s * tau).exp()),
        }
    }
}

/// Spectral radius of the Poincare map, the Floquet exponent and the
/// associated positive periodic eigenfunction.
#[derive(Debug, Clone)]
pub struct FloquetResult {
    /// Spectral radius of the map over one period (kT).
    pub rho: f64,
    /// ln(rho) / (kT).
    pub lambda: f64,
    /// Positive kT-periodic eigenfunction, max-normalized.
    pub eigenfunction: PeriodicSamples,
    pub iterations: usize,
    /// Relative sup-norm defect of the eigen-relation on the final
    /// history segment.
    pub residual: f64,
}

pub const DEFAULT_STEPS_PER_UNIT: usize = 128;
const POWER_TOL: f64 = 1e-10;
const MAX_POWER_ITER: usize = 10_000;

/// Power iteration on history segments: advance one period, renormalize
/// in sup norm; the asymptotic growth factor per period is the spectral
/// radius of the Poincare map.
pub fn poincare_spectral_radius(eq: &LinearDelayEq, period_multiple: usize) -> Result<FloquetResult> {
    poincare_with_resolution(eq, period_multiple, DEFAULT_STEPS_PER_UNIT)
}

pub fn poincare_with_resolution(
    eq: &LinearDelayEq,
    period_multiple: usize,
    steps_per_unit: usize,
) -> Result<FloquetResult> {
    assert!(period_multiple >= 1);
    let map_period = period_multiple as f64 * eq.period;
    let step = commensurate_step(eq.tau, eq.period, steps_per_unit)?;
    let rhs = move |t: f64, y: &[f64; 1], yd: &[f64; 1]| [eq.a(t) * y[0] + eq.b(t) * yd[0]];

    let n_nodes = if eq.tau < step {
        33
    } else {
        (eq.tau / step).round() as usize + 1
    };
    let mut seg = HistorySegment::<1>::constant(eq.tau, n_nodes, [1.0]);
    let mut rho = f64::NAN;
    let mut iterations = 0;
    for iter in 1..=MAX_POWER_ITER {
        iterations = iter;
        // coefficients are T-periodic and the map period is a multiple
        // of T, so every application can start from t = 0
        let next = advance(&rhs, &seg, 0.0, map_period, step)?;
        let norm = next.sup_norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(KmError::Divergence(format!(
                "power iteration norm degenerate ({norm}) at iteration {iter}"
            )));
        }
        let rho_new = norm;
        seg = next;
        seg.scale(1.0 / norm);
        if iter >= 3 && (rho_new - rho).abs() <= POWER_TOL * rho_new.abs() {
            rho = rho_new;
            break;
        }
        rho = rho_new;
        if iter == MAX_POWER_ITER {
            return Err(KmError::Convergence(format!(
                "Poincare power iteration did not converge in {MAX_POWER_ITER} iterations"
            )));
        }
    }

    let lambda = rho.ln() / map_period;

    // residual: one more application should reproduce rho * segment
    let check = advance(&rhs, &seg, 0.0, map_period, step)?;
    let mut defect = 0.0_f64;
    for (a, b) in check.values.iter().zip(seg.values.iter()) {
        defect = defect.max((a[0] / rho - b[0]).abs());
    }
    let residual = defect / seg.sup_norm();

    // eigenfunction over one map period: solution from the converged
    // segment, de-trended by e^{-lambda t} and max-normalized
    let mut times = Vec::new();
    let mut samples = Vec::new();
    advance_observed(&rhs, &seg, 0.0, map_period, step, |t, y| {
        times.push(t);
        samples.push(y[0] * (-lambda * t).exp());
    })?;
    let peak = samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let values: Vec<f64> = samples.iter().map(|v| v / peak).collect();
    Ok(FloquetResult {
        rho,
        lambda,
        eigenfunction: PeriodicSamples {
            period: map_period,
            values,
        },
        iterations,
        residual,
    })
}

/// Positive periodic solution K of the shifted equation
/// K' = [a(t) - shift] K + b(t) e^{-shift tau} K(t - tau),
/// which exists exactly when the shifted Poincare map has unit spectral
/// radius. Returns K over one map period, max-normalized.
pub fn periodic_eigenfunction(
    eq: &LinearDelayEq,
    shift: f64,
    period_multiple: usize,
) -> Result<PeriodicSamples> {
    let shifted = eq.shifted(shift);
    let fl = poincare_spectral_radius(&shifted, period_multiple)?;
    if (fl.rho - 1.0).abs() > 1e-8 {
        return Err(KmError::InconsistentShift(format!(
            "shifted spectral radius {} differs from 1 by {:.3e}",
            fl.rho,
            (fl.rho - 1.0).abs()
        )));
    }
    let k = fl.eigenfunction;
    if k.min_value() <= 0.0 {
        return Err(KmError::Convergence(
            "periodic eigenfunction is not strictly positive".into(),
        ));
    }
    // defect of the defining equation, derivative by 4th-order central
    // differences on the periodic samples
    let n = k.values.len() - 1;
    let h = k.period / n as f64;
    let mut defect = 0.0_f64;
    for i in 0..n {
        let at = |j: isize| k.values[(i as isize + j).rem_euclid(n as isize) as usize];
        let kp = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
        let t = i as f64 * h;
        let r = kp - shifted.a(t) * k.eval(t) - shifted.b(t) * k.eval(t - eq.tau);
        defect = defect.max(r.abs());
    }
    if defect > 1e-6 {
        return Err(KmError::Convergence(format!(
            "periodic eigenfunction residual {defect:.3e} exceeds 1e-6"
        )));
    }
    Ok(k)
}

/// Trajectory of the spatially homogeneous kinetic system.
#[derive(Debug, Clone)]
pub struct KineticTrajectory {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub final_segment: HistorySegment<2>,
}

/// Integrate S' = -beta(t) S I,
/// I' = e^{-int gamma_L} beta(t-tau) S(t-tau) I(t-tau) - gamma(t) I
/// from a (S, I) history.
pub fn solve_kinetic(
    p: &ModelParams,
    initial: &HistorySegment<2>,
    duration: f64,
    steps_per_unit: usize,
) -> Result<KineticTrajectory> {
    if initial.min_value() < 0.0 {
        return Err(KmError::Argument("initial history must be nonnegative".into()));
    }
    let step = commensurate_step(p.tau, p.period(), steps_per_unit)?;
    // round the duration onto the step grid
    let duration = (duration / step).round().max(1.0) * step;
    let survival = p.survival_function();
    let beta = p.beta.clone();
    let gamma = p.gamma.clone();
    let tau = p.tau;
    let rhs = move |t: f64, y: &[f64; 2], yd: &[f64; 2]| {
        let infection = beta.eval(t) * y[0] * y[1];
        let delayed_influx = survival(t) * beta.eval(t - tau) * yd[0] * yd[1];
        [-infection, delayed_influx - gamma.eval(t) * y[1]]
    };
    let mut times = Vec::new();
    let mut s = Vec::new();
    let mut i = Vec::new();
    let mut violation = 0.0_f64;
    let final_segment = advance_observed(&rhs, initial, 0.0, duration, step, |t, y| {
        times.push(t);
        s.push(y[0]);
        i.push(y[1]);
        violation = violation.min(y[0].min(y[1]));
    })?;
    if violation < -1e-12 {
        return Err(KmError::Positivity(format!(
            "kinetic state reached {violation:.3e}; reduce the step"
        )));
    }
    Ok(KineticTrajectory {
        times,
        s,
        i,
        final_segment,
    })
}

/// Result of the periodic attractor computation for the saturated
/// perturbation equation.
#[derive(Debug, Clone)]
pub struct AttractorResult {
    /// One period of the attractor.
    pub u: PeriodicSamples,
    pub max_value: f64,
    /// Set when max u >= bound - 1 (the proof requires strict inequality).
    pub exceeds_bound: bool,
    pub periods_used: usize,
}

/// Unique positive T-periodic attractor of
/// u' = e^{-int gamma_L} beta(t-tau)(S0 - eps) u(t-tau)/(1 + u(t-tau)) - gamma(t) u,
/// reached by forward integration from a positive constant history.
pub fn periodic_attractor_u(p: &ModelParams, eps: f64, bound_a: f64) -> Result<AttractorResult> {
    if !(eps >= 0.0 && eps < p.s0) {
        return Err(KmError::Argument(format!("eps must lie in [0, S0), got {eps}")));
    }
    let period = p.period();
    // linear instability of u = 0 is the existence condition
    let lin = linearized_eq(p, eps)?;
    let fl = poincare_spectral_radius(&lin, 1)?;
    if fl.lambda <= 0.0 {
        return Err(KmError::Precondition(format!(
            "periodic attractor requires an unstable trivial state (lambda = {:.3e} <= 0, i.e. R0^eps <= 1)",
            fl.lambda
        )));
    }

    let step = commensurate_step(p.tau, period, DEFAULT_STEPS_PER_UNIT)?;
    let survival = p.survival_function();
    let beta = p.beta.clone();
    let gamma = p.gamma.clone();
    let tau = p.tau;
    let s0 = p.s0;
    let rhs = move |t: f64, y: &[f64; 1], yd: &[f64; 1]| {
        let u_d = yd[0];
        [survival(t) * beta.eval(t - tau) * (s0 - eps) * u_d / (1.0 + u_d) - gamma.eval(t) * y[0]]
    };

    let n_nodes = if tau < step {
        33
    } else {
        (tau / step).round() as usize + 1
    };
    let mut seg = HistorySegment::<1>::constant(tau, n_nodes, [0.1 * s0]);
    let steps_per_period = (period / step).round() as usize;
    let max_periods = 10_000usize;
    let mut prev: Vec<f64> = Vec::new();
    for cycle in 1..=max_periods {
        let mut current = Vec::with_capacity(steps_per_period + 1);
        seg = advance_observed(&rhs, &seg, 0.0, period, step, |_, y| current.push(y[0]))?;
        if !prev.is_empty() {
            let scale = current.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
            let diff = current
                .iter()
                .zip(prev.iter())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if diff / scale < 1e-9 {
                let max_value = current.iter().fold(0.0_f64, |m, x| m.max(*x));
                if max_value < 1e-10 * s0 {
                    return Err(KmError::Precondition(
                        "attractor collapsed to zero (R0^eps <= 1)".into(),
                    ));
                }
                return Ok(AttractorResult {
                    u: PeriodicSamples {
                        period,
                        values: current,
                    },
                    max_value,
                    exceeds_bound: max_value >= bound_a - 1.0,
                    periods_used: cycle,
                });
            }
        }
        prev = current;
    }
    Err(KmError::Convergence(format!(
        "periodic attractor did not settle within {max_periods} periods"
    )))
}

/// The epsilon-perturbed linearization at the disease-free state:
/// I' = e^{-int gamma_L} beta(t-tau)(S0 - eps) I(t-tau) - gamma(t) I.
pub fn linearized_eq(p: &ModelParams, eps: f64) -> Result<LinearDelayEq> {
    if !(eps >= 0.0 && eps < p.s0) {
        return Err(KmError::Argument(format!("eps must lie in [0, S0), got {eps}")));
    }
    let survival = p.survival_function();
    let beta = p.beta.clone();
    let gamma = p.gamma.clone();
    let tau = p.tau;
    let s0 = p.s0;
    LinearDelayEq::new(
        p.period(),
        tau,
        move |t| -gamma.eval(t),
        move |t| survival(t) * beta.eval(t - tau) * (s0 - eps),
    )
}
