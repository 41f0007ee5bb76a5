//! Aperiodic epoch-doubling driving for which the entropy-production free
//! energy has no limit.
//!
//! The generator alternates between `A_c` and `gamma A_c` on epochs
//! `[t_{k-1}, t_k)` with `t_k = k t_{k-1}`, joined by short linear ramps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{propagate_vector, Direction};
use crate::protocol::{generator_from_rates, tilt_w_from_rates, RateModel, RATE_EPS};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 5.0;
pub const DEFAULT_K_MAX: usize = 8;
/// Declared accuracy of the finite-time free energy; the measured
/// step-halving change is used when it is larger.
pub const DEFAULT_INTEGRATOR_TOL: f64 = 1e-8;

/// `-1 / Re(lambda_2)` for the second-largest real part of the spectrum.
pub fn mixing_time(generator: &DMatrix<f64>) -> Result<f64> {
    if generator.nrows() < 2 {
        return Err(Error::SpectralGap(0.0));
    }
    let mut re: Vec<f64> = generator.complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    let second = re[1];
    if second.abs() < 1e-12 {
        return Err(Error::SpectralGap(second.abs()));
    }
    Ok(-1.0 / second)
}

/// True when every simple cycle of length >= 3 has equal products of
/// forward and backward rates.
pub fn satisfies_detailed_balance(rates: &DMatrix<f64>) -> bool {
    let n = rates.nrows();
    let mut balanced = true;
    let mut path = Vec::with_capacity(n);
    let mut used = vec![false; n];
    for start in 0..n {
        path.clear();
        path.push(start);
        used.iter_mut().for_each(|u| *u = false);
        used[start] = true;
        cycles_from(rates, start, &mut path, &mut used, &mut balanced);
        if !balanced {
            return false;
        }
    }
    balanced
}

fn cycles_from(rates: &DMatrix<f64>, start: usize, path: &mut Vec<usize>, used: &mut [bool], balanced: &mut bool) {
    let n = rates.nrows();
    let last = path[path.len() - 1];
    for next in start + 1..n {
        if used[next] || rates[(last, next)] <= RATE_EPS {
            continue;
        }
        path.push(next);
        used[next] = true;
        if path.len() >= 3 && rates[(next, start)] > RATE_EPS {
            let (mut fwd, mut bwd) = (0.0, 0.0);
            for k in 0..path.len() {
                let (a, b) = (path[k], path[(k + 1) % path.len()]);
                fwd += rates[(a, b)].ln();
                bwd += rates[(b, a)].ln();
            }
            if (fwd - bwd).abs() > 1e-10 * (1.0 + fwd.abs()) {
                *balanced = false;
            }
        }
        cycles_from(rates, start, path, used, balanced);
        path.pop();
        used[next] = false;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub t1: f64,
    /// `t_1, ..., t_{k_max}`.
    pub epochs: Vec<f64>,
    pub k_max: usize,
    pub gamma: f64,
    /// Off-diagonal rates of `A_c`.
    pub base_rates: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub smoothing_width: f64,
    /// Mixing time of `A_c`, the slower of the two generators.
    pub mixing_time: f64,
}

impl EpochSchedule {
    /// 1-based index of the epoch containing `t`; epoch `k` is `[t_{k-1}, t_k)`.
    pub fn epoch_of(&self, t: f64) -> usize {
        self.epochs.partition_point(|&e| e <= t) + 1
    }

    fn factor_of_epoch(&self, k: usize) -> f64 {
        if k % 2 == 1 {
            1.0
        } else {
            self.gamma
        }
    }

    /// Multiplier of `A_c` at `t`, ramping linearly over `[t_k, t_k + w]`.
    pub fn factor(&self, t: f64) -> f64 {
        let k = self.epoch_of(t);
        let f = self.factor_of_epoch(k);
        if k >= 2 {
            let start = self.epochs[k - 2];
            if t < start + self.smoothing_width {
                let prev = self.factor_of_epoch(k - 1);
                return prev + (f - prev) * (t - start) / self.smoothing_width;
            }
        }
        f
    }

    /// Largest `|d k_ij / dt|` on the ramps.
    pub fn slope_bound(&self) -> f64 {
        let kmax = self
            .base_rates
            .iter()
            .flat_map(|r| r.iter())
            .cloned()
            .fold(0.0, f64::max);
        (self.gamma - 1.0) * kmax / self.smoothing_width
    }
}

/// The aperiodic protocol.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub schedule: EpochSchedule,
    base: DMatrix<f64>,
}

impl Counterexample {
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Stationary law of `A_c`.
    pub fn base_stationary(&self) -> Vec<f64> {
        stationary(&generator_from_rates(&self.base))
    }
}

fn stationary(a: &DMatrix<f64>) -> Vec<f64> {
    // solve A^T x = 0 with sum(x) = 1
    let n = a.nrows();
    let mut m = a.transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = m.lu().solve(&rhs).expect("irreducible generator");
    x.iter().cloned().collect()
}

impl RateModel for Counterexample {
    fn n_states(&self) -> usize {
        self.base.nrows()
    }

    fn rate(&self, from: usize, to: usize, t: f64) -> f64 {
        if from == to {
            0.0
        } else {
            self.base[(from, to)] * self.schedule.factor(t)
        }
    }

    fn period(&self) -> Option<f64> {
        None
    }

    fn rate_matrix(&self, t: f64) -> DMatrix<f64> {
        &self.base * self.schedule.factor(t)
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let w = self.schedule.smoothing_width;
        self.schedule
            .epochs
            .iter()
            .flat_map(|&e| [e, e + w])
            .filter(|&b| b > t0 && b < t1)
            .collect()
    }

    fn constant_on(&self, t0: f64, t1: f64) -> bool {
        let w = self.schedule.smoothing_width;
        !self.schedule.epochs.iter().any(|&e| t0 < e + w && t1 > e)
    }
}

/// Options beyond the required construction parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub t1: Option<f64>,
    pub smoothing_width: Option<f64>,
}

/// Builds the alternating protocol from off-diagonal base rates.
pub fn build_counterexample(
    alpha: f64,
    beta: f64,
    base_rates: &DMatrix<f64>,
    gamma: f64,
    k_max: usize,
    options: BuildOptions,
) -> Result<Counterexample> {
    let n = base_rates.nrows();
    if n != base_rates.ncols() || n == 0 {
        return Err(Error::Construction("base rates must be a square matrix".into()));
    }
    if !(gamma > 1.0) {
        return Err(Error::Construction(format!("gamma = {gamma} must exceed 1")));
    }
    if k_max < 1 {
        return Err(Error::Construction("k_max must be at least 1".into()));
    }
    if !(0.0 <= alpha && alpha < beta) {
        return Err(Error::Construction(format!("need 0 <= alpha < beta, got ({alpha}, {beta})")));
    }
    let mut base = base_rates.clone();
    for i in 0..n {
        base[(i, i)] = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = base[(i, j)];
            if (k > RATE_EPS) != (base_rates[(j, i)] > RATE_EPS) {
                return Err(Error::Construction(format!(
                    "edge ({}, {}) is one-sided",
                    i + 1,
                    j + 1
                )));
            }
            if k > RATE_EPS && !(alpha < k && k < beta && alpha < gamma * k && gamma * k < beta) {
                return Err(Error::Construction(format!(
                    "rate k_{}{} = {k} with gamma = {gamma} leaves ({alpha}, {beta})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    if satisfies_detailed_balance(&base) {
        return Err(Error::Construction("base rates satisfy detailed balance".into()));
    }
    let tau = mixing_time(&generator_from_rates(&base))?.max(mixing_time(&generator_from_rates(&(&base * gamma)))?);
    let t1 = options.t1.unwrap_or(10.0 * tau);
    if t1 < 10.0 * tau * (1.0 - 1e-12) {
        return Err(Error::Construction(format!("t1 = {t1} is below 10 mixing times ({tau})")));
    }
    let width = options.smoothing_width.unwrap_or((0.01 * t1).min(1.0));
    if !(width > 0.0 && width < t1) {
        return Err(Error::Construction(format!("smoothing width {width} must lie in (0, t1)")));
    }
    let mut epochs = vec![t1];
    for k in 2..=k_max {
        let prev = epochs[k - 2];
        epochs.push(k as f64 * prev);
    }
    Ok(Counterexample {
        schedule: EpochSchedule {
            t1,
            epochs,
            k_max,
            gamma,
            base_rates: (0..n).map(|i| (0..n).map(|j| base[(i, j)]).collect()).collect(),
            alpha,
            beta,
            smoothing_width: width,
            mixing_time: tau,
        },
        base,
    })
}

/// `(1/t) log E_pi[exp(lambda S(0, t))]` at each sample time.
///
/// Uses `E_pi[e^{lambda S}] = <rho(t), mu(t)^{-lambda}>` with
/// `d rho / dt = L_lambda(t)^T rho`, `rho(0) = pi^{1+lambda}`, and the law
/// `mu` integrated alongside.
pub fn finite_time_free_energy<M: RateModel + ?Sized>(
    model: &M,
    pi: &[f64],
    lambda: f64,
    sample_times: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<f64>> {
    let n = model.n_states();
    if pi.len() != n || pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Config("initial law must be strictly positive".into()));
    }
    if sample_times.windows(2).any(|w| !(w[1] > w[0])) || sample_times.first().is_some_and(|&t| !(t > 0.0)) {
        return Err(Error::Config("sample times must be positive and increasing".into()));
    }
    let tilted = |t: f64| tilt_w_from_rates(&model.rate_matrix(t), lambda, t).map(|m| m.transpose());
    let law_gen = |t: f64| Ok(generator_from_rates(&model.rate_matrix(t)).transpose());
    let mut rho = DVector::from_iterator(n, pi.iter().map(|p| p.powf(1.0 + lambda)));
    let mut rho_log = 0.0;
    let mut mu = DVector::from_column_slice(pi);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let (r, s) = propagate_vector(model, &tilted, prev, t, Direction::Backward, steps_per_unit, rho)?;
        rho = r;
        rho_log += s;
        let (m, _) = propagate_vector(model, &law_gen, prev, t, Direction::Backward, steps_per_unit, mu)?;
        mu = &m / m.sum();
        let inner: f64 = rho.iter().zip(mu.iter()).map(|(r, m)| r * m.powf(-lambda)).sum();
        out.push((inner.ln() + rho_log) / t);
        prev = t;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub epoch_index: usize,
    /// Odd epochs run `A_c`, even epochs `gamma A_c`.
    pub odd: bool,
    pub value: f64,
}

/// Finite-time free energy at the ends of epochs `1..=k_max` (just before
/// each ramp starts), with the integrator tolerance from step halving.
pub fn free_energy_trace(cx: &Counterexample, lambda: f64, steps_per_unit: usize) -> Result<(Vec<TracePoint>, f64)> {
    let times = cx.schedule.epochs.clone();
    let pi = cx.base_stationary();
    let coarse = finite_time_free_energy(cx, &pi, lambda, &times, steps_per_unit)?;
    let fine = finite_time_free_energy(cx, &pi, lambda, &times, 2 * steps_per_unit)?;
    let halving = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let points = times
        .iter()
        .zip(&fine)
        .enumerate()
        .map(|(k, (&t, &value))| TracePoint {
            t,
            epoch_index: k + 1,
            odd: (k + 1) % 2 == 1,
            value,
        })
        .collect();
    Ok((points, halving.max(DEFAULT_INTEGRATOR_TOL)))
}

/// The same pipeline for a periodic model sampled at `kT`, `k = 1..=periods`.
pub fn periodic_trace<M: RateModel + ?Sized>(
    model: &M,
    pi: &[f64],
    lambda: f64,
    periods: usize,
    steps_per_period: usize,
) -> Result<(Vec<TracePoint>, f64)> {
    let period = model
        .period()
        .ok_or_else(|| Error::Config("periodic trace needs a periodic model".into()))?;
    let times: Vec<f64> = (1..=periods).map(|k| k as f64 * period).collect();
    let coarse = finite_time_free_energy(model, pi, lambda, &times, steps_per_period)?;
    let fine = finite_time_free_energy(model, pi, lambda, &times, 2 * steps_per_period)?;
    let halving = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let points = times
        .iter()
        .zip(&fine)
        .enumerate()
        .map(|(k, (&t, &value))| TracePoint {
            t,
            epoch_index: k + 1,
            odd: (k + 1) % 2 == 1,
            value,
        })
        .collect();
    Ok((points, halving.max(DEFAULT_INTEGRATOR_TOL)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Nonconvergent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonconvergenceReport {
    pub odd_limit: f64,
    pub even_limit: f64,
    pub liminf_est: f64,
    pub limsup_est: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Compares the limits of the odd and even subsequences.
///
/// Each limit is extrapolated from the last two members of its class
/// assuming `c(t) = c + b / t`, which removes the initial-law transient.
pub fn detect_nonconvergence(trace: &[TracePoint], tolerance: f64) -> Result<NonconvergenceReport> {
    let class = |odd: bool| -> Vec<&TracePoint> { trace.iter().filter(|p| p.odd == odd).collect() };
    let (odd, even) = (class(true), class(false));
    if odd.len() < 3 || even.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "need 3 epochs per parity, have {} odd and {} even",
            odd.len(),
            even.len()
        )));
    }
    let limit = |c: &[&TracePoint]| {
        let (a, b) = (c[c.len() - 2], c[c.len() - 1]);
        (b.t * b.value - a.t * a.value) / (b.t - a.t)
    };
    let (odd_limit, even_limit) = (limit(&odd), limit(&even));
    let liminf_est = odd_limit.min(even_limit);
    let limsup_est = odd_limit.max(even_limit);
    let gap = limsup_est - liminf_est;
    Ok(NonconvergenceReport {
        odd_limit,
        even_limit,
        liminf_est,
        limsup_est,
        gap,
        tolerance,
        verdict: if gap > 10.0 * tolerance {
            Verdict::Nonconvergent
        } else {
            Verdict::Convergent
        },
    })
}

/// Writes `t,epoch_index,parity,c_S_lambda_t` rows.
pub fn write_trace_csv<W: Write>(trace: &[TracePoint], mut out: W) -> Result<()> {
    writeln!(out, "t,epoch_index,parity,c_S_lambda_t")?;
    for p in trace {
        writeln!(
            out,
            "{},{},{},{}",
            p.t,
            p.epoch_index,
            if p.odd { "odd" } else { "even" },
            p.value
        )?;
    }
    Ok(())
}

/// Off-diagonal rates of the directed three-state ring.
pub fn ring_rates(p: f64, q: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3, 3);
    for i in 0..3 {
        m[(i, (i + 1) % 3)] = p;
        m[((i + 1) % 3, i)] = q;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mixing_times() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        assert_abs_diff_eq!(mixing_time(&a).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert_abs_diff_eq!(mixing_time(&b).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mixing_time(&(&a * 3.0)).unwrap(), 1.0 / 9.0, epsilon = 1e-12);
        let ring = generator_from_rates(&ring_rates(2.0, 1.0));
        assert_abs_diff_eq!(mixing_time(&ring).unwrap(), 1.0 / 4.5, epsilon = 1e-12);
        let reducible = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(mixing_time(&reducible), Err(Error::SpectralGap(_))));
    }

    #[test]
    fn ring_construction_is_valid() {
        let cx = build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 2.0, 8, BuildOptions::default()).unwrap();
        let s = &cx.schedule;
        assert_abs_diff_eq!(s.t1, 10.0 / 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.smoothing_width, 0.01 * s.t1, epsilon = 1e-15);
        for k in 2..=8 {
            assert_eq!(s.epochs[k - 1], k as f64 * s.epochs[k - 2]);
            assert_abs_diff_eq!(s.epochs[k - 2] / s.epochs[k - 1], 1.0 / k as f64, epsilon = 1e-15);
        }
        assert!(s.slope_bound().is_finite());
    }

    #[test]
    fn rejections() {
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(
            build_counterexample(0.5, 5.0, &two, 2.0, 8, BuildOptions::default()),
            Err(Error::Construction(_))
        ));
        assert!(build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 3.0, 8, BuildOptions::default()).is_err());
        assert!(build_counterexample(0.5, 5.0, &ring_rates(1.5, 1.5), 2.0, 8, BuildOptions::default()).is_err());
        let opts = BuildOptions {
            t1: Some(1.0),
            smoothing_width: None,
        };
        assert!(build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 2.0, 8, opts).is_err());
    }

    #[test]
    fn kolmogorov_criterion() {
        assert!(!satisfies_detailed_balance(&ring_rates(2.0, 1.0)));
        assert!(satisfies_detailed_balance(&ring_rates(1.0, 1.0)));
        // reversible four-state chain built from a potential
        let pot = [0.0f64, 0.3, -0.2, 0.7];
        let m = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { (0.5 * (pot[i] - pot[j])).exp() });
        assert!(satisfies_detailed_balance(&m));
    }

    #[test]
    fn rates_stay_in_bounds_including_ramps() {
        let cx = build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 2.0, 5, BuildOptions::default()).unwrap();
        let w = cx.schedule.smoothing_width;
        for &e in &cx.schedule.epochs {
            for k in 0..=20 {
                let t = e - w + 3.0 * w * k as f64 / 20.0;
                for i in 0..3 {
                    for j in 0..3 {
                        if i != j {
                            let r = cx.rate(i, j, t);
                            assert!(r > 0.5 && r < 5.0);
                        }
                    }
                }
            }
        }
        assert_eq!(cx.schedule.factor(cx.schedule.epochs[0] - 1e-9), 1.0);
        assert_eq!(cx.schedule.factor(cx.schedule.epochs[0] + w), 2.0);
        assert_abs_diff_eq!(cx.schedule.factor(cx.schedule.epochs[1] + 0.5 * w), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn zero_lambda_trace_vanishes() {
        let cx = build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 2.0, 6, BuildOptions::default()).unwrap();
        let (trace, tol) = free_energy_trace(&cx, 0.0, 64).unwrap();
        assert!(trace.iter().all(|p| p.value.abs() < 1e-12));
        let rep = detect_nonconvergence(&trace, tol).unwrap();
        assert_eq!(rep.verdict, Verdict::Convergent);
    }

    #[test]
    fn finite_time_route_matches_tilted_law_route() {
        use crate::propagator::{integrate_law, mgf, Functional};
        let p = catalog::p3_sine();
        let pi = [0.3, 0.7];
        let t = 2.5;
        let law = integrate_law(&p, &pi, t, 1024).unwrap();
        for lambda in [-0.7, 0.5] {
            let u = mgf(&p, Functional::S, lambda, t, Direction::Forward, Some(&law), 1024).unwrap();
            let m_route = u.log_expectation(&pi) / t;
            let l_route = finite_time_free_energy(&p, &pi, lambda, &[t], 1024).unwrap()[0];
            assert_abs_diff_eq!(m_route, l_route, epsilon = 1e-9);
        }
    }

    #[test]
    fn periodic_limits_match_floquet_exponent() {
        use crate::ldp::free_energy_curve;
        use crate::propagator::Functional;
        let p = catalog::p3();
        let (trace, tol) = periodic_trace(&p, &[0.5, 0.5], 0.5, 12, 1024).unwrap();
        let rep = detect_nonconvergence(&trace, tol).unwrap();
        let c = free_energy_curve(&p, Functional::S, Direction::Forward, &[0.5], 1024).unwrap().values[0];
        assert_abs_diff_eq!(rep.odd_limit, c, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.even_limit, c, epsilon = 1e-9);
        assert_eq!(rep.verdict, Verdict::Convergent);
        assert!((trace[0].value - c).abs() > 1e3 * (rep.odd_limit - c).abs().max(1e-15));
    }

    #[test]
    fn insufficient_epochs() {
        let trace: Vec<TracePoint> = (1..=4)
            .map(|k| TracePoint {
                t: k as f64,
                epoch_index: k,
                odd: k % 2 == 1,
                value: 0.0,
            })
            .collect();
        assert!(matches!(detect_nonconvergence(&trace, 1e-8), Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn trace_csv() {
        let trace = vec![TracePoint {
            t: 2.0,
            epoch_index: 1,
            odd: true,
            value: 0.25,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,epoch_index,parity,c_S_lambda_t\n2,1,odd,0.25\n");
    }
}
