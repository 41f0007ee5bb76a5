//! Free-energy curves, Legendre–Fenchel rate functions, symmetry residuals and
//! the periodic entropy production rate.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{
    asymptotic_law, backward_asymptotic_law, integrate_law, monodromy, perron, Direction, Functional, LawView,
    PeriodicLaw, Tilt,
};
use crate::protocol::{RateModel, Reversed, RATE_EPS};
use crate::simulate::{functional_samples, heat, sample_from_law, ThinningSampler};

pub const DEFAULT_LAMBDA_MIN: f64 = -3.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 2.0;
pub const DEFAULT_LAMBDA_POINTS: usize = 201;
pub const DEFAULT_Z_POINTS: usize = 401;

const TIE_TOL: f64 = 1e-12;
const GRID_MATCH_TOL: f64 = 1e-9;

/// `points` uniform values on `[min, max]`.
pub fn uniform_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(max > min) {
        return Err(Error::Grid(format!("bad grid [{min}, {max}] with {points} points")));
    }
    Ok((0..points)
        .map(|k| min + (max - min) * k as f64 / (points - 1) as f64)
        .collect())
}

pub fn default_lambda_grid() -> Vec<f64> {
    uniform_grid(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_POINTS).unwrap()
}

/// `-z` for every point, in increasing order.
pub fn mirrored(grid: &[f64]) -> Vec<f64> {
    grid.iter().rev().map(|z| -z).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeEnergyCurve {
    pub functional: Functional,
    pub direction: Direction,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub gap_ratios: Vec<f64>,
    pub steps: Vec<usize>,
}

impl FreeEnergyCurve {
    /// Builds a curve from given values, e.g. a closed form.
    pub fn from_values(functional: Functional, direction: Direction, lambdas: Vec<f64>, values: Vec<f64>) -> Self {
        let n = lambdas.len();
        Self {
            functional,
            direction,
            lambdas,
            values,
            gap_ratios: vec![0.0; n],
            steps: vec![0; n],
        }
    }

    /// Smallest second difference (scaled by `h^2`); negative means nonconvex.
    pub fn min_second_difference(&self) -> f64 {
        min_second_difference(&self.lambdas, &self.values)
    }

    /// Value at the grid point nearest `lambda`.
    pub fn value_near(&self, lambda: f64) -> Option<f64> {
        find(&self.lambdas, lambda).map(|k| self.values[k])
    }
}

fn min_second_difference(x: &[f64], y: &[f64]) -> f64 {
    let mut min = f64::INFINITY;
    for k in 1..x.len().saturating_sub(1) {
        if !(y[k - 1].is_finite() && y[k].is_finite() && y[k + 1].is_finite()) {
            continue;
        }
        let h1 = x[k] - x[k - 1];
        let h2 = x[k + 1] - x[k];
        let slope_change = (y[k + 1] - y[k]) / h2 - (y[k] - y[k - 1]) / h1;
        min = min.min(slope_change * 0.5 * (h1 + h2));
    }
    min
}

fn find(grid: &[f64], x: f64) -> Option<usize> {
    let k = grid.partition_point(|&g| g < x - GRID_MATCH_TOL);
    (k < grid.len() && (grid[k] - x).abs() <= GRID_MATCH_TOL).then_some(k)
}

/// Periodic laws needed by the entropy-production tilt in a given direction.
pub fn tilt_law<M: RateModel + ?Sized>(model: &M, direction: Direction, steps: usize) -> Result<PeriodicLaw> {
    match direction {
        Direction::Forward => asymptotic_law(model, steps),
        Direction::Backward => backward_asymptotic_law(model, steps),
    }
}

/// Principal Floquet exponents of the tilted monodromy on a lambda grid.
pub fn free_energy_curve<M: RateModel + ?Sized>(
    model: &M,
    functional: Functional,
    direction: Direction,
    lambdas: &[f64],
    steps_per_period: usize,
) -> Result<FreeEnergyCurve> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("lambda grid must be nonempty and increasing".into()));
    }
    let law = match functional {
        Functional::S => Some(tilt_law(model, direction, steps_per_period)?),
        Functional::W => None,
    };
    let points: Vec<(f64, f64, usize)> = lambdas
        .par_iter()
        .map(|&lambda| {
            let tilt = match &law {
                Some(l) => Tilt::S(lambda, l),
                None => Tilt::W(lambda),
            };
            let m = monodromy(model, tilt, 0.0, direction, steps_per_period)?;
            let d = perron(&m)?;
            Ok((d.exponent, d.gap_ratio, m.steps))
        })
        .collect::<Result<_>>()?;
    Ok(FreeEnergyCurve {
        functional,
        direction,
        lambdas: lambdas.to_vec(),
        values: points.iter().map(|p| p.0).collect(),
        gap_ratios: points.iter().map(|p| p.1).collect(),
        steps: points.iter().map(|p| p.2).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFunction {
    pub zs: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax_lambdas: Vec<f64>,
    /// True where the supremum sits on the edge of the lambda grid.
    pub boundary: Vec<bool>,
    /// `(z*, I(z*))` over the z grid.
    pub minimizer: (f64, f64),
}

impl RateFunction {
    pub fn min_second_difference(&self) -> f64 {
        min_second_difference(&self.zs, &self.values)
    }

    /// Value at the grid point matching `z`, if that point is not boundary flagged.
    pub fn value_at(&self, z: f64) -> Option<f64> {
        find(&self.zs, z).filter(|&k| !self.boundary[k]).map(|k| self.values[k])
    }
}

fn cubic_through(xs: [f64; 4], ys: [f64; 4]) -> impl Fn(f64) -> f64 {
    move |x| {
        let mut total = 0.0;
        for i in 0..4 {
            let mut basis = 1.0;
            for j in 0..4 {
                if i != j {
                    basis *= (x - xs[j]) / (xs[i] - xs[j]);
                }
            }
            total += ys[i] * basis;
        }
        total
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `I(z) = sup_lambda {lambda z - c(lambda)}` on a z grid.
///
/// The grid supremum is refined by golden-section search on a local cubic
/// interpolant of `c` over the bracket around the grid maximizer.
pub fn legendre_fenchel(curve: &FreeEnergyCurve, zs: &[f64]) -> Result<RateFunction> {
    let lam = &curve.lambdas;
    let c = &curve.values;
    let n = lam.len();
    if n < 4 {
        return Err(Error::Grid("need at least 4 lambda points".into()));
    }
    if zs.is_empty() || zs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("z grid must be nonempty and increasing".into()));
    }
    let affine = min_second_difference(lam, c).abs() < 1e-12
        && (1..n - 1).all(|k| {
            let h1 = lam[k] - lam[k - 1];
            let h2 = lam[k + 1] - lam[k];
            ((c[k + 1] - c[k]) / h2 - (c[k] - c[k - 1]) / h1).abs() < 1e-10
        });

    let mut values = Vec::with_capacity(zs.len());
    let mut argmax = Vec::with_capacity(zs.len());
    let mut boundary = Vec::with_capacity(zs.len());
    for &z in zs {
        let f: Vec<f64> = (0..n).map(|k| lam[k] * z - c[k]).collect();
        let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tol = TIE_TOL * (1.0 + fmax.abs());
        let k = f.iter().position(|&v| v >= fmax - tol).unwrap();
        let interior_tie = (1..n - 1).any(|j| f[j] >= fmax - tol);
        let on_edge = !interior_tie;

        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
        // average of the two four-point stencils straddling the bracket,
        // so that mirrored grids see mirrored interpolants
        let stencil = |start: usize| {
            let xs = [lam[start], lam[start + 1], lam[start + 2], lam[start + 3]];
            let ys = [c[start], c[start + 1], c[start + 2], c[start + 3]];
            cubic_through(xs, ys)
        };
        let left = stencil(k.saturating_sub(2).min(n - 4));
        let right = stencil(k.saturating_sub(1).min(n - 4));
        let interp = |l: f64| 0.5 * (left(l) + right(l));
        let obj = |l: f64| l * z - interp(l);
        let best_l = golden_max(obj, lam[lo], lam[hi]);
        let (l_star, v_star) = if obj(best_l) > fmax { (best_l, obj(best_l)) } else { (lam[k], fmax) };

        if on_edge && affine {
            values.push(f64::INFINITY);
        } else {
            values.push(v_star);
        }
        argmax.push(l_star);
        boundary.push(on_edge);
    }
    let kmin = (0..zs.len())
        .filter(|&k| values[k].is_finite())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .ok_or_else(|| Error::Grid("rate function has no finite value".into()))?;
    Ok(RateFunction {
        zs: zs.to_vec(),
        minimizer: (zs[kmin], values[kmin]),
        values,
        argmax_lambdas: argmax,
        boundary,
    })
}

/// `points` values spanning the slope range `[c'(lambda_min), c'(lambda_max)]`,
/// with end slopes from one-sided second-order differences.
pub fn slope_range_grid(curve: &FreeEnergyCurve, points: usize) -> Result<Vec<f64>> {
    let l = &curve.lambdas;
    let c = &curve.values;
    let n = l.len();
    if n < 3 {
        return Err(Error::Grid("need at least 3 lambda points".into()));
    }
    let h0 = l[1] - l[0];
    let h1 = l[n - 1] - l[n - 2];
    let lo = (-3.0 * c[0] + 4.0 * c[1] - c[2]) / (2.0 * h0);
    let hi = (3.0 * c[n - 1] - 4.0 * c[n - 2] + c[n - 3]) / (2.0 * h1);
    if !(hi > lo + 1e-12) {
        // flat curve: a small symmetric window around the single slope
        let mid = 0.5 * (lo + hi);
        return uniform_grid(mid - 1.0, mid + 1.0, points);
    }
    uniform_grid(lo, hi, points)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Derivative {
    pub value: f64,
    /// Same stencil with spacing `2h`.
    pub coarse: f64,
    pub h: f64,
}

impl Derivative {
    /// Difference between the `h` and `2h` estimates.
    pub fn richardson_gap(&self) -> f64 {
        (self.value - self.coarse).abs()
    }
}

/// Five-point central difference of `c` at `lambda = 0`.
pub fn derivative_at_zero(curve: &FreeEnergyCurve) -> Result<Derivative> {
    let l = &curve.lambdas;
    let c = &curve.values;
    let k0 = find(l, 0.0).ok_or_else(|| Error::Grid("lambda grid does not contain 0".into()))?;
    if k0 < 4 || k0 + 4 >= l.len() {
        return Err(Error::Grid("lambda grid lacks a symmetric stencil around 0".into()));
    }
    let h = l[k0 + 1] - l[k0];
    for j in 1..=4 {
        let left = l[k0] - l[k0 - j];
        let right = l[k0 + j] - l[k0];
        if (left - j as f64 * h).abs() > 1e-9 || (right - j as f64 * h).abs() > 1e-9 {
            return Err(Error::Grid("lambda grid is not uniform around 0".into()));
        }
    }
    let d = |s: usize| {
        let hh = s as f64 * h;
        (-c[k0 + 2 * s] + 8.0 * c[k0 + s] - 8.0 * c[k0 - s] + c[k0 - 2 * s]) / (12.0 * hh)
    };
    Ok(Derivative {
        value: d(1),
        coarse: d(2),
        h,
    })
}

/// Instantaneous entropy production rate at `s` for the law `nu`.
pub fn ep_rate<M: RateModel + ?Sized>(model: &M, nu: &dyn LawView, s: f64) -> Result<f64> {
    let rates = model.rate_matrix(s);
    let law = nu.law_at(s);
    let n = model.n_states();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (kij, kji) = (rates[(i, j)], rates[(j, i)]);
            match (kij > RATE_EPS, kji > RATE_EPS) {
                (false, false) => continue,
                (true, true) => {}
                _ => {
                    return Err(Error::ErgodicConsistency {
                        detail: format!("one-sided flux between states {} and {} at s = {s}", i + 1, j + 1),
                    })
                }
            }
            let a = law[i] * kij;
            let b = law[j] * kji;
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::DegenerateLaw {
                    state: if a > 0.0 { j } else { i },
                    value: law[if a > 0.0 { j } else { i }],
                    time: s,
                });
            }
            total += (a - b) * (a / b).ln();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `(1/T) int_0^T e_p(s) ds` by the composite trapezoid rule.
    pub time_average: f64,
}

/// `e_p(s)` on `points` uniform times over one period of the periodic law.
pub fn ep_curve_with<M: RateModel + ?Sized>(model: &M, nu: &PeriodicLaw, points: usize) -> Result<EpCurve> {
    let period = nu.period();
    let grid = uniform_grid(0.0, period, points.max(2))?;
    let values: Vec<f64> = grid.iter().map(|&s| ep_rate(model, nu, s)).collect::<Result<_>>()?;
    let h = period / (grid.len() - 1) as f64;
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    let integral = h * (inner + 0.5 * (values[0] + values[values.len() - 1]));
    Ok(EpCurve {
        grid,
        values,
        time_average: integral / period,
    })
}

/// `e_p` over one period, sampled on the integrator grid.
pub fn ep_curve<M: RateModel + ?Sized>(model: &M, steps_per_period: usize) -> Result<EpCurve> {
    let nu = asymptotic_law(model, steps_per_period)?;
    ep_curve_with(model, &nu, steps_per_period + 1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FtReport {
    /// `max |c(lambda) - c^B(-(1+lambda))|`.
    pub c_max: f64,
    pub c_mean: f64,
    pub c_points: usize,
    /// `max |I(z) - I^B(-z) + z|` over z not flagged on either side.
    pub i_max: f64,
    pub i_mean: f64,
    pub i_points: usize,
    /// `max |c(lambda) - c(-1-lambda)|` on the forward curve.
    pub internal_gc: f64,
    pub time_symmetric: bool,
}

fn mirror_residuals<F: Fn(usize, usize) -> Option<f64>>(from: &[f64], to: &[f64], map: impl Fn(f64) -> f64, f: F) -> Result<Vec<f64>> {
    let (lo, hi) = (to[0], to[to.len() - 1]);
    let mut out = Vec::new();
    for (k, &x) in from.iter().enumerate() {
        let y = map(x);
        if y < lo - GRID_MATCH_TOL || y > hi + GRID_MATCH_TOL {
            continue;
        }
        let j = find(to, y).ok_or_else(|| Error::Grid(format!("grid point {x} has no mirror {y}")))?;
        if let Some(r) = f(k, j) {
            out.push(r);
        }
    }
    Ok(out)
}

fn max_mean(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let max = xs.iter().cloned().fold(0.0, f64::max);
    (max, xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Residuals of the forward/backward symmetry of `c` and `I`.
pub fn ft_residuals(
    fwd: &FreeEnergyCurve,
    bwd: &FreeEnergyCurve,
    fwd_rate: &RateFunction,
    bwd_rate: &RateFunction,
    time_symmetric: bool,
) -> Result<FtReport> {
    let c_res = mirror_residuals(&fwd.lambdas, &bwd.lambdas, |l| -1.0 - l, |k, j| {
        Some((fwd.values[k] - bwd.values[j]).abs())
    })?;
    if c_res.is_empty() {
        return Err(Error::Grid("lambda grids have no mirrored overlap".into()));
    }
    let i_res = mirror_residuals(&fwd_rate.zs, &bwd_rate.zs, |z| -z, |k, j| {
        if fwd_rate.boundary[k] || bwd_rate.boundary[j] {
            None
        } else {
            Some((fwd_rate.values[k] - bwd_rate.values[j] + fwd_rate.zs[k]).abs())
        }
    })?;
    let gc = mirror_residuals(&fwd.lambdas, &fwd.lambdas, |l| -1.0 - l, |k, j| {
        Some((fwd.values[k] - fwd.values[j]).abs())
    })?;
    let (c_max, c_mean) = max_mean(&c_res);
    let (i_max, i_mean) = max_mean(&i_res);
    Ok(FtReport {
        c_max,
        c_mean,
        c_points: c_res.len(),
        i_max,
        i_mean,
        i_points: i_res.len(),
        internal_gc: max_mean(&gc).0,
        time_symmetric,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilityRatio {
    pub z: f64,
    pub epsilon: f64,
    pub t: f64,
    /// `(1/t) log(forward_hits / backward_hits)`.
    pub exponent: f64,
    pub std_error: f64,
    pub forward_hits: usize,
    pub backward_hits: usize,
    pub n_paths: usize,
}

/// Monte Carlo estimate of `(1/t) log P(S/t in [z-eps, z+eps]) / P^B(S^B/t in [-z-eps, -z+eps])`.
///
/// The forward chain starts from the periodic law at 0. The backward process
/// runs the reversed rates from the forward law at `t`; its entropy production
/// is taken relative to the forward path measure, so `S^B` of a path equals
/// `-S` of its time reversal.
pub fn probability_ratio<M: RateModel + ?Sized>(
    model: &M,
    z: f64,
    epsilon: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
    steps_per_period: usize,
) -> Result<ProbabilityRatio> {
    if !(epsilon > 0.0) || !(t > 0.0) {
        return Err(Error::Config("epsilon and t must be positive".into()));
    }
    let pi = match model.period() {
        Some(_) => asymptotic_law(model, steps_per_period)?.initial(),
        None => return Err(Error::Config("probability ratio needs a periodic model".into())),
    };
    let law = integrate_law(model, &pi, t, steps_per_period)?;
    let forward = functional_samples(model, Functional::S, t, n_paths, seed, &pi, Some(&law))?;
    let in_bin = |x: f64, centre: f64| (x / t - centre).abs() <= epsilon;
    let forward_hits = forward.iter().filter(|&&s| in_bin(s, z)).count();

    let reversed = Reversed::new(model, t);
    let end_law = law.final_law().to_vec();
    let sampler = ThinningSampler::new(&reversed, 0.0, t);
    let backward: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let path = sample_from_law(&reversed, &sampler, &end_law, 0.0, t, seed ^ 0x9e37_79b9_7f4a_7c15, id)?;
            let (w, _) = heat(&reversed, &path)?;
            Ok(w + end_law[path.initial_state].ln() - pi[path.final_state()].ln())
        })
        .collect::<Result<_>>()?;
    let backward_hits = backward.iter().filter(|&&s| in_bin(s, -z)).count();
    if forward_hits == 0 || backward_hits == 0 {
        return Err(Error::InsufficientSamples(format!(
            "empty bin: forward hits {forward_hits}, backward hits {backward_hits} of {n_paths}"
        )));
    }
    let exponent = (forward_hits as f64 / backward_hits as f64).ln() / t;
    let std_error = (1.0 / forward_hits as f64 + 1.0 / backward_hits as f64).sqrt() / t;
    Ok(ProbabilityRatio {
        z,
        epsilon,
        t,
        exponent,
        std_error,
        forward_hits,
        backward_hits,
        n_paths,
    })
}

/// Writes `lambda,c_fwd,c_bwd` rows. The curves must share the lambda grid.
pub fn write_curves_csv<W: Write>(fwd: &FreeEnergyCurve, bwd: &FreeEnergyCurve, mut out: W) -> Result<()> {
    if fwd.lambdas.len() != bwd.lambdas.len()
        || fwd.lambdas.iter().zip(&bwd.lambdas).any(|(a, b)| (a - b).abs() > GRID_MATCH_TOL)
    {
        return Err(Error::Grid("forward and backward curves use different grids".into()));
    }
    writeln!(out, "lambda,c_fwd,c_bwd")?;
    for k in 0..fwd.lambdas.len() {
        writeln!(out, "{},{},{}", fwd.lambdas[k], fwd.values[k], bwd.values[k])?;
    }
    Ok(())
}

/// Writes `z,I_fwd,I_bwd,residual,boundary` rows where `I_bwd` is `I^B(-z)`
/// and `residual` is `I(z) - I^B(-z) + z`.
pub fn write_rate_csv<W: Write>(fwd: &RateFunction, bwd: &RateFunction, mut out: W) -> Result<()> {
    writeln!(out, "z,I_fwd,I_bwd,residual,boundary")?;
    for (k, &z) in fwd.zs.iter().enumerate() {
        let (ib, flagged) = match find(&bwd.zs, -z) {
            Some(j) => (bwd.values[j], bwd.boundary[j]),
            None => (f64::NAN, true),
        };
        let residual = fwd.values[k] - ib + z;
        writeln!(
            out,
            "{},{},{},{},{}",
            z,
            fwd.values[k],
            ib,
            residual,
            u8::from(fwd.boundary[k] || flagged)
        )?;
    }
    Ok(())
}

/// Writes `s,e_p` rows.
pub fn write_ep_csv<W: Write>(curve: &EpCurve, mut out: W) -> Result<()> {
    writeln!(out, "s,e_p")?;
    for (s, v) in curve.grid.iter().zip(&curve.values) {
        writeln!(out, "{s},{v}")?;
    }
    Ok(())
}
