//! Time-ordered exponentials of (tilted) generators, period monodromies,
//! Perron data and the periodic law of the chain.
//!
//! Every flow is built from fourth-order Magnus steps. Steps are aligned with
//! the model's breakpoints so that piecewise rates are smooth inside a step,
//! and segments on which the rates are constant use one exact exponential.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, norm_one, GAUSS2};
use crate::protocol::{
    evaluate_generator, tilt_s_from_rates, tilt_w_from_rates, RateModel, Reversed,
};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 2048;

const SQRT3_OVER_12: f64 = 0.144_337_567_297_406_43;
const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 100_000;
const CONSERVATION_TOL: f64 = 1e-6;
const CONSTANT_CHUNK_NORM: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Functional {
    W,
    S,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::W => "W",
            Functional::S => "S",
        }
    }
}

/// A probability law indexed by protocol time.
pub trait LawView: Sync {
    fn n_states(&self) -> usize;
    fn law_at(&self, t: f64) -> Vec<f64>;
}

/// Which matrix drives the flow.
#[derive(Clone, Copy)]
pub enum Tilt<'a> {
    /// The generator `A(t)` itself.
    None,
    /// Heat-dissipation tilt `L_lambda(t)`.
    W(f64),
    /// Entropy-production tilt `M_lambda(t)` built with the given law.
    S(f64, &'a dyn LawView),
}

impl Tilt<'_> {
    pub fn lambda(&self) -> f64 {
        match self {
            Tilt::None => 0.0,
            Tilt::W(l) | Tilt::S(l, _) => *l,
        }
    }

    pub fn matrix<M: RateModel + ?Sized>(&self, model: &M, t: f64) -> Result<DMatrix<f64>> {
        match self {
            Tilt::None => Ok(evaluate_generator(model, t)),
            Tilt::W(lambda) => tilt_w_from_rates(&model.rate_matrix(t), *lambda, t),
            Tilt::S(lambda, law) => tilt_s_from_rates(&model.rate_matrix(t), *lambda, &law.law_at(t), t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    steps: usize,
    constant: bool,
}

/// Splits `[a, b]` at breakpoints and assigns step counts proportional to length.
fn plan<M: RateModel + ?Sized>(model: &M, a: f64, b: f64, steps_per_period: usize, record: bool) -> Vec<Segment> {
    let scale = model.period().unwrap_or(1.0);
    let mut cuts = vec![a];
    for t in model.breakpoints(a, b) {
        if t - cuts[cuts.len() - 1] > 1e-12 && b - t > 1e-12 {
            cuts.push(t);
        }
    }
    cuts.push(b);
    cuts.windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let constant = model.constant_on(lo, hi);
            let natural = ((hi - lo) * steps_per_period as f64 / scale).ceil() as usize;
            let steps = if constant && !record { 1 } else { natural.max(2) };
            Segment { lo, hi, steps, constant }
        })
        .collect()
}

/// Walks the Magnus step flows of `dx/dtau = G x` across `segments`.
///
/// `Backward` traverses protocol time upwards with `G(tau) = gen(tau)`;
/// `Forward` traverses it downwards, i.e. `G(tau) = gen(a + b - tau)`.
/// The visitor receives each step flow and the protocol time reached.
fn walk<G, V>(segments: &[Segment], direction: Direction, gen: &G, mut visit: V) -> Result<usize>
where
    G: Fn(f64) -> Result<DMatrix<f64>> + ?Sized,
    V: FnMut(&DMatrix<f64>, f64) -> Result<()>,
{
    let mut count = 0;
    let order: Vec<&Segment> = match direction {
        Direction::Backward => segments.iter().collect(),
        Direction::Forward => segments.iter().rev().collect(),
    };
    for seg in order {
        let len = seg.hi - seg.lo;
        if seg.constant {
            let g = gen(0.5 * (seg.lo + seg.hi))?;
            let n = seg
                .steps
                .max((len * norm_one(&g) / CONSTANT_CHUNK_NORM).ceil() as usize)
                .max(1);
            let e = expm(&(g * (len / n as f64)));
            for k in 0..n {
                let reached = match direction {
                    Direction::Backward => seg.lo + len * (k + 1) as f64 / n as f64,
                    Direction::Forward => seg.hi - len * (k + 1) as f64 / n as f64,
                };
                visit(&e, reached)?;
            }
            count += n;
            continue;
        }
        let n = seg.steps;
        for k in 0..n {
            let (lo, hi) = match direction {
                Direction::Backward => (seg.lo + len * k as f64 / n as f64, seg.lo + len * (k + 1) as f64 / n as f64),
                Direction::Forward => (
                    seg.lo + len * (n - k - 1) as f64 / n as f64,
                    seg.lo + len * (n - k) as f64 / n as f64,
                ),
            };
            let h = hi - lo;
            let (t1, t2, reached) = match direction {
                Direction::Backward => (lo + GAUSS2[0] * h, lo + GAUSS2[1] * h, hi),
                Direction::Forward => (hi - GAUSS2[0] * h, hi - GAUSS2[1] * h, lo),
            };
            let g1 = gen(t1)?;
            let g2 = gen(t2)?;
            let comm = &g1 * &g2 - &g2 * &g1;
            let omega = (g1 + g2) * (0.5 * h) - comm * (SQRT3_OVER_12 * h * h);
            visit(&expm(&omega), reached)?;
        }
        count += n;
    }
    Ok(count)
}

/// A flow matrix over an interval.
#[derive(Debug, Clone)]
pub struct PropagatorResult {
    pub flow: DMatrix<f64>,
    pub interval: (f64, f64),
    pub steps: usize,
    pub direction: Direction,
}

impl PropagatorResult {
    pub fn length(&self) -> f64 {
        self.interval.1 - self.interval.0
    }
}

/// Flow of the tilted equation over `[t0, t1]`.
///
/// `Backward` maps the solution of `du/dtau = X(tau) u` at `t0` to `t1`.
/// `Forward` maps the terminal value at `t1` of `du/dt0 = -X(t0) u` to `t0`,
/// so earlier protocol time sits on the left of the ordered product.
pub fn flow<M: RateModel + ?Sized>(
    model: &M,
    tilt: Tilt<'_>,
    t0: f64,
    t1: f64,
    direction: Direction,
    steps_per_period: usize,
) -> Result<PropagatorResult> {
    if !(t1 > t0) {
        return Err(Error::Config(format!("empty interval [{t0}, {t1}]")));
    }
    if steps_per_period == 0 {
        return Err(Error::Config("steps per period must be positive".into()));
    }
    let n = model.n_states();
    let segments = plan(model, t0, t1, steps_per_period, false);
    let gen = |t: f64| tilt.matrix(model, t);
    let mut phi = DMatrix::<f64>::identity(n, n);
    let steps = walk(&segments, direction, &gen, |e, _| {
        phi = e * &phi;
        Ok(())
    })?;
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::Integrator("non-finite flow entries".into()));
    }
    Ok(PropagatorResult {
        flow: phi,
        interval: (t0, t1),
        steps,
        direction,
    })
}

/// One-period flow anchored at `anchor`. Entries must be strictly positive.
pub fn monodromy<M: RateModel + ?Sized>(
    model: &M,
    tilt: Tilt<'_>,
    anchor: f64,
    direction: Direction,
    steps_per_period: usize,
) -> Result<PropagatorResult> {
    let period = model
        .period()
        .ok_or_else(|| Error::Config("monodromy needs a periodic model".into()))?;
    let result = flow(model, tilt, anchor, anchor + period, direction, steps_per_period)?;
    if let Some(bad) = result.flow.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Integrator(format!(
            "monodromy entry {bad:e} is not positive; increase --steps-per-period"
        )));
    }
    Ok(result)
}

/// Principal eigen-data of a positive flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerronData {
    pub eigenvalue: f64,
    /// `log(eigenvalue) / length`.
    pub exponent: f64,
    pub right_vector: Vec<f64>,
    pub left_vector: Vec<f64>,
    pub power_iterations: usize,
    /// Estimate of `|second eigenvalue| / eigenvalue`.
    pub gap_ratio: f64,
}

fn power_iterate(a: &DMatrix<f64>) -> std::result::Result<(f64, DVector<f64>, usize), usize> {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut eig = 0.0;
    for it in 1..=PERRON_MAX_ITER {
        let y = a * &x;
        let s = y.sum();
        let y = y / s;
        let change = (&y - &x).amax() / y.amax();
        x = y;
        eig = s;
        if change <= PERRON_TOL {
            return Ok((eig, x, it));
        }
    }
    let _ = eig;
    Err(PERRON_MAX_ITER)
}

/// Growth rate of `a` restricted away from its Perron direction.
fn gap_ratio(a: &DMatrix<f64>, eig: f64, right: &DVector<f64>, left: &DVector<f64>) -> f64 {
    let n = a.nrows();
    if n == 1 {
        return 0.0;
    }
    let b = a - right * left.transpose() * eig;
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.37 * i as f64 - 0.11 * (i * i) as f64);
    let mut log_growth = 0.0;
    let (burn, total) = (20, 220);
    for it in 0..total {
        let y = &b * &x;
        let norm = y.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return 0.0;
        }
        if it >= burn {
            log_growth += norm.ln();
        }
        x = y / norm;
    }
    (log_growth / (total - burn) as f64).exp() / eig
}

/// Power iteration for the Perron pair of a positive matrix over an interval of `length`.
pub fn perron_of(matrix: &DMatrix<f64>, length: f64) -> Result<PerronData> {
    if let Some(bad) = matrix.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Precondition(format!("flow entry {bad:e} is not strictly positive")));
    }
    let fail = |iterations| {
        let approx = power_iterate_loose(matrix);
        Error::DegenerateSpectrum {
            iterations,
            gap_ratio: approx,
        }
    };
    let (eig, right, it_r) = power_iterate(matrix).map_err(fail)?;
    let (_, left, it_l) = power_iterate(&matrix.transpose()).map_err(fail)?;
    let left = &left / left.dot(&right);
    let gap = gap_ratio(matrix, eig, &right, &left);
    Ok(PerronData {
        eigenvalue: eig,
        exponent: eig.ln() / length,
        right_vector: right.iter().cloned().collect(),
        left_vector: left.iter().cloned().collect(),
        power_iterations: it_r.max(it_l),
        gap_ratio: gap,
    })
}

fn power_iterate_loose(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1000 {
        let y = a * &x;
        x = &y / y.sum();
    }
    let eig = (a * &x).sum();
    let mut left = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1000 {
        let y = a.transpose() * &left;
        left = &y / y.sum();
    }
    let left = &left / left.dot(&x);
    gap_ratio(a, eig, &x, &left)
}

/// Perron data of a flow; the exponent is per unit time of the flow's interval.
pub fn perron(result: &PropagatorResult) -> Result<PerronData> {
    perron_of(&result.flow, result.length())
}

/// Hermite-interpolated samples of a vector-valued function of time.
#[derive(Debug, Clone, PartialEq)]
struct Samples {
    n: usize,
    grid: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Samples {
    fn new(n: usize) -> Self {
        Self {
            n,
            grid: Vec::new(),
            values: Vec::new(),
            slopes: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, v: &DVector<f64>, slope: &DVector<f64>) {
        self.grid.push(t);
        self.values.extend(v.iter());
        self.slopes.extend(slope.iter());
    }

    fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    fn interp(&self, t: f64) -> Vec<f64> {
        let g = &self.grid;
        if g.len() == 1 || t <= g[0] {
            return self.at(0).to_vec();
        }
        if t >= g[g.len() - 1] {
            return self.at(g.len() - 1).to_vec();
        }
        let k = g.partition_point(|&x| x <= t) - 1;
        let h = g[k + 1] - g[k];
        let x = (t - g[k]) / h;
        let (x2, x3) = (x * x, x * x * x);
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        let n = self.n;
        (0..n)
            .map(|i| {
                h00 * self.values[k * n + i]
                    + h10 * h * self.slopes[k * n + i]
                    + h01 * self.values[(k + 1) * n + i]
                    + h11 * h * self.slopes[(k + 1) * n + i]
            })
            .collect()
    }
}

/// The law of the chain on a time grid.
#[derive(Debug, Clone)]
pub struct LawTrajectory {
    samples: Samples,
    /// Largest per-step `|sum - 1|` removed by renormalization.
    pub max_drift: f64,
    pub asymptotic: Option<PeriodicLaw>,
}

impl LawTrajectory {
    pub fn n_states(&self) -> usize {
        self.samples.n
    }

    pub fn grid(&self) -> &[f64] {
        &self.samples.grid
    }

    pub fn law(&self, k: usize) -> &[f64] {
        self.samples.at(k)
    }

    pub fn len(&self) -> usize {
        self.samples.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.grid.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.samples.grid[0]
    }

    pub fn end(&self) -> f64 {
        self.samples.grid[self.len() - 1]
    }

    pub fn final_law(&self) -> &[f64] {
        self.law(self.len() - 1)
    }

    /// Writes `time,mu_1,...,mu_N` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.n_states();
        let header: Vec<String> = std::iter::once("time".to_string())
            .chain((1..=n).map(|i| format!("mu_{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(format!("{}", self.samples.grid[k]))
                .chain(self.law(k).iter().map(|x| format!("{x}")))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl LawView for LawTrajectory {
    fn n_states(&self) -> usize {
        self.samples.n
    }

    fn law_at(&self, t: f64) -> Vec<f64> {
        self.samples.interp(t)
    }
}

/// The periodic law `nu(., s)` sampled over one period.
#[derive(Debug, Clone)]
pub struct PeriodicLaw {
    samples: Samples,
    period: f64,
    mirrored: bool,
    /// `max_i |nu(i, T) - nu(i, 0)|` after one period of propagation.
    pub closure_residual: f64,
}

impl PeriodicLaw {
    pub fn period(&self) -> f64 {
        self.period
    }

    /// The law at `t = 0`.
    pub fn initial(&self) -> Vec<f64> {
        self.law_at(0.0)
    }

    /// Law at `n_points` uniform times in `[0, T]` (inclusive).
    pub fn sample(&self, n_points: usize) -> Vec<(f64, Vec<f64>)> {
        (0..n_points)
            .map(|k| {
                let s = self.period * k as f64 / (n_points - 1) as f64;
                (s, self.law_at(s))
            })
            .collect()
    }
}

impl LawView for PeriodicLaw {
    fn n_states(&self) -> usize {
        self.samples.n
    }

    fn law_at(&self, t: f64) -> Vec<f64> {
        let s = if self.mirrored { -t } else { t };
        self.samples.interp(s.rem_euclid(self.period))
    }
}

/// `law_at(t) = inner.law_at(pivot - t)`.
#[derive(Debug, Clone, Copy)]
pub struct Reflected<L> {
    pub inner: L,
    pub pivot: f64,
}

impl<L: LawView> LawView for Reflected<L> {
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn law_at(&self, t: f64) -> Vec<f64> {
        self.inner.law_at(self.pivot - t)
    }
}

fn check_distribution(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::Config(format!("initial law has {} entries, expected {n}", pi.len())));
    }
    if pi.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Config("initial law must be nonnegative".into()));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("initial law sums to {s}, not 1")));
    }
    Ok(())
}

fn law_samples<M: RateModel + ?Sized>(
    model: &M,
    pi: &[f64],
    t0: f64,
    t1: f64,
    steps_per_period: usize,
) -> Result<(Samples, f64)> {
    let n = model.n_states();
    check_distribution(pi, n)?;
    if !(t1 > t0) {
        return Err(Error::Config(format!("horizon must be positive, got {}", t1 - t0)));
    }
    let segments = plan(model, t0, t1, steps_per_period, true);
    let gen = |t: f64| Ok(evaluate_generator(model, t).transpose());
    let mut samples = Samples::new(n);
    let mut x = DVector::from_column_slice(pi);
    samples.push(t0, &x, &(gen(t0)? * &x));
    let mut drift: f64 = 0.0;
    walk(&segments, Direction::Backward, &gen, |e, t| {
        x = e * &x;
        if let Some(min) = x.iter().cloned().reduce(f64::min) {
            if min < -1e-9 {
                return Err(Error::Integrator(format!(
                    "law entry {min:e} at t = {t}; reduce the step size (raise --steps-per-period)"
                )));
            }
        }
        let s = x.sum();
        drift = drift.max((s - 1.0).abs());
        x /= s;
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let slope = evaluate_generator(model, t).transpose() * &x;
        samples.push(t, &x, &slope);
        Ok(())
    })?;
    if drift > 1e-10 {
        log::debug!("law renormalization drift up to {drift:e}");
    }
    Ok((samples, drift))
}

/// Integrates `dmu/dt = A(t)^T mu` from `pi` over `[0, horizon]`.
pub fn integrate_law<M: RateModel + ?Sized>(
    model: &M,
    pi: &[f64],
    horizon: f64,
    steps_per_period: usize,
) -> Result<LawTrajectory> {
    integrate_law_between(model, pi, 0.0, horizon, steps_per_period)
}

/// Integrates the law equation from `pi` at `t0` to `t1`.
pub fn integrate_law_between<M: RateModel + ?Sized>(
    model: &M,
    pi: &[f64],
    t0: f64,
    t1: f64,
    steps_per_period: usize,
) -> Result<LawTrajectory> {
    let (samples, max_drift) = law_samples(model, pi, t0, t1, steps_per_period)?;
    Ok(LawTrajectory {
        samples,
        max_drift,
        asymptotic: None,
    })
}

/// The attracting periodic law of a periodic model.
pub fn asymptotic_law<M: RateModel + ?Sized>(model: &M, steps_per_period: usize) -> Result<PeriodicLaw> {
    let period = model
        .period()
        .ok_or_else(|| Error::Config("asymptotic law needs a periodic model".into()))?;
    let n = model.n_states();
    let segments = plan(model, 0.0, period, steps_per_period, false);
    let gen = |t: f64| Ok(evaluate_generator(model, t).transpose());
    let mut phi = DMatrix::<f64>::identity(n, n);
    walk(&segments, Direction::Backward, &gen, |e, _| {
        phi = e * &phi;
        Ok(())
    })?;
    let data = perron_of(&phi, period)?;
    if (data.eigenvalue - 1.0).abs() > CONSERVATION_TOL {
        return Err(Error::Conservation {
            eigenvalue: data.eigenvalue,
        });
    }
    let (samples, _) = law_samples(model, &data.right_vector, 0.0, period, steps_per_period)?;
    let first = samples.at(0);
    let last = samples.at(samples.grid.len() - 1);
    let closure_residual = first
        .iter()
        .zip(last)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PeriodicLaw {
        samples,
        period,
        mirrored: false,
        closure_residual,
    })
}

/// Periodic law of the backward process, indexed by protocol time.
///
/// It is the periodic solution of `dnu/dt = -A(t)^T nu`, obtained as the
/// asymptotic law of the time-reversed rates read in mirrored time.
pub fn backward_asymptotic_law<M: RateModel + ?Sized>(model: &M, steps_per_period: usize) -> Result<PeriodicLaw> {
    let period = model
        .period()
        .ok_or_else(|| Error::Config("asymptotic law needs a periodic model".into()))?;
    let reversed = Reversed::new(model, period);
    let mut law = asymptotic_law(&reversed, steps_per_period)?;
    law.mirrored = true;
    Ok(law)
}

/// Solves `dx/dtau = G x` for a single vector, renormalizing by the max entry
/// each step. Returns the scaled vector and the accumulated log scale.
pub fn propagate_vector<M, G>(
    model: &M,
    gen: &G,
    t0: f64,
    t1: f64,
    direction: Direction,
    steps_per_period: usize,
    x0: DVector<f64>,
) -> Result<(DVector<f64>, f64)>
where
    M: RateModel + ?Sized,
    G: Fn(f64) -> Result<DMatrix<f64>> + ?Sized,
{
    let segments = plan(model, t0, t1, steps_per_period, false);
    let mut x = x0;
    let mut log_scale = 0.0;
    walk(&segments, direction, gen, |e, _| {
        x = e * &x;
        let m = x.amax();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Integrator("propagated vector lost positivity".into()));
        }
        x /= m;
        log_scale += m.ln();
        Ok(())
    })?;
    Ok((x, log_scale))
}

/// Moment generating vector `u_i = exp(log_scale) * scaled_i`.
#[derive(Debug, Clone)]
pub struct MgfVector {
    pub scaled: DVector<f64>,
    pub log_scale: f64,
}

impl MgfVector {
    pub fn values(&self) -> DVector<f64> {
        self.scaled.map(|x| x * self.log_scale.exp())
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.scaled.iter().map(|x| x.ln() + self.log_scale).collect()
    }

    /// `log sum_i pi_i u_i`.
    pub fn log_expectation(&self, pi: &[f64]) -> f64 {
        let s: f64 = pi.iter().zip(self.scaled.iter()).map(|(p, u)| p * u).sum();
        s.ln() + self.log_scale
    }
}

/// `u_lambda(., 0, t)`: component `i` is `E_i[exp(lambda * F(0, t))]`.
///
/// `Forward` integrates the backward Kolmogorov equation of the original chain.
/// `Backward` does the same for the backward process, whose rates at its own
/// time `s` are `k(t - s)`; the result is indexed by its initial state.
/// For `S`, `law` is the relevant process law expressed in protocol time.
pub fn mgf<M: RateModel + ?Sized>(
    model: &M,
    functional: Functional,
    lambda: f64,
    t: f64,
    direction: Direction,
    law: Option<&dyn LawView>,
    steps_per_period: usize,
) -> Result<MgfVector> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("mgf horizon must be positive, got {t}")));
    }
    let tilt = match functional {
        Functional::W => Tilt::W(lambda),
        Functional::S => Tilt::S(
            lambda,
            law.ok_or_else(|| Error::Config("S-tilt needs a law".into()))?,
        ),
    };
    let gen = |s: f64| tilt.matrix(model, s);
    let n = model.n_states();
    let (scaled, log_scale) = propagate_vector(
        model,
        &gen,
        0.0,
        t,
        direction,
        steps_per_period,
        DVector::from_element(n, 1.0),
    )?;
    Ok(MgfVector { scaled, log_scale })
}
