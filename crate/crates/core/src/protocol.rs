//! Periodic rate protocols, their generators and tilted generators.
//!
//! A protocol assigns each ordered pair of distinct states a continuous,
//! `T`-periodic rate function `k_ij(t)`. The generator has off-diagonal
//! entries `k_ij(t)` and diagonal `-K_i(t)`, so rows sum to zero.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which a rate counts as zero.
pub const RATE_EPS: f64 = 1e-12;

/// Smallest law component accepted by the entropy-production tilt.
pub const LAW_FLOOR: f64 = 1e-300;

/// Default number of grid points used by [`RateProtocol::validate`].
pub const DEFAULT_VALIDATION_GRID: usize = 1024;

const PERIODICITY_TOL: f64 = 1e-10;
const TIME_SYMMETRY_TOL: f64 = 1e-10;

/// Anything that can report transition rates at a time.
///
/// Implemented by validated periodic protocols, by the time-reversed view used
/// for backward processes, and by the aperiodic counterexample construction.
pub trait RateModel: Sync {
    fn n_states(&self) -> usize;

    /// Rate of jumping `from -> to` at time `t`. Zero when `from == to`.
    fn rate(&self, from: usize, to: usize, t: f64) -> f64;

    /// Period of the driving, `None` for aperiodic models.
    fn period(&self) -> Option<f64>;

    /// Off-diagonal rate matrix at `t` (zero diagonal).
    fn rate_matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { self.rate(i, j, t) })
    }

    /// Times strictly inside `(t0, t1)` where the rates lose smoothness.
    /// Integrators align their steps with these.
    fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }

    /// True when every rate is constant on `[t0, t1]`.
    fn constant_on(&self, _t0: f64, _t1: f64) -> bool {
        false
    }
}

/// One piece of a piecewise-constant rate: `value` on `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// A single edge rate function `k_ij(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EdgeRate {
    Constant {
        value: f64,
    },
    /// `c0 + sum_n a_n cos(2 pi n t / T) + b_n sin(2 pi n t / T)`, `n = 1, 2, ...`
    Fourier {
        c0: f64,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
    },
    /// Piecewise-constant values joined by linear ramps of width `width`
    /// centred on every piece boundary, including the wrap at `0 = T`.
    Piecewise {
        pieces: Vec<Piece>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
    },
}

impl EdgeRate {
    pub fn constant(value: f64) -> Self {
        EdgeRate::Constant { value }
    }

    pub fn fourier(c0: f64, a: Vec<f64>, b: Vec<f64>) -> Self {
        EdgeRate::Fourier { c0, a, b }
    }

    /// Unclamped value at `t` for a protocol of period `period`.
    pub fn raw(&self, t: f64, period: f64) -> f64 {
        let s = t.rem_euclid(period);
        match self {
            EdgeRate::Constant { value } => *value,
            EdgeRate::Fourier { c0, a, b } => {
                let w = 2.0 * PI * s / period;
                let mut v = *c0;
                for (n, an) in a.iter().enumerate() {
                    v += an * ((n + 1) as f64 * w).cos();
                }
                for (n, bn) in b.iter().enumerate() {
                    v += bn * ((n + 1) as f64 * w).sin();
                }
                v
            }
            EdgeRate::Piecewise { pieces, width } => {
                let w = width.unwrap_or(period / 100.0);
                piecewise_value(pieces, w, s, period)
            }
        }
    }

    /// Value at `t`, clamped at zero.
    pub fn eval(&self, t: f64, period: f64) -> f64 {
        self.raw(t, period).max(0.0)
    }

    fn is_constant(&self) -> bool {
        match self {
            EdgeRate::Constant { .. } => true,
            EdgeRate::Fourier { a, b, .. } => {
                a.iter().all(|x| *x == 0.0) && b.iter().all(|x| *x == 0.0)
            }
            EdgeRate::Piecewise { pieces, .. } => pieces.windows(2).all(|p| p[0].value == p[1].value),
        }
    }

    /// Kink locations within one period `[0, T)`.
    fn kinks(&self, period: f64) -> Vec<f64> {
        match self {
            EdgeRate::Piecewise { pieces, width } => {
                let w = width.unwrap_or(period / 100.0);
                let mut out = Vec::with_capacity(2 * pieces.len());
                for p in pieces {
                    out.push((p.start - 0.5 * w).rem_euclid(period));
                    out.push((p.start + 0.5 * w).rem_euclid(period));
                }
                out
            }
            _ => Vec::new(),
        }
    }

    fn check(&self, period: f64) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        match self {
            EdgeRate::Constant { value } => {
                if !finite(*value) || *value < 0.0 {
                    return Err(Error::Config(format!("constant rate {value} must be finite and >= 0")));
                }
            }
            EdgeRate::Fourier { c0, a, b } => {
                if !finite(*c0) || a.iter().chain(b.iter()).any(|x| !finite(*x)) {
                    return Err(Error::Config("fourier coefficients must be finite".into()));
                }
            }
            EdgeRate::Piecewise { pieces, width } => {
                if pieces.is_empty() {
                    return Err(Error::Config("piecewise rate needs at least one piece".into()));
                }
                let w = width.unwrap_or(period / 100.0);
                if !(w > 0.0) || !w.is_finite() {
                    return Err(Error::Config(format!("smoothing width {w} must be positive")));
                }
                if pieces[0].start.abs() > 1e-12 {
                    return Err(Error::Config("first piece must start at 0".into()));
                }
                if (pieces[pieces.len() - 1].end - period).abs() > 1e-12 {
                    return Err(Error::Config("last piece must end at the period".into()));
                }
                for (k, p) in pieces.iter().enumerate() {
                    if !(p.end > p.start) {
                        return Err(Error::Config(format!("piece {k} has empty interval")));
                    }
                    if !finite(p.value) || p.value < 0.0 {
                        return Err(Error::Config(format!("piece {k} value must be finite and >= 0")));
                    }
                    if p.end - p.start <= w {
                        return Err(Error::Config(format!(
                            "piece {k} shorter than the smoothing width {w}"
                        )));
                    }
                    if k > 0 && (pieces[k - 1].end - p.start).abs() > 1e-12 {
                        return Err(Error::Config(format!("piece {k} does not start where piece {} ends", k - 1)));
                    }
                }
            }
        }
        Ok(())
    }
}

fn piecewise_value(pieces: &[Piece], w: f64, s: f64, period: f64) -> f64 {
    let half = 0.5 * w;
    let m = pieces.len();
    for (k, p) in pieces.iter().enumerate() {
        let left = pieces[(k + m - 1) % m].value;
        let right = p.value;
        // signed periodic distance from the boundary at p.start
        let mut d = s - p.start;
        if d > 0.5 * period {
            d -= period;
        } else if d < -0.5 * period {
            d += period;
        }
        if d.abs() < half {
            return left + (right - left) * (d + half) / w;
        }
    }
    pieces
        .iter()
        .find(|p| s >= p.start && s < p.end)
        .unwrap_or(&pieces[m - 1])
        .value
}

/// On-disk protocol edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    #[serde(flatten)]
    pub rate: EdgeRate,
}

/// On-disk protocol document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolFile {
    pub n_states: usize,
    pub period: f64,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub description: String,
}

/// A periodic rate protocol, not yet validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProtocol {
    n_states: usize,
    period: f64,
    edges: BTreeMap<(usize, usize), EdgeRate>,
    description: String,
}

impl RateProtocol {
    pub fn new(
        n_states: usize,
        period: f64,
        edges: impl IntoIterator<Item = ((usize, usize), EdgeRate)>,
        description: impl Into<String>,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Config("n_states must be positive".into()));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Config(format!("period {period} must be positive")));
        }
        let mut map = BTreeMap::new();
        for ((i, j), rate) in edges {
            if i >= n_states || j >= n_states {
                return Err(Error::Config(format!("edge ({i},{j}) out of range for {n_states} states")));
            }
            if i == j {
                return Err(Error::Config(format!("self-loop edge ({i},{i})")));
            }
            rate.check(period)?;
            if map.insert((i, j), rate).is_some() {
                return Err(Error::Config(format!("duplicate edge ({i},{j})")));
            }
        }
        Ok(Self {
            n_states,
            period,
            edges: map,
            description: description.into(),
        })
    }

    pub fn from_file(file: ProtocolFile) -> Result<Self> {
        Self::new(
            file.n_states,
            file.period,
            file.edges.into_iter().map(|e| ((e.from, e.to), e.rate)),
            file.description,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_file(&self) -> ProtocolFile {
        ProtocolFile {
            n_states: self.n_states,
            period: self.period,
            edges: self
                .edges
                .iter()
                .map(|(&(from, to), rate)| EdgeSpec {
                    from,
                    to,
                    rate: rate.clone(),
                })
                .collect(),
            description: self.description.clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(usize, usize), &EdgeRate)> {
        self.edges.iter()
    }

    fn rate_at(&self, i: usize, j: usize, t: f64) -> f64 {
        self.edges.get(&(i, j)).map_or(0.0, |e| e.eval(t, self.period))
    }

    fn raw_rates(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_states, self.n_states);
        for (&(i, j), e) in &self.edges {
            m[(i, j)] = e.raw(t, self.period);
        }
        m
    }

    fn dense_rates(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_states, self.n_states);
        for (&(i, j), e) in &self.edges {
            m[(i, j)] = e.eval(t, self.period);
        }
        m
    }

    /// Runs every protocol check on a uniform grid of `grid_points` times in `[0, T)`.
    pub fn validate(&self, grid_points: usize) -> Result<ValidationReport> {
        if grid_points < 16 {
            return Err(Error::Grid(format!("validation grid needs >= 16 points, got {grid_points}")));
        }
        let n = self.n_states;
        let mut violations = Vec::new();
        let mut irreducible_times = Vec::new();
        let mut asym: f64 = 0.0;

        for g in 0..grid_points {
            let t = self.period * g as f64 / grid_points as f64;
            let raw = self.raw_rates(t);
            let shifted = self.raw_rates(t + self.period);
            let mirrored = self.dense_rates(self.period - t);

            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = raw[(i, j)];
                    if (k - shifted[(i, j)]).abs() >= PERIODICITY_TOL {
                        violations.push(Violation::new(
                            "periodicity",
                            t,
                            format!("|k_{}{}(t) - k_{}{}(t+T)| = {:e}", i + 1, j + 1, i + 1, j + 1, (k - shifted[(i, j)]).abs()),
                        ));
                    }
                    if k < 0.0 {
                        violations.push(Violation::new(
                            "nonnegativity",
                            t,
                            format!("k_{}{} = {k}", i + 1, j + 1),
                        ));
                    }
                    if i < j {
                        let back = raw[(j, i)];
                        if (k > RATE_EPS) != (back > RATE_EPS) {
                            violations.push(Violation::new(
                                "ergodic_consistency",
                                t,
                                format!("k_{}{} = {k:e} but k_{}{} = {back:e}", i + 1, j + 1, j + 1, i + 1),
                            ));
                        }
                    }
                    asym = asym.max((k.max(0.0) - mirrored[(i, j)]).abs());
                }
            }
            if strongly_connected(&raw) {
                irreducible_times.push(t);
            }
        }
        if irreducible_times.is_empty() {
            violations.push(Violation::new(
                "irreducibility",
                0.0,
                "adjacency graph is never strongly connected on the grid".into(),
            ));
        }
        let passed = violations.is_empty() && !irreducible_times.is_empty();
        Ok(ValidationReport {
            passed,
            violations,
            irreducible_times,
            grid_points,
            time_symmetric: asym < TIME_SYMMETRY_TOL,
        })
    }

    /// Validates and wraps the protocol, failing when any check is violated.
    pub fn into_validated(self, grid_points: usize) -> Result<ValidatedProtocol> {
        let report = self.validate(grid_points)?;
        if !report.passed {
            let first = &report.violations[0];
            let detail = format!(
                "{} violation(s); first: {} at t = {}: {}",
                report.violations.len(),
                first.check,
                first.time,
                first.detail
            );
            if report.violations.iter().any(|v| v.check == "ergodic_consistency") {
                return Err(Error::ErgodicConsistency { detail });
            }
            return Err(Error::Validation(detail));
        }
        Ok(ValidatedProtocol {
            protocol: self,
            report,
        })
    }
}

fn strongly_connected(rates: &DMatrix<f64>) -> bool {
    let n = rates.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let k = if forward { rates[(i, j)] } else { rates[(j, i)] };
                if i != j && !seen[j] && k > RATE_EPS {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub time: f64,
    pub detail: String,
}

impl Violation {
    fn new(check: &str, time: f64, detail: String) -> Self {
        Self {
            check: check.to_string(),
            time,
            detail,
        }
    }
}

/// Outcome of [`RateProtocol::validate`]. States in `detail` strings are 1-indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// Grid times at which the adjacency graph is strongly connected.
    pub irreducible_times: Vec<f64>,
    pub grid_points: usize,
    /// `max_t ||A(t) - A(T - t)||_inf` below 1e-10 on the grid.
    pub time_symmetric: bool,
}

/// A protocol that passed validation. Only validated protocols can be
/// integrated or sampled.
#[derive(Debug, Clone)]
pub struct ValidatedProtocol {
    protocol: RateProtocol,
    report: ValidationReport,
}

impl ValidatedProtocol {
    pub fn protocol(&self) -> &RateProtocol {
        &self.protocol
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn period_len(&self) -> f64 {
        self.protocol.period
    }

    pub fn time_symmetric(&self) -> bool {
        self.report.time_symmetric
    }

    pub fn is_homogeneous(&self) -> bool {
        self.protocol.edges.values().all(EdgeRate::is_constant)
    }
}

impl RateModel for ValidatedProtocol {
    fn n_states(&self) -> usize {
        self.protocol.n_states
    }

    fn rate(&self, from: usize, to: usize, t: f64) -> f64 {
        self.protocol.rate_at(from, to, t)
    }

    fn period(&self) -> Option<f64> {
        Some(self.protocol.period)
    }

    fn rate_matrix(&self, t: f64) -> DMatrix<f64> {
        self.protocol.dense_rates(t)
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let period = self.protocol.period;
        let mut kinks: Vec<f64> = self
            .protocol
            .edges
            .values()
            .flat_map(|e| e.kinks(period))
            .collect();
        if kinks.is_empty() {
            return kinks;
        }
        kinks.sort_by(f64::total_cmp);
        kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let mut out = Vec::new();
        let first = (t0 / period).floor() as i64 - 1;
        let last = (t1 / period).ceil() as i64 + 1;
        for p in first..=last {
            for &k in &kinks {
                let t = p as f64 * period + k;
                if t > t0 + 1e-12 && t < t1 - 1e-12 {
                    out.push(t);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    fn constant_on(&self, _t0: f64, _t1: f64) -> bool {
        self.is_homogeneous()
    }
}

/// Time-reversed view `k^R_ij(s) = k_ij(pivot - s)`.
///
/// Driving the chain with these rates is the protocol reversal that defines
/// the backward process.
#[derive(Debug, Clone, Copy)]
pub struct Reversed<'a, M: ?Sized> {
    inner: &'a M,
    pivot: f64,
}

impl<'a, M: RateModel + ?Sized> Reversed<'a, M> {
    pub fn new(inner: &'a M, pivot: f64) -> Self {
        Self { inner, pivot }
    }

    pub fn pivot(&self) -> f64 {
        self.pivot
    }
}

impl<M: RateModel + ?Sized> RateModel for Reversed<'_, M> {
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn rate(&self, from: usize, to: usize, t: f64) -> f64 {
        self.inner.rate(from, to, self.pivot - t)
    }

    fn period(&self) -> Option<f64> {
        self.inner.period()
    }

    fn rate_matrix(&self, t: f64) -> DMatrix<f64> {
        self.inner.rate_matrix(self.pivot - t)
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .inner
            .breakpoints(self.pivot - t1, self.pivot - t0)
            .into_iter()
            .map(|t| self.pivot - t)
            .collect();
        b.sort_by(f64::total_cmp);
        b
    }

    fn constant_on(&self, t0: f64, t1: f64) -> bool {
        self.inner.constant_on(self.pivot - t1, self.pivot - t0)
    }
}

/// Generator with off-diagonal `rates` and diagonal `-K_i`.
pub fn generator_from_rates(rates: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rates.nrows();
    let mut a = rates.clone();
    for i in 0..n {
        a[(i, i)] = 0.0;
        let k: f64 = (0..n).filter(|&j| j != i).map(|j| rates[(i, j)]).sum();
        a[(i, i)] = -k;
    }
    a
}

/// `A(t)`: off-diagonal `k_ij(t mod T)`, diagonal `-K_i(t)`.
pub fn evaluate_generator<M: RateModel + ?Sized>(model: &M, t: f64) -> DMatrix<f64> {
    generator_from_rates(&model.rate_matrix(t))
}

/// Escape rates `K_i` from an off-diagonal rate matrix.
pub fn escape_rates(rates: &DMatrix<f64>) -> Vec<f64> {
    let n = rates.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| rates[(i, j)]).sum())
        .collect()
}

fn tilt_factor(k_ij: f64, k_ji: f64, lambda: f64, i: usize, j: usize, t: f64) -> Result<f64> {
    match (k_ij > RATE_EPS, k_ji > RATE_EPS) {
        (false, false) => Ok(0.0),
        (true, true) => Ok(if lambda == 0.0 {
            k_ij
        } else {
            k_ij.powf(1.0 + lambda) * k_ji.powf(-lambda)
        }),
        _ => Err(Error::ErgodicConsistency {
            detail: format!(
                "k_{}{}({t}) = {k_ij:e} but k_{}{}({t}) = {k_ji:e}",
                i + 1,
                j + 1,
                j + 1,
                i + 1
            ),
        }),
    }
}

/// Heat-dissipation tilt from a rate matrix: off-diagonal
/// `k_ij^(1+lambda) k_ji^(-lambda)`, diagonal `-K_i`.
pub fn tilt_w_from_rates(rates: &DMatrix<f64>, lambda: f64, t: f64) -> Result<DMatrix<f64>> {
    let n = rates.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut escape = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            escape += rates[(i, j)];
            l[(i, j)] = tilt_factor(rates[(i, j)], rates[(j, i)], lambda, i, j, t)?;
        }
        l[(i, i)] = -escape;
    }
    Ok(l)
}

/// Entropy-production tilt from a rate matrix and the law `mu` at the same time.
///
/// Off-diagonal `k_ij^(1+lambda) k_ji^(-lambda) (mu_i / mu_j)^lambda`; diagonal
/// `-(lambda sum_l k_li mu_l / mu_i + (1 - lambda) K_i)`.
pub fn tilt_s_from_rates(rates: &DMatrix<f64>, lambda: f64, law: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let n = rates.nrows();
    if law.len() != n {
        return Err(Error::Config(format!("law has {} entries, expected {n}", law.len())));
    }
    if let Some((state, &value)) = law.iter().enumerate().find(|(_, &m)| !(m >= LAW_FLOOR)) {
        return Err(Error::DegenerateLaw { state, value, time: t });
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut escape = 0.0;
        let mut inflow = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            escape += rates[(i, j)];
            inflow += rates[(j, i)] * law[j] / law[i];
            let f = tilt_factor(rates[(i, j)], rates[(j, i)], lambda, i, j, t)?;
            m[(i, j)] = if lambda == 0.0 || f == 0.0 {
                f
            } else {
                f * (law[i] / law[j]).powf(lambda)
            };
        }
        m[(i, i)] = -(lambda * inflow + (1.0 - lambda) * escape);
    }
    Ok(m)
}

/// `L_lambda(t)` of the heat-dissipation functional.
pub fn tilted_generator_w<M: RateModel + ?Sized>(model: &M, t: f64, lambda: f64) -> Result<DMatrix<f64>> {
    tilt_w_from_rates(&model.rate_matrix(t), lambda, t)
}

/// `M_lambda(t)` of the entropy-production functional, with the chain's law at `t`.
pub fn tilted_generator_s<M: RateModel + ?Sized>(
    model: &M,
    t: f64,
    lambda: f64,
    law: &[f64],
) -> Result<DMatrix<f64>> {
    tilt_s_from_rates(&model.rate_matrix(t), lambda, law, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::max_abs_diff;

    #[test]
    fn p1_generator_is_constant() {
        let p1 = catalog::p1();
        let a = evaluate_generator(&p1, 0.3);
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        assert_eq!(a, expected);
    }

    #[test]
    fn p3_generator_at_quarter_points() {
        let p3 = catalog::p3();
        let a0 = evaluate_generator(&p3, 0.0);
        assert!(max_abs_diff(&a0, &DMatrix::from_row_slice(2, 2, &[-1.5, 1.5, 1.0, -1.0])) < 1e-15);
        let a1 = evaluate_generator(&p3, 0.25);
        assert!(max_abs_diff(&a1, &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])) < 1e-15);
    }

    #[test]
    fn w_tilt_on_ring() {
        let p2 = catalog::p2();
        let l = tilted_generator_w(&p2, 0.4, 1.0).unwrap();
        for i in 0..3 {
            assert!((l[(i, (i + 1) % 3)] - 4.0).abs() < 1e-14);
            assert!((l[(i, (i + 2) % 3)] - 0.5).abs() < 1e-14);
            assert!((l[(i, i)] + 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn w_tilt_at_minus_one_swaps_rates() {
        let p3 = catalog::p3();
        let t = 0.137;
        let a = evaluate_generator(&p3, t);
        let l = tilted_generator_w(&p3, t, -1.0).unwrap();
        assert!((l[(0, 1)] - a[(1, 0)]).abs() < 1e-14);
        assert!((l[(1, 0)] - a[(0, 1)]).abs() < 1e-14);
        assert_eq!(l[(0, 0)], a[(0, 0)]);
    }

    #[test]
    fn w_tilt_at_zero_is_generator() {
        let p = catalog::piecewise_three_state();
        for &t in &[0.0, 0.33, 0.5049, 0.77] {
            assert_eq!(tilted_generator_w(&p, t, 0.0).unwrap(), evaluate_generator(&p, t));
        }
    }

    #[test]
    fn s_tilt_uniform_law_on_ring() {
        let p2 = catalog::p2();
        let law = [1.0 / 3.0; 3];
        for &lambda in &[-2.0, -0.5, 0.7, 1.5] {
            let m = tilted_generator_s(&p2, 0.1, lambda, &law).unwrap();
            let l = tilted_generator_w(&p2, 0.1, lambda).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        assert!((m[(i, i)] + 3.0).abs() < 1e-13);
                    } else {
                        assert!((m[(i, j)] - l[(i, j)]).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn s_tilt_at_zero_is_generator() {
        let p3 = catalog::p3();
        let m = tilted_generator_s(&p3, 0.3, 0.0, &[0.2, 0.8]).unwrap();
        assert!(max_abs_diff(&m, &evaluate_generator(&p3, 0.3)) < 1e-15);
    }

    #[test]
    fn s_tilt_single_state_is_zero() {
        let p = RateProtocol::new(1, 1.0, Vec::new(), "one state")
            .unwrap()
            .into_validated(64)
            .unwrap();
        let m = tilted_generator_s(&p, 0.0, 0.5, &[1.0]).unwrap();
        assert_eq!(m, DMatrix::zeros(1, 1));
    }

    #[test]
    fn s_tilt_rejects_degenerate_law() {
        let p3 = catalog::p3();
        let err = tilted_generator_s(&p3, 0.0, 0.5, &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateLaw { state: 1, .. }));
    }

    #[test]
    fn one_sided_edge_fails_validation() {
        let p = RateProtocol::new(2, 1.0, vec![((0, 1), EdgeRate::constant(1.0))], "one-sided").unwrap();
        let report = p.validate(64).unwrap();
        assert!(!report.passed);
        let ergodic = report
            .violations
            .iter()
            .filter(|v| v.check == "ergodic_consistency")
            .count();
        assert_eq!(ergodic, 64);
        assert!(matches!(p.into_validated(64), Err(Error::ErgodicConsistency { .. })));
    }

    #[test]
    fn one_sided_tilt_is_rejected() {
        let rates = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(tilt_w_from_rates(&rates, 0.5, 0.0), Err(Error::ErgodicConsistency { .. })));
    }

    #[test]
    fn validation_of_constant_protocol_is_irreducible_everywhere() {
        let p1 = catalog::p1();
        let report = p1.report();
        assert!(report.passed);
        assert_eq!(report.irreducible_times.len(), DEFAULT_VALIDATION_GRID);
    }

    #[test]
    fn half_period_shutdown_is_valid() {
        let p = catalog::half_period_shutdown();
        let report = p.validate(1024).unwrap();
        assert!(report.passed, "{:?}", report.violations.first());
        assert!(!report.irreducible_times.is_empty());
        assert!(report.irreducible_times.iter().all(|&t| t > 0.5 && t < 1.0));
    }

    #[test]
    fn negative_fourier_rate_is_reported() {
        let p = RateProtocol::new(
            2,
            1.0,
            vec![
                ((0, 1), EdgeRate::fourier(0.5, vec![1.0], vec![])),
                ((1, 0), EdgeRate::constant(1.0)),
            ],
            "dips below zero",
        )
        .unwrap();
        let report = p.validate(128).unwrap();
        assert!(!report.passed);
        assert!(report.violations.iter().any(|v| v.check == "nonnegativity"));
    }

    #[test]
    fn piecewise_ramps_are_continuous_across_wrap() {
        let rate = EdgeRate::Piecewise {
            pieces: vec![
                Piece { start: 0.0, end: 0.4, value: 1.0 },
                Piece { start: 0.4, end: 1.0, value: 3.0 },
            ],
            width: Some(0.02),
        };
        assert!((rate.eval(0.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((rate.eval(0.4, 1.0) - 2.0).abs() < 1e-12);
        assert!((rate.eval(0.999_999_9, 1.0) - rate.eval(1e-7, 1.0)).abs() < 1e-4);
        assert_eq!(rate.eval(0.2, 1.0), 1.0);
        assert_eq!(rate.eval(0.7, 1.0), 3.0);
        // ramp midpoint slope is (3 - 1) / 0.02
        assert!((rate.eval(0.405, 1.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn time_symmetry_flag() {
        assert!(catalog::p3().time_symmetric());
        assert!(!catalog::p3_sine().time_symmetric());
        assert!(catalog::p2().time_symmetric());
    }

    #[test]
    fn reversed_view_mirrors_rates_and_breakpoints() {
        let p = catalog::piecewise_three_state();
        let r = Reversed::new(&p, 2.0);
        assert_eq!(r.rate(0, 1, 0.3), p.rate(0, 1, 1.7));
        let b = p.breakpoints(0.0, 2.0);
        let rb = r.breakpoints(0.0, 2.0);
        assert_eq!(b.len(), rb.len());
        for (x, y) in b.iter().zip(rb.iter().rev()) {
            assert!((x - (2.0 - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = catalog::piecewise_three_state();
        let text = serde_json::to_string(&p.protocol().to_file()).unwrap();
        let back = RateProtocol::from_json(&text).unwrap();
        assert_eq!(&back, p.protocol());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RateProtocol::new(0, 1.0, Vec::new(), "").is_err());
        assert!(RateProtocol::new(2, -1.0, Vec::new(), "").is_err());
        assert!(RateProtocol::new(2, 1.0, vec![((0, 0), EdgeRate::constant(1.0))], "").is_err());
        assert!(RateProtocol::new(2, 1.0, vec![((0, 2), EdgeRate::constant(1.0))], "").is_err());
        assert!(RateProtocol::new(1, 1.0, Vec::new(), "").unwrap().validate(8).is_err());
    }
}
