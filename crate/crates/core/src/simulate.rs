//! Exact path sampling by thinning, path functionals and Monte Carlo estimators.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{GAUSS5_NODES, GAUSS5_WEIGHTS};
use crate::propagator::{integrate_law, Functional, LawView, DEFAULT_STEPS_PER_PERIOD};
use crate::protocol::{RateModel, LAW_FLOOR, RATE_EPS};

const BOUND_GRID: usize = 4096;
const BOUND_INFLATION: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub to: usize,
}

/// A sampled path on `[start, start + horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: usize,
    pub jumps: Vec<Jump>,
    pub start: f64,
    pub horizon: f64,
    pub seed: u64,
    pub path_id: u64,
}

impl Trajectory {
    pub fn end(&self) -> f64 {
        self.start + self.horizon
    }

    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial_state, |j| j.to)
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.time <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.jumps[k - 1].to
        }
    }

    /// Time reversal `X'(s) = X(start + end - s)`, made right-continuous.
    pub fn reversed(&self) -> Trajectory {
        let pivot = self.start + self.end();
        let mut jumps = Vec::with_capacity(self.jumps.len());
        for k in (0..self.jumps.len()).rev() {
            let from = if k == 0 { self.initial_state } else { self.jumps[k - 1].to };
            jumps.push(Jump {
                time: pivot - self.jumps[k].time,
                to: from,
            });
        }
        Trajectory {
            initial_state: self.final_state(),
            jumps,
            start: self.start,
            horizon: self.horizon,
            seed: self.seed,
            path_id: self.path_id,
        }
    }

    /// Pairs `(from, to, time)` for every jump.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let mut prev = self.initial_state;
        self.jumps.iter().map(move |j| {
            let from = prev;
            prev = j.to;
            (from, j.to, j.time)
        })
    }
}

/// Thinning sampler with a global escape-rate bound.
#[derive(Debug, Clone, Copy)]
pub struct ThinningSampler {
    pub k_max: f64,
}

impl ThinningSampler {
    /// Bound from the maximum escape rate on a 4096-point grid, inflated by 0.1%.
    /// Periodic models are scanned over one period, others over `[t0, t1]`.
    pub fn new<M: RateModel + ?Sized>(model: &M, t0: f64, t1: f64) -> Self {
        let (a, b) = match model.period() {
            Some(p) => (0.0, p),
            None => (t0, t1),
        };
        let n = model.n_states();
        let mut k_max: f64 = 0.0;
        for g in 0..=BOUND_GRID {
            let t = a + (b - a) * g as f64 / BOUND_GRID as f64;
            let rates = model.rate_matrix(t);
            for i in 0..n {
                k_max = k_max.max(rates.row(i).sum());
            }
        }
        Self {
            k_max: k_max * BOUND_INFLATION,
        }
    }

    pub fn sample<M: RateModel + ?Sized, R: Rng>(
        &self,
        model: &M,
        initial_state: usize,
        start: f64,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Vec<Jump>> {
        let n = model.n_states();
        let mut jumps = Vec::new();
        if self.k_max <= 0.0 {
            return Ok(jumps);
        }
        let exp = Exp::new(self.k_max).map_err(|e| Error::Config(e.to_string()))?;
        let end = start + horizon;
        let mut state = initial_state;
        let mut t = start;
        let mut row = vec![0.0; n];
        loop {
            t += exp.sample(rng);
            if t >= end {
                break;
            }
            let mut escape = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                *r = if j == state { 0.0 } else { model.rate(state, j, t) };
                escape += *r;
            }
            if escape > self.k_max {
                return Err(Error::BoundViolation {
                    state: state + 1,
                    time: t,
                    rate: escape,
                    bound: self.k_max,
                });
            }
            let u: f64 = rng.random();
            if u * self.k_max >= escape {
                continue;
            }
            let mut target = u * self.k_max;
            let mut next = state;
            for (j, r) in row.iter().enumerate() {
                if *r > 0.0 {
                    next = j;
                    if target < *r {
                        break;
                    }
                    target -= r;
                }
            }
            if next != state {
                jumps.push(Jump { time: t, to: next });
                state = next;
            }
        }
        Ok(jumps)
    }
}

/// The RNG stream of path `path_id` under `seed`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Samples one path started in `initial_state` at time 0.
pub fn sample_trajectory<M: RateModel + ?Sized>(
    model: &M,
    initial_state: usize,
    horizon: f64,
    seed: u64,
    path_id: u64,
) -> Result<Trajectory> {
    let sampler = ThinningSampler::new(model, 0.0, horizon);
    let mut rng = path_rng(seed, path_id);
    sample_with(model, &sampler, initial_state, 0.0, horizon, seed, path_id, &mut rng)
}

#[allow(clippy::too_many_arguments)]
fn sample_with<M: RateModel + ?Sized>(
    model: &M,
    sampler: &ThinningSampler,
    initial_state: usize,
    start: f64,
    horizon: f64,
    seed: u64,
    path_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if initial_state >= model.n_states() {
        return Err(Error::Config(format!("initial state {initial_state} out of range")));
    }
    if !(horizon >= 0.0) {
        return Err(Error::Config(format!("horizon must be >= 0, got {horizon}")));
    }
    let jumps = sampler.sample(model, initial_state, start, horizon, rng)?;
    Ok(Trajectory {
        initial_state,
        jumps,
        start,
        horizon,
        seed,
        path_id,
    })
}

/// Samples path `path_id` with its initial state drawn from `pi`.
pub fn sample_from_law<M: RateModel + ?Sized>(
    model: &M,
    sampler: &ThinningSampler,
    pi: &[f64],
    start: f64,
    horizon: f64,
    seed: u64,
    path_id: u64,
) -> Result<Trajectory> {
    let mut rng = path_rng(seed, path_id);
    let dist = WeightedIndex::new(pi).map_err(|e| Error::Config(format!("initial law: {e}")))?;
    let initial = dist.sample(&mut rng);
    sample_with(model, sampler, initial, start, horizon, seed, path_id, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFunctionals {
    pub w_total: f64,
    pub s_total: f64,
    pub increments: Vec<f64>,
}

fn log_law(law: &dyn LawView, state: usize, t: f64) -> Result<f64> {
    let v = law.law_at(t)[state];
    if !(v >= LAW_FLOOR) {
        return Err(Error::DegenerateLaw { state, value: v, time: t });
    }
    Ok(v.ln())
}

/// Heat `W` only; no law needed.
pub fn heat<M: RateModel + ?Sized>(model: &M, traj: &Trajectory) -> Result<(f64, Vec<f64>)> {
    let mut increments = Vec::with_capacity(traj.jumps.len());
    let mut total = 0.0;
    for (from, to, t) in traj.transitions() {
        let fwd = model.rate(from, to, t);
        let back = model.rate(to, from, t);
        if !(back > RATE_EPS) || !(fwd > RATE_EPS) {
            return Err(Error::ErgodicConsistency {
                detail: format!(
                    "jump {}->{} at t = {t} has k = {fwd:e}, reverse k = {back:e}",
                    from + 1,
                    to + 1
                ),
            });
        }
        let w = (fwd / back).ln();
        total += w;
        increments.push(w);
    }
    Ok((total, increments))
}

/// `W` as the sum of log rate ratios, and `S = W + log mu(X_0) - log mu(X_t)`.
pub fn path_functionals<M: RateModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    law: &dyn LawView,
) -> Result<PathFunctionals> {
    let (w_total, increments) = heat(model, traj)?;
    let s_total = w_total + log_law(law, traj.initial_state, traj.start)?
        - log_law(law, traj.final_state(), traj.end())?;
    Ok(PathFunctionals {
        w_total,
        s_total,
        increments,
    })
}

/// `int_a^b K_i(s) ds` by composite five-point Gauss–Legendre on panels
/// aligned with the model's breakpoints.
pub fn survival_integral<M: RateModel + ?Sized>(model: &M, state: usize, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = model.n_states();
    let escape = |t: f64| -> f64 { (0..n).filter(|&j| j != state).map(|j| model.rate(state, j, t)).sum() };
    let max_panel = model.period().unwrap_or(1.0) / 32.0;
    let mut cuts = vec![a];
    cuts.extend(model.breakpoints(a, b));
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if model.constant_on(lo, hi) {
            total += escape(0.5 * (lo + hi)) * (hi - lo);
            continue;
        }
        let panels = ((hi - lo) / max_panel).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            let half = 0.5 * h;
            let mut s = 0.0;
            for (x, wt) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS.iter()) {
                s += wt * escape(mid + half * x);
            }
            total += s * half;
        }
    }
    total
}

/// Log density of the jump times and targets, with initial law `pi`.
pub fn log_path_density<M: RateModel + ?Sized>(model: &M, traj: &Trajectory, pi: &[f64]) -> f64 {
    let mut total = pi[traj.initial_state].ln();
    let mut prev_time = traj.start;
    for (from, to, t) in traj.transitions() {
        total += model.rate(from, to, t).ln();
        total -= survival_integral(model, from, prev_time, t);
        prev_time = t;
    }
    total - survival_integral(model, traj.final_state(), prev_time, traj.end())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub target: String,
}

impl McEstimate {
    fn from_samples(xs: &[f64], target: String) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            target,
        }
    }

    /// Number of standard errors between the estimate and `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value).abs() / self.std_error
        }
    }
}

/// Values of `functional(0, t)` on `n_paths` independent paths started from `pi`.
///
/// `law` is the chain's law for the `S` boundary terms; when absent it is
/// integrated from `pi`.
#[allow(clippy::too_many_arguments)]
pub fn functional_samples<M: RateModel + ?Sized>(
    model: &M,
    functional: Functional,
    t: f64,
    n_paths: usize,
    seed: u64,
    pi: &[f64],
    law: Option<&dyn LawView>,
) -> Result<Vec<f64>> {
    if pi.len() != model.n_states() {
        return Err(Error::Config("initial law has the wrong length".into()));
    }
    let owned;
    let law: Option<&dyn LawView> = match (functional, law) {
        (Functional::S, None) => {
            owned = integrate_law(model, pi, t, DEFAULT_STEPS_PER_PERIOD)?;
            Some(&owned)
        }
        (_, l) => l,
    };
    let sampler = ThinningSampler::new(model, 0.0, t);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let traj = sample_from_law(model, &sampler, pi, 0.0, t, seed, id)?;
            match functional {
                Functional::W => heat(model, &traj).map(|(w, _)| w),
                Functional::S => path_functionals(model, &traj, law.unwrap()).map(|f| f.s_total),
            }
        })
        .collect()
}

/// Monte Carlo estimate of `E_pi[exp(lambda * functional(0, t))]`.
#[allow(clippy::too_many_arguments)]
pub fn mc_mgf<M: RateModel + ?Sized>(
    model: &M,
    functional: Functional,
    lambda: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
    pi: &[f64],
    law: Option<&dyn LawView>,
) -> Result<McEstimate> {
    if n_paths < 100 {
        return Err(Error::InsufficientSamples(format!("need at least 100 paths, got {n_paths}")));
    }
    let target = format!("E[exp({lambda} {}(0,{t}))]", functional.name());
    if lambda == 0.0 {
        return Ok(McEstimate {
            mean: 1.0,
            std_error: 0.0,
            n_paths,
            target,
        });
    }
    let values = functional_samples(model, functional, t, n_paths, seed, pi, law)?;
    let exponents: Vec<f64> = values.iter().map(|v| lambda * v).collect();
    let shift = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
    let est = McEstimate::from_samples(&scaled, target);
    let log_mean = est.mean.ln() + shift;
    if !(log_mean < 700.0) || !(shift < 700.0) {
        return Err(Error::EstimateUnstable { max_exponent: shift });
    }
    let factor = shift.exp();
    Ok(McEstimate {
        mean: est.mean * factor,
        std_error: est.std_error * factor,
        ..est
    })
}

/// Monte Carlo estimate of `E_pi[functional(0, t) / t]`.
#[allow(clippy::too_many_arguments)]
pub fn mc_time_average<M: RateModel + ?Sized>(
    model: &M,
    functional: Functional,
    t: f64,
    n_paths: usize,
    seed: u64,
    pi: &[f64],
    law: Option<&dyn LawView>,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::InsufficientSamples("no paths requested".into()));
    }
    if let Some(p) = model.period() {
        if t < 20.0 * p {
            log::warn!("time average over t = {t} < 20 periods");
        }
    }
    let values = functional_samples(model, functional, t, n_paths, seed, pi, law)?;
    let avg: Vec<f64> = values.iter().map(|v| v / t).collect();
    Ok(McEstimate::from_samples(
        &avg,
        format!("E[{}(0,{t})/{t}]", functional.name()),
    ))
}

/// Writes `path_id,jump_index,time,from_state,to_state,w_increment` rows
/// (states 1-indexed) for each path.
pub fn write_trajectories_csv<M: RateModel + ?Sized, W: Write>(
    model: &M,
    paths: &[Trajectory],
    mut out: W,
) -> Result<()> {
    writeln!(out, "path_id,jump_index,time,from_state,to_state,w_increment")?;
    for traj in paths {
        let (_, inc) = heat(model, traj)?;
        for (k, ((from, to, t), w)) in traj.transitions().zip(inc).enumerate() {
            writeln!(out, "{},{},{},{},{},{}", traj.path_id, k + 1, t, from + 1, to + 1, w)?;
        }
    }
    Ok(())
}
