//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use fldp::catalog;
use fldp::counterexample::{
    build_counterexample, detect_nonconvergence, free_energy_trace, periodic_trace, ring_rates, BuildOptions, Verdict,
};
use fldp::ldp::{
    default_lambda_grid, derivative_at_zero, ep_curve, free_energy_curve, ft_residuals, legendre_fenchel, mirrored,
    slope_range_grid, tilt_law, FreeEnergyCurve, RateFunction,
};
use fldp::propagator::{
    asymptotic_law, integrate_law, mgf, monodromy, perron, DEFAULT_STEPS_PER_PERIOD,
};
use fldp::simulate::{log_path_density, mc_mgf, mc_time_average, path_functionals, sample_from_law, ThinningSampler};
use fldp::{Direction, Functional, RateModel, Reversed, Tilt, ValidatedProtocol};

const STEPS: usize = DEFAULT_STEPS_PER_PERIOD;
const FUNCTIONALS: [Functional; 2] = [Functional::W, Functional::S];

struct Curves {
    name: &'static str,
    protocol: ValidatedProtocol,
    functional: Functional,
    fwd: FreeEnergyCurve,
    bwd: FreeEnergyCurve,
    fwd_rate: RateFunction,
    bwd_rate: RateFunction,
}

fn all_curves() -> Vec<Curves> {
    let lambdas = default_lambda_grid();
    let mut out = Vec::new();
    for (name, protocol) in catalog::shipped() {
        for functional in FUNCTIONALS {
            let fwd = free_energy_curve(&protocol, functional, Direction::Forward, &lambdas, STEPS).unwrap();
            let bwd = free_energy_curve(&protocol, functional, Direction::Backward, &mirrored(&lambdas), STEPS).unwrap();
            let zs = slope_range_grid(&fwd, 401).unwrap();
            let fwd_rate = legendre_fenchel(&fwd, &zs).unwrap();
            let bwd_rate = legendre_fenchel(&bwd, &mirrored(&zs)).unwrap();
            out.push(Curves {
                name,
                protocol: protocol.clone(),
                functional,
                fwd,
                bwd,
                fwd_rate,
                bwd_rate,
            });
        }
    }
    out
}

fn line(results: &mut Vec<bool>, id: usize, pass: bool, detail: String) {
    println!("{} criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(pass);
}

/// Dense tilted heat generator built directly from the rates.
fn dense_tilt(rates: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = rates.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut escape = 0.0;
        for j in 0..n {
            if i != j {
                escape += rates[(i, j)];
                if rates[(i, j)] > 0.0 {
                    l[(i, j)] = rates[(i, j)].powf(1.0 + lambda) * rates[(j, i)].powf(-lambda);
                }
            }
        }
        l[(i, i)] = -escape;
    }
    l
}

fn normalization(curves: &[Curves], results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    for c in curves {
        for curve in [&c.fwd, &c.bwd] {
            let v = curve.value_near(0.0).expect("grid contains 0");
            worst = worst.max(v.abs());
        }
    }
    line(results, 1, worst < 1e-8, format!("max |c(0)| = {worst:.3e} (tol 1e-8)"));
}

fn closed_form(results: &mut Vec<bool>) {
    let p2 = catalog::p2();
    let rates = p2.rate_matrix(0.0);
    let lambdas = default_lambda_grid();
    let curve = free_energy_curve(&p2, Functional::W, Direction::Forward, &lambdas, STEPS).unwrap();
    let (mut pipeline, mut oracle) = (0.0f64, 0.0f64);
    for (&l, &c) in lambdas.iter().zip(&curve.values) {
        let exact = 2f64.powf(1.0 + l) + 2f64.powf(-l) - 3.0;
        let eig = dense_tilt(&rates, l)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        pipeline = pipeline.max((c - exact).abs());
        oracle = oracle.max((eig - exact).abs());
    }
    line(
        results,
        2,
        pipeline < 1e-7 && oracle < 1e-7,
        format!("P2 c_W: pipeline {pipeline:.3e}, dense eigensolve {oracle:.3e} on {} points (tol 1e-7)", lambdas.len()),
    );
}

fn symmetry(curves: &[Curves], results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    let mut fails = 0;
    for c in curves {
        let r = ft_residuals(&c.fwd, &c.bwd, &c.fwd_rate, &c.bwd_rate, c.protocol.time_symmetric()).unwrap();
        if r.c_max >= 1e-6 {
            fails += 1;
        }
        if r.c_max >= worst {
            worst = r.c_max;
            at = format!("{} {}", c.name, c.functional.name());
        }
    }
    line(
        results,
        3,
        fails == 0,
        format!("max |c(l) - c^B(-1-l)| = {worst:.3e} at {at} (tol 1e-6)"),
    );
}

fn fluctuation_theorem(curves: &[Curves], results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    let mut points = 0;
    for c in curves {
        let r = ft_residuals(&c.fwd, &c.bwd, &c.fwd_rate, &c.bwd_rate, c.protocol.time_symmetric()).unwrap();
        points += r.i_points;
        if r.i_max >= worst {
            worst = r.i_max;
            at = format!("{} {}", c.name, c.functional.name());
        }
    }
    line(
        results,
        4,
        worst < 1e-5,
        format!("max |I(z) - I^B(-z) + z| = {worst:.3e} at {at} over {points} z (tol 1e-5)"),
    );
}

fn internal_gc(curves: &[Curves], results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    let mut sine: f64 = 0.0;
    for c in curves {
        let r = ft_residuals(&c.fwd, &c.bwd, &c.fwd_rate, &c.bwd_rate, c.protocol.time_symmetric()).unwrap();
        match c.name {
            "P2" | "P3" => worst = worst.max(r.internal_gc),
            "P3-sine" => sine = sine.max(r.internal_gc),
            _ => {}
        }
    }
    line(
        results,
        5,
        worst < 1e-6,
        format!("P2, P3 max |c(l) - c(-1-l)| = {worst:.3e} (tol 1e-6); sine variant exempt, {sine:.3e}"),
    );
}

fn adjoint(results: &mut Vec<bool>) {
    let mut worst: f64 = 0.0;
    for (_, p) in catalog::shipped() {
        for lambda in [-1.5, -0.5, 0.5] {
            let f = monodromy(&p, Tilt::W(lambda), 0.0, Direction::Forward, STEPS).unwrap();
            let b = monodromy(&p, Tilt::W(-1.0 - lambda), 0.0, Direction::Backward, STEPS).unwrap();
            worst = worst.max((&b.flow.transpose() - &f.flow).amax());
        }
    }
    line(results, 6, worst < 1e-7, format!("max entrywise |B^T - F| = {worst:.3e} (tol 1e-7)"));
}

fn entropy_triangle(results: &mut Vec<bool>) {
    let lambdas = default_lambda_grid();
    let t = 200.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p) in [("P2", catalog::p2()), ("P3", catalog::p3())] {
        let curve = free_energy_curve(&p, Functional::S, Direction::Forward, &lambdas, STEPS).unwrap();
        let d = derivative_at_zero(&curve).unwrap().value;
        let ep = ep_curve(&p, STEPS).unwrap().time_average;
        let nu = asymptotic_law(&p, STEPS).unwrap();
        let law = integrate_law(&p, &nu.initial(), t, STEPS).unwrap();
        let mc = mc_time_average(&p, Functional::S, t, 10_000, 2024, &nu.initial(), Some(&law)).unwrap();
        if name == "P2" {
            let ln2 = 2f64.ln();
            ok &= (d - ln2).abs() < 1e-4 && (ep - ln2).abs() < 1e-6 && mc.z_score(ln2) < 3.0;
            parts.push(format!(
                "P2 c'(0)-ln2 {:.2e}, e_p-ln2 {:.2e}, MC {:.2} SE",
                d - ln2,
                ep - ln2,
                mc.z_score(ln2)
            ));
        } else {
            ok &= mc.z_score(d) < 3.0 && mc.z_score(ep) < 3.0 && (d - ep).abs() < 3.0 * mc.std_error;
            parts.push(format!(
                "P3 c'(0)-e_p {:.2e}, MC vs e_p {:.2} SE",
                d - ep,
                mc.z_score(ep)
            ));
        }
    }
    line(results, 7, ok, parts.join("; "));
}

/// Ordered product of dense exponentials with ramps cut into short
/// midpoint panels; returns `E_i[exp(lambda W(0, t))]`.
fn piecewise_oracle(p: &ValidatedProtocol, lambda: f64, t: f64) -> DVector<f64> {
    let period = p.period_len();
    let (centres, half) = ([0.0, 0.3, 0.4, 0.6], 0.01);
    let mut cuts = vec![0.0, t];
    let mut k = 0.0;
    while k * period <= t + period {
        for c in centres {
            for edge in [c - half, c + half] {
                let x = k * period + edge;
                if x > 0.0 && x < t {
                    cuts.push(x);
                }
            }
        }
        k += 1.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let mut product = DMatrix::<f64>::identity(3, 3);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let phase = mid.rem_euclid(period);
        let in_ramp = centres
            .iter()
            .any(|&c| (phase - c).abs() < half || (phase - c - period).abs() < half);
        let panels = if in_ramp { 400 } else { 1 };
        let h = (b - a) / panels as f64;
        for j in 0..panels {
            let s = a + (j as f64 + 0.5) * h;
            product *= (dense_tilt(&p.rate_matrix(s), lambda) * h).exp();
        }
    }
    product * DVector::from_element(3, 1.0)
}

fn oracle_equivalence(results: &mut Vec<bool>) {
    let p = catalog::piecewise_three_state();
    let pi = [1.0 / 3.0; 3];
    let mut rel: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for lambda in [-0.5, 0.5] {
        for t in [1.0, 5.0] {
            let u = mgf(&p, Functional::W, lambda, t, Direction::Forward, None, STEPS).unwrap().values();
            let oracle = piecewise_oracle(&p, lambda, t);
            rel = rel.max(((&u - &oracle).amax()) / oracle.amax());
            let exact: f64 = pi.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            let mc = mc_mgf(&p, Functional::W, lambda, t, 100_000, 77, &pi, None).unwrap();
            worst_z = worst_z.max(mc.z_score(exact));
        }
    }
    line(
        results,
        8,
        rel < 1e-6 && worst_z < 3.0,
        format!("dense-product relative error {rel:.3e} (tol 1e-6); worst MC deviation {worst_z:.2} SE (tol 3)"),
    );
}

fn path_density(results: &mut Vec<bool>) {
    let p = catalog::p3();
    let t = 3.7;
    let nu = asymptotic_law(&p, STEPS).unwrap();
    let law = integrate_law(&p, &nu.initial(), t, STEPS).unwrap();
    let rev = Reversed::new(&p, t);
    let sampler = ThinningSampler::new(&p, 0.0, t);
    let mut worst: f64 = 0.0;
    for id in 0..1000 {
        let traj = sample_from_law(&p, &sampler, &nu.initial(), 0.0, t, 31, id).unwrap();
        let s = path_functionals(&p, &traj, &law).unwrap().s_total;
        let diff = log_path_density(&p, &traj, law.law(0)) - log_path_density(&rev, &traj.reversed(), law.final_law());
        worst = worst.max((s - diff).abs());
    }
    line(results, 9, worst < 1e-8, format!("1000 P3 paths, max |S - log density ratio| = {worst:.3e} (tol 1e-8)"));
}

fn positivity_and_halving(results: &mut Vec<bool>) {
    let mut positive = true;
    let mut worst: f64 = 0.0;
    let lambdas: Vec<f64> = (0..=6).map(|k| -2.0 + 0.5 * k as f64).collect();
    for (_, p) in catalog::shipped() {
        let law = tilt_law(&p, Direction::Forward, STEPS).unwrap();
        let fine_law = tilt_law(&p, Direction::Forward, 2 * STEPS).unwrap();
        for &lambda in &lambdas {
            for functional in FUNCTIONALS {
                let (tilt, fine_tilt) = match functional {
                    Functional::W => (Tilt::W(lambda), Tilt::W(lambda)),
                    Functional::S => (Tilt::S(lambda, &law), Tilt::S(lambda, &fine_law)),
                };
                let (coarse, fine) = match (
                    monodromy(&p, tilt, 0.0, Direction::Forward, STEPS),
                    monodromy(&p, fine_tilt, 0.0, Direction::Forward, 2 * STEPS),
                ) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => {
                        positive = false;
                        continue;
                    }
                };
                positive &= coarse.flow.iter().all(|&x| x > 0.0);
                let e = perron(&coarse).unwrap().exponent - perron(&fine).unwrap().exponent;
                worst = worst.max(e.abs());
            }
        }
    }
    line(
        results,
        10,
        positive && worst < 1e-8,
        format!("monodromies positive: {positive}; max exponent change on step halving {worst:.3e} (tol 1e-8)"),
    );
}

fn counterexample(results: &mut Vec<bool>) {
    let lambda = 0.5;
    let cx = build_counterexample(0.5, 5.0, &ring_rates(2.0, 1.0), 2.0, 8, BuildOptions::default()).unwrap();
    let (trace, tol) = free_energy_trace(&cx, lambda, 256).unwrap();
    let alt = detect_nonconvergence(&trace, tol).unwrap();
    let p3 = catalog::p3();
    let (ptrace, ptol) = periodic_trace(&p3, &[0.5, 0.5], lambda, 24, STEPS).unwrap();
    let per = detect_nonconvergence(&ptrace, ptol).unwrap();
    line(
        results,
        11,
        alt.verdict == Verdict::Nonconvergent && alt.gap > 10.0 * alt.tolerance && per.verdict == Verdict::Convergent,
        format!(
            "alternating gap {:.4} (tol {:.1e}, {:?}); P3 gap {:.3e} (tol {:.1e}, {:?})",
            alt.gap, alt.tolerance, alt.verdict, per.gap, per.tolerance, per.verdict
        ),
    );
}

fn nonnegativity(curves: &[Curves], results: &mut Vec<bool>) {
    let mut min_ep = f64::INFINITY;
    for (_, p) in catalog::shipped() {
        min_ep = min_ep.min(ep_curve(&p, STEPS).unwrap().values.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    let mut min_i = f64::INFINITY;
    let mut at_mean: f64 = 0.0;
    for c in curves {
        for r in [&c.fwd_rate, &c.bwd_rate] {
            min_i = min_i.min(r.values.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        for curve in [&c.fwd, &c.bwd] {
            let d = derivative_at_zero_or_mirror(curve);
            let r = legendre_fenchel(curve, &[d]).unwrap();
            at_mean = at_mean.max(r.values[0].abs());
        }
    }
    line(
        results,
        12,
        min_ep >= 0.0 && min_i >= 0.0 && at_mean < 1e-7,
        format!("min e_p {min_ep:.3e}, min I {min_i:.3e}, max I(c'(0)) {at_mean:.3e} (tol 1e-7)"),
    );
}

/// `c'(0)` for the forward curve; the backward curve is on the mirrored grid,
/// which contains 0 as well.
fn derivative_at_zero_or_mirror(curve: &FreeEnergyCurve) -> f64 {
    derivative_at_zero(curve).unwrap().value
}

fn main() -> ExitCode {
    let start = Instant::now();
    let curves = all_curves();
    let mut results = Vec::new();
    normalization(&curves, &mut results);
    closed_form(&mut results);
    symmetry(&curves, &mut results);
    fluctuation_theorem(&curves, &mut results);
    internal_gc(&curves, &mut results);
    adjoint(&mut results);
    entropy_triangle(&mut results);
    oracle_equivalence(&mut results);
    path_density(&mut results);
    positivity_and_halving(&mut results);
    counterexample(&mut results);
    nonnegativity(&curves, &mut results);
    let passed = results.iter().filter(|&&r| r).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
