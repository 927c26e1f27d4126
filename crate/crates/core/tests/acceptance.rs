//! End-to-end acceptance checks. Runs without the libtest harness so each
//! check prints one PASS/FAIL line; exits nonzero if any check fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mitosis_core::direct::{
    check_invariants, constant_b_series, solve_direct, solve_pair, SolveOptions,
};
use mitosis_core::entropy::{
    build_perturbation_from, bump, gap_study, gre_balance, random_bump_directions, ConvexProbe,
};
use mitosis_core::inverse::{
    derivative_bound, recover_rate, solve_regularized_general, weak_stability_check, Filters,
    NoisyObservation, Scheme, COMBINED_BOUND, ENERGY_BOUND, SOURCE_DERIVATIVE_BOUND,
};
use mitosis_core::noise::unit_noise;
use mitosis_core::stats::fit_loglog;
use mitosis_core::study::{add_noise, convergence_study, synthesize, AlphaRule, ExperimentConfig};
use mitosis_core::toy::{toy_solve, toy_study, weighted_error, ToyProblem, TOY_BOUND_SLACK};
use mitosis_core::{Grid, GridFunction, RateBounds, RateSpec, SobolevOrder};

type Outcome = Result<(bool, String), mitosis_core::Error>;

struct Check {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn constant_oracle() -> Outcome {
    let grid = Grid::new(12.0, 4096)?;
    let bounds = RateSpec::Constant(1.0).bounds(grid)?;
    let pair = solve_direct(&bounds, opts())?;
    let series = constant_b_series(1.0, grid, 60)?;
    let dist = pair.n.sub(&series)?.l2();
    let dl = (pair.lambda0 - 1.0).abs();
    Ok((
        dl <= 1e-3 && dist <= 1e-3,
        format!("|lambda0-1| = {dl:.2e}, ||N - series|| = {dist:.2e}"),
    ))
}

fn invariant_suite() -> Outcome {
    let grid = Grid::new(16.0, 4096)?;
    let smooth = GridFunction::constant(grid, 1.0).add(&bump(grid, 3.0, 1.5).scale(0.8))?;
    let rates: Vec<(&str, RateBounds)> = vec![
        ("constant 1", RateSpec::Constant(1.0).bounds(grid)?),
        ("constant 2", RateSpec::Constant(2.0).bounds(grid)?),
        (
            "step 1->2 at 2",
            RateSpec::step(2.0, 1.0, 2.0).bounds(grid)?,
        ),
        (
            "step 2->1 at 3",
            RateSpec::step(3.0, 2.0, 1.0).bounds(grid)?,
        ),
        ("smooth bump", RateBounds::new(smooth)?),
    ];
    let mut ok = true;
    let mut worst_eq: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for (name, b) in &rates {
        let pair = solve_pair(b, opts())?;
        let rep = check_invariants(&pair, b)?;
        for key in ["f1", "f2"] {
            let c = rep.get(key).expect("equality check");
            worst_eq = worst_eq.max((c.lhs - c.rhs).abs());
            ok &= (c.lhs - c.rhs).abs() <= 1e-4;
        }
        for key in ["f3", "f5"] {
            let c = rep.get(key).expect("inequality check");
            min_slack = min_slack.min(c.rhs - c.lhs);
            if c.rhs - c.lhs <= 0.0 {
                ok = false;
                println!("    {name}: {key} has no slack ({} vs {})", c.lhs, c.rhs);
            }
        }
    }
    Ok((
        ok,
        format!("5 rates, worst f1/f2 gap {worst_eq:.2e}, min f3/f5 slack {min_slack:.3}"),
    ))
}

fn gre_identity() -> Outcome {
    let probes = [
        ConvexProbe::Square,
        ConvexProbe::Linear,
        ConvexProbe::PositivePart(0.1),
    ];
    let case = |n: usize, k: usize| -> mitosis_core::Result<Vec<f64>> {
        let grid = Grid::new(12.0, n)?;
        let (base, db) = match k {
            0 => (
                GridFunction::constant(grid, 1.0),
                bump(grid, 1.0, 0.5).scale(0.5),
            ),
            1 => (
                GridFunction::constant(grid, 1.0),
                bump(grid, 2.0, 1.0).scale(-0.4),
            ),
            _ => (
                GridFunction::from_fn(grid, |x| 1.0 + 0.5 * x / (1.0 + x)),
                bump(grid, 1.5, 0.8).scale(0.6),
            ),
        };
        let bounds = RateBounds::new(base)?;
        let base = solve_pair(&bounds, opts())?;
        let pair = build_perturbation_from(&bounds, &base, &db, opts())?;
        probes
            .iter()
            .map(|p| Ok(gre_balance(&pair, *p)?.relative_error()))
            .collect()
    };
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut min_gain = f64::INFINITY;
    for k in 0..3 {
        let coarse = case(4096, k)?;
        let fine = case(8192, k)?;
        for ((c, f), p) in coarse.iter().zip(&fine).zip(&probes) {
            worst = worst.max(*c);
            min_gain = min_gain.min(c / f);
            if *c > 1e-3 || c / f < 3.0 {
                ok = false;
                println!("    pair {k} probe {}: {c:.2e} -> {f:.2e}", p.name());
            }
        }
    }
    Ok((
        ok,
        format!("worst relative error {worst:.2e} at n=4096, min refinement gain {min_gain:.2}x"),
    ))
}

fn spectral_gap() -> Outcome {
    let grid = Grid::new(12.0, 4096)?;
    let bounds = RateSpec::Constant(1.0).bounds(grid)?;
    let dirs = random_bump_directions(grid, 100, 2024);
    let rep = gap_study(&bounds, &dirs, 0.05, opts(), None)?;
    let ok = rep.nu_hat > 0.0 && rep.moment_constant.is_finite() && rep.samples.len() == 100;
    Ok((
        ok,
        format!(
            "m = {}, nu_hat = {:.4}, moment constant = {:.4}",
            rep.m, rep.nu_hat, rep.moment_constant
        ),
    ))
}

fn toy_module() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();

    // closed form for v = x^2
    let grid = Grid::new(1.0, 4096)?;
    let sq = ToyProblem::square(grid);
    let u = toy_solve(&sq.weight, &sq.data, 0.1)?;
    let closed = GridFunction::from_fn(grid, |x| 2.0 * x - 0.2 * (1.0 - (-x / 0.1).exp()));
    let cf = u.sub(&closed)?.l2();
    ok &= cf <= 1e-3;
    notes.push(format!("closed form {cf:.1e}"));

    // stability and consistency on compatible data (v'(0) = 0)
    let h = grid.spacing();
    let datas: Vec<GridFunction> = vec![
        GridFunction::from_fn(grid, |x| x * x),
        GridFunction::from_fn(grid, |x| x * x * x),
        GridFunction::from_fn(grid, |x| 1.0 - (std::f64::consts::PI * x).cos()),
        GridFunction::from_fn(grid, |x| x * x * (-3.0 * x).exp()),
    ];
    let weights: Vec<GridFunction> = vec![
        GridFunction::constant(grid, 1.0),
        GridFunction::from_fn(grid, |x| 1.0 + x),
        GridFunction::from_fn(grid, |x| x.exp()),
    ];
    let mut worst_stab: f64 = 0.0;
    let mut worst_cons: f64 = 0.0;
    for v in &datas {
        for w in &weights {
            let p = ToyProblem::new(w.clone(), v.clone(), None, v.seminorm(SobolevOrder::H2))?;
            ok &= p.is_compatible(10.0 * h);
            let reference = v.derivative().zip_with(w, |d, l| d / l)?;
            for alpha in [1e-2, 1e-1, 1.0] {
                let ua = toy_solve(w, v, alpha)?;
                let stab = ua.mul(w)?.l2() / (v.l2() / alpha + h);
                let cons = weighted_error(&ua, &reference, w)? / (alpha * p.curvature_norm() + h);
                worst_stab = worst_stab.max(stab);
                worst_cons = worst_cons.max(cons);
            }
        }
    }
    // stability also for rough data
    for seed in 0..5 {
        let v = unit_noise(grid, seed);
        for alpha in [1e-3, 1e-2, 1e-1] {
            let ua = toy_solve(&weights[0], &v, alpha)?;
            worst_stab = worst_stab.max(ua.l2() / (v.l2() / alpha + h));
        }
    }
    ok &= worst_stab <= 1.0 && worst_cons <= 1.0;
    notes.push(format!(
        "stability ratio {worst_stab:.3}, consistency ratio {worst_cons:.3}"
    ));

    // noisy study with the optimal parameter
    let fine = Grid::new(1.0, 16384)?;
    let sq = ToyProblem::square(fine);
    let eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let seeds: Vec<u64> = (0..10).collect();
    let study = toy_study(&sq, &eps, &seeds)?;
    let worst_bound = study
        .rows
        .iter()
        .map(|r| r.error / r.bound)
        .fold(0.0, f64::max);
    let slope = study.slope.map_or(f64::NAN, |f| f.slope);
    ok &= (slope - 0.5).abs() <= 0.15
        && worst_bound <= TOY_BOUND_SLACK
        && study.rows.iter().all(|r| r.pass);
    notes.push(format!(
        "slope {slope:.3}, max error/bound {worst_bound:.3}"
    ));
    Ok((ok, notes.join(", ")))
}

fn strong_stability() -> Outcome {
    let grid = Grid::new(8.0, 8192)?;
    let one = GridFunction::constant(grid, 1.0);
    let sources = [
        GridFunction::from_fn(grid, |y| (3.0 * y).sin()),
        GridFunction::from_fn(grid, |y| y * y * (-y).exp()),
        GridFunction::constant(grid, 1.0),
        GridFunction::from_fn(grid, |y| y * (-0.3 * y).exp() * (20.0 * y).cos()),
        GridFunction::from_fn(grid, |y| if y > 1.0 && y < 2.0 { 1.0 } else { 0.0 }),
        GridFunction::from_fn(grid, |y| y),
        unit_noise(grid, 5),
    ];
    let (mut comb, mut energy, mut deriv, mut src): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut with_zero_start = 0;
    for f in &sources {
        for alpha in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let r = solve_regularized_general(&one, f, alpha)?.report;
            comb = comb.max(r.combined_constant);
            energy = energy.max(r.energy_constant);
            deriv = deriv.max(r.derivative_constant);
            if let Some(c) = r.source_derivative_constant {
                src = src.max(c);
                with_zero_start += 1;
            }
        }
    }
    let ok = comb <= 1.1 * COMBINED_BOUND
        && energy <= 1.1 * ENERGY_BOUND
        && deriv <= 1.1 * derivative_bound()
        && src <= SOURCE_DERIVATIVE_BOUND + 0.05
        && with_zero_start > 0;
    Ok((
        ok,
        format!(
            "combined {comb:.3} (<= {:.2}), energy {energy:.3}, derivative {deriv:.3} (<= {:.2}), source-derivative {src:.3} (<= {:.3})",
            1.1 * COMBINED_BOUND,
            1.1 * derivative_bound(),
            SOURCE_DERIVATIVE_BOUND + 0.05
        ),
    ))
}

fn consistency() -> Outcome {
    let grid = Grid::new(12.0, 16384)?;
    let n = constant_b_series(1.0, grid, 60)?;
    let obs = NoisyObservation::exact(n.clone(), 1.0)?;
    let truth = GridFunction::constant(grid, 1.0);
    let alphas = [1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1];
    let mut ok = true;
    let mut notes = Vec::new();
    for scheme in [Scheme::DerivativeFree, Scheme::DirectFd] {
        let pts = alphas
            .iter()
            .map(|&a| {
                Ok((
                    a,
                    recover_rate(&obs, a, scheme)?
                        .rate
                        .error(&truth, Some(&n))?,
                ))
            })
            .collect::<mitosis_core::Result<Vec<_>>>()?;
        let slope = fit_loglog(&pts).map_or(f64::NAN, |f| f.slope);
        ok &= (slope - 1.0).abs() <= 0.3;
        notes.push(format!("{scheme} slope {slope:.3}"));
    }
    Ok((ok, notes.join(", ")))
}

fn weak_stability() -> Outcome {
    let eps: f64 = 1e-3;
    let alpha = eps.sqrt();
    let ensemble = |n: usize| -> mitosis_core::Result<f64> {
        let grid = Grid::new(12.0, n)?;
        let truth = constant_b_series(1.0, grid, 60)?;
        let exact = recover_rate(
            &NoisyObservation::exact(truth.clone(), 1.0)?,
            alpha,
            Scheme::DerivativeFree,
        )?;
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let obs = add_noise(
                &truth,
                eps,
                seed,
                Filters::envelope(grid, truth.max())?,
                1.0,
            )?;
            let noisy = recover_rate(&obs, alpha, Scheme::DerivativeFree)?;
            worst = worst.max(weak_stability_check(&exact, &noisy)?.constant());
        }
        Ok(worst)
    };
    let c1 = ensemble(4096)?;
    let c2 = ensemble(8192)?;
    let ratio = c2 / c1;
    let ok = c1.is_finite() && c2.is_finite() && (0.5..=2.0).contains(&ratio);
    Ok((
        ok,
        format!("max C = {c1:.3} (n=4096), {c2:.3} (n=8192), ratio {ratio:.3}"),
    ))
}

fn convergence_rate() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, spec, length) in [
        ("constant", RateSpec::Constant(1.0), 12.0),
        ("step", RateSpec::step(2.0, 1.0, 2.0), 16.0),
    ] {
        let cfg = ExperimentConfig {
            length,
            n: 4096,
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5],
            alpha_rule: AlphaRule::SqrtRule(1.0),
            seeds: 10,
            ..ExperimentConfig::default()
        };
        let synth = synthesize(&spec, cfg.grid()?, opts())?;
        let rep = convergence_study(&cfg, &synth)?;
        let slope = rep.slope.map_or(f64::NAN, |f| f.slope);
        ok &= rep.slope_passes(Some((0.35, 0.65)));
        notes.push(format!("{label} slope {slope:.3}"));
    }
    Ok((ok, notes.join(", ")))
}

fn scheme_equivalence() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for alpha in [1e-1, 1e-2] {
        let scaled = [4096, 8192, 16384]
            .iter()
            .map(|&n| {
                let grid = Grid::new(12.0, n)?;
                let obs = NoisyObservation::exact(constant_b_series(1.0, grid, 60)?, 1.0)?;
                let fd = recover_rate(&obs, alpha, Scheme::DirectFd)?;
                let df = recover_rate(&obs, alpha, Scheme::DerivativeFree)?;
                Ok(fd.p.sub(&df.p)?.l2() / grid.spacing())
            })
            .collect::<mitosis_core::Result<Vec<f64>>>()?;
        let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= hi / lo <= 1.25;
        notes.push(format!(
            "alpha {alpha}: diff/h = {}",
            scaled
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn main() -> ExitCode {
    let checks = [
        Check {
            id: 1,
            name: "constant-rate oracle",
            limit: Some(Duration::from_secs(30)),
            run: constant_oracle,
        },
        Check {
            id: 2,
            name: "eigen-invariant suite",
            limit: Some(Duration::from_secs(180)),
            run: invariant_suite,
        },
        Check {
            id: 3,
            name: "entropy identity",
            limit: None,
            run: gre_identity,
        },
        Check {
            id: 4,
            name: "spectral gap",
            limit: Some(Duration::from_secs(300)),
            run: spectral_gap,
        },
        Check {
            id: 5,
            name: "regularized differentiation",
            limit: None,
            run: toy_module,
        },
        Check {
            id: 6,
            name: "strong stability",
            limit: None,
            run: strong_stability,
        },
        Check {
            id: 7,
            name: "consistency order",
            limit: None,
            run: consistency,
        },
        Check {
            id: 8,
            name: "weak stability",
            limit: None,
            run: weak_stability,
        },
        Check {
            id: 9,
            name: "convergence rate",
            limit: Some(Duration::from_secs(600)),
            run: convergence_rate,
        },
        Check {
            id: 10,
            name: "scheme equivalence",
            limit: None,
            run: scheme_equivalence,
        },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for c in &checks {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| c.name.contains(f.as_str()) || c.id.to_string() == *f)
        {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = c.limit.is_none_or(|l| elapsed <= l);
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let limit = c
            .limit
            .map(|l| format!(" / limit {}s", l.as_secs()))
            .unwrap_or_default();
        println!(
            "[{}] {:>2} {}: {} ({:.1}s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            limit
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}
