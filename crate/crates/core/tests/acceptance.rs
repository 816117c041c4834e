//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`). Tolerances
//! are pinned here, in code.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nde_core::admissibility::{
    beta_certificates, beta_schedule, check_hypotheses, contraction_rate, critical_point,
    epsilon_certificates, epsilon_schedule, h_eval, root_interval, AdmissibilityReport,
    BetaPolicy, Hypothesis, HypothesisParams, XStarPolicy,
};
use nde_core::cutoff::sampled_derivative_bound;
use nde_core::derivcheck::run_fdb_check;
use nde_core::manifold::{
    chart_equation_residual, manifold_xi_derivatives, r_smoothness_probe, solve_chart,
    solve_manifold, solve_manifold_family, ChartOptions, XiStencil,
};
use nde_core::problem::{residual, step_solve, HistorySegment, Mat, NdeProblem, NeutralPart};
use nde_core::tracking::{track, TrackingOptions};
use nde_core::vdp::{run_study, StudyOptions, VdpSpec};

fn pass(criterion: usize, detail: &str) {
    println!("[criterion {criterion:2}] PASS  {detail}");
}

/// Random feasible (M, M1, r) draws shared by criteria 1 and 2.
fn feasible_draws(n: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.02..0.9);
            let m1: f64 = rng.gen_range(0.1..4.0);
            let x0 = critical_point(m).unwrap();
            let hmax = h_eval(x0, m);
            let r = rng.gen_range(0.05..0.95) * hmax / m1;
            (m, m1, r)
        })
        .collect()
}

#[test]
fn criterion_01_appendix_a_suite() {
    let t0 = std::time::Instant::now();
    let draws = feasible_draws(100, 101);
    for &(m, m1, r) in &draws {
        let x0 = critical_point(m).unwrap();
        let (x1, x2) = root_interval(m, m1, r).unwrap();
        assert!(
            0.0 < x1 && x1 < x0 && x0 < x2 && x2 < -m.ln(),
            "bracket order violated: m={m} m1={m1} r={r}: {x1} {x0} {x2}"
        );
        let v = m1 * r;
        assert!((h_eval(x1, m) - v).abs() <= 1e-12, "x1 residual");
        assert!((h_eval(x2, m) - v).abs() <= 1e-12, "x2 residual");
        for i in 1..=100 {
            let x = x1 + (x2 - x1) * i as f64 / 101.0;
            assert!(h_eval(x, m) - v > 0.0, "interior positivity at x={x}");
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "runtime {dt}s exceeds 1s");
    pass(1, &format!("100 draws bracketed to 1e-12, interior positive ({dt:.3}s)"));
}

#[test]
fn criterion_02_hypothesis_consistency() {
    let draws = feasible_draws(100, 202);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut agreements = 0;
    let mut nontrivial_infeasible = 0;
    for &(m, m1, r0) in &draws {
        // fixed x* drawn across (0, ceiling): feasibility must agree with the
        // direct interval test H(x*) > M1 r0, equivalently kappa < 1
        let k = 1usize;
        let ceiling = -m.ln() / (k as f64 + 1.0);
        // draws only make sense when the ceiling condition itself holds
        if m1 * r0 >= h_eval(ceiling, m) {
            continue;
        }
        let xs: f64 = rng.gen_range(0.001..ceiling * 0.999);
        let p = HypothesisParams {
            hypothesis: Hypothesis::H1,
            m,
            m0: 0.1,
            mj: vec![m1, 1.0],
            k,
            r0,
            d: 1.0,
            dim: 1,
        };
        let rep = check_hypotheses(&p, XStarPolicy::Fixed(xs)).unwrap();
        let interval_test = h_eval(xs, m) > m1 * r0;
        let kappa_test = contraction_rate(&p, xs) < 1.0;
        assert_eq!(
            interval_test, kappa_test,
            "interval vs kappa mismatch at m={m} m1={m1} r0={r0} xs={xs}"
        );
        assert_eq!(
            rep.feasible, interval_test,
            "report feasibility disagrees at m={m} m1={m1} r0={r0} xs={xs}"
        );
        agreements += 1;
        if !rep.feasible {
            nontrivial_infeasible += 1;
        }
    }
    assert!(agreements >= 90, "only {agreements} draws qualified");
    assert!(nontrivial_infeasible > 0, "all draws feasible; test is vacuous");
    pass(
        2,
        &format!("{agreements} draws agreed (of which {nontrivial_infeasible} infeasible)"),
    );
}

#[test]
fn criterion_03_faa_di_bruno_oracle() {
    let t0 = std::time::Instant::now();
    let rep = run_fdb_check(42, 4, 10).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert!(
        rep.max_rel_err <= 1e-5,
        "max relative error {} exceeds 1e-5",
        rep.max_rel_err
    );
    assert!(dt < 10.0, "runtime {dt}s exceeds 10s");
    pass(
        3,
        &format!(
            "max relative error {:.2e} over {} cases ({dt:.2}s)",
            rep.max_rel_err,
            rep.cases.len()
        ),
    );
}

#[test]
fn criterion_04_constant_schedule_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut done = 0;
    while done < 20 {
        let k = *[2usize, 3].get(rng.gen_range(0..2)).unwrap();
        let dim = rng.gen_range(1..=2usize);
        let m_ceiling = 1.0 / (2.0 * 3f64.powi(k as i32));
        let m = rng.gen_range(0.02..0.9) * m_ceiling;
        let mj: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.1..3.0)).collect();
        let ceiling = -(2.0 * 3f64.powi(k as i32) * m).ln() / (k as f64 + 1.0);
        let r0 = rng.gen_range(0.1..0.8) * h_eval(ceiling, m) / mj[0];
        let p = HypothesisParams {
            hypothesis: Hypothesis::H2,
            m,
            m0: rng.gen_range(0.0..1.0),
            mj,
            k,
            r0,
            d: rng.gen_range(1.05..3.0),
            dim,
        };
        let rep = check_hypotheses(&p, XStarPolicy::Auto).unwrap();
        assert!(rep.feasible, "constructed draw infeasible: {:?}", rep.reasons);
        let xs = rep.x_star.unwrap();

        let b = beta_schedule(&p, xs, &BetaPolicy::Geometric).unwrap();
        assert!(b.delta > 0.0, "beta delta must be positive");
        for c in beta_certificates(&p, xs, &b) {
            assert!(c.holds, "beta certificate failed: {} ({} > {})", c.name, c.lhs, c.rhs);
        }
        let e = epsilon_schedule(&p, xs).unwrap();
        assert!(e.delta > 0.0, "epsilon delta must be positive");
        for pf in &e.positivity {
            assert!(*pf > 0.0, "positivity factor {pf} <= 0");
        }
        for c in epsilon_certificates(&p, xs, &e).unwrap() {
            assert!(c.holds, "epsilon certificate failed: {} ({} > {})", c.name, c.lhs, c.rhs);
        }
        done += 1;
    }
    pass(4, "20 H2 parameter sets: all schedule closures re-evaluated and positive");
}

#[test]
fn criterion_05_solver_convergence() {
    let t0 = std::time::Instant::now();
    // scalar neutral linear testcase A = 0.2, r = 0.1, f(y, z) = -y, phi == 1
    let r = 0.1;
    let a = 0.2;
    let rhs = Arc::new(nde_core::catalog::AffineField::new(
        Mat::scalar(-1.0),
        Mat::scalar(0.0),
        vec![0.0],
    ));
    let p = NdeProblem::new(1, r, NeutralPart::single(Mat::scalar(a), r), rhs);
    let phi = HistorySegment::constant(0.0, r, vec![1.0]);

    // per-segment closed form on [0, 2r]
    let closed = |t: f64| -> f64 {
        if t <= 0.0 {
            1.0
        } else if t <= r {
            (-t).exp()
        } else {
            let c = r.exp() * ((-r).exp() - a);
            let y = c * (-t).exp() - a * r.exp() * (t - r) * (-t).exp();
            y + a * (-(t - r)).exp()
        }
    };
    let traj = step_solve(&p, &phi, 2.0 * r, r / 32.0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..traj.grid.len {
        let t = traj.grid.node(i);
        if t < 0.0 {
            continue;
        }
        worst = worst.max((traj.values[i][0] - closed(t)).abs());
    }
    assert!(worst <= 1e-8, "closed-form gap {worst} exceeds 1e-8 at h = r/32");

    // residual order: three halvings, gain per halving in [3.5, 4.5]
    let mut sups = Vec::new();
    for k in 0..4 {
        let h = r / (32.0 * 2f64.powi(k));
        let tr = step_solve(&p, &phi, 1.0, h).unwrap();
        sups.push(residual(&p, &tr).unwrap().sup);
    }
    let mut ratios = Vec::new();
    for w in sups.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (3.5..=4.5).contains(&ratio),
            "halving ratio {ratio} outside [3.5, 4.5]; sups {sups:?}"
        );
        ratios.push(ratio);
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "runtime {dt}s exceeds 5s");
    pass(
        5,
        &format!("closed-form gap {worst:.2e}, residual halving ratios {ratios:.3?} ({dt:.2}s)"),
    );
}

// ---------------------------------------------------------------------------
// shared modified-vdP fixtures
// ---------------------------------------------------------------------------

struct VdpH1Instance {
    problem: NdeProblem,
    report: AdmissibilityReport,
}

fn vdp_h1() -> &'static VdpH1Instance {
    static INSTANCE: OnceLock<VdpH1Instance> = OnceLock::new();
    INSTANCE.get_or_init(|| {
        let spec = VdpSpec::new(-0.5, 0.1, 0.05, 0.001).unwrap();
        let problem = spec.problem();
        // derivative bounds of the modified field measured over the support
        // of its derivatives (the 2 kappa ball), 10% inflated
        let mj: Vec<f64> = (1..=2)
            .map(|j| {
                sampled_derivative_bound(
                    problem.rhs.as_ref(),
                    j,
                    2.05 * spec.kappa_cutoff,
                    600,
                    7000 + j as u64,
                )
            })
            .collect();
        let params = HypothesisParams {
            hypothesis: Hypothesis::H1,
            m: problem.neutral.sup_norm(),
            m0: spec.eps * spec.b.abs(),
            mj,
            k: 1,
            r0: 2.0 * spec.r,
            d: 1.5,
            dim: 2,
        };
        let report = check_hypotheses(&params, XStarPolicy::Auto).unwrap();
        assert!(report.feasible, "vdP H1 instance infeasible: {:?}", report.reasons);
        assert!(
            problem.r <= report.delta.unwrap(),
            "run delay exceeds admissible delta {:?}",
            report.delta
        );
        VdpH1Instance { problem, report }
    })
}

fn vdp_h1_stencil() -> XiStencil {
    XiStencil {
        dim: 2,
        bases: vec![
            vec![0.0, 0.0],
            vec![0.35, 0.0],
            vec![-0.35, 0.0],
            vec![0.0, 0.3],
            vec![0.0, -0.3],
            vec![0.3, 0.25],
            vec![-0.3, 0.25],
            vec![0.3, -0.25],
            vec![-0.3, -0.25],
            vec![0.6, 0.1],
            vec![-0.6, -0.1],
        ],
        step: 0.04,
    }
}

struct VdpChart {
    chart: nde_core::manifold::WeightedChart,
    diag: nde_core::manifold::PicardDiagnostics,
    tol: f64,
}

fn vdp_h1_chart() -> &'static VdpChart {
    static CHART: OnceLock<VdpChart> = OnceLock::new();
    CHART.get_or_init(|| {
        let inst = vdp_h1();
        let stencil = vdp_h1_stencil();
        let tol = 1e-11;
        let lambda = inst.report.x_star.unwrap() / inst.problem.r;
        let window = 5.0 / lambda;
        let (chart, diag) =
            solve_manifold(&inst.problem, &inst.report, &stencil.points(), window, tol).unwrap();
        VdpChart { chart, diag, tol }
    })
}

#[test]
fn criterion_06_manifold_contraction() {
    let t0 = std::time::Instant::now();
    let inst = vdp_h1();
    let vc = vdp_h1_chart();
    let kappa = inst.report.kappa.unwrap();

    // weighted-gap ratios <= kappa * 1.05 after iteration 2
    for (i, rate) in vc.diag.rates.iter().enumerate() {
        if i >= 1 {
            assert!(
                *rate <= kappa * 1.05,
                "gap ratio {rate} at iteration {} exceeds kappa*1.05 = {}",
                i + 2,
                kappa * 1.05
            );
        }
    }
    assert!(vc.diag.iterations >= 3, "too few iterations to certify contraction");

    // boundary identity and equation residual for every chart xi
    let boundary = vc
        .chart
        .boundary_identity(&|_| inst.problem.clone())
        .unwrap();
    assert!(
        boundary <= 10.0 * vc.tol,
        "boundary identity {boundary} exceeds 10 tol = {}",
        10.0 * vc.tol
    );
    let mut worst = (0.0f64, 0.0f64);
    for col in 0..vc.chart.n_cols() {
        let (sup, allow) = chart_equation_residual(&vc.chart, &inst.problem, col, vc.tol).unwrap();
        assert!(
            sup <= allow,
            "equation residual {sup} exceeds allowance {allow} at column {col}"
        );
        if sup > worst.0 {
            worst = (sup, allow);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "runtime {dt}s exceeds 2min");
    pass(
        6,
        &format!(
            "rate {:.3} <= {:.3}, boundary {:.1e}, residual {:.1e} <= {:.1e} ({dt:.1}s)",
            vc.diag.empirical_rate,
            kappa * 1.05,
            boundary,
            worst.0,
            worst.1
        ),
    );
}

#[test]
fn criterion_07_smoothness_bounds() {
    let inst = vdp_h1();
    let vc = vdp_h1_chart();
    let stencil = vdp_h1_stencil();
    let betas = inst.report.beta.as_ref().unwrap();
    let rep = manifold_xi_derivatives(&vc.chart, &stencil, betas, 0.0, 1e-2).unwrap();

    // beta_1, beta_2 weighted bounds with >= 5% margin
    assert!(
        rep.sup_d1 * 1.05 <= rep.beta1,
        "D1 bound margin < 5%: sup {} vs beta1 {}",
        rep.sup_d1,
        rep.beta1
    );
    assert!(
        rep.sup_d2 * 1.05 <= rep.beta2,
        "D2 bound margin < 5%: sup {} vs beta2 {}",
        rep.sup_d2,
        rep.beta2
    );
    // order-1 Lipschitz ratio (the k = 1 Lipschitz level) over >= 50 pairs
    assert!(rep.pairs >= 50, "only {} xi-pairs sampled", rep.pairs);
    assert!(
        rep.lipschitz_sup * 1.05 <= rep.beta2,
        "Lipschitz ratio {} vs beta2 {}",
        rep.lipschitz_sup,
        rep.beta2
    );
    pass(
        7,
        &format!(
            "D1 {:.3} <= {:.3}, D2 {:.2e} <= {:.3}, Lip {:.2e} over {} pairs",
            rep.sup_d1, rep.beta1, rep.sup_d2, rep.beta2, rep.lipschitz_sup, rep.pairs
        ),
    );
}

#[test]
fn criterion_08_r_smoothness() {
    let t0 = std::time::Instant::now();
    // H2 modified vdP instance: c = 1/40, k = 2
    let spec = VdpSpec {
        b: -0.5,
        c: 1.0 / 40.0,
        eps: 0.05,
        r: 0.001,
        kappa_cutoff: 2.0,
    };
    let probe_problem = spec.problem();
    let mj: Vec<f64> = (1..=3)
        .map(|j| {
            sampled_derivative_bound(
                probe_problem.rhs.as_ref(),
                j,
                2.05 * spec.kappa_cutoff,
                600,
                8000 + j as u64,
            )
        })
        .collect();
    let params = HypothesisParams {
        hypothesis: Hypothesis::H2,
        m: probe_problem.neutral.sup_norm(),
        m0: spec.eps * spec.b.abs(),
        mj,
        k: 2,
        r0: 2.0 * spec.r,
        d: 1.5,
        dim: 2,
    };
    let report = check_hypotheses(&params, XStarPolicy::Auto).unwrap();
    assert!(report.feasible, "H2 vdP instance infeasible: {:?}", report.reasons);
    let delta = report.delta.unwrap();
    let eps = report.eps.as_ref().unwrap().clone();
    let x_star = report.x_star.unwrap();
    let lambda = x_star / delta;

    // 5-point uniform r-grid in (0, delta), grid-aligned
    let rbase = delta / 6.0;
    let h = rbase / 32.0;
    let r_set: Vec<f64> = (1..=5).map(|j| j as f64 * rbase).collect();
    let tol = 1e-12;
    let opts = ChartOptions {
        lambda,
        gamma: 0,
        window: 5.0 / lambda,
        tol,
        h,
        kappa: report.kappa.unwrap(),
        ball: 2.0 * eps[0].max(report.beta.as_ref().unwrap()[0]),
        max_iter: 400,
        force_left_nodes: None,
    };
    let xi_set = vec![vec![0.0, 0.0], vec![0.4, 0.2], vec![-0.5, -0.2]];
    let make = |r: f64| spec.problem_at(r);
    let (family, diags) = solve_manifold_family(&make, &xi_set, &r_set, &opts).unwrap();
    for d in &diags {
        assert!(d.gaps.last().unwrap() <= &tol);
    }

    let probe = r_smoothness_probe(&family, &eps).unwrap();
    assert!(
        probe.sup_d1 <= eps[1],
        "first (t, r)-derivative {} exceeds eps1 {}",
        probe.sup_d1,
        eps[1]
    );
    assert!(
        probe.shifted_identity_rel_err <= 1e-3,
        "shifted-argument identity relative error {} exceeds 1e-3",
        probe.shifted_identity_rel_err
    );

    // single-r chart (own grid sizing) matches the family slice within 10 tol
    let mid = 2usize; // r_set[2]
    let (single, _) = solve_chart(&make(r_set[mid]), &xi_set, &opts).unwrap();
    let mut worst = 0.0f64;
    for xi_idx in 0..xi_set.len() {
        let col = family.col_index(xi_idx, mid);
        for k in 0..=(2 * family.win_nodes) {
            let fi = family.izero - family.win_nodes + k;
            let si = single.izero - single.win_nodes + k;
            for c in 0..2 {
                worst = worst.max(
                    (family.values[col][fi][c] - single.values[xi_idx][si][c]).abs(),
                );
            }
        }
    }
    assert!(
        worst <= 10.0 * tol,
        "family slice vs single-r chart gap {worst} exceeds 10 tol"
    );
    let dt = t0.elapsed().as_secs_f64();
    pass(
        8,
        &format!(
            "dPsi/dr {:.2e} <= eps1 {:.2e}, identity err {:.1e}, F/T gap {:.1e} ({dt:.1}s)",
            probe.sup_dr, eps[1], probe.shifted_identity_rel_err, worst
        ),
    );
}

#[test]
fn criterion_09_exponential_tracking() {
    let t0 = std::time::Instant::now();
    let inst = vdp_h1();
    let tol = 1e-9;
    let lambda = inst.report.lambda_for(inst.problem.r).unwrap();
    let opts = TrackingOptions::from_report(&inst.report, &inst.problem, tol).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut fitted = 0usize;
    for run in 0..10 {
        let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let amp: f64 = rng.gen_range(0.0..0.2);
        let freq: f64 = rng.gen_range(0.0..200.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let phi = HistorySegment::from_fn(0.0, inst.problem.r, 33, |t| {
            vec![
                a[0] + amp * (freq * t + phase).sin(),
                a[1] + amp * (freq * t).cos(),
            ]
        })
        .unwrap();
        let res = track(&phi, &inst.problem, &inst.report, None, &opts).unwrap();
        assert!(
            res.sup_weighted.is_finite(),
            "run {run}: weighted sup not finite"
        );
        // horizon stability: t_f -> 1.5 t_f changes the sup by <= 5%
        let mut opts2 = opts.clone();
        opts2.t_forward = (opts.t_forward * 1.5 / opts.h).ceil() * opts.h;
        let res2 = track(&phi, &inst.problem, &inst.report, None, &opts2).unwrap();
        let denom = res.sup_weighted.max(1e-12);
        let change = (res2.sup_weighted - res.sup_weighted).abs() / denom;
        assert!(
            change <= 0.05,
            "run {run}: horizon extension changed the sup by {change:.3}"
        );
        if let Some(lh) = res.lambda_hat {
            assert!(
                lh >= 0.8 * lambda,
                "run {run}: lambda_hat {lh} below 0.8 lambda = {}",
                0.8 * lambda
            );
            fitted += 1;
        }
    }

    // manifold round-trip: phi sampled from a chart column recovers its xi
    let vc = vdp_h1_chart();
    let stencil = vdp_h1_stencil();
    let col = stencil.col(1, &[0, 0]); // base (0.35, 0.0) center point
    let xi0 = vc.chart.xi_set[col].clone();
    let phi = vc
        .chart
        .history_segment(col, inst.problem.r, 33)
        .unwrap();
    let res = track(&phi, &inst.problem, &inst.report, Some(&vc.chart), &opts).unwrap();
    let xi_err = res
        .xi
        .iter()
        .zip(&xi0)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(
        xi_err <= 10.0 * tol,
        "round-trip xi error {xi_err} exceeds 10 tol = {}",
        10.0 * tol
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 120.0, "runtime {dt}s exceeds 2min");
    pass(
        9,
        &format!(
            "10 runs stable under horizon extension, {fitted} decay fits >= 0.8 lambda, round-trip {xi_err:.1e} ({dt:.1}s)"
        ),
    );
}

#[test]
fn criterion_10_vdp_study() {
    let t0 = std::time::Instant::now();
    let spec = VdpSpec::new(-0.5, 0.1, 0.05, 0.002).unwrap();
    let study = run_study(&spec, &StudyOptions::default()).unwrap();
    assert_eq!(study.status, "ok", "study status: {}", study.status);
    assert_eq!(study.periods.len(), 3, "expected runs at r, r/2, r/4");

    // sup-difference to the limit system shrinks by a factor in [1.5, 3]
    // at each halving
    assert_eq!(study.ratios.len(), 2);
    for (i, ratio) in study.ratios.iter().enumerate() {
        assert!(
            (1.5..=3.0).contains(ratio),
            "halving ratio #{i} = {ratio} outside [1.5, 3]; sup_diffs {:?}",
            study.sup_diffs
        );
    }
    // periodic orbit persists at the smallest r: section return closes
    let smallest = study.periods.last().unwrap();
    assert!(
        smallest.closure <= 1e-3,
        "section closure {} exceeds 1e-3 at r = {}",
        smallest.closure,
        smallest.r
    );
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 180.0, "runtime {dt}s exceeds 3min");
    pass(
        10,
        &format!(
            "ratios {:?}, smallest-r closure {:.1e}, period {:.3} vs limit {:.3} ({dt:.1}s)",
            study
                .ratios
                .iter()
                .map(|r| (r * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            smallest.closure,
            smallest.period,
            study.ode_period
        ),
    );
}
