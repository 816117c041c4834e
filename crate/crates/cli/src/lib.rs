//! Command-line front door: config ingestion, orchestration of the
//! admissibility / solver / manifold / tracking machinery, and deterministic
//! artifact emission.
//!
//! Exit codes: 0 success, 2 infeasible hypotheses, 3 non-contraction
//! diagnostic, 64 config error, 1 any other failure.

pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nde_core::admissibility::{check_hypotheses, check_hypotheses_with, AdmissibilityReport};
use nde_core::derivcheck::run_fdb_check;
use nde_core::error::Error as CoreError;
use nde_core::manifold::{
    chart_equation_residual, manifold_xi_derivatives, solve_manifold, XiStencil,
};
use nde_core::problem::{residual, step_solve_nonautonomous};
use nde_core::tracking::{track, TrackingOptions};
use nde_core::vdp::{run_study, StudyOptions, VdpSpec};

use config::{load_config, ConfigError, RunConfig};
use manifest::OutputSink;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NON_CONTRACTION: i32 = 3;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Parser)]
#[command(name = "nde", about = "Inertial manifolds for neutral equations with small delays", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Check the smallness hypotheses and emit the admissibility report.
    Admissible(CommonArgs),
    /// Integrate the problem forward and emit the trajectory + residual.
    Simulate(CommonArgs),
    /// Construct the inertial manifold chart with certificates.
    Manifold(CommonArgs),
    /// Track a forward solution to its asymptotic manifold phase.
    Track(CommonArgs),
    /// Run the neutral van der Pol study (r-halving consistency + periods).
    Vdp(CommonArgs),
    /// Compare the chain-rule engine against finite differences.
    FdbCheck(CommonArgs),
}

#[derive(clap::Args)]
pub struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for artifacts (created if absent).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> i32 {
    let (args, name, f): (&CommonArgs, &str, CommandFn) = match &cli.command {
        Command::Admissible(a) => (a, "admissible", cmd_admissible),
        Command::Simulate(a) => (a, "simulate", cmd_simulate),
        Command::Manifold(a) => (a, "manifold", cmd_manifold),
        Command::Track(a) => (a, "track", cmd_track),
        Command::Vdp(a) => (a, "vdp", cmd_vdp),
        Command::FdbCheck(a) => (a, "fdb-check", cmd_fdb_check),
    };
    let cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let sink = match OutputSink::new(&args.out) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot prepare output directory: {e}");
            return EXIT_FAILURE;
        }
    };
    match f(&cfg, sink, name) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{name}: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                return EXIT_CONFIG;
            }
            if let Some(core) = e.downcast_ref::<CoreError>() {
                if matches!(core, CoreError::NonContraction { .. }) {
                    return EXIT_NON_CONTRACTION;
                }
            }
            EXIT_FAILURE
        }
    }
}

type CommandFn = fn(&RunConfig, OutputSink, &str) -> anyhow::Result<i32>;

fn feasibility_table(report: &AdmissibilityReport) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6e}"),
        None => "-".to_string(),
    };
    let mut s = String::new();
    s.push_str(&format!("hypothesis      {:?}\n", report.hypothesis));
    s.push_str(&format!("feasible        {}\n", report.feasible));
    s.push_str(&format!("x0              {}\n", fmt(report.x0)));
    s.push_str(&format!("H(x0)           {}\n", fmt(report.h_max)));
    s.push_str(&format!("x1(r0)          {}\n", fmt(report.x1)));
    s.push_str(&format!("x2(r0)          {}\n", fmt(report.x2)));
    s.push_str(&format!("ceiling         {}\n", fmt(report.ceiling)));
    s.push_str(&format!("x*              {}\n", fmt(report.x_star)));
    s.push_str(&format!("kappa           {}\n", fmt(report.kappa)));
    s.push_str(&format!("delta           {}\n", fmt(report.delta)));
    s.push_str(&format!("lambda(delta)   {}\n", fmt(report.lambda)));
    if !report.reasons.is_empty() {
        s.push_str(&format!("reasons         {:?}\n", report.reasons));
    }
    s
}

fn cmd_admissible(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let params = cfg.hypothesis_params()?;
    let policy = cfg.x_star_policy()?;
    let report = check_hypotheses_with(&params, policy, &cfg.beta_policy())?;
    sink.write_json("admissibility.json", &report)?;
    sink.finish(name)?;
    print!("{}", feasibility_table(&report));
    Ok(if report.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_simulate(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let problem = cfg.build_problem()?;
    let phi = cfg.build_phi(problem.r, problem.dim)?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| ConfigError("missing section: grid".into()))?;
    let t_end = grid
        .t_end
        .ok_or_else(|| ConfigError("grid.t_end required for simulate".into()))?;
    let h = grid.h.unwrap_or_else(|| problem.default_step());
    let traj = step_solve_nonautonomous(&problem, &phi, t_end, h)?;
    let res = residual(&problem, &traj)?;
    sink.write("trajectory.csv", &traj.to_csv())?;
    sink.write_json("residual.json", &res)?;
    sink.finish(name)?;
    println!("simulate: {} nodes, residual sup {:.3e} at t = {:.6}", traj.grid.len, res.sup, res.at);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ManifoldBundle {
    report: AdmissibilityReport,
    diagnostics: nde_core::manifold::PicardDiagnostics,
    certificates: Vec<CertLine>,
    xi_derivatives: Option<nde_core::manifold::XiDerivReport>,
}

#[derive(Serialize, Clone)]
struct CertLine {
    name: String,
    value: f64,
    bound: f64,
    tolerance: String,
    holds: bool,
}

fn cmd_manifold(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let params = cfg.hypothesis_params()?;
    let policy = cfg.x_star_policy()?;
    let report = check_hypotheses_with(&params, policy, &cfg.beta_policy())?;
    if !report.feasible {
        sink.write_json("admissibility.json", &report)?;
        sink.finish(name)?;
        print!("{}", feasibility_table(&report));
        return Ok(EXIT_INFEASIBLE);
    }
    let problem = cfg.build_problem()?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| ConfigError("missing section: grid".into()))?;
    let xi = cfg
        .xi
        .as_ref()
        .ok_or_else(|| ConfigError("missing section: xi".into()))?;
    let lambda = report.x_star.unwrap() / problem.r;
    let window = grid.window.unwrap_or(5.0 / lambda);
    let tol = grid.tol;

    let (xi_set, stencil) = if xi.stencil {
        let stencil = XiStencil {
            dim: problem.dim,
            bases: xi.bases.clone(),
            step: xi.step.unwrap_or(0.05),
        };
        (stencil.points(), Some(stencil))
    } else {
        (xi.bases.clone(), None)
    };

    let (chart, diagnostics) = solve_manifold(&problem, &report, &xi_set, window, tol)?;

    let mut certificates = Vec::new();
    let kappa = report.kappa.unwrap();
    certificates.push(CertLine {
        name: "picard gap ratio <= kappa * 1.05 after iteration 2".into(),
        value: diagnostics.empirical_rate,
        bound: kappa * 1.05,
        tolerance: "factor 1.05 on kappa".into(),
        holds: diagnostics.empirical_rate <= kappa * 1.05,
    });
    let beta0 = report.beta.as_ref().unwrap()[0];
    certificates.push(CertLine {
        name: "weighted sup norm <= beta0".into(),
        value: diagnostics.sup_norm,
        bound: beta0,
        tolerance: "exact".into(),
        holds: diagnostics.sup_norm <= beta0 * (1.0 + 1e-9),
    });
    let boundary = chart.boundary_identity(&|_| problem.clone())?;
    certificates.push(CertLine {
        name: "boundary identity |Psi(0,xi) - L(0)Psi_0 - xi| <= 10 tol".into(),
        value: boundary,
        bound: 10.0 * tol,
        tolerance: "10 tol".into(),
        holds: boundary <= 10.0 * tol,
    });
    let mut worst_res = (0.0f64, 0.0f64);
    for col in 0..chart.n_cols() {
        let (sup, allow) = chart_equation_residual(&chart, &problem, col, tol)?;
        if sup > worst_res.0 {
            worst_res = (sup, allow);
        }
    }
    certificates.push(CertLine {
        name: "weighted equation residual <= 10 tol + O(h^2)".into(),
        value: worst_res.0,
        bound: worst_res.1,
        tolerance: "10 tol + tol 2/h + 1.5 h^2 |g''|/4".into(),
        holds: worst_res.0 <= worst_res.1,
    });

    let xi_derivatives = match &stencil {
        Some(st) => {
            let betas = report.beta.as_ref().unwrap();
            Some(manifold_xi_derivatives(&chart, st, betas, 0.0, 1e-2)?)
        }
        None => None,
    };

    sink.write("chart.csv", &chart.to_csv(problem.r))?;
    sink.write_json(
        "manifold.json",
        &ManifoldBundle {
            report,
            diagnostics,
            certificates: certificates.clone(),
            xi_derivatives,
        },
    )?;
    sink.finish(name)?;
    for c in &certificates {
        println!(
            "[{}] {} : {:.3e} <= {:.3e} ({})",
            if c.holds { "pass" } else { "fail" },
            c.name,
            c.value,
            c.bound,
            c.tolerance
        );
    }
    Ok(EXIT_OK)
}

fn cmd_track(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let params = cfg.hypothesis_params()?;
    let policy = cfg.x_star_policy()?;
    let report = check_hypotheses_with(&params, policy, &cfg.beta_policy())?;
    if !report.feasible {
        sink.write_json("admissibility.json", &report)?;
        sink.finish(name)?;
        return Ok(EXIT_INFEASIBLE);
    }
    let problem = cfg.build_problem()?;
    let phi = cfg.build_phi(problem.r, problem.dim)?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| ConfigError("missing section: grid".into()))?;
    let mut opts = TrackingOptions::from_report(&report, &problem, grid.tol)?;
    if let Some(t) = cfg.track.as_ref().and_then(|t| t.t_forward) {
        opts.t_forward = (t / opts.h).ceil() * opts.h;
    }
    if let Some(t) = cfg.track.as_ref().and_then(|t| t.t_backward) {
        opts.t_backward = (t / opts.h).ceil() * opts.h;
    }

    let chart = if cfg.track.as_ref().is_some_and(|t| t.with_chart) {
        let xi = cfg
            .xi
            .as_ref()
            .ok_or_else(|| ConfigError("track.with_chart needs the xi section".into()))?;
        let lambda = report.x_star.unwrap() / problem.r;
        let window = grid.window.unwrap_or(5.0 / lambda);
        let (chart, _) = solve_manifold(&problem, &report, &xi.bases, window, grid.tol)?;
        Some(chart)
    } else {
        None
    };

    let result = track(&phi, &problem, &report, chart.as_ref(), &opts)?;
    let mut profile = String::from("t,weighted_diff\n");
    for (t, v) in &result.weighted_profile {
        profile.push_str(&format!("{t:.16e},{v:.16e}\n"));
    }
    sink.write("profile.csv", &profile)?;
    sink.write("orbit.csv", &result.y.to_csv())?;
    sink.write_json("tracking.json", &result)?;
    sink.finish(name)?;
    println!(
        "track: xi = {:?}, sup_weighted = {:.6e}, lambda_hat = {:?}, tail budget = {:.3e}",
        result.xi, result.sup_weighted, result.lambda_hat, result.tail_budget
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct AttainableK {
    k: usize,
    variant: String,
    feasible: bool,
    delta: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Serialize)]
struct VdpBundle {
    study: nde_core::vdp::VdpStudy,
    attainable: Vec<AttainableK>,
    /// r -> 0 consistency: every halving ratio of the sup-difference to the
    /// limit system lies in [1.5, 3].
    consistency_ratios_in_band: bool,
    manifold_certificates: Option<Vec<CertLine>>,
}

fn cmd_vdp(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let v = cfg
        .vdp
        .as_ref()
        .ok_or_else(|| ConfigError("missing section: vdp".into()))?;
    let spec = VdpSpec {
        b: v.b,
        c: v.c,
        eps: v.eps,
        r: v.r,
        kappa_cutoff: v.kappa_cutoff,
    };
    spec.validate()?;
    let mut opts = StudyOptions {
        halvings: v.halvings,
        ..StudyOptions::default()
    };
    if let Some(u0) = v.initial {
        opts.initial = u0;
    }
    let study = run_study(&spec, &opts)?;

    // which smoothness order the measured bounds support at r0 = 2 r
    let mut attainable = Vec::new();
    for k in 1..=3usize {
        let mj = study.measured_mj[..=k].to_vec();
        for (variant, hyp) in [
            ("h1", nde_core::admissibility::Hypothesis::H1),
            ("h2", nde_core::admissibility::Hypothesis::H2),
        ] {
            let params = nde_core::admissibility::HypothesisParams {
                hypothesis: hyp,
                m: spec.c,
                m0: spec.eps * spec.b.abs(),
                mj: mj.clone(),
                k,
                r0: 2.0 * spec.r,
                d: 1.5,
                dim: 2,
            };
            let rep = check_hypotheses(&params, nde_core::admissibility::XStarPolicy::Auto)?;
            attainable.push(AttainableK {
                k,
                variant: variant.into(),
                feasible: rep.feasible,
                delta: rep.delta,
                kappa: rep.kappa,
            });
        }
    }

    let consistency_ratios_in_band = !study.ratios.is_empty()
        && study.ratios.iter().all(|r| (1.5..=3.0).contains(r));

    // optional manifold + tracking bundle on the modified system
    let manifold_certificates = if v.with_manifold {
        let problem = spec.problem();
        let params = nde_core::admissibility::HypothesisParams {
            hypothesis: nde_core::admissibility::Hypothesis::H1,
            m: problem.neutral.sup_norm(),
            m0: spec.eps * spec.b.abs(),
            mj: study.measured_mj[..2].to_vec(),
            k: 1,
            r0: 2.0 * spec.r,
            d: 1.5,
            dim: 2,
        };
        let report = check_hypotheses(&params, nde_core::admissibility::XStarPolicy::Auto)?;
        if !report.feasible {
            sink.write_json("admissibility.json", &report)?;
            sink.finish(name)?;
            return Ok(EXIT_INFEASIBLE);
        }
        let tol = 1e-9;
        let lambda = report.x_star.unwrap() / problem.r;
        let xi_set = vec![vec![0.0, 0.0], vec![0.4, 0.2], vec![-0.4, -0.2]];
        let (chart, diag) = solve_manifold(&problem, &report, &xi_set, 5.0 / lambda, tol)?;
        let kappa = report.kappa.unwrap();
        let mut certs = vec![CertLine {
            name: "picard gap ratio <= kappa * 1.05 after iteration 2".into(),
            value: diag.empirical_rate,
            bound: kappa * 1.05,
            tolerance: "factor 1.05 on kappa".into(),
            holds: diag.empirical_rate <= kappa * 1.05,
        }];
        let boundary = chart.boundary_identity(&|_| problem.clone())?;
        certs.push(CertLine {
            name: "boundary identity |Psi(0,xi) - L(0)Psi_0 - xi| <= 10 tol".into(),
            value: boundary,
            bound: 10.0 * tol,
            tolerance: "10 tol".into(),
            holds: boundary <= 10.0 * tol,
        });
        // tracking round trip from the first chart column
        let phi = chart.history_segment(0, problem.r, 33)?;
        let topts = TrackingOptions::from_report(&report, &problem, tol)?;
        let tres = track(&phi, &problem, &report, Some(&chart), &topts)?;
        let xi_err = tres
            .xi
            .iter()
            .zip(&xi_set[0])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        certs.push(CertLine {
            name: "tracking round trip recovers the chart phase".into(),
            value: xi_err,
            bound: 10.0 * tol,
            tolerance: "10 tol".into(),
            holds: xi_err <= 10.0 * tol,
        });
        sink.write_json("vdp_manifold.json", &report)?;
        Some(certs)
    } else {
        None
    };

    let mut period_csv = String::from("r,period,amplitude,closure,crossings\n");
    for p in &study.periods {
        period_csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            p.r, p.period, p.amplitude, p.closure, p.crossings
        ));
    }
    let mut diff_csv = String::from("r,sup_diff\n");
    for (r, d) in &study.sup_diffs {
        diff_csv.push_str(&format!("{r:.16e},{d:.16e}\n"));
    }
    sink.write("periods.csv", &period_csv)?;
    sink.write("sup_diffs.csv", &diff_csv)?;
    let inconclusive = study.status != "ok";
    sink.write_json(
        "vdp_study.json",
        &VdpBundle {
            study: study.clone(),
            attainable,
            consistency_ratios_in_band,
            manifold_certificates,
        },
    )?;
    sink.finish(name)?;
    println!(
        "vdp: status = {}, limit period = {:.4}, ratios = {:?}, ratios in [1.5, 3] = {}",
        study.status, study.ode_period, study.ratios, consistency_ratios_in_band
    );
    if inconclusive {
        // no periodic orbit within the horizon: inconclusive, not a failure
        return Ok(EXIT_OK);
    }
    Ok(EXIT_OK)
}

fn cmd_fdb_check(cfg: &RunConfig, mut sink: OutputSink, name: &str) -> anyhow::Result<i32> {
    let report = run_fdb_check(cfg.seed, 4, 10)?;
    sink.write_json("fdb_check.json", &report)?;
    sink.finish(name)?;
    println!(
        "fdb-check: max relative error {:.3e} over {} cases (threshold 1e-5)",
        report.max_rel_err,
        report.cases.len()
    );
    Ok(if report.max_rel_err <= 1e-5 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}
