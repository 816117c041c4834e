//! The neutral van der Pol study: the rescaled slow-fast model with a small
//! neutral delay, its r = 0 slow-fast limit, Poincare-section period and
//! amplitude detection, and the r-halving consistency comparison between the
//! delayed runs and the limit system.

use std::sync::Arc;

use serde::Serialize;

use crate::catalog::VdpField;
use crate::cutoff::{cutoff_modify, sampled_derivative_bound};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::problem::{step_solve, HistorySegment, Mat, NdeProblem, NeutralPart, Rhs, Trajectory};

/// Parameters of the rescaled neutral van der Pol model
///   d/dt [x1 - c x1(t - r)] = x2 - (x1^2/2 + x1^3/3)
///   d/dt x2 = eps (b - x1(t - r))
/// in the regime 0 < r << eps << 1, with cut-off radius kappa covering the
/// working box [-2, 1] x [-1/2, 1/2].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VdpSpec {
    pub b: f64,
    pub c: f64,
    pub eps: f64,
    pub r: f64,
    pub kappa_cutoff: f64,
}

impl VdpSpec {
    pub fn new(b: f64, c: f64, eps: f64, r: f64) -> Result<Self> {
        let spec = VdpSpec {
            b,
            c,
            eps,
            r,
            kappa_cutoff: 2.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c && self.c < 1.0) {
            return Err(Error::OutOfRange(format!("need 0 < c < 1, got {}", self.c)));
        }
        if !(self.r > 0.0 && self.r < self.eps) {
            return Err(Error::OutOfRange(format!(
                "need 0 < r < eps (small-delay regime), got r = {}, eps = {}",
                self.r, self.eps
            )));
        }
        if self.kappa_cutoff <= 0.0 {
            return Err(Error::OutOfRange("cut-off radius must be positive".into()));
        }
        Ok(())
    }

    /// The cut-off-modified problem with neutral atom diag(c, 0) at delay r.
    pub fn problem(&self) -> NdeProblem {
        self.problem_at(self.r)
    }

    pub fn problem_at(&self, r: f64) -> NdeProblem {
        let raw: Arc<dyn Rhs> = Arc::new(VdpField::new(self.b, self.eps));
        let rhs = cutoff_modify(raw, self.kappa_cutoff);
        let a = Mat::from_rows(&[vec![self.c, 0.0], vec![0.0, 0.0]]);
        NdeProblem::new(2, r, NeutralPart::single(a, r), rhs)
    }

    pub fn raw_field(&self) -> Arc<dyn Rhs> {
        Arc::new(VdpField::new(self.b, self.eps))
    }
}

/// Classical 4-stage integration of the r = 0 slow-fast limit
///   (1 - c) x1' = x2 - (x1^2/2 + x1^3/3),  x2' = eps (b - x1).
pub fn run_slow_fast(spec: &VdpSpec, u0: [f64; 2], t_end: f64, h: f64) -> Trajectory {
    let rhs = |u: &[f64; 2]| -> [f64; 2] {
        [
            (u[1] - (u[0] * u[0] / 2.0 + u[0] * u[0] * u[0] / 3.0)) / (1.0 - spec.c),
            spec.eps * (spec.b - u[0]),
        ]
    };
    let steps = (t_end / h).ceil() as usize;
    let grid = UniformGrid::new(0.0, h, steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut u = u0;
    values.push(u.to_vec());
    for _ in 0..steps {
        let k1 = rhs(&u);
        let k2 = rhs(&[u[0] + 0.5 * h * k1[0], u[1] + 0.5 * h * k1[1]]);
        let k3 = rhs(&[u[0] + 0.5 * h * k2[0], u[1] + 0.5 * h * k2[1]]);
        let k4 = rhs(&[u[0] + h * k3[0], u[1] + h * k3[1]]);
        u[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        u[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        values.push(u.to_vec());
    }
    Trajectory {
        grid,
        values,
        dim: 2,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareCrossing {
    pub t: f64,
    pub state: Vec<f64>,
}

/// Upward crossings of component `comp` through `level` after `skip`,
/// refined by a cubic fit through the four nodes bracketing the sign change.
pub fn poincare_crossings(
    traj: &Trajectory,
    comp: usize,
    level: f64,
    skip: f64,
) -> Vec<PoincareCrossing> {
    let g = &traj.grid;
    let mut out = Vec::new();
    for i in 0..g.len - 1 {
        let t = g.node(i);
        if t < skip {
            continue;
        }
        let (a, b) = (traj.values[i][comp] - level, traj.values[i + 1][comp] - level);
        if !(a < 0.0 && b >= 0.0) {
            continue;
        }
        // cubic through nodes i-1..i+2 in the local coordinate s in [0, 1]
        let i0 = i.saturating_sub(1).min(g.len - 4);
        let y: Vec<f64> = (0..4).map(|j| traj.values[i0 + j][comp] - level).collect();
        let s_lo = (i - i0) as f64;
        // refine on [s_lo, s_lo + 1] by bisection of the Lagrange cubic
        let eval = |s: f64| -> f64 {
            let mut v = 0.0;
            for (j, &yj) in y.iter().enumerate() {
                let mut w = 1.0;
                for l in 0..4 {
                    if l != j {
                        w *= (s - l as f64) / (j as f64 - l as f64);
                    }
                }
                v += w * yj;
            }
            v
        };
        let (mut lo, mut hi) = (s_lo, s_lo + 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eval(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let tc = g.node(i0) + s * g.h;
        let state = traj.value_at(tc).unwrap_or_else(|_| traj.values[i].clone());
        out.push(PoincareCrossing { t: tc, state });
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodEstimate {
    pub r: f64,
    pub period: f64,
    pub amplitude: f64,
    /// Max-norm distance between consecutive section returns.
    pub closure: f64,
    pub crossings: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct VdpStudy {
    pub spec: VdpSpec,
    pub ode_period: f64,
    pub ode_amplitude: f64,
    pub periods: Vec<PeriodEstimate>,
    /// Sup-difference over one phase-aligned period between each r-run and
    /// the r = 0 limit, in decreasing r order (r1, r1/2, r1/4).
    pub sup_diffs: Vec<(f64, f64)>,
    /// Consecutive halving ratios sup_diff(r) / sup_diff(r/2).
    pub ratios: Vec<f64>,
    /// Derivative bounds measured on the modified field over the 2 kappa
    /// ball (10% inflated), orders 1..=4.
    pub measured_mj: Vec<f64>,
    pub status: String,
}

fn period_from_crossings(crossings: &[PoincareCrossing]) -> Option<(f64, f64)> {
    if crossings.len() < 3 {
        return None;
    }
    let n = crossings.len();
    let period = crossings[n - 1].t - crossings[n - 2].t;
    let closure = crossings[n - 1]
        .state
        .iter()
        .zip(&crossings[n - 2].state)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Some((period, closure))
}

fn amplitude_over(traj: &Trajectory, comp: usize, t0: f64, t1: f64) -> f64 {
    let g = &traj.grid;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..g.len {
        let t = g.node(i);
        if t < t0 || t > t1 {
            continue;
        }
        lo = lo.min(traj.values[i][comp]);
        hi = hi.max(traj.values[i][comp]);
    }
    hi - lo
}

/// Sup over one period of the max-norm difference between two orbits,
/// phase-aligned at the given section crossing times.
fn aligned_sup_diff(
    a: &Trajectory,
    t_a: f64,
    b: &Trajectory,
    t_b: f64,
    period: f64,
    samples: usize,
) -> Result<f64> {
    let mut sup = 0.0f64;
    for k in 0..=samples {
        let s = period * k as f64 / samples as f64;
        let va = a.value_at(t_a + s)?;
        let vb = b.value_at(t_b + s)?;
        for (x, y) in va.iter().zip(&vb) {
            sup = sup.max((x - y).abs());
        }
    }
    Ok(sup)
}

pub struct StudyOptions {
    pub halvings: usize,
    pub settle_periods: f64,
    pub steps_per_r: usize,
    pub initial: [f64; 2],
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            halvings: 2,
            settle_periods: 2.0,
            steps_per_r: 32,
            initial: [0.5, 0.3],
        }
    }
}

/// The full r-halving study: integrate the limit system and the delayed runs
/// at r, r/2, ..., detect the periodic orbit on the section x1 = b (the
/// nullcline of the slow equation), and measure the sup-difference decay.
pub fn run_study(spec: &VdpSpec, opts: &StudyOptions) -> Result<VdpStudy> {
    spec.validate()?;
    let section = spec.b;

    // settle horizon: a conservative slow-timescale period estimate
    let period_guess = (3.0 - 2.0 * 2f64.ln()) * (1.0 - spec.c) / spec.eps + 10.0;
    let horizon = period_guess * (opts.settle_periods + 2.5);
    let skip = period_guess * opts.settle_periods;

    let h_ode = spec.r / opts.steps_per_r as f64;
    let ode = run_slow_fast(spec, opts.initial, horizon, h_ode);
    let ode_cross = poincare_crossings(&ode, 0, section, skip);
    let (ode_period, _ode_closure) = period_from_crossings(&ode_cross).ok_or_else(|| {
        Error::Internal("no periodic orbit detected in the slow-fast limit".into())
    })?;
    let ode_amp = amplitude_over(
        &ode,
        0,
        ode_cross[ode_cross.len() - 2].t,
        ode_cross[ode_cross.len() - 1].t,
    );

    let mut periods = Vec::new();
    let mut sup_diffs = Vec::new();
    let mut status = String::from("ok");

    let rs: Vec<f64> = (0..=opts.halvings)
        .map(|k| spec.r / 2f64.powi(k as i32))
        .collect();
    let runs: Vec<Result<(f64, Trajectory)>> = rs
        .iter()
        .map(|&r| {
            let problem = spec.problem_at(r);
            let phi = HistorySegment::constant(0.0, r, opts.initial.to_vec());
            let h = r / opts.steps_per_r as f64;
            step_solve(&problem, &phi, horizon, h).map(|t| (r, t))
        })
        .collect();

    for run in runs {
        let (r, traj) = run?;
        let cross = poincare_crossings(&traj, 0, section, skip);
        match period_from_crossings(&cross) {
            Some((period, closure)) => {
                let amp = amplitude_over(
                    &traj,
                    0,
                    cross[cross.len() - 2].t,
                    cross[cross.len() - 1].t,
                );
                periods.push(PeriodEstimate {
                    r,
                    period,
                    amplitude: amp,
                    closure,
                    crossings: cross.len(),
                });
                let t_align = cross[cross.len() - 2].t;
                let t_ode = ode_cross[ode_cross.len() - 2].t;
                let d = aligned_sup_diff(&traj, t_align, &ode, t_ode, ode_period, 2000)?;
                sup_diffs.push((r, d));
            }
            None => {
                status = format!("inconclusive: no periodic orbit detected at r = {r}");
            }
        }
    }

    let ratios: Vec<f64> = sup_diffs
        .windows(2)
        .map(|w| w[0].1 / w[1].1)
        .collect();

    // measured derivative bounds of the modified field on the 2 kappa ball
    let modified = spec.problem().rhs.clone();
    let measured_mj: Vec<f64> = (1..=4)
        .map(|j| sampled_derivative_bound(modified.as_ref(), j, 2.0 * spec.kappa_cutoff, 600, 0xbeef))
        .collect();

    Ok(VdpStudy {
        spec: *spec,
        ode_period,
        ode_amplitude: ode_amp,
        periods,
        sup_diffs,
        ratios,
        measured_mj,
        status,
    })
}
