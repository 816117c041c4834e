#![allow(clippy::needless_range_loop)]

//! Exponential tracking: given a forward solution x(t; 0, phi), find the
//! unique manifold phase xi and the globally defined orbit y that x
//! approaches at rate e^{-lambda t}, via Picard iteration of the two-branch
//! integral operator
//!   t > 0:  Q(y)(t) = L(t) y_t + x(t) - L(t) x_t - int_t^inf (F(y_s) - F(x_s))
//!   t <= 0: Q(y)(t) = x(0) - L(0) x_0 - int_0^inf (F(y_s) - F(x_s))
//!                     + L(t) y_t + int_0^t F(s, y_s) ds.
//! The improper integrals are truncated at t_f with the analytic tail bound
//! M1 |y - x|_{S,1} e^{lambda (r - t_f)} / lambda carried in the error budget.

use serde::Serialize;

use crate::admissibility::AdmissibilityReport;
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::manifold::WeightedChart;
use crate::problem::{step_solve_nonautonomous, HistorySegment, NdeProblem, Trajectory};

#[derive(Clone, Debug, Serialize)]
pub struct TrackingOptions {
    pub t_forward: f64,
    pub t_backward: f64,
    pub h: f64,
    pub tol: f64,
    /// Acceptable truncation tail for the improper integral.
    pub tail_tol: f64,
    pub max_iter: usize,
}

impl TrackingOptions {
    /// Defaults: t_b = 3/lambda, t_f = max(6/lambda, 20 r); the tail bound
    /// decays like e^{-lambda t_f}, which puts it below 1e-3 of the interior
    /// scale for these horizons. It shrinks with |y - x|, so near-manifold
    /// runs see far smaller budgets than the 1e-3 ceiling.
    pub fn from_report(report: &AdmissibilityReport, problem: &NdeProblem, tol: f64) -> Result<Self> {
        let lambda = report
            .lambda_for(problem.r)
            .ok_or_else(|| Error::Internal("report lacks x_star".into()))?;
        let h = problem.default_step();
        let align = |t: f64| (t / h).ceil() * h;
        Ok(TrackingOptions {
            t_forward: align((6.0 / lambda).max(20.0 * problem.r)),
            t_backward: align(3.0 / lambda),
            h,
            tol,
            tail_tol: 1e-3,
            max_iter: 200,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackingResult {
    pub xi: Vec<f64>,
    #[serde(skip)]
    pub y: Trajectory,
    /// Samples of e^{lambda t} |x(t) - y(t)| for t >= 0.
    pub weighted_profile: Vec<(f64, f64)>,
    pub sup_weighted: f64,
    /// Fitted decay rate of |x - y|; None when the difference sits below the
    /// noise floor everywhere.
    pub lambda_hat: Option<f64>,
    pub lambda: f64,
    pub tail_budget: f64,
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub rates: Vec<f64>,
    pub kappa_bound: f64,
    /// Max |y(t) - Psi(t, xi_col)| over the chart overlap, when a chart with
    /// a matching column was supplied.
    pub chart_gap: Option<f64>,
}

struct QOperator<'a> {
    problem: &'a NdeProblem,
    x: &'a Trajectory,
    grid: UniformGrid,
    izero: usize,
    iend_x: usize,
    m_r: usize,
    atom_offs: Vec<usize>,
    lambda: f64,
}

impl<'a> QOperator<'a> {
    fn new(problem: &'a NdeProblem, x: &'a Trajectory, grid: UniformGrid, lambda: f64) -> Result<Self> {
        let h = grid.h;
        let align = |d: f64| -> Result<usize> {
            let f = d / h;
            if (f - f.round()).abs() > 1e-9 {
                return Err(Error::InvalidStep(format!("delay {d} not aligned with h = {h}")));
            }
            Ok(f.round() as usize)
        };
        let izero = grid
            .aligned_index(0.0)
            .ok_or_else(|| Error::InvalidStep("tracking grid must contain t = 0".into()))?;
        let iend_x = grid
            .aligned_index(x.grid.t_end())
            .ok_or_else(|| Error::InvalidStep("x horizon must align with the tracking grid".into()))?;
        Ok(QOperator {
            problem,
            x,
            grid,
            izero,
            iend_x,
            m_r: align(problem.r)?,
            atom_offs: problem
                .neutral
                .atoms
                .iter()
                .map(|a| align(a.delay))
                .collect::<Result<Vec<_>>>()?,
            lambda,
        })
    }

    fn x_at(&self, i: usize) -> &[f64] {
        // x covers [-r, t_f]; readable only at i >= izero - m_r
        &self.x.values[i - (self.izero - self.m_r)]
    }

    fn neutral_acc(&self, values: &[Vec<f64>], i: usize, t: f64, sign: f64, out: &mut [f64]) {
        for (a, &off) in self.problem.neutral.atoms.iter().zip(&self.atom_offs) {
            let scale = a.modulation.as_ref().map_or(1.0, |m| m(t)) * sign;
            a.matrix.matvec_acc(scale, &values[i - off], out);
        }
    }

    /// One application. `prev` spans the tracking grid; valid from
    /// `valid_from`; x must be readable on [0, t_f].
    fn apply(&self, prev: &[Vec<f64>], valid_from: usize) -> (Vec<Vec<f64>>, f64, usize) {
        let n = self.problem.dim;
        let h = self.grid.h;
        let len = self.grid.len;
        let start = valid_from + self.m_r;

        // difference integrand d[i] = F(t, y_t) - F(t, x_t) on [0, t_f]
        let mut d = vec![vec![0.0; n]; len];
        let mut fy = vec![0.0; n];
        let mut fx = vec![0.0; n];
        for i in self.izero..=self.iend_x {
            let t = self.grid.node(i);
            self.problem
                .rhs
                .eval_into(t, &prev[i], &prev[i - self.m_r], &mut fy);
            self.problem
                .rhs
                .eval_into(t, self.x_at(i), self.x_at(i - self.m_r), &mut fx);
            for c in 0..n {
                d[i][c] = fy[c] - fx[c];
            }
        }
        // suffix trapezoid tail[i] = int_{t_i}^{t_f} d
        let mut tail = vec![vec![0.0; n]; len];
        for i in (self.izero..self.iend_x).rev() {
            for c in 0..n {
                tail[i][c] = tail[i + 1][c] + 0.5 * h * (d[i][c] + d[i + 1][c]);
            }
        }
        // g[i] = F(t, y_t) for t <= 0, prefix integral int_0^t
        let mut g = vec![vec![0.0; n]; self.izero + 1];
        for i in start..=self.izero {
            let t = self.grid.node(i);
            self.problem
                .rhs
                .eval_into(t, &prev[i], &prev[i - self.m_r], &mut g[i]);
        }
        let mut neg_int = vec![vec![0.0; n]; self.izero + 1];
        for i in (start..self.izero).rev() {
            for c in 0..n {
                neg_int[i][c] = neg_int[i + 1][c] - 0.5 * h * (g[i][c] + g[i + 1][c]);
            }
        }

        // head constant: x(0) - L(0) x_0 - int_0^{t_f} (F(y) - F(x))
        let mut head = vec![0.0; n];
        head.copy_from_slice(self.x_at(self.izero));
        {
            let t0 = 0.0;
            for (a, &off) in self.problem.neutral.atoms.iter().zip(&self.atom_offs) {
                let scale = a.modulation.as_ref().map_or(1.0, |m| m(t0));
                a.matrix
                    .matvec_acc(-scale, self.x_at(self.izero - off), &mut head);
            }
            for c in 0..n {
                head[c] -= tail[self.izero][c];
            }
        }

        let new_valid = valid_from
            + self
                .atom_offs
                .iter()
                .copied()
                .chain(std::iter::once(self.m_r))
                .max()
                .unwrap();
        let mut out = vec![vec![0.0; n]; len];
        for i in 0..new_valid {
            out[i].copy_from_slice(&prev[i]);
        }
        for i in new_valid..len {
            let t = self.grid.node(i);
            let row = &mut out[i];
            if i > self.izero {
                // L(t) y_t + x(t) - L(t) x_t - tail
                row.iter_mut().for_each(|v| *v = 0.0);
                self.neutral_acc(prev, i, t, 1.0, row);
                for c in 0..n {
                    row[c] += self.x_at(i)[c];
                }
                let mut lx = vec![0.0; n];
                for (a, &off) in self.problem.neutral.atoms.iter().zip(&self.atom_offs) {
                    let scale = a.modulation.as_ref().map_or(1.0, |m| m(t));
                    a.matrix.matvec_acc(scale, self.x_at(i - off), &mut lx);
                }
                for c in 0..n {
                    row[c] -= lx[c] + tail[i][c];
                }
            } else {
                // head + L(t) y_t + int_0^t F(y)
                row.copy_from_slice(&head);
                self.neutral_acc(prev, i, t, 1.0, row);
                for c in 0..n {
                    row[c] += neg_int[i][c];
                }
            }
        }

        // analytic truncation tail: M1 |y - x|_{S,1} e^{lambda (r - t_f)} / lambda
        let m1 = self.problem.rhs.lipschitz();
        let mut s1 = 0.0f64;
        for i in self.izero..=self.iend_x {
            let w = (self.lambda * self.grid.node(i)).exp();
            for c in 0..n {
                s1 = s1.max((prev[i][c] - self.x_at(i)[c]).abs() * w);
            }
        }
        let t_f = self.grid.node(self.iend_x);
        let tail_bound = m1 * s1 * (self.lambda * (self.problem.r - t_f)).exp() / self.lambda;

        (out, tail_bound, new_valid)
    }
}

/// One application of the tracking operator on explicit trajectories (y over
/// the backward-extended grid, x over [-r, t_f]).
pub fn operator_q(
    y: &Trajectory,
    x: &Trajectory,
    problem: &NdeProblem,
    lambda: f64,
    tail_tol: f64,
) -> Result<(Trajectory, f64)> {
    let op = QOperator::new(problem, x, y.grid, lambda)?;
    let (values, tail, _valid) = op.apply(&y.values, 0);
    if tail > tail_tol {
        let required = x.grid.t_end() + (tail / tail_tol).ln() / lambda;
        return Err(Error::HorizonTooShort {
            tail,
            tol: tail_tol,
            required,
        });
    }
    Ok((
        Trajectory {
            grid: y.grid,
            values,
            dim: y.dim,
        },
        tail,
    ))
}

/// Sup of e^{lambda t} |x - y| on [0, t_f] and the least-squares decay rate
/// of log |x - y| over the window where the difference exceeds the noise
/// floor (first r of time excluded: transient corner effects).
pub fn decay_fit(
    x: &Trajectory,
    y: &Trajectory,
    lambda: f64,
    r: f64,
    noise_floor: f64,
) -> (f64, Option<f64>, Vec<(f64, f64)>) {
    let mut sup = 0.0f64;
    let mut profile = Vec::new();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for i in 0..x.grid.len {
        let t = x.grid.node(i);
        if t < 0.0 {
            continue;
        }
        let yv = match y.value_at(t) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let diff = x.values[i]
            .iter()
            .zip(&yv)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let weighted = diff * (lambda * t).exp();
        profile.push((t, weighted));
        sup = sup.max(weighted);
        if t >= r && diff > noise_floor {
            pts.push((t, diff.ln()));
        }
    }
    let lambda_hat = if pts.len() >= 8 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() > 1e-300 {
            Some(-(n * sxy - sx * sy) / denom)
        } else {
            None
        }
    } else {
        None
    };
    (sup, lambda_hat, profile)
}

/// Full tracking run: integrate x forward from phi, Picard-iterate the
/// two-branch operator from y0 = (x on t >= 0, constant x(0) backward),
/// extract the phase xi, fit the decay rate, and optionally cross-check
/// against a manifold chart column.
pub fn track(
    phi: &HistorySegment,
    problem: &NdeProblem,
    report: &AdmissibilityReport,
    chart: Option<&WeightedChart>,
    opts: &TrackingOptions,
) -> Result<TrackingResult> {
    let lambda = report
        .lambda_for(problem.r)
        .ok_or_else(|| Error::Internal("report lacks x_star".into()))?;
    let kappa = report
        .kappa
        .ok_or_else(|| Error::Internal("report lacks kappa".into()))?;
    let n = problem.dim;
    let h = opts.h;

    let x = step_solve_nonautonomous(problem, phi, opts.t_forward, h)?;
    let t_f = x.grid.t_end();

    // iteration budget from the contraction rate and the initial gap scale
    let ball = 2.0 * phi.sup_norm().max(1.0) * 4.0;
    let n_est = ((opts.tol / ball).ln() / kappa.ln()).ceil().max(1.0) as usize;
    let budget = (n_est + 2).min(opts.max_iter);

    let m_r = (problem.r / h).round() as usize;
    let n_back = (opts.t_backward / h).ceil() as usize;
    let left = n_back + (budget + 2) * m_r;
    let len = left + (t_f / h).round() as usize + 1;
    let grid = UniformGrid::new(-(left as f64) * h, h, len);
    let izero = left;

    // y0: x forward, constant x(0) backward
    let mut y = vec![vec![0.0; n]; len];
    let x0 = x.value_at(0.0)?;
    for (i, row) in y.iter_mut().enumerate() {
        let t = grid.node(i);
        if t <= 0.0 {
            row.copy_from_slice(&x0);
        } else {
            row.copy_from_slice(&x.values[i - (izero - m_r)]);
        }
    }
    let op = QOperator::new(problem, &x, grid, lambda)?;
    let mut valid_from = 0usize;
    let mut gaps = Vec::new();
    let mut rates = Vec::new();
    let mut tail_budget;
    let mut iterations = 0usize;
    let mut bad_streak = 0usize;
    loop {
        if iterations >= budget {
            return Err(Error::IterationBudget(
                iterations,
                gaps.last().copied().unwrap_or(f64::INFINITY),
                opts.tol,
            ));
        }
        let (next, tail, new_valid) = op.apply(&y, valid_from);
        if tail > opts.tail_tol {
            let required =
                problem.r + ((tail / opts.tail_tol).ln() / lambda).max(0.0) + t_f;
            return Err(Error::HorizonTooShort {
                tail,
                tol: opts.tail_tol,
                required,
            });
        }
        tail_budget = tail;
        // gap on the window [-t_b, t_f]
        let lo = izero - n_back;
        let gap = {
            let mut sup = 0.0f64;
            for i in lo..len {
                let w = (lambda * grid.node(i)).exp();
                for c in 0..n {
                    sup = sup.max((next[i][c] - y[i][c]).abs() * w);
                }
            }
            sup
        };
        y = next;
        valid_from = new_valid;
        iterations += 1;
        if let Some(&prev) = gaps.last() {
            let rate = gap / prev;
            if rate >= 1.0 && gap > opts.tol {
                bad_streak += 1;
                if bad_streak >= 5 {
                    return Err(Error::NonContraction {
                        rate,
                        window: bad_streak,
                    });
                }
            } else {
                bad_streak = 0;
            }
            rates.push(rate);
        }
        gaps.push(gap);
        if gap <= opts.tol {
            break;
        }
        if valid_from + m_r + m_r > izero - n_back {
            return Err(Error::IterationBudget(iterations, gap, opts.tol));
        }
    }

    // xi = x(0) - L(0) x_0 - int_0^inf (F(y) - F(x)) from the converged y
    let xi = {
        let mut d_int = vec![0.0; n];
        let mut fy = vec![0.0; n];
        let mut fx = vec![0.0; n];
        let mut prev_d = vec![0.0; n];
        for i in izero..=op.iend_x {
            let t = grid.node(i);
            problem.rhs.eval_into(t, &y[i], &y[i - m_r], &mut fy);
            problem
                .rhs
                .eval_into(t, op.x_at(i), op.x_at(i - m_r), &mut fx);
            if i > izero {
                for c in 0..n {
                    d_int[c] += 0.5 * h * (prev_d[c] + (fy[c] - fx[c]));
                }
            }
            for c in 0..n {
                prev_d[c] = fy[c] - fx[c];
            }
        }
        let mut v = x0.clone();
        for (a, &off) in problem.neutral.atoms.iter().zip(&op.atom_offs) {
            let scale = a.modulation.as_ref().map_or(1.0, |m| m(0.0));
            a.matrix.matvec_acc(-scale, op.x_at(izero - off), &mut v);
        }
        for c in 0..n {
            v[c] -= d_int[c];
        }
        v
    };

    let y_traj = Trajectory {
        grid: UniformGrid::new(grid.node(valid_from), h, len - valid_from),
        values: y[valid_from..].to_vec(),
        dim: n,
    };
    let (sup_weighted, lambda_hat, profile) =
        decay_fit(&x, &y_traj, lambda, problem.r, 100.0 * opts.tol);

    // cross-check against the nearest chart column when one matches
    let chart_gap = match chart {
        Some(ch) => {
            let mut best: Option<(usize, f64)> = None;
            for (idx, cxi) in ch.xi_set.iter().enumerate() {
                let d = cxi
                    .iter()
                    .zip(&xi)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((idx, d));
                }
            }
            match best {
                Some((idx, dist)) => {
                    let betas = ch_beta1(report);
                    let allow = 10.0 * opts.tol + betas * dist * (ch.lambda * ch.win_nodes as f64 * ch.grid.h).exp();
                    let mut gap = 0.0f64;
                    let lo_t = ch.grid.node(ch.izero - ch.win_nodes).max(y_traj.grid.t0);
                    let hi_t = ch.grid.node(ch.izero + ch.win_nodes).min(y_traj.grid.t_end());
                    let steps = 64;
                    for k in 0..=steps {
                        let t = lo_t + (hi_t - lo_t) * k as f64 / steps as f64;
                        let a = ch.eval_col(idx, t)?;
                        let b = y_traj.value_at(t)?;
                        for c in 0..n {
                            gap = gap.max((a[c] - b[c]).abs());
                        }
                    }
                    if gap > allow {
                        return Err(Error::ChartMismatch(format!(
                            "tracked orbit deviates from the chart column by {gap} (allowed {allow})"
                        )));
                    }
                    Some(gap)
                }
                None => None,
            }
        }
        None => None,
    };

    Ok(TrackingResult {
        xi,
        y: y_traj,
        weighted_profile: profile,
        sup_weighted,
        lambda_hat,
        lambda,
        tail_budget,
        iterations,
        gaps,
        rates,
        kappa_bound: kappa,
        chart_gap,
    })
}

fn ch_beta1(report: &AdmissibilityReport) -> f64 {
    report.beta.as_ref().map(|b| b[1]).unwrap_or(1.0)
}
