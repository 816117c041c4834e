#![allow(clippy::needless_range_loop)]

//! Construction of the inertial manifold as the fixed point of the integral
//! operator T(x)(t, xi) = xi + L(t) x_t + int_0^t F(s, x_s) ds on a weighted
//! trajectory grid, the delay-parameterized sibling operator applied
//! slice-wise in r, and finite-difference probes for the smoothness bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::admissibility::AdmissibilityReport;
use crate::error::{Error, Result};
use crate::grid::{interp4_into, UniformGrid};
use crate::multiindex::{dk_multilinear, DerivativeTable, MultiIndex};
use crate::problem::{HistorySegment, NdeProblem, Trajectory};

/// Manifold samples on a uniform t-grid: one column per (xi, r) pair.
/// Columns are valid from `valid_from` onward; each operator application
/// consumes one delay of left history.
#[derive(Clone, Debug)]
pub struct WeightedChart {
    pub grid: UniformGrid,
    /// Index of t = 0.
    pub izero: usize,
    /// Nodes on each side of 0 forming the norm window [-T, T].
    pub win_nodes: usize,
    pub lambda: f64,
    pub gamma: u8,
    pub dim: usize,
    pub xi_set: Vec<Vec<f64>>,
    pub r_set: Option<Vec<f64>>,
    /// values[col][node][component], col = r_idx * xi_set.len() + xi_idx.
    pub values: Vec<Vec<Vec<f64>>>,
    pub valid_from: usize,
}

impl WeightedChart {
    pub fn n_cols(&self) -> usize {
        self.values.len()
    }

    pub fn col_index(&self, xi_idx: usize, r_idx: usize) -> usize {
        r_idx * self.xi_set.len() + xi_idx
    }

    pub fn xi_of_col(&self, col: usize) -> &[f64] {
        &self.xi_set[col % self.xi_set.len()]
    }

    pub fn r_of_col(&self, col: usize) -> Option<f64> {
        self.r_set.as_ref().map(|rs| rs[col / self.xi_set.len()])
    }

    /// e^{-lambda |t|} |xi|^{-gamma}.
    pub fn weight(&self, t: f64, xi: &[f64]) -> f64 {
        let w = (-self.lambda * t.abs()).exp();
        if self.gamma == 0 {
            w
        } else {
            let nx = xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            w / nx
        }
    }

    fn window_range(&self) -> std::ops::RangeInclusive<usize> {
        (self.izero - self.win_nodes)..=(self.izero + self.win_nodes)
    }

    /// Weighted sup norm over the window.
    pub fn weighted_norm(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for col in 0..self.n_cols() {
            let xi = self.xi_of_col(col);
            for i in self.window_range() {
                let w = self.weight(self.grid.node(i), xi);
                for c in 0..self.dim {
                    sup = sup.max(self.values[col][i][c].abs() * w);
                }
            }
        }
        sup
    }

    /// Weighted sup of the columnwise difference over the window.
    pub fn weighted_gap(&self, other: &WeightedChart) -> f64 {
        let mut sup: f64 = 0.0;
        for col in 0..self.n_cols() {
            let xi = self.xi_of_col(col);
            for i in self.window_range() {
                let w = self.weight(self.grid.node(i), xi);
                for c in 0..self.dim {
                    sup = sup.max((self.values[col][i][c] - other.values[col][i][c]).abs() * w);
                }
            }
        }
        sup
    }

    /// Cubic interpolation of one column at time t (inside the valid range).
    pub fn eval_col_into(&self, col: usize, t: f64, out: &mut [f64]) -> Result<()> {
        let lo = self.grid.node(self.valid_from);
        if t < lo - 1e-9 * self.grid.h || t > self.grid.t_end() + 1e-9 * self.grid.h {
            return Err(Error::HistoryOutOfRange {
                t,
                lo,
                hi: self.grid.t_end(),
            });
        }
        let vals = &self.values[col];
        let base = self.valid_from;
        interp4_into(
            self.grid.len - base,
            self.grid.frac_index(t) - base as f64,
            self.dim,
            |i, o| o.copy_from_slice(&vals[base + i]),
            out,
        );
        Ok(())
    }

    pub fn eval_col(&self, col: usize, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_col_into(col, t, &mut out)?;
        Ok(out)
    }

    /// max over columns of |Psi(0, xi) - L(0) Psi_0 - xi|.
    pub fn boundary_identity(&self, problem_for_col: &dyn Fn(usize) -> NdeProblem) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for col in 0..self.n_cols() {
            let problem = problem_for_col(col);
            let xi = self.xi_of_col(col);
            let mut lhs = self.values[col][self.izero].clone();
            let mut del = vec![0.0; self.dim];
            for a in &problem.neutral.atoms {
                let idx = self
                    .grid
                    .aligned_index(-a.delay)
                    .ok_or_else(|| Error::ChartMismatch("atom delay off-grid".into()))?;
                del.copy_from_slice(&self.values[col][idx]);
                let scale = a.modulation.as_ref().map_or(1.0, |m| m(0.0));
                a.matrix.matvec_acc(-scale, &del, &mut lhs);
            }
            for c in 0..self.dim {
                worst = worst.max((lhs[c] - xi[c]).abs());
            }
        }
        Ok(worst)
    }

    /// CSV with header `t,r,xi_1..xi_n,psi_1..psi_n`, window rows only.
    pub fn to_csv(&self, default_r: f64) -> String {
        let mut s = String::from("t,r");
        for i in 1..=self.dim {
            s.push_str(&format!(",xi_{i}"));
        }
        for i in 1..=self.dim {
            s.push_str(&format!(",psi_{i}"));
        }
        s.push('\n');
        for col in 0..self.n_cols() {
            let xi = self.xi_of_col(col);
            let r = self.r_of_col(col).unwrap_or(default_r);
            for i in self.window_range() {
                s.push_str(&format!("{:.16e},{:.16e}", self.grid.node(i), r));
                for v in xi {
                    s.push_str(&format!(",{v:.16e}"));
                }
                for c in 0..self.dim {
                    s.push_str(&format!(",{:.16e}", self.values[col][i][c]));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Initial-history segment sampled from one column (for tracking
    /// round-trips): phi(theta) = Psi(theta, xi) on [-r, 0].
    pub fn history_segment(&self, col: usize, r: f64, nodes: usize) -> Result<HistorySegment> {
        let h = r / (nodes - 1) as f64;
        let mut values = Vec::with_capacity(nodes);
        for i in 0..nodes {
            values.push(self.eval_col(col, -r + h * i as f64)?);
        }
        HistorySegment::from_samples(0.0, r, values)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardDiagnostics {
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub rates: Vec<f64>,
    /// Largest per-iteration gap ratio after the second iteration.
    pub empirical_rate: f64,
    pub kappa_bound: f64,
    /// Final weighted sup norm (self-mapping certificate against beta_0/eps_0).
    pub sup_norm: f64,
}

#[derive(Clone, Debug)]
pub struct ChartOptions {
    pub lambda: f64,
    pub gamma: u8,
    /// Half-width T of the norm window [-T, T].
    pub window: f64,
    pub tol: f64,
    pub h: f64,
    /// A-priori contraction bound, used for the iteration budget estimate.
    pub kappa: f64,
    /// Weighted-norm ball radius (2 beta_0 resp. 2 eps_0) for the budget.
    pub ball: f64,
    pub max_iter: usize,
    /// Share grid extents across family slices.
    pub force_left_nodes: Option<usize>,
}

impl ChartOptions {
    pub fn from_report(report: &AdmissibilityReport, r: f64, window: f64, tol: f64, h: f64) -> Result<Self> {
        let x_star = report
            .x_star
            .ok_or_else(|| Error::Internal("report lacks x_star".into()))?;
        let kappa = report
            .kappa
            .ok_or_else(|| Error::Internal("report lacks kappa".into()))?;
        let beta0 = report
            .beta
            .as_ref()
            .map(|b| b[0])
            .ok_or_else(|| Error::Internal("report lacks beta schedule".into()))?;
        Ok(ChartOptions {
            lambda: x_star / r,
            gamma: 0,
            window,
            tol,
            h,
            kappa,
            ball: 2.0 * beta0,
            max_iter: 400,
            force_left_nodes: None,
        })
    }
}

struct ColumnOp<'a> {
    problem: &'a NdeProblem,
    grid: UniformGrid,
    izero: usize,
    m_r: usize,
    atom_offs: Vec<usize>,
}

impl<'a> ColumnOp<'a> {
    fn new(problem: &'a NdeProblem, grid: UniformGrid, izero: usize) -> Result<Self> {
        let h = grid.h;
        let align = |d: f64| -> Result<usize> {
            let f = d / h;
            if (f - f.round()).abs() > 1e-9 {
                return Err(Error::InvalidStep(format!(
                    "delay {d} is not aligned with the chart step {h}"
                )));
            }
            Ok(f.round() as usize)
        };
        let m_r = align(problem.r)?;
        if m_r == 0 {
            return Err(Error::InvalidStep("chart step exceeds the delay".into()));
        }
        let atom_offs = problem
            .neutral
            .atoms
            .iter()
            .map(|a| align(a.delay))
            .collect::<Result<Vec<_>>>()?;
        Ok(ColumnOp {
            problem,
            grid,
            izero,
            m_r,
            atom_offs,
        })
    }

    fn max_off(&self) -> usize {
        self.atom_offs
            .iter()
            .copied()
            .chain(std::iter::once(self.m_r))
            .max()
            .unwrap()
    }

    /// One application of the integral operator to a single column.
    fn apply(&self, xi: &[f64], prev: &[Vec<f64>], valid_from: usize) -> (Vec<Vec<f64>>, usize) {
        let n = self.problem.dim;
        let len = self.grid.len;
        let h = self.grid.h;
        let start = valid_from + self.m_r;
        debug_assert!(start <= self.izero);

        // integrand g[i] = F(t_i, x(t_i), x(t_i - r))
        let mut g = vec![vec![0.0; n]; len];
        for i in start..len {
            let t = self.grid.node(i);
            self.problem
                .rhs
                .eval_into(t, &prev[i], &prev[i - self.m_r], &mut g[i]);
        }

        // cumulative trapezoid with I[izero] = 0, signed for t < 0
        let mut integral = vec![vec![0.0; n]; len];
        for i in (self.izero + 1)..len {
            for c in 0..n {
                integral[i][c] = integral[i - 1][c] + 0.5 * h * (g[i - 1][c] + g[i][c]);
            }
        }
        for i in (start..self.izero).rev() {
            for c in 0..n {
                integral[i][c] = integral[i + 1][c] - 0.5 * h * (g[i][c] + g[i + 1][c]);
            }
        }

        let new_valid = valid_from + self.max_off();
        let mut out = vec![vec![0.0; n]; len];
        for i in 0..new_valid {
            out[i].copy_from_slice(&prev[i]);
        }
        for i in new_valid..len {
            let t = self.grid.node(i);
            let row = &mut out[i];
            row.copy_from_slice(xi);
            for (a, &off) in self.problem.neutral.atoms.iter().zip(&self.atom_offs) {
                let scale = a.modulation.as_ref().map_or(1.0, |m| m(t));
                a.matrix.matvec_acc(scale, &prev[i - off], row);
            }
            for c in 0..n {
                row[c] += integral[i][c];
            }
        }
        (out, new_valid)
    }
}

/// One application of the operator to every column of a single-r chart.
pub fn operator_t(chart: &WeightedChart, problem: &NdeProblem) -> Result<WeightedChart> {
    if chart.r_set.is_some() {
        return Err(Error::ChartMismatch(
            "operator_t expects a single-delay chart".into(),
        ));
    }
    let op = ColumnOp::new(problem, chart.grid, chart.izero)?;
    if chart.valid_from + op.max_off() + op.m_r > chart.izero {
        return Err(Error::InsufficientGrid(
            "chart lacks left history for another application".into(),
        ));
    }
    let mut out = chart.clone();
    let results: Vec<(Vec<Vec<f64>>, usize)> = chart
        .values
        .par_iter()
        .enumerate()
        .map(|(col, prev)| op.apply(chart.xi_of_col(col), prev, chart.valid_from))
        .collect();
    out.valid_from = results[0].1;
    out.values = results.into_iter().map(|(v, _)| v).collect();
    Ok(out)
}

/// Slice-wise application of the delay-parameterized operator: each r slice
/// runs exactly the single-delay column routine for its own problem.
pub fn operator_f(
    chart: &WeightedChart,
    problem_for_r: &dyn Fn(f64) -> NdeProblem,
) -> Result<WeightedChart> {
    let r_set = chart
        .r_set
        .clone()
        .ok_or_else(|| Error::ChartMismatch("operator_f expects an r-parameterized chart".into()))?;
    let mut out = chart.clone();
    let nxi = chart.xi_set.len();
    let mut new_valid = chart.valid_from;
    for (r_idx, &r) in r_set.iter().enumerate() {
        let problem = problem_for_r(r);
        let op = ColumnOp::new(&problem, chart.grid, chart.izero)?;
        if chart.valid_from + op.max_off() + op.m_r > chart.izero {
            return Err(Error::InsufficientGrid(
                "family chart lacks left history for another application".into(),
            ));
        }
        for xi_idx in 0..nxi {
            let col = chart.col_index(xi_idx, r_idx);
            let (vals, valid) = op.apply(chart.xi_of_col(col), &chart.values[col], chart.valid_from);
            out.values[col] = vals;
            new_valid = new_valid.max(valid);
        }
    }
    out.valid_from = new_valid;
    Ok(out)
}

fn init_chart(
    dim: usize,
    xi_set: &[Vec<f64>],
    r_set: Option<Vec<f64>>,
    opts: &ChartOptions,
    max_delay: f64,
) -> Result<(WeightedChart, usize)> {
    if xi_set.is_empty() {
        return Err(Error::EmptyDomain("xi_set is empty".into()));
    }
    if opts.gamma == 1 {
        for xi in xi_set {
            let nx = xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if nx <= 0.0 {
                return Err(Error::OutOfRange(
                    "gamma = 1 chart cannot include xi = 0".into(),
                ));
            }
        }
    }
    if !(opts.kappa > 0.0 && opts.kappa < 1.0) {
        return Err(Error::NonContraction {
            rate: opts.kappa,
            window: 0,
        });
    }
    let h = opts.h;
    let n_win = (opts.window / h).ceil() as usize;
    let n_est = ((opts.tol / opts.ball.max(opts.tol)).ln() / opts.kappa.ln()).ceil() as usize;
    let n_iter_budget = (n_est + 2).min(opts.max_iter);
    let max_off = (max_delay / h).round().max(1.0) as usize;
    let left = opts
        .force_left_nodes
        .unwrap_or(n_win + (n_iter_budget + 1) * max_off);
    let len = left + n_win + 1;
    let grid = UniformGrid::new(-(left as f64) * h, h, len);
    let n_cols = xi_set.len() * r_set.as_ref().map_or(1, |r| r.len());
    let mut values = Vec::with_capacity(n_cols);
    for col in 0..n_cols {
        let xi = &xi_set[col % xi_set.len()];
        values.push(vec![xi.clone(); len]);
    }
    Ok((
        WeightedChart {
            grid,
            izero: left,
            win_nodes: n_win,
            lambda: opts.lambda,
            gamma: opts.gamma,
            dim,
            xi_set: xi_set.to_vec(),
            r_set,
            values,
            valid_from: 0,
        },
        n_iter_budget,
    ))
}

fn picard_iterate<F>(
    chart: &mut WeightedChart,
    opts: &ChartOptions,
    budget: usize,
    apply: F,
) -> Result<PicardDiagnostics>
where
    F: Fn(&WeightedChart) -> Result<WeightedChart>,
{
    let mut gaps = Vec::new();
    let mut rates = Vec::new();
    let mut bad_streak = 0usize;
    let mut iterations = 0usize;
    loop {
        if iterations >= budget.min(opts.max_iter) {
            let last = gaps.last().copied().unwrap_or(f64::INFINITY);
            return Err(Error::IterationBudget(iterations, last, opts.tol));
        }
        let next = apply(chart)?;
        let gap = next.weighted_gap(chart);
        *chart = next;
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
    }
    let empirical_rate = rates
        .iter()
        .skip(1)
        .copied()
        .fold(0.0f64, f64::max);
    Ok(PicardDiagnostics {
        iterations,
        gaps,
        rates,
        empirical_rate,
        kappa_bound: opts.kappa,
        sup_norm: chart.weighted_norm(),
    })
}

/// Picard iteration of the manifold operator from x0(t, xi) = xi until the
/// weighted gap falls below tol. The grid is buffered on the left so every
/// application keeps the window [-T, T] valid.
pub fn solve_chart(
    problem: &NdeProblem,
    xi_set: &[Vec<f64>],
    opts: &ChartOptions,
) -> Result<(WeightedChart, PicardDiagnostics)> {
    let max_delay = problem
        .neutral
        .atoms
        .iter()
        .map(|a| a.delay)
        .fold(problem.r, f64::max);
    let (mut chart, budget) = init_chart(problem.dim, xi_set, None, opts, max_delay)?;
    let diag = picard_iterate(&mut chart, opts, budget, |c| operator_t(c, problem))?;
    Ok((chart, diag))
}

/// Convenience wrapper: options derived from a feasible admissibility report
/// with lambda = x*/r for the run delay.
pub fn solve_manifold(
    problem: &NdeProblem,
    report: &AdmissibilityReport,
    xi_set: &[Vec<f64>],
    window: f64,
    tol: f64,
) -> Result<(WeightedChart, PicardDiagnostics)> {
    let delta = report
        .delta
        .ok_or_else(|| Error::Internal("report lacks delta".into()))?;
    if problem.r > delta + 1e-15 {
        return Err(Error::OutOfRange(format!(
            "run delay r = {} exceeds the admissible bound delta = {delta}",
            problem.r
        )));
    }
    let opts = ChartOptions::from_report(report, problem.r, window, tol, problem.default_step())?;
    solve_chart(problem, xi_set, &opts)
}

/// Per-slice Picard solve of the r-parameterized fixed point on a shared
/// grid; lambda is fixed across slices (delta * lambda = x*).
pub fn solve_manifold_family(
    problem_for_r: &dyn Fn(f64) -> NdeProblem,
    xi_set: &[Vec<f64>],
    r_set: &[f64],
    opts: &ChartOptions,
) -> Result<(WeightedChart, Vec<PicardDiagnostics>)> {
    if r_set.len() < 2 {
        return Err(Error::EmptyDomain("r_set needs at least 2 slices".into()));
    }
    let r_max = r_set.iter().cloned().fold(0.0, f64::max);
    // shared grid: size the left buffer for the largest slice delay
    let n_win = (opts.window / opts.h).ceil() as usize;
    let n_est = ((opts.tol / opts.ball.max(opts.tol)).ln() / opts.kappa.ln()).ceil() as usize;
    let max_off = (r_max / opts.h).round() as usize;
    let left = n_win + (n_est + 3) * max_off;

    let mut shared = opts.clone();
    shared.force_left_nodes = Some(left);

    let mut diags = Vec::new();
    let mut family: Option<WeightedChart> = None;
    for (r_idx, &r) in r_set.iter().enumerate() {
        let problem = problem_for_r(r);
        let (slice, diag) = solve_chart(&problem, xi_set, &shared)?;
        diags.push(diag);
        let fam = family.get_or_insert_with(|| {
            let mut base = slice.clone();
            base.r_set = Some(r_set.to_vec());
            base.values = vec![Vec::new(); xi_set.len() * r_set.len()];
            base
        });
        fam.valid_from = fam.valid_from.max(slice.valid_from);
        for xi_idx in 0..xi_set.len() {
            let col = r_idx * xi_set.len() + xi_idx;
            fam.values[col] = slice.values[xi_idx].clone();
        }
    }
    Ok((family.unwrap(), diags))
}

/// Weighted centered-difference equation residual of a converged column,
/// with the pinned allowance 10 tol + tol (2/h) + (h^2/4) |g''| assembled
/// from the chart's own integrand second differences (safety factor 1.5).
/// Evaluated on the interior of the window: the first delay-width of nodes
/// at the left edge and the final node lack certified neighbors.
pub fn chart_equation_residual(
    chart: &WeightedChart,
    problem: &NdeProblem,
    col: usize,
    tol: f64,
) -> Result<(f64, f64)> {
    let op = ColumnOp::new(problem, chart.grid, chart.izero)?;
    let n = chart.dim;
    let h = chart.grid.h;
    let vals = &chart.values[col];
    let lo = (chart.izero - chart.win_nodes + op.max_off() + 1).max(chart.valid_from + op.m_r + 1);
    let hi = (chart.izero + chart.win_nodes - 1).min(chart.grid.len - 2);
    if lo + 2 > hi {
        return Err(Error::InsufficientGrid(
            "window too narrow for the residual probe".into(),
        ));
    }
    let mut g = vec![vec![0.0; n]; chart.grid.len];
    for i in (lo - 1)..=(hi + 1) {
        let t = chart.grid.node(i);
        problem
            .rhs
            .eval_into(t, &vals[i], &vals[i - op.m_r], &mut g[i]);
    }
    let mut sup = 0.0f64;
    let mut g2 = 0.0f64;
    for i in lo..=hi {
        let t = chart.grid.node(i);
        let w = chart.weight(t, chart.xi_of_col(col));
        for c in 0..n {
            // y = x - L x_t equals xi + integral at the fixed point
            let y = |j: usize| -> f64 {
                let mut v = vals[j][c];
                for (a, &off) in problem.neutral.atoms.iter().zip(&op.atom_offs) {
                    let scale = a.modulation.as_ref().map_or(1.0, |m| m(chart.grid.node(j)));
                    let mut acc = vec![0.0; n];
                    a.matrix.matvec_acc(scale, &vals[j - off], &mut acc);
                    v -= acc[c];
                }
                v
            };
            let dy = (y(i + 1) - y(i - 1)) / (2.0 * h);
            sup = sup.max((dy - g[i][c]).abs() * w);
            let dd = (g[i + 1][c] - 2.0 * g[i][c] + g[i - 1][c]) / (h * h);
            g2 = g2.max(dd.abs() * w);
        }
    }
    let allowance = 10.0 * tol + tol * 2.0 / h + 0.25 * h * h * g2 * 1.5;
    Ok((sup, allowance))
}

/// Base points with a full 5-point-per-axis box of offsets around each, so
/// first and second central differences exist at two step sizes.
#[derive(Clone, Debug)]
pub struct XiStencil {
    pub dim: usize,
    pub bases: Vec<Vec<f64>>,
    pub step: f64,
}

impl XiStencil {
    pub fn offsets(dim: usize) -> Vec<Vec<i32>> {
        let mut out = vec![vec![]];
        for _ in 0..dim {
            let mut next = Vec::new();
            for prefix in &out {
                for o in -2..=2 {
                    let mut p = prefix.clone();
                    p.push(o);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let offs = Self::offsets(self.dim);
        let mut pts = Vec::with_capacity(self.bases.len() * offs.len());
        for b in &self.bases {
            for o in &offs {
                pts.push(
                    b.iter()
                        .zip(o)
                        .map(|(&x, &k)| x + k as f64 * self.step)
                        .collect(),
                );
            }
        }
        pts
    }

    fn n_offsets(&self) -> usize {
        5usize.pow(self.dim as u32)
    }

    /// Column of (base, offset) given the chart was built over `points()`.
    pub fn col(&self, base: usize, offset: &[i32]) -> usize {
        let offs = Self::offsets(self.dim);
        let pos = offs.iter().position(|o| o == offset).expect("offset in box");
        base * self.n_offsets() + pos
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct XiDerivReport {
    /// Weighted sup of |D_xi Psi| and |D^2_xi Psi|.
    pub sup_d1: f64,
    pub sup_d2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Relative Richardson disagreement of the first-derivative stencil.
    pub richardson: f64,
    /// Weighted order-1 Lipschitz ratio sup over sampled pairs.
    pub lipschitz_sup: f64,
    pub pairs: usize,
    pub bounds_hold: bool,
}

fn op_norm(partials: &DerivativeTable, dim: usize, order: usize) -> Result<f64> {
    // multilinear norm for the max vector norm: the sup over the unit cube is
    // attained at vertices; enumerate all sign patterns per argument
    let mut dirs = vec![vec![1.0f64; dim]; order];
    let n_pat = 1usize << dim;
    let mut worst = 0.0f64;
    let mut pattern = vec![0usize; order];
    loop {
        for (arg, &p) in pattern.iter().enumerate() {
            for b in 0..dim {
                dirs[arg][b] = if (p >> b) & 1 == 1 { -1.0 } else { 1.0 };
            }
        }
        worst = worst.max(dk_multilinear(partials, &dirs)?.abs());
        let mut i = 0;
        loop {
            if i == order {
                return Ok(worst);
            }
            pattern[i] += 1;
            if pattern[i] < n_pat {
                break;
            }
            pattern[i] = 0;
            i += 1;
        }
    }
}

/// Central finite-difference estimates of D_xi Psi and D^2_xi Psi on the
/// stencil chart, checked against the weighted beta_1/beta_2 bounds, plus
/// the order-1 Lipschitz ratio against beta_2 over sampled center pairs.
pub fn manifold_xi_derivatives(
    chart: &WeightedChart,
    stencil: &XiStencil,
    betas: &[f64],
    margin: f64,
    richardson_tol: f64,
) -> Result<XiDerivReport> {
    let n = stencil.dim;
    if chart.xi_set.len() != stencil.bases.len() * stencil.n_offsets() {
        return Err(Error::ChartMismatch(
            "chart xi_set does not match the stencil layout".into(),
        ));
    }
    let s = stencil.step;
    let dim = chart.dim;
    let lo = chart.izero - chart.win_nodes;
    let hi = chart.izero + chart.win_nodes;

    let mut sup_d1 = 0.0f64;
    let mut sup_d2 = 0.0f64;
    let mut richardson = 0.0f64;

    let unit = |a: usize, sgn: i32| -> Vec<i32> {
        let mut v = vec![0i32; n];
        v[a] = sgn;
        v
    };
    // gradients per base and window node, [component][axis], cached for the
    // Lipschitz pass over base pairs
    type Grad = Vec<Vec<f64>>;
    let mut center_grads: Vec<(Vec<f64>, Vec<Grad>)> = Vec::new();

    for base in 0..stencil.bases.len() {
        let col0 = stencil.col(base, &vec![0i32; n]);
        let xi0 = chart.xi_set[col0].clone();
        let mut grads_per_node: Vec<Grad> = Vec::with_capacity(hi - lo + 1);

        for i in lo..=hi {
            let t = chart.grid.node(i);
            let w = chart.weight(t, &xi0);
            let mut grad: Grad = vec![vec![0.0; n]; dim];
            for a in 0..n {
                let cp = stencil.col(base, &unit(a, 1));
                let cm = stencil.col(base, &unit(a, -1));
                let cp2 = stencil.col(base, &unit(a, 2));
                let cm2 = stencil.col(base, &unit(a, -2));
                for comp in 0..dim {
                    let fine = (chart.values[cp][i][comp] - chart.values[cm][i][comp]) / (2.0 * s);
                    let coarse =
                        (chart.values[cp2][i][comp] - chart.values[cm2][i][comp]) / (4.0 * s);
                    let scale = fine.abs().max(coarse.abs()).max(1e-9);
                    richardson = richardson.max((fine - coarse).abs() / scale);
                    grad[comp][a] = fine;
                }
            }
            for comp in 0..dim {
                let mut d1 = DerivativeTable::new(1);
                for a in 0..n {
                    d1.insert_scalar(MultiIndex::unit(n, a), grad[comp][a]);
                }
                sup_d1 = sup_d1.max(op_norm(&d1, n, 1)? * w);

                let mut d2 = DerivativeTable::new(1);
                for a in 0..n {
                    let cp = stencil.col(base, &unit(a, 1));
                    let cm = stencil.col(base, &unit(a, -1));
                    let mut idx = vec![0u32; n];
                    idx[a] = 2;
                    d2.insert_scalar(
                        MultiIndex::new(idx),
                        (chart.values[cp][i][comp] - 2.0 * chart.values[col0][i][comp]
                            + chart.values[cm][i][comp])
                            / (s * s),
                    );
                    for b in (a + 1)..n {
                        let mut pp = vec![0i32; n];
                        pp[a] = 1;
                        pp[b] = 1;
                        let mut pm = pp.clone();
                        pm[b] = -1;
                        let mut mp = pp.clone();
                        mp[a] = -1;
                        let mut mm = pp.clone();
                        mm[a] = -1;
                        mm[b] = -1;
                        let cross = (chart.values[stencil.col(base, &pp)][i][comp]
                            - chart.values[stencil.col(base, &pm)][i][comp]
                            - chart.values[stencil.col(base, &mp)][i][comp]
                            + chart.values[stencil.col(base, &mm)][i][comp])
                            / (4.0 * s * s);
                        let mut idx = vec![0u32; n];
                        idx[a] = 1;
                        idx[b] = 1;
                        d2.insert_scalar(MultiIndex::new(idx), cross);
                    }
                }
                // weight for derivative order j is w^j
                sup_d2 = sup_d2.max(op_norm(&d2, n, 2)? * w * w);
            }
            grads_per_node.push(grad);
        }
        center_grads.push((xi0, grads_per_node));
    }

    // order-1 Lipschitz ratios over distinct base pairs at equal t
    let mut lipschitz_sup = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..center_grads.len() {
        for j in (i + 1)..center_grads.len() {
            let (xi_a, ga) = &center_grads[i];
            let (xi_b, gb) = &center_grads[j];
            let dist = xi_a
                .iter()
                .zip(xi_b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            if dist <= 0.0 {
                continue;
            }
            pairs += 1;
            for (node, (na, nb)) in ga.iter().zip(gb).enumerate() {
                let t = chart.grid.node(lo + node);
                let w2 = (-2.0 * chart.lambda * t.abs()).exp();
                let mut worst = 0.0f64;
                for comp in 0..dim {
                    let mut diff = DerivativeTable::new(1);
                    for a in 0..n {
                        diff.insert_scalar(MultiIndex::unit(n, a), na[comp][a] - nb[comp][a]);
                    }
                    worst = worst.max(op_norm(&diff, n, 1)?);
                }
                lipschitz_sup = lipschitz_sup.max(worst * w2 / dist);
            }
        }
    }

    if richardson > richardson_tol {
        return Err(Error::StencilTooCoarse(richardson, richardson_tol));
    }
    let beta1 = betas[1];
    let beta2 = betas[2];
    let bounds_hold = sup_d1 <= beta1 * (1.0 + margin)
        && sup_d2 <= beta2 * (1.0 + margin)
        && lipschitz_sup <= beta2 * (1.0 + margin);
    Ok(XiDerivReport {
        sup_d1,
        sup_d2,
        beta1,
        beta2,
        richardson,
        lipschitz_sup,
        pairs,
        bounds_hold,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RSmoothReport {
    /// Weighted sup of the pure r partial.
    pub sup_dr: f64,
    /// Weighted sup of the full first (t, r)-derivative norm.
    pub sup_d1: f64,
    pub eps1: f64,
    /// Max relative error of the shifted-argument mixed-derivative identity
    /// at nu = (1, 1) over the sampled points.
    pub shifted_identity_rel_err: f64,
    pub bounds_hold: bool,
}

/// Finite-difference r-smoothness probe over a family chart: the eps_1
/// weighted bound on the (t, r)-derivative, and the mixed-derivative
/// identity for the shifted argument g(t, r) = Psi(t - r, r, xi) at
/// nu = (1, 1):  d^2 g / dt dr = Psi_{y1 y2} - Psi_{y1 y1}.
pub fn r_smoothness_probe(chart: &WeightedChart, eps: &[f64]) -> Result<RSmoothReport> {
    let r_set = chart
        .r_set
        .clone()
        .ok_or_else(|| Error::ChartMismatch("r_smoothness_probe needs a family chart".into()))?;
    if r_set.len() < 5 {
        return Err(Error::InsufficientGrid("need >= 5 r slices".into()));
    }
    let dr = r_set[1] - r_set[0];
    for w in r_set.windows(2) {
        if ((w[1] - w[0]) - dr).abs() > 1e-9 * dr {
            return Err(Error::ChartMismatch("r_set must be uniform".into()));
        }
    }
    let nxi = chart.xi_set.len();
    let dim = chart.dim;
    let h = chart.grid.h;
    let lo = chart.izero - chart.win_nodes;
    let hi = chart.izero + chart.win_nodes;

    let mut sup_dr = 0.0f64;
    let mut sup_d1 = 0.0f64;
    for r_idx in 1..(r_set.len() - 1) {
        for xi_idx in 0..nxi {
            let xi = &chart.xi_set[xi_idx];
            let cm = chart.col_index(xi_idx, r_idx - 1);
            let c0 = chart.col_index(xi_idx, r_idx);
            let cp = chart.col_index(xi_idx, r_idx + 1);
            for i in (lo + 1)..hi {
                let t = chart.grid.node(i);
                let w = chart.weight(t, xi);
                for comp in 0..dim {
                    let ddr =
                        (chart.values[cp][i][comp] - chart.values[cm][i][comp]) / (2.0 * dr);
                    let ddt =
                        (chart.values[c0][i + 1][comp] - chart.values[c0][i - 1][comp]) / (2.0 * h);
                    sup_dr = sup_dr.max(ddr.abs() * w);
                    sup_d1 = sup_d1.max((ddr.abs() + ddt.abs()) * w);
                }
            }
        }
    }

    // shifted-argument identity at the middle slice
    let mid = r_set.len() / 2;
    let r = r_set[mid];
    let ht = ((chart.win_nodes / 6).max(4) as f64) * h;
    let t_span = chart.win_nodes as f64 * h;
    let mut rel_err = 0.0f64;
    for xi_idx in 0..nxi {
        let cm = chart.col_index(xi_idx, mid - 1);
        let c0 = chart.col_index(xi_idx, mid);
        let cp = chart.col_index(xi_idx, mid + 1);
        for frac in [-0.4f64, -0.1, 0.2, 0.45] {
            let t = frac * t_span;
            // lhs: mixed difference of g(t, r) = Psi(t - r, r)
            let g = |col: usize, tt: f64, rr: f64| -> Result<Vec<f64>> {
                chart.eval_col(col, tt - rr)
            };
            let rp = r_set[mid + 1];
            let rm = r_set[mid - 1];
            let gpp = g(cp, t + ht, rp)?;
            let gpm = g(cm, t + ht, rm)?;
            let gmp = g(cp, t - ht, rp)?;
            let gmm = g(cm, t - ht, rm)?;
            // rhs: Psi_{y1 y2} - Psi_{y1 y1} at (t - r, r)
            let ts = t - r;
            let psi = |col: usize, tt: f64| -> Result<Vec<f64>> { chart.eval_col(col, tt) };
            let pp = psi(cp, ts + ht)?;
            let pm = psi(cp, ts - ht)?;
            let qp = psi(cm, ts + ht)?;
            let qm = psi(cm, ts - ht)?;
            let c_p = psi(c0, ts + ht)?;
            let c_0 = psi(c0, ts)?;
            let c_m = psi(c0, ts - ht)?;
            for comp in 0..dim {
                let lhs = (gpp[comp] - gpm[comp] - gmp[comp] + gmm[comp]) / (4.0 * ht * dr);
                let mixed = (pp[comp] - pm[comp] - qp[comp] + qm[comp]) / (4.0 * ht * dr);
                let d2t = (c_p[comp] - 2.0 * c_0[comp] + c_m[comp]) / (ht * ht);
                let rhs = mixed - d2t;
                let scale = lhs.abs().max(rhs.abs());
                if scale > 1e-7 {
                    rel_err = rel_err.max((lhs - rhs).abs() / scale);
                }
            }
        }
    }

    let eps1 = eps[1];
    Ok(RSmoothReport {
        sup_dr,
        sup_d1,
        eps1,
        shifted_identity_rel_err: rel_err,
        bounds_hold: sup_d1 <= eps1 * 1.0,
    })
}

/// View one chart column as a trajectory over the window (for residual and
/// tracking cross-checks).
pub fn column_trajectory(chart: &WeightedChart, col: usize) -> Trajectory {
    let base = chart.valid_from;
    Trajectory {
        grid: UniformGrid::new(chart.grid.node(base), chart.grid.h, chart.grid.len - base),
        values: chart.values[col][base..].to_vec(),
        dim: chart.dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AffineField, ConstantField, TimeField};
    use crate::problem::{Mat, NeutralPart};
    use std::sync::Arc;

    fn opts(lambda: f64, h: f64, window: f64) -> ChartOptions {
        ChartOptions {
            lambda,
            gamma: 0,
            window,
            tol: 1e-10,
            h,
            kappa: 0.5,
            ball: 4.0,
            max_iter: 200,
            force_left_nodes: None,
        }
    }

    #[test]
    fn affine_fixed_point_is_exact() {
        // f == c, A = 0: Psi(t, xi) = xi + c t after one iteration
        let c = 0.75;
        let rhs = Arc::new(ConstantField::new(vec![c]));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o = opts(2.0, 0.1 / 32.0, 0.5);
        let (chart, diag) = solve_chart(&p, &[vec![0.3], vec![-0.2]], &o).unwrap();
        assert!(diag.iterations <= 3, "{}", diag.iterations);
        for col in 0..2 {
            let xi = chart.xi_of_col(col)[0];
            for i in chart.window_range() {
                let t = chart.grid.node(i);
                assert!(
                    (chart.values[col][i][0] - (xi + c * t)).abs() < 1e-12,
                    "t = {t}"
                );
            }
        }
        let b = chart
            .boundary_identity(&|_c| {
                NdeProblem::new(
                    1,
                    0.1,
                    NeutralPart::none(),
                    Arc::new(ConstantField::new(vec![c])),
                )
            })
            .unwrap();
        assert!(b < 1e-12);
    }

    #[test]
    fn operator_is_pure_quadrature_for_time_field() {
        // x == 0, L == 0, F = g(s): T(x)(t, xi) = xi + int_0^t g.
        // Linear g: the trapezoid rule is exact, so the chart matches a
        // Simpson oracle to 1e-10; curvy g matches within the h^2 trapezoid
        // error bound.
        let simpson = |f: &dyn Fn(f64) -> f64, t: f64| -> f64 {
            let n = 4000;
            let h = t / n as f64;
            let mut s = f(0.0) + f(t);
            for i in 1..n {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            s * h / 3.0
        };
        let h = 0.1 / 64.0;
        let run = |g: fn(f64) -> Vec<f64>| -> WeightedChart {
            let rhs = Arc::new(TimeField::new(1, g));
            let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
            let o = opts(1.0, h, 0.4);
            let (mut chart, _) = init_chart(1, &[vec![0.0]], None, &o, 0.1).unwrap();
            for col in chart.values.iter_mut() {
                for v in col.iter_mut() {
                    v[0] = 0.0;
                }
            }
            operator_t(&chart, &p).unwrap()
        };

        let lin = run(|t| vec![0.5 + 3.0 * t]);
        for i in lin.window_range() {
            let t = lin.grid.node(i);
            let oracle = simpson(&|x| 0.5 + 3.0 * x, t);
            assert!(
                (lin.values[0][i][0] - oracle).abs() < 1e-10,
                "t = {t}: {} vs {oracle}",
                lin.values[0][i][0]
            );
        }

        let curvy = run(|t| vec![(3.0 * t).sin() + 0.5]);
        // |g''| <= 9: composite trapezoid error <= |t| h^2 |g''| / 12
        for i in curvy.window_range() {
            let t = curvy.grid.node(i);
            let oracle = simpson(&|x| (3.0 * x).sin() + 0.5, t);
            let allow = t.abs() * h * h * 9.0 / 12.0 + 1e-12;
            assert!(
                (curvy.values[0][i][0] - oracle).abs() <= allow,
                "t = {t}: {} vs {oracle}",
                curvy.values[0][i][0]
            );
        }
    }

    #[test]
    fn linear_scalar_manifold_matches_exponential() {
        // f(y, z) = a y, A ~ 0: Psi(t, xi) = xi e^{a t}
        let a = 0.5;
        let r = 0.1;
        let rhs = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(
            1,
            r,
            NeutralPart::single(Mat::scalar(1e-9), r),
            rhs,
        );
        let o = ChartOptions {
            lambda: 5.0,
            gamma: 0,
            window: 1.0,
            tol: 1e-9,
            h: r / 32.0,
            kappa: 0.6,
            ball: 4.0,
            max_iter: 300,
            force_left_nodes: None,
        };
        let (chart, diag) = solve_chart(&p, &[vec![1.0]], &o).unwrap();
        assert!(diag.empirical_rate < 1.0);
        for i in chart.window_range() {
            let t = chart.grid.node(i);
            let expect = (a * t).exp();
            assert!(
                (chart.values[0][i][0] - expect).abs() < 1e-6,
                "t = {t}: {} vs {expect}",
                chart.values[0][i][0]
            );
        }
    }

    #[test]
    fn applying_operator_to_fixed_point_is_stable() {
        let a = 0.4;
        let rhs = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o = opts(4.0, 0.1 / 32.0, 0.5);
        let (chart, _) = solve_chart(&p, &[vec![0.8]], &o).unwrap();
        let again = operator_t(&chart, &p).unwrap();
        assert!(again.weighted_gap(&chart) <= 10.0 * o.tol);
    }

    #[test]
    fn neutral_term_enters_fixed_point() {
        // f == 0: T(x)(t) = xi + A x(t - r); constant column xi/(1 - A) ... but
        // starting from x0 = xi the fixed point is xi/(1 - A) (scalar case)
        let r = 0.1;
        let a = 0.3;
        let rhs = Arc::new(ConstantField::new(vec![0.0]));
        let p = NdeProblem::new(1, r, NeutralPart::single(Mat::scalar(a), r), rhs);
        let o = opts(3.0, r / 32.0, 0.3);
        let (chart, _) = solve_chart(&p, &[vec![1.0]], &o).unwrap();
        let expect = 1.0 / (1.0 - a);
        for i in chart.window_range() {
            assert!(
                (chart.values[0][i][0] - expect).abs() < 1e-8,
                "{} vs {expect}",
                chart.values[0][i][0]
            );
        }
    }

    #[test]
    fn gamma_one_chart_solves_outside_ball() {
        let a = 0.5;
        let rhs = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let mut o = opts(5.0, 0.1 / 32.0, 0.4);
        o.gamma = 1;
        let (chart, _) = solve_chart(&p, &[vec![2.0], vec![6.0]], &o).unwrap();
        for (col, &xi) in [2.0f64, 6.0].iter().enumerate() {
            for i in chart.window_range() {
                let t = chart.grid.node(i);
                assert!(
                    (chart.values[col][i][0] - xi * (a * t).exp()).abs() < 1e-6 * xi,
                    "col {col}"
                );
            }
        }
        // weight includes |xi|^{-1}
        assert!(chart.weight(0.0, &[4.0]) == 0.25);
    }

    #[test]
    fn family_slice_matches_t_chart() {
        let a = 0.4;
        let make = |r: f64| {
            NdeProblem::new(
                1,
                r,
                NeutralPart::single(Mat::scalar(0.05), r),
                Arc::new(AffineField::linear_scalar(a)),
            )
        };
        let h = 0.002 / 32.0;
        let r_set: Vec<f64> = (1..=5).map(|j| (j * 64) as f64 * h).collect();
        let o = ChartOptions {
            lambda: 2.0,
            gamma: 0,
            window: 0.05,
            tol: 1e-10,
            h,
            kappa: 0.6,
            ball: 4.0,
            max_iter: 300,
            force_left_nodes: None,
        };
        let (family, diags) = solve_manifold_family(&make, &[vec![1.0]], &r_set, &o).unwrap();
        assert_eq!(diags.len(), 5);
        // independent single-r solve with its own buffer sizing
        let (single, _) = solve_chart(&make(r_set[2]), &[vec![1.0]], &o).unwrap();
        let col = family.col_index(0, 2);
        for i in 0..=(2 * family.win_nodes) {
            let t = family.grid.node(family.izero - family.win_nodes + i);
            let a_val = family.values[col][family.izero - family.win_nodes + i][0];
            let b_val = single.values[0][single.izero - single.win_nodes + i][0];
            assert!(
                (a_val - b_val).abs() <= 10.0 * o.tol,
                "t = {t}: {a_val} vs {b_val}"
            );
        }
    }

    #[test]
    fn operator_f_single_slice_bitwise_matches_operator_t() {
        let a = 0.4;
        let r = 0.064;
        let h = 0.001;
        let make = |rr: f64| {
            NdeProblem::new(
                1,
                rr,
                NeutralPart::single(Mat::scalar(0.1), rr),
                Arc::new(AffineField::linear_scalar(a)),
            )
        };
        let o = ChartOptions {
            lambda: 2.0,
            gamma: 0,
            window: 0.05,
            tol: 1e-9,
            h,
            kappa: 0.6,
            ball: 4.0,
            max_iter: 300,
            force_left_nodes: Some(400),
        };
        let (mut fam, _) = init_chart(1, &[vec![0.7]], Some(vec![r]), &o, r).unwrap();
        let (mut single, _) = init_chart(1, &[vec![0.7]], None, &o, r).unwrap();
        // identical initial iterates by construction
        let f1 = operator_f(&fam, &make).unwrap();
        let t1 = operator_t(&single, &make(r)).unwrap();
        for i in 0..f1.grid.len {
            assert_eq!(f1.values[0][i][0].to_bits(), t1.values[0][i][0].to_bits());
        }
        fam = f1;
        single = t1;
        let f2 = operator_f(&fam, &make).unwrap();
        let t2 = operator_t(&single, &make(r)).unwrap();
        for i in 0..f2.grid.len {
            assert_eq!(f2.values[0][i][0].to_bits(), t2.values[0][i][0].to_bits());
        }
    }

    #[test]
    fn xi_derivatives_affine_case() {
        // f == c: Psi = xi + c t, D1 = I, D2 = 0
        let c = 0.3;
        let rhs = Arc::new(ConstantField::new(vec![c]));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o = opts(2.0, 0.1 / 32.0, 0.4);
        let stencil = XiStencil {
            dim: 1,
            bases: vec![vec![0.2], vec![-0.4]],
            step: 0.05,
        };
        let (chart, _) = solve_chart(&p, &stencil.points(), &o).unwrap();
        let betas = vec![10.0, 1.5, 0.5];
        let rep = manifold_xi_derivatives(&chart, &stencil, &betas, 0.05, 1e-6).unwrap();
        assert!((rep.sup_d1 - 1.0).abs() < 1e-9, "sup_d1 = {}", rep.sup_d1);
        assert!(rep.sup_d2 < 1e-6, "sup_d2 = {}", rep.sup_d2);
        assert!(rep.lipschitz_sup < 1e-6);
        assert!(rep.bounds_hold);
    }

    #[test]
    fn xi_derivatives_linear_case() {
        // f = a y: D1 Psi = e^{a t}, weighted by e^{-lambda |t|}
        let a = 0.5;
        let rhs = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o = opts(5.0, 0.1 / 32.0, 0.5);
        let stencil = XiStencil {
            dim: 1,
            bases: vec![vec![1.0]],
            step: 0.05,
        };
        let (chart, _) = solve_chart(&p, &stencil.points(), &o).unwrap();
        let betas = vec![10.0, 1.4, 1.0];
        let rep = manifold_xi_derivatives(&chart, &stencil, &betas, 0.05, 1e-5).unwrap();
        // max over window of e^{a t} e^{-lambda |t|} = e^{(a... at t = 0: 1...
        // positive t: e^{(a-lambda)t} < 1; negative: e^{(lambda-a)t}... wait
        // e^{a t} e^{-lambda|t|}: t<0: e^{a t + lambda t} = e^{(a+lambda)t} < 1
        assert!((rep.sup_d1 - 1.0).abs() < 1e-6, "sup_d1 = {}", rep.sup_d1);
    }

    #[test]
    fn r_probe_detects_r_independence() {
        // field independent of the delayed argument, A = 0: dPsi/dr = 0
        let a = 0.5;
        let h = 0.0002;
        let make = |r: f64| {
            NdeProblem::new(
                1,
                r,
                NeutralPart::none(),
                Arc::new(AffineField::linear_scalar(a)),
            )
        };
        let r_set: Vec<f64> = (1..=5).map(|j| (j * 32) as f64 * h).collect();
        let o = ChartOptions {
            lambda: 3.0,
            gamma: 0,
            window: 0.1,
            tol: 1e-11,
            h,
            kappa: 0.5,
            ball: 3.0,
            max_iter: 300,
            force_left_nodes: None,
        };
        let (family, _) = solve_manifold_family(&make, &[vec![1.0]], &r_set, &o).unwrap();
        let eps = vec![5.0, 2.0, 2.0];
        let rep = r_smoothness_probe(&family, &eps).unwrap();
        assert!(rep.sup_dr < 1e-5, "sup_dr = {}", rep.sup_dr);
    }

    #[test]
    fn uniqueness_from_perturbed_initial_iterate() {
        // Picard from x0 = xi and from a perturbed start converge to the
        // same fixed point (weighted-norm gap <= 10 tol).
        let a = 0.5;
        let rhs: Arc<dyn crate::problem::Rhs> = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(
            1,
            0.1,
            NeutralPart::single(Mat::scalar(0.1), 0.1),
            rhs,
        );
        let o = ChartOptions {
            lambda: 5.0,
            gamma: 0,
            window: 0.5,
            tol: 1e-10,
            h: 0.1 / 32.0,
            kappa: 0.6,
            ball: 4.0,
            max_iter: 300,
            force_left_nodes: None,
        };
        let (clean, _) = solve_chart(&p, &[vec![1.0]], &o).unwrap();
        // perturbed start: weighted norm of the perturbation ~ 0.4 <= beta0/2
        let (mut chart, _) = init_chart(1, &[vec![1.0]], None, &o, 0.1).unwrap();
        for (i, v) in chart.values[0].iter_mut().enumerate() {
            let t = chart.grid.node(i);
            v[0] += 0.4 * (30.0 * t).sin() * (o.lambda * t.abs()).exp().min(3.0);
        }
        let mut prev = chart.clone();
        for _ in 0..200 {
            let next = operator_t(&prev, &p).unwrap();
            let gap = next.weighted_gap(&prev);
            prev = next;
            if gap <= o.tol {
                break;
            }
            if prev.valid_from + 2 * 32 > prev.izero - prev.win_nodes {
                panic!("grid exhausted before convergence");
            }
        }
        assert!(
            prev.weighted_gap(&clean) <= 10.0 * o.tol,
            "perturbed and clean fixed points differ by {}",
            prev.weighted_gap(&clean)
        );
    }

    #[test]
    fn window_doubling_stability() {
        // the finite window approximates the weighted sup over all of R:
        // doubling the window leaves the fixed point on the inner window
        // unchanged up to 10 tol
        let a = 0.4;
        let rhs = Arc::new(AffineField::linear_scalar(a));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o1 = opts(4.0, 0.1 / 32.0, 0.5);
        let mut o2 = o1.clone();
        o2.window = 1.0;
        let (c1, _) = solve_chart(&p, &[vec![0.7]], &o1).unwrap();
        let (c2, _) = solve_chart(&p, &[vec![0.7]], &o2).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=(2 * c1.win_nodes) {
            let i1 = c1.izero - c1.win_nodes + k;
            let i2 = c2.izero - c1.win_nodes + k;
            let w = (-c1.lambda * c1.grid.node(i1).abs()).exp();
            worst = worst.max((c1.values[0][i1][0] - c2.values[0][i2][0]).abs() * w);
        }
        assert!(worst <= 10.0 * o1.tol, "window doubling moved the chart by {worst}");
    }

    #[test]
    fn csv_header_shape() {
        let rhs = Arc::new(ConstantField::new(vec![0.1]));
        let p = NdeProblem::new(1, 0.1, NeutralPart::none(), rhs);
        let o = opts(2.0, 0.1 / 32.0, 0.2);
        let (chart, _) = solve_chart(&p, &[vec![0.5]], &o).unwrap();
        let csv = chart.to_csv(p.r);
        assert!(csv.starts_with("t,r,xi_1,psi_1\n"));
    }
}
