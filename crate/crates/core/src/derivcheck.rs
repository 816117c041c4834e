//! Finite-difference verification of the higher-order chain rule engine: a
//! built-in suite of composite functions with exact derivative closures,
//! compared against Richardson-extrapolated nested central differences of
//! the composite evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::multiindex::{faa_di_bruno, indices_with_order_range, DerivativeTable, MultiIndex};

pub type OuterOracle = Box<dyn Fn(&MultiIndex, &[f64]) -> f64 + Sync>;
pub type InnerOracle = Box<dyn Fn(&MultiIndex, &[f64]) -> Vec<f64> + Sync>;

/// One composite h = g(g_1, ..., g_m) with exact partial closures.
pub struct CompositeCase {
    pub name: &'static str,
    /// Inner dimension n and outer dimension m.
    pub n: usize,
    pub m: usize,
    /// g_omega at y (omega of length m).
    pub outer: OuterOracle,
    /// g^(i)_mu at x for i = 0..m (mu of length n).
    pub inner: InnerOracle,
    /// Base-point sampling box half-width.
    pub box_half: f64,
}

impl CompositeCase {
    fn inner_values(&self, x: &[f64]) -> Vec<f64> {
        (self.inner)(&MultiIndex::zeros(self.n), x)
    }

    fn composite(&self, x: &[f64]) -> f64 {
        let y = self.inner_values(x);
        (self.outer)(&MultiIndex::zeros(self.m), &y)
    }

    fn tables(&self, x: &[f64], order: u32) -> (DerivativeTable, DerivativeTable) {
        let y = self.inner_values(x);
        let mut outer = DerivativeTable::new(1);
        outer.insert_scalar(MultiIndex::zeros(self.m), (self.outer)(&MultiIndex::zeros(self.m), &y));
        for omega in indices_with_order_range(self.m, 1, order) {
            outer.insert_scalar(omega.clone(), (self.outer)(&omega, &y));
        }
        let mut inner = DerivativeTable::new(self.m);
        for mu in indices_with_order_range(self.n, 1, order) {
            inner.insert(mu.clone(), (self.inner)(&mu, x));
        }
        (outer, inner)
    }
}

/// Nested central difference of order nu with one Richardson level:
/// (4 D(s/2) - D(s)) / 3 kills the leading s^2 term.
pub fn mixed_central_difference<F>(f: &F, x: &[f64], nu: &MultiIndex, step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let d_at = |s: f64| -> f64 {
        // tensorized central stencils per axis
        let mut points: Vec<(Vec<f64>, f64)> = vec![(x.to_vec(), 1.0)];
        for (axis, &q) in nu.components().iter().enumerate() {
            if q == 0 {
                continue;
            }
            let (offsets, weights) = central_stencil(q);
            let mut next = Vec::with_capacity(points.len() * offsets.len());
            for (pt, w) in &points {
                for (o, cw) in offsets.iter().zip(&weights) {
                    let mut p = pt.clone();
                    p[axis] += o * s;
                    next.push((p, w * cw / s.powi(q as i32)));
                }
            }
            points = next;
        }
        points.iter().map(|(p, w)| w * f(p)).sum()
    };
    (4.0 * d_at(step / 2.0) - d_at(step)) / 3.0
}

/// Step-sweep oracle: evaluates the Richardson-corrected difference on a
/// geometric step ladder and returns the value at the plateau (the pair of
/// consecutive steps in closest agreement), which sits between the
/// truncation-dominated and roundoff-dominated regimes.
pub fn oracle_partial<F>(f: &F, x: &[f64], nu: &MultiIndex, scale: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let steps = [
        0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.025, 0.018, 0.012, 0.009,
    ];
    let vals: Vec<f64> = steps
        .iter()
        .map(|&s| mixed_central_difference(f, x, nu, s * scale))
        .collect();
    let mut best = (f64::INFINITY, vals[0]);
    for i in 0..vals.len() - 1 {
        let d = (vals[i + 1] - vals[i]).abs();
        if d < best.0 {
            best = (d, vals[i + 1]);
        }
    }
    best.1
}

/// Central-difference stencil (offsets in units of the step, weights) for the
/// q-th derivative, second-order accurate.
fn central_stencil(q: u32) -> (Vec<f64>, Vec<f64>) {
    match q {
        1 => (vec![-1.0, 1.0], vec![-0.5, 0.5]),
        2 => (vec![-1.0, 0.0, 1.0], vec![1.0, -2.0, 1.0]),
        3 => (
            vec![-2.0, -1.0, 1.0, 2.0],
            vec![-0.5, 1.0, -1.0, 0.5],
        ),
        4 => (
            vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            vec![1.0, -4.0, 6.0, -4.0, 1.0],
        ),
        _ => panic!("stencil order {q} unsupported"),
    }
}

/// The built-in composite suite: inner/outer pairs spanning n, m <= 3 with
/// smooth transcendental and polynomial pieces.
pub fn builtin_suite() -> Vec<CompositeCase> {
    let mut cases = Vec::new();

    // exp of a sum: every mixed partial of the composite equals e^{x+y}
    cases.push(CompositeCase {
        name: "exp_of_sum",
        n: 2,
        m: 1,
        outer: Box::new(|_omega: &MultiIndex, y: &[f64]| y[0].exp()),
        inner: Box::new(|mu: &MultiIndex, x: &[f64]| {
            vec![match mu.order() {
                0 => x[0] + x[1],
                1 => 1.0,
                _ => 0.0,
            }]
        }),
        box_half: 0.4,
    });

    // univariate chain: g(u) = sin(u), g1(x) = x^3 + 0.5 x
    cases.push(CompositeCase {
        name: "sin_of_cubic",
        n: 1,
        m: 1,
        outer: Box::new(|omega: &MultiIndex, y: &[f64]| match omega.order() % 4 {
            0 => y[0].sin(),
            1 => y[0].cos(),
            2 => -y[0].sin(),
            _ => -y[0].cos(),
        }),
        inner: Box::new(|mu: &MultiIndex, x: &[f64]| {
            vec![match mu.order() {
                0 => x[0].powi(3) + 0.5 * x[0],
                1 => 3.0 * x[0] * x[0] + 0.5,
                2 => 6.0 * x[0],
                3 => 6.0,
                _ => 0.0,
            }]
        }),
        box_half: 0.5,
    });

    // two inner components in two variables: g(u, v) = u v^2 + cos(u)
    cases.push(CompositeCase {
        name: "poly_pair",
        n: 2,
        m: 2,
        outer: Box::new(|omega: &MultiIndex, y: &[f64]| {
            let (a, b) = (omega.get(0), omega.get(1));
            let (u, v) = (y[0], y[1]);
            let poly = match (a, b) {
                (0, 0) => u * v * v,
                (1, 0) => v * v,
                (0, 1) => 2.0 * u * v,
                (1, 1) => 2.0 * v,
                (0, 2) => 2.0 * u,
                (1, 2) => 2.0,
                _ => 0.0,
            };
            let trig = if b == 0 {
                match a % 4 {
                    0 => u.cos(),
                    1 => -u.sin(),
                    2 => -u.cos(),
                    _ => u.sin(),
                }
            } else {
                0.0
            };
            poly + trig
        }),
        inner: Box::new(|mu: &MultiIndex, x: &[f64]| {
            let (p, q) = (mu.get(0), mu.get(1));
            // g1 = x^2 + y, g2 = x y
            let g1 = match (p, q) {
                (0, 0) => x[0] * x[0] + x[1],
                (1, 0) => 2.0 * x[0],
                (2, 0) => 2.0,
                (0, 1) => 1.0,
                _ => 0.0,
            };
            let g2 = match (p, q) {
                (0, 0) => x[0] * x[1],
                (1, 0) => x[1],
                (0, 1) => x[0],
                (1, 1) => 1.0,
                _ => 0.0,
            };
            vec![g1, g2]
        }),
        box_half: 0.4,
    });

    // three inner components in three variables
    cases.push(CompositeCase {
        name: "triple",
        n: 3,
        m: 3,
        outer: Box::new(|omega: &MultiIndex, y: &[f64]| {
            // g(u, v, w) = u v w + u^2
            let (a, b, c) = (omega.get(0), omega.get(1), omega.get(2));
            match (a, b, c) {
                (0, 0, 0) => y[0] * y[1] * y[2] + y[0] * y[0],
                (1, 0, 0) => y[1] * y[2] + 2.0 * y[0],
                (0, 1, 0) => y[0] * y[2],
                (0, 0, 1) => y[0] * y[1],
                (1, 1, 0) => y[2],
                (1, 0, 1) => y[1],
                (0, 1, 1) => y[0],
                (1, 1, 1) => 1.0,
                (2, 0, 0) => 2.0,
                _ => 0.0,
            }
        }),
        inner: Box::new(|mu: &MultiIndex, x: &[f64]| {
            let c = mu.components();
            // g1 = x + 2y + 3 z^2, g2 = x y z, g3 = sin(x) + cos(y) + z
            let g1 = match (c[0], c[1], c[2]) {
                (0, 0, 0) => x[0] + 2.0 * x[1] + 3.0 * x[2] * x[2],
                (1, 0, 0) => 1.0,
                (0, 1, 0) => 2.0,
                (0, 0, 1) => 6.0 * x[2],
                (0, 0, 2) => 6.0,
                _ => 0.0,
            };
            let g2 = match (c[0], c[1], c[2]) {
                (0, 0, 0) => x[0] * x[1] * x[2],
                (1, 0, 0) => x[1] * x[2],
                (0, 1, 0) => x[0] * x[2],
                (0, 0, 1) => x[0] * x[1],
                (1, 1, 0) => x[2],
                (1, 0, 1) => x[1],
                (0, 1, 1) => x[0],
                (1, 1, 1) => 1.0,
                _ => 0.0,
            };
            let g3 = {
                let sx = if c[1] == 0 && c[2] == 0 {
                    match c[0] % 4 {
                        0 => x[0].sin(),
                        1 => x[0].cos(),
                        2 => -x[0].sin(),
                        _ => -x[0].cos(),
                    }
                } else {
                    0.0
                };
                let cy = if c[0] == 0 && c[2] == 0 {
                    match c[1] % 4 {
                        0 => x[1].cos(),
                        1 => -x[1].sin(),
                        2 => -x[1].cos(),
                        _ => x[1].sin(),
                    }
                } else {
                    0.0
                };
                let z = match (c[0], c[1], c[2]) {
                    (0, 0, 0) => x[2],
                    (0, 0, 1) => 1.0,
                    _ => 0.0,
                };
                match mu.order() {
                    0 => sx + cy + z,
                    _ => {
                        (if c[1] == 0 && c[2] == 0 && c[0] > 0 { sx } else { 0.0 })
                            + (if c[0] == 0 && c[2] == 0 && c[1] > 0 { cy } else { 0.0 })
                            + (if (c[0], c[1], c[2]) == (0, 0, 1) { 1.0 } else { 0.0 })
                    }
                }
            };
            vec![g1, g2, g3]
        }),
        box_half: 0.35,
    });

    cases
}

#[derive(Clone, Debug, Serialize)]
pub struct FdbCaseReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: String,
    pub points: usize,
    pub indices: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdbCheckReport {
    pub max_rel_err: f64,
    pub cases: Vec<FdbCaseReport>,
    pub seed: u64,
    pub max_order: u32,
    pub points_per_case: usize,
}

/// Runs the suite: every |nu| <= max_order at `points` seeded random base
/// points per case, comparing the chain-rule engine against the
/// finite-difference oracle. Relative error uses max(|a|, |b|, 1).
pub fn run_fdb_check(seed: u64, max_order: u32, points: usize) -> Result<FdbCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases_out = Vec::new();
    let mut global = 0.0f64;
    for case in builtin_suite() {
        let mut worst = 0.0f64;
        let mut worst_idx = String::new();
        let mut n_indices = 0;
        for _ in 0..points {
            let x: Vec<f64> = (0..case.n)
                .map(|_| rng.gen_range(-case.box_half..case.box_half))
                .collect();
            let (outer, inner) = case.tables(&x, max_order);
            for nu in indices_with_order_range(case.n, 1, max_order) {
                n_indices += 1;
                let exact = faa_di_bruno(&outer, &inner, &nu)?;
                let fd = oracle_partial(&|p: &[f64]| case.composite(p), &x, &nu, 1.0);
                let rel = (exact - fd).abs() / exact.abs().max(fd.abs()).max(1.0);
                if rel > worst {
                    worst = rel;
                    worst_idx = format!("{nu:?}");
                }
            }
        }
        global = global.max(worst);
        cases_out.push(FdbCaseReport {
            name: case.name.to_string(),
            max_rel_err: worst,
            worst_index: worst_idx,
            points,
            indices: n_indices,
        });
    }
    Ok(FdbCheckReport {
        max_rel_err: global,
        cases: cases_out,
        seed,
        max_order,
        points_per_case: points,
    })
}
