#![allow(clippy::needless_range_loop)]

//! Cut-off modification of a right-hand side: replaces f outside a ball so
//! that global Lipschitz and derivative bounds hold while f is preserved
//! exactly on the ball of radius kappa. The smooth transition chi is the
//! standard bump built from e^{-1/u}, flat at both junctions, with
//! sup |chi'| = 2 attained at the midpoint of (1, 2).

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::multiindex::{
    faa_di_bruno, factorial, indices_with_order_range, DerivativeTable, MultiIndex,
};
use crate::problem::Rhs;

const JET_ORDER: usize = 10;

/// Coefficient lists of the polynomials P_q with sigma^(q)(u) = sigma(u) P_q(1/u),
/// sigma(u) = e^{-1/u}, via P_{q+1} = x^2 (P_q - P_q').
fn sigma_polys() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for _ in 0..JET_ORDER {
            let p = polys.last().unwrap();
            // q(x) = p(x) - p'(x)
            let mut q = p.clone();
            for i in 1..p.len() {
                q[i - 1] -= i as f64 * p[i];
            }
            // multiply by x^2
            let mut next = vec![0.0; q.len() + 2];
            for (i, &c) in q.iter().enumerate() {
                next[i + 2] = c;
            }
            polys.push(next);
        }
        polys
    })
}

/// Derivative values sigma^(0..order)(u) for sigma(u) = e^{-1/u} (u > 0),
/// identically 0 for u <= 0 (all derivatives vanish in the limit).
fn sigma_jet(u: f64, order: usize) -> Vec<f64> {
    if u <= 0.0 {
        return vec![0.0; order + 1];
    }
    let s = (-1.0 / u).exp();
    let x = 1.0 / u;
    sigma_polys()[..=order]
        .iter()
        .map(|p| {
            let mut v = 0.0;
            for &c in p.iter().rev() {
                v = v * x + c;
            }
            s * v
        })
        .collect()
}

/// Division of truncated Taylor series given as derivative-value jets.
fn jet_div(a: &[f64], b: &[f64]) -> Vec<f64> {
    let q = a.len() - 1;
    let ac: Vec<f64> = a.iter().enumerate().map(|(i, v)| v / factorial(i as u32) as f64).collect();
    let bc: Vec<f64> = b.iter().enumerate().map(|(i, v)| v / factorial(i as u32) as f64).collect();
    let mut cc = vec![0.0; q + 1];
    for k in 0..=q {
        let mut s = ac[k];
        for i in 1..=k {
            s -= bc[i] * cc[k - i];
        }
        cc[k] = s / bc[0];
    }
    cc.iter()
        .enumerate()
        .map(|(i, v)| v * factorial(i as u32) as f64)
        .collect()
}

/// chi(u): 1 on [0, 1], the smooth transition q(u - 1) on (1, 2), 0 on [2, inf).
pub fn chi(u: f64) -> f64 {
    chi_jet(u, 0)[0]
}

/// Derivative values chi^(0..order)(u).
pub fn chi_jet(u: f64, order: usize) -> Vec<f64> {
    assert!(order < JET_ORDER);
    let mut out = vec![0.0; order + 1];
    if u <= 1.0 {
        out[0] = 1.0;
        return out;
    }
    if u >= 2.0 {
        return out;
    }
    let v = u - 1.0;
    // numerator sigma(1 - v): d^i/dv^i = (-1)^i sigma^(i)(1 - v)
    let sa = sigma_jet(1.0 - v, order);
    let a: Vec<f64> = sa
        .iter()
        .enumerate()
        .map(|(i, &x)| if i % 2 == 0 { x } else { -x })
        .collect();
    let b = sigma_jet(v, order);
    let den: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    jet_div(&a, &den)
}

/// The cut-off modification of a field: evaluates the inner field at the
/// radially scaled arguments chi(max(|y|, |z|)/kappa) * (y, z). Derivatives
/// are composed through the higher-order chain rule; near a generic point the
/// scale depends smoothly on the single max-attaining coordinate.
pub struct CutoffRhs {
    inner: Arc<dyn Rhs>,
    kappa: f64,
    lipschitz_cache: OnceLock<f64>,
}

pub fn cutoff_modify(rhs: Arc<dyn Rhs>, kappa: f64) -> Arc<CutoffRhs> {
    assert!(kappa > 0.0);
    Arc::new(CutoffRhs {
        inner: rhs,
        kappa,
        lipschitz_cache: OnceLock::new(),
    })
}

impl CutoffRhs {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn inner(&self) -> &Arc<dyn Rhs> {
        &self.inner
    }

    fn scale(&self, y: &[f64], z: &[f64]) -> f64 {
        let u = y
            .iter()
            .chain(z.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        chi(u / self.kappa)
    }
}

impl Rhs for CutoffRhs {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_into(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        let s = self.scale(y, z);
        if s == 1.0 {
            self.inner.eval_into(t, y, z, out);
            return;
        }
        let ys: Vec<f64> = y.iter().map(|v| s * v).collect();
        let zs: Vec<f64> = z.iter().map(|v| s * v).collect();
        self.inner.eval_into(t, &ys, &zs, out);
    }

    fn partial(&self, mu: &MultiIndex, y: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        let n = self.inner.dim();
        let width = 2 * n;
        debug_assert_eq!(mu.len(), width);
        let w: Vec<f64> = y.iter().chain(z.iter()).copied().collect();
        let u = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let order = mu.order() as usize;

        if u <= self.kappa {
            // chi is flat at 1 here, so the composition is the identity
            return self.inner.partial(mu, y, z);
        }
        if order == 0 {
            return Some(self.eval(0.0, y, z));
        }
        if u >= 2.0 * self.kappa {
            // the scaled argument is frozen at 0
            return Some(vec![0.0; n]);
        }

        // locally the scale depends on the single max-attaining coordinate
        let istar = (0..width)
            .max_by(|&a, &b| w[a].abs().partial_cmp(&w[b].abs()).unwrap())
            .unwrap();
        let sign = w[istar].signum();
        let raw = chi_jet(u / self.kappa, order);
        // c_q = d^q/dv^q chi(|v|/kappa) at v = w_istar
        let c: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(q, &d)| d * (sign / self.kappa).powi(q as i32))
            .collect();
        let s = c[0];

        // inner table: G_i(w) = s(w) w_i, supported on slots {i, istar}
        let mut inner_table = DerivativeTable::new(width);
        for alpha in indices_with_order_range(width, 1, order as u32) {
            let mut row = vec![0.0; width];
            let a_star = alpha.get(istar);
            for (i, ri) in row.iter_mut().enumerate() {
                // alpha must be supported on {i, istar}
                let mut ok = true;
                for (j, &aj) in alpha.components().iter().enumerate() {
                    if aj > 0 && j != i && j != istar {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                if i == istar {
                    // univariate (c(v) v)^{(q)} = q c^{(q-1)} + v c^{(q)}
                    let q = a_star as usize;
                    debug_assert_eq!(alpha.order(), a_star);
                    *ri = q as f64 * c[q - 1] + w[istar] * c[q];
                } else {
                    let ai = alpha.get(i);
                    let q = a_star as usize;
                    *ri = match ai {
                        0 => w[i] * c[q],
                        1 => c[q],
                        _ => 0.0,
                    };
                }
            }
            inner_table.insert(alpha, row);
        }

        // outer tables: partials of f at the scaled point
        let ys: Vec<f64> = y.iter().map(|v| s * v).collect();
        let zs: Vec<f64> = z.iter().map(|v| s * v).collect();
        let mut outers: Vec<DerivativeTable> = (0..n).map(|_| DerivativeTable::new(1)).collect();
        for omega in indices_with_order_range(width, 1, order as u32) {
            let vals = self.inner.partial(&omega, &ys, &zs)?;
            for (c, table) in outers.iter_mut().enumerate() {
                table.insert_scalar(omega.clone(), vals[c]);
            }
        }

        let mut out = Vec::with_capacity(n);
        for table in &outers {
            out.push(faa_di_bruno(table, &inner_table, mu).ok()?);
        }
        Some(out)
    }

    fn lipschitz(&self) -> f64 {
        *self
            .lipschitz_cache
            .get_or_init(|| sampled_derivative_bound(self, 1, 2.05 * self.kappa, 4000, 0x5eed))
    }
}

/// Conservative bound on |D^j f| over the closed max-norm ball of the given
/// radius, by sampling the stacked-variable partials and summing the
/// multinomial expansion max_c sum_{|mu|=j} (j!/mu!) |D^mu f_c|; exact for
/// j = 1, an upper bound for j >= 2. Inflated by 10%.
pub fn sampled_derivative_bound(
    rhs: &dyn Rhs,
    j: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = rhs.dim();
    let width = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ j as u64);
    let indices: Vec<MultiIndex> = indices_with_order_range(width, j as u32, j as u32);
    let coefs: Vec<f64> = indices
        .iter()
        .map(|mu| factorial(j as u32) as f64 / mu.factorial() as f64)
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let w: Vec<f64> = (0..width).map(|_| rng.gen_range(-radius..radius)).collect();
        let (y, z) = w.split_at(n);
        let mut per_comp = vec![0.0f64; n];
        let mut missing = false;
        for (mu, &coef) in indices.iter().zip(&coefs) {
            match rhs.partial(mu, y, z) {
                Some(vals) => {
                    for (acc, v) in per_comp.iter_mut().zip(&vals) {
                        *acc += coef * v.abs();
                    }
                }
                None => {
                    missing = true;
                    break;
                }
            }
        }
        if missing {
            continue;
        }
        worst = worst.max(per_comp.iter().fold(0.0f64, |m, &v| m.max(v)));
    }
    worst * 1.1
}
