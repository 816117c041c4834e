//! Built-in right-hand-side fields. Each carries an exact derivative oracle
//! in the stacked variables w = (y, z), which is what the constant schedules
//! and the cut-off composition need; an expression parser could not supply
//! exact higher-order partials.

use std::sync::Arc;

use crate::multiindex::MultiIndex;
use crate::problem::{Mat, Rhs};

/// f(y, z) = c.
pub struct ConstantField {
    c: Vec<f64>,
}

impl ConstantField {
    pub fn new(c: Vec<f64>) -> Self {
        ConstantField { c }
    }
}

impl Rhs for ConstantField {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn eval_into(&self, _t: f64, _y: &[f64], _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.c);
    }

    fn partial(&self, mu: &MultiIndex, _y: &[f64], _z: &[f64]) -> Option<Vec<f64>> {
        Some(if mu.order() == 0 {
            self.c.clone()
        } else {
            vec![0.0; self.c.len()]
        })
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// f(y, z) = B y + C z + k. Covers the linear-scalar and delayed-exponential
/// catalog entries as special cases.
pub struct AffineField {
    b: Mat,
    c: Mat,
    k: Vec<f64>,
}

impl AffineField {
    pub fn new(b: Mat, c: Mat, k: Vec<f64>) -> Self {
        assert_eq!(b.n, c.n);
        assert_eq!(b.n, k.len());
        AffineField { b, c, k }
    }

    /// f(y, z) = a y in one dimension.
    pub fn linear_scalar(a: f64) -> Self {
        AffineField::new(Mat::scalar(a), Mat::scalar(0.0), vec![0.0])
    }

    /// f(y, z) = -z in one dimension (the delayed exponential).
    pub fn delayed_exponential() -> Self {
        AffineField::new(Mat::scalar(0.0), Mat::scalar(-1.0), vec![0.0])
    }
}

impl Rhs for AffineField {
    fn dim(&self) -> usize {
        self.k.len()
    }

    fn eval_into(&self, _t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.k);
        self.b.matvec_acc(1.0, y, out);
        self.c.matvec_acc(1.0, z, out);
    }

    fn partial(&self, mu: &MultiIndex, y: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        let n = self.dim();
        debug_assert_eq!(mu.len(), 2 * n);
        match mu.order() {
            0 => Some(self.eval(0.0, y, z)),
            1 => {
                let slot = mu
                    .components()
                    .iter()
                    .position(|&c| c == 1)
                    .expect("order-1 index");
                let col = slot % n;
                let mat = if slot < n { &self.b } else { &self.c };
                Some((0..n).map(|i| mat.get(i, col)).collect())
            }
            _ => Some(vec![0.0; n]),
        }
    }

    fn lipschitz(&self) -> f64 {
        self.b.inf_norm().max(self.c.inf_norm())
    }
}

/// Pure time dependence F(t, x_t) = g(t); no derivative oracle in (y, z)
/// beyond the trivial zero at order >= 1.
pub struct TimeField<G> {
    dim: usize,
    g: G,
}

impl<G> TimeField<G>
where
    G: Fn(f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, g: G) -> Self {
        TimeField { dim, g }
    }
}

impl<G> Rhs for TimeField<G>
where
    G: Fn(f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, t: f64, _y: &[f64], _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.g)(t));
    }

    fn partial(&self, mu: &MultiIndex, _y: &[f64], _z: &[f64]) -> Option<Vec<f64>> {
        if mu.order() == 0 {
            None
        } else {
            Some(vec![0.0; self.dim])
        }
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// The planar neutral van der Pol right-hand side in the rescaled slow-fast
/// form:
///   f1(y) = y2 - (y1^2/2 + y1^3/3)
///   f2(z) = eps (b - z1)
/// Stacked variables w = (y1, y2, z1, z2); all partials are polynomial and
/// returned exactly.
pub struct VdpField {
    pub b: f64,
    pub eps: f64,
}

impl VdpField {
    pub fn new(b: f64, eps: f64) -> Self {
        VdpField { b, eps }
    }
}

impl Rhs for VdpField {
    fn dim(&self) -> usize {
        2
    }

    fn eval_into(&self, _t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = y[1] - (y[0] * y[0] / 2.0 + y[0] * y[0] * y[0] / 3.0);
        out[1] = self.eps * (self.b - z[0]);
    }

    fn partial(&self, mu: &MultiIndex, y: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        debug_assert_eq!(mu.len(), 4);
        let c = mu.components();
        let f1 = match (c[0], c[1], c[2], c[3]) {
            (0, 0, 0, 0) => y[1] - (y[0] * y[0] / 2.0 + y[0] * y[0] * y[0] / 3.0),
            (1, 0, 0, 0) => -(y[0] + y[0] * y[0]),
            (2, 0, 0, 0) => -(1.0 + 2.0 * y[0]),
            (3, 0, 0, 0) => -2.0,
            (0, 1, 0, 0) => 1.0,
            _ => 0.0,
        };
        let f2 = match (c[0], c[1], c[2], c[3]) {
            (0, 0, 0, 0) => self.eps * (self.b - z[0]),
            (0, 0, 1, 0) => -self.eps,
            _ => 0.0,
        };
        Some(vec![f1, f2])
    }

    fn lipschitz(&self) -> f64 {
        // unbounded globally; callers wrap in the cut-off before relying on it
        f64::INFINITY
    }
}

/// Builds the catalog entry selected by name with numeric parameters.
pub fn field_by_name(name: &str, params: &serde_json::Value) -> Option<Arc<dyn Rhs>> {
    let getf = |k: &str| params.get(k).and_then(|v| v.as_f64());
    match name {
        "constant" => {
            let v: Vec<f64> = params
                .get("value")?
                .as_array()?
                .iter()
                .filter_map(|x| x.as_f64())
                .collect();
            Some(Arc::new(ConstantField::new(v)))
        }
        "linear_scalar" => Some(Arc::new(AffineField::linear_scalar(getf("a")?))),
        "delayed_exponential" => Some(Arc::new(AffineField::delayed_exponential())),
        "affine" => {
            let read_mat = |k: &str| -> Option<Mat> {
                let rows: Vec<Vec<f64>> = params
                    .get(k)?
                    .as_array()?
                    .iter()
                    .map(|r| {
                        r.as_array()
                            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                    })
                    .collect::<Option<_>>()?;
                Some(Mat::from_rows(&rows))
            };
            let offset: Vec<f64> = params
                .get("offset")?
                .as_array()?
                .iter()
                .filter_map(|x| x.as_f64())
                .collect();
            Some(Arc::new(AffineField::new(
                read_mat("b")?,
                read_mat("c")?,
                offset,
            )))
        }
        "vdp" => Some(Arc::new(VdpField::new(getf("b")?, getf("eps")?))),
        _ => None,
    }
}
