//! Uniform time grids and local cubic interpolation shared by trajectories,
//! history segments, and manifold charts.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub t0: f64,
    pub h: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(t0: f64, h: f64, len: usize) -> Self {
        assert!(h > 0.0 && len >= 2);
        UniformGrid { t0, h, len }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + self.h * i as f64
    }

    pub fn t_end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-9 * self.h;
        t >= self.t0 - slack && t <= self.t_end() + slack
    }

    /// Fractional index of t.
    pub fn frac_index(&self, t: f64) -> f64 {
        (t - self.t0) / self.h
    }

    /// Nearest node index if t lies on the grid to within 1e-9 h.
    pub fn aligned_index(&self, t: f64) -> Option<usize> {
        let f = self.frac_index(t);
        let r = f.round();
        if (f - r).abs() <= 1e-9 && r >= 0.0 && (r as usize) < self.len {
            Some(r as usize)
        } else {
            None
        }
    }
}

/// 4-point Lagrange interpolation of a grid function at fractional index
/// `fi`, with the stencil clamped at the ends. `read(i, out)` loads node i.
pub fn interp4_into<F>(len: usize, fi: f64, dim: usize, read: F, out: &mut [f64])
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert!(len >= 2);
    let i = fi.floor() as isize;
    // exact node hit: avoid smearing across corners
    if (fi - fi.round()).abs() <= 1e-9 {
        let idx = (fi.round() as isize).clamp(0, len as isize - 1) as usize;
        read(idx, out);
        return;
    }
    if len < 4 {
        // linear fallback for very short grids
        let i0 = i.clamp(0, len as isize - 2) as usize;
        let s = fi - i0 as f64;
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        read(i0, &mut a);
        read(i0 + 1, &mut b);
        for c in 0..dim {
            out[c] = (1.0 - s) * a[c] + s * b[c];
        }
        return;
    }
    let i0 = (i - 1).clamp(0, len as isize - 4) as usize;
    let s = fi - i0 as f64;
    let mut w = [0.0f64; 4];
    for (j, wj) in w.iter_mut().enumerate() {
        let mut v = 1.0;
        for l in 0..4 {
            if l != j {
                v *= (s - l as f64) / (j as f64 - l as f64);
            }
        }
        *wj = v;
    }
    out.iter_mut().for_each(|c| *c = 0.0);
    let mut node = vec![0.0; dim];
    for (j, &wj) in w.iter().enumerate() {
        read(i0 + j, &mut node);
        for c in 0..dim {
            out[c] += wj * node[c];
        }
    }
}
