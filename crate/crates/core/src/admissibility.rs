#![allow(clippy::needless_range_loop)]

//! Smallness-hypothesis checking and the constant schedules that certify the
//! fixed-point constructions: the scalar bracketing function H, the
//! contraction rate kappa, the admissible delay bound delta, and the
//! beta/epsilon ladders with their derivative-bound constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::{
    factorial, indices_with_order_range, partitions_multivariate, MultiIndex,
};

/// Absolute residual target for the bracketing root solves.
pub const ROOT_TOL: f64 = 1e-12;
const MAX_BISECT: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    H1,
    H2,
}

/// Input constants for the smallness hypotheses.
///
/// `m0` bounds the inhomogeneity: |F(t,0)| <= m0 e^{lambda |t|} under H1,
/// |f(0,0)| under H2. `mj[j-1]` is M_j for j = 1..k+1 (derivative bounds up
/// to order k plus the order-k Lipschitz constant). `dim` is the state
/// dimension n; it enters only the order-(k+1) Lipschitz constant of the
/// delay-parameterized construction, which stacks the state twice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisParams {
    pub hypothesis: Hypothesis,
    pub m: f64,
    pub m0: f64,
    pub mj: Vec<f64>,
    pub k: usize,
    pub r0: f64,
    pub d: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    1
}

impl HypothesisParams {
    /// M_j for j in 1..=k+1.
    pub fn m_j(&self, j: usize) -> f64 {
        self.mj[j - 1]
    }

    pub fn m_ceiling(&self) -> f64 {
        match self.hypothesis {
            Hypothesis::H1 => 1.0,
            Hypothesis::H2 => 1.0 / (2.0 * 3f64.powi(self.k as i32)),
        }
    }
}

/// Machine-readable infeasibility reasons. Each failed condition maps to one
/// distinct code; nothing is clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "code")]
pub enum Reason {
    MOutOfRange { m: f64, ceiling: f64 },
    MjNotPositive { j: usize },
    R0NotPositive,
    DTooSmall { d: f64, required: f64 },
    CeilingExceeded { m1_r0: f64, limit: f64 },
    XStarOutsideInterval { x_star: f64, lo: f64, hi: f64 },
    KappaNotContracting { kappa: f64 },
    ExponentialConditionFailed { value: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum XStarPolicy {
    /// Midpoint of (x1(r0), ceiling): maximizes margin against both failure modes.
    Auto,
    Fixed(f64),
}

/// Everything derived from a parameter set: bracketing roots, contraction
/// rate, admissible delay bound, and the beta/epsilon ladders. Fields that
/// require earlier conditions to hold are None when those conditions fail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub hypothesis: Hypothesis,
    pub x0: Option<f64>,
    pub h_max: Option<f64>,
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub ceiling: Option<f64>,
    pub x_star: Option<f64>,
    /// Decay rate at the admissible ceiling: lambda = x*/delta. Runs with a
    /// specific delay r <= delta use x*/r.
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    pub delta_beta: Option<f64>,
    pub delta_eps: Option<f64>,
    /// beta_0..beta_{k+1}: the xi-derivative bound ladder.
    pub beta: Option<Vec<f64>>,
    /// epsilon_0..epsilon_{k+1} (H2 only).
    pub eps: Option<Vec<f64>>,
    /// delta_1..delta_{k+1} of the epsilon schedule (H2 only).
    pub delta_js: Option<Vec<f64>>,
    pub feasible: bool,
    pub reasons: Vec<Reason>,
    pub params: HypothesisParams,
}

impl AdmissibilityReport {
    /// lambda for a specific run delay r (r * lambda = x*).
    pub fn lambda_for(&self, r: f64) -> Option<f64> {
        self.x_star.map(|xs| xs / r)
    }

    pub fn betas(&self) -> &[f64] {
        self.beta.as_deref().unwrap_or(&[])
    }
}

/// H(x) = x e^{-x} - M x.
pub fn h_eval(x: f64, m: f64) -> f64 {
    x * (-x).exp() - m * x
}

fn h_prime(x: f64, m: f64) -> f64 {
    (1.0 - x) * (-x).exp() - m
}

/// The unique positive zero x0 of H' in (0, 1), to absolute 1e-12.
/// H'(0) = 1 - M > 0 and H'(1) = -M < 0 bracket it for 0 < M < 1.
pub fn critical_point(m: f64) -> Result<f64> {
    if !(0.0 < m && m < 1.0) {
        return Err(Error::OutOfRange(format!("critical_point needs 0 < M < 1, got {m}")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        if h_prime(mid, m) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn bisect_h(m: f64, value: f64, mut lo: f64, mut hi: f64, increasing: bool) -> f64 {
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let f = h_eval(mid, m) - value;
        if f.abs() <= ROOT_TOL * 0.1 {
            return mid;
        }
        let go_right = if increasing { f < 0.0 } else { f > 0.0 };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The two positive roots x1 < x0 < x2 of H(x) = M1 r, with x2 < -ln M.
/// Tangency (M1 r = H(x0)) is reported as the degenerate pair (x0, x0);
/// M1 r > H(x0) is an infeasibility error carrying H(x0).
pub fn root_interval(m: f64, m1: f64, r: f64) -> Result<(f64, f64)> {
    if !(0.0 < m && m < 1.0) {
        return Err(Error::OutOfRange(format!("root_interval needs 0 < M < 1, got {m}")));
    }
    let value = m1 * r;
    if value <= 0.0 {
        return Err(Error::OutOfRange("root_interval needs M1 r > 0".into()));
    }
    let x0 = critical_point(m)?;
    let h_max = h_eval(x0, m);
    if value > h_max + ROOT_TOL {
        return Err(Error::Infeasible {
            reason: format!("M1 r = {value} exceeds max H = {h_max}"),
            limit: h_max,
        });
    }
    if (value - h_max).abs() <= ROOT_TOL {
        return Ok((x0, x0));
    }
    let x1 = bisect_h(m, value, 0.0, x0, true);
    let x2 = bisect_h(m, value, x0, -m.ln(), false);
    Ok((x1, x2))
}

/// Checks the full hypothesis chain with the default geometric beta ladder.
pub fn check_hypotheses(p: &HypothesisParams, x_star: XStarPolicy) -> Result<AdmissibilityReport> {
    check_hypotheses_with(p, x_star, &BetaPolicy::Geometric)
}

/// Checks the full hypothesis chain and populates the report: M range, the
/// M1 r0 ceiling, x* membership, the contraction rate kappa, the exponential
/// condition, and the beta (and, for H2, epsilon) schedules.
pub fn check_hypotheses_with(
    p: &HypothesisParams,
    x_star: XStarPolicy,
    policy: &BetaPolicy,
) -> Result<AdmissibilityReport> {
    if p.mj.len() != p.k + 1 {
        return Err(Error::DimensionMismatch {
            expected: p.k + 1,
            got: p.mj.len(),
        });
    }
    let mut reasons = Vec::new();
    let mut report = AdmissibilityReport {
        hypothesis: p.hypothesis,
        x0: None,
        h_max: None,
        x1: None,
        x2: None,
        ceiling: None,
        x_star: None,
        lambda: None,
        kappa: None,
        delta: None,
        delta_beta: None,
        delta_eps: None,
        beta: None,
        eps: None,
        delta_js: None,
        feasible: false,
        reasons: Vec::new(),
        params: p.clone(),
    };

    let m_ceiling = p.m_ceiling();
    if !(p.m > 0.0 && p.m < m_ceiling) {
        reasons.push(Reason::MOutOfRange {
            m: p.m,
            ceiling: m_ceiling,
        });
    }
    for (i, &mj) in p.mj.iter().enumerate() {
        if mj <= 0.0 {
            reasons.push(Reason::MjNotPositive { j: i + 1 });
        }
    }
    if p.r0 <= 0.0 {
        reasons.push(Reason::R0NotPositive);
    }
    let d_floor = match p.hypothesis {
        Hypothesis::H1 => 0.0,
        // the exterior chart of the delay-parameterized construction needs d > 1
        Hypothesis::H2 => 1.0,
    };
    if p.d <= d_floor {
        reasons.push(Reason::DTooSmall {
            d: p.d,
            required: d_floor,
        });
    }
    if !reasons.is_empty() {
        report.reasons = reasons;
        return Ok(report);
    }

    let x0 = critical_point(p.m)?;
    let h_max = h_eval(x0, p.m);
    report.x0 = Some(x0);
    report.h_max = Some(h_max);

    let log_arg = match p.hypothesis {
        Hypothesis::H1 => p.m,
        Hypothesis::H2 => 2.0 * 3f64.powi(p.k as i32) * p.m,
    };
    let ceiling = -log_arg.ln() / (p.k as f64 + 1.0);
    report.ceiling = Some(ceiling);

    let m1r0 = p.m_j(1) * p.r0;
    let h_ceiling = h_eval(ceiling, p.m);
    if !(m1r0 > 0.0 && m1r0 < h_ceiling) {
        reasons.push(Reason::CeilingExceeded {
            m1_r0: m1r0,
            limit: h_ceiling,
        });
        report.reasons = reasons;
        return Ok(report);
    }

    let (x1, x2) = root_interval(p.m, p.m_j(1), p.r0)?;
    report.x1 = Some(x1);
    report.x2 = Some(x2);

    let xs = match x_star {
        XStarPolicy::Auto => 0.5 * (x1 + ceiling),
        XStarPolicy::Fixed(v) => v,
    };
    report.x_star = Some(xs);
    if !(x1 < xs && xs < ceiling) {
        reasons.push(Reason::XStarOutsideInterval {
            x_star: xs,
            lo: x1,
            hi: ceiling,
        });
        report.reasons = reasons;
        return Ok(report);
    }

    let kappa = contraction_rate(p, xs);
    report.kappa = Some(kappa);
    if kappa >= 1.0 {
        reasons.push(Reason::KappaNotContracting { kappa });
    }
    let exp_cond = log_arg * ((p.k as f64 + 1.0) * xs).exp();
    if exp_cond >= 1.0 {
        reasons.push(Reason::ExponentialConditionFailed { value: exp_cond });
    }
    if !reasons.is_empty() {
        report.reasons = reasons;
        return Ok(report);
    }

    let beta = beta_schedule(p, xs, policy)?;
    report.delta_beta = Some(beta.delta);
    report.beta = Some(beta.betas.clone());
    let mut delta = beta.delta;

    if p.hypothesis == Hypothesis::H2 {
        let eps = epsilon_schedule(p, xs)?;
        delta = delta.min(eps.delta);
        report.delta_eps = Some(eps.delta);
        report.eps = Some(eps.eps);
        report.delta_js = Some(eps.delta_js);
    }

    report.delta = Some(delta);
    report.lambda = Some(xs / delta);
    report.feasible = true;
    Ok(report)
}

/// kappa = (M x* e^{x*} + M1 r0 e^{x*}) / x*, the weighted-norm contraction
/// rate of both fixed-point operators.
pub fn contraction_rate(p: &HypothesisParams, x_star: f64) -> f64 {
    (p.m * x_star * x_star.exp() + p.m_j(1) * p.r0 * x_star.exp()) / x_star
}

/// A_m for 2 <= m <= k: the order-m derivative constant
/// (m-1)! e^{m x*} sum_j M_j sum_{p(m,j)} prod_i beta_i^{w_i} / (w_i! (i!)^{w_i}),
/// with the exponential evaluated at its supremum r*lambda = x*.
pub fn a_m_constant(m: usize, betas: &[f64], p: &HypothesisParams, x_star: f64) -> Result<f64> {
    if m < 2 || m > p.k {
        return Err(Error::OutOfRange(format!("a_m_constant needs 2 <= m <= k, got m={m}")));
    }
    if betas.len() < m + 1 {
        return Err(Error::DimensionMismatch {
            expected: m + 1,
            got: betas.len(),
        });
    }
    let mut sum = 0.0;
    for j in 1..=m {
        let mut part = 0.0;
        for w in crate::multiindex::partitions_univariate(m as u32, j as u32)? {
            let mut prod = 1.0;
            for (i, &wi) in w.iter().enumerate() {
                if wi == 0 {
                    continue;
                }
                let i1 = (i + 1) as u32;
                prod *= betas[i + 1].powi(wi as i32)
                    / (factorial(wi) as f64 * (factorial(i1) as f64).powi(wi as i32));
            }
            part += prod;
        }
        sum += p.m_j(j) * part;
    }
    Ok(factorial(m as u32 - 1) as f64 * ((m as f64) * x_star).exp() * sum)
}

/// A_{k+1} = (A^1_{k+1} + A^2_{k+1}) / (k+1): the Lipschitz constant of the
/// order-k derivative of the integral operator, with the conventions
/// w_0 = w_{k+1} = 0.
pub fn a_k1_constant(betas: &[f64], p: &HypothesisParams, x_star: f64) -> Result<f64> {
    let k = p.k;
    if betas.len() < k + 2 {
        return Err(Error::DimensionMismatch {
            expected: k + 2,
            got: betas.len(),
        });
    }
    let expo = ((k as f64 + 1.0) * x_star).exp();
    let kfac = factorial(k as u32) as f64;

    // beta-product over positions i with the w_0 = w_{k+1} = 0 convention;
    // positions are 1-based part sizes, w has length k.
    let weight = |i: usize, wi: u32| -> f64 {
        if wi == 0 {
            return 1.0;
        }
        betas[i].powi(wi as i32)
            / (factorial(wi) as f64 * (factorial(i as u32) as f64).powi(wi as i32))
    };

    let mut a1 = 0.0;
    for m in 1..=k {
        let mut part = 0.0;
        for w in crate::multiindex::partitions_univariate(k as u32, m as u32)? {
            let mut prod = 1.0;
            for (idx, &wi) in w.iter().enumerate() {
                prod *= weight(idx + 1, wi);
            }
            part += prod;
        }
        a1 += p.m_j(m + 1) * part;
    }
    a1 *= betas[1] * expo * kfac;

    let mut a2 = 0.0;
    for m in 1..=k {
        let mut part = 0.0;
        for w in crate::multiindex::partitions_univariate(k as u32, m as u32)? {
            for j in 1..=k {
                let wj = w[j - 1];
                if wj == 0 {
                    continue;
                }
                let head = wj as f64 * betas[j + 1] * betas[j].powi(wj as i32 - 1)
                    / (factorial(wj) as f64 * (factorial(j as u32) as f64).powi(wj as i32));
                let mut prod = 1.0;
                for i in 0..j {
                    let wi = if i == 0 { 0 } else { w[i - 1] };
                    prod *= weight(i, wi);
                }
                for i in (j + 1)..=(k + 1) {
                    let wi = if i == k + 1 { 0 } else { w[i - 1] };
                    prod *= weight(i, wi);
                }
                part += head * prod;
            }
        }
        a2 += p.m_j(m) * part;
    }
    a2 *= expo * kfac;

    Ok((a1 + a2) / (k as f64 + 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BetaPolicy {
    /// beta_m = beta_1^m for m >= 2. Any positive choice is admissible
    /// because delta adapts; the geometric ladder keeps A_m well-scaled.
    Geometric,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct BetaSchedule {
    /// beta_0..beta_{k+1}.
    pub betas: Vec<f64>,
    pub delta: f64,
    /// A_2..A_{k+1} used in the delta minimum.
    pub a_constants: Vec<f64>,
}

/// The beta ladder: beta_1 at the displayed lower bound, beta_0 the smallest
/// value closing the self-map inequality, beta_2..beta_{k+1} by policy,
/// and delta = min{r0, x*(1 - M e^{m x*}) beta_m / A_m}.
pub fn beta_schedule(p: &HypothesisParams, x_star: f64, policy: &BetaPolicy) -> Result<BetaSchedule> {
    let kappa = contraction_rate(p, x_star);
    let denom = x_star - p.m * x_star * x_star.exp() - p.m_j(1) * p.r0 * x_star.exp();
    if denom <= 0.0 {
        return Err(Error::Internal(format!(
            "beta_1 denominator {denom} <= 0 although kappa = {kappa}"
        )));
    }
    let beta1 = x_star / denom;
    let beta0 = (p.d + p.m0 * p.r0 / x_star) / (1.0 - kappa);

    let mut betas = vec![beta0, beta1];
    match policy {
        BetaPolicy::Geometric => {
            for m in 2..=(p.k + 1) {
                betas.push(beta1.powi(m as i32));
            }
        }
        BetaPolicy::Explicit(tail) => {
            if tail.len() != p.k {
                return Err(Error::DimensionMismatch {
                    expected: p.k,
                    got: tail.len(),
                });
            }
            for &b in tail {
                if b <= 0.0 {
                    return Err(Error::OutOfRange("explicit beta entries must be positive".into()));
                }
                betas.push(b);
            }
        }
    }

    let mut delta = p.r0;
    let mut a_constants = Vec::new();
    for m in 2..=(p.k + 1) {
        let a_m = if m <= p.k {
            a_m_constant(m, &betas, p, x_star)?
        } else {
            a_k1_constant(&betas, p, x_star)?
        };
        a_constants.push(a_m);
        if a_m > 0.0 {
            let cap = x_star * (1.0 - p.m * ((m as f64) * x_star).exp()) * betas[m] / a_m;
            delta = delta.min(cap);
        }
    }
    if delta <= 0.0 {
        return Err(Error::Internal(format!("delta = {delta} <= 0")));
    }
    Ok(BetaSchedule {
        betas,
        delta,
        a_constants,
    })
}

/// S_nu = 2^{nu_2} e^{|nu| x*} for a length-2 index in the (t, r) slots.
pub fn s_nu(nu: &MultiIndex, x_star: f64) -> f64 {
    debug_assert_eq!(nu.len(), 2);
    2f64.powi(nu.get(1) as i32) * ((nu.order() as f64) * x_star).exp()
}

/// T_nu: the mixed (t, r)-derivative bound of the composed right-hand side,
/// assembled over the 2-dimensional partition sets with weights
/// eps_{|l_j|}^{k_{j1}} (eps_{|l_j|} S_{l_j})^{k_{j2}}.
pub fn t_nu(nu: &MultiIndex, eps: &[f64], p: &HypothesisParams, x_star: f64) -> Result<f64> {
    if nu.len() != 2 {
        return Err(Error::LengthMismatch(nu.len(), 2));
    }
    let order = nu.order();
    if order < 1 {
        return Err(Error::OutOfRange("t_nu needs |nu| >= 1".into()));
    }
    if eps.len() < order as usize + 1 {
        return Err(Error::DimensionMismatch {
            expected: order as usize + 1,
            got: eps.len(),
        });
    }
    let nu_fact = nu.factorial() as f64;
    let mut total = 0.0;
    for omega in indices_with_order_range(2, 1, order) {
        let m_w = p.m_j(omega.order() as usize);
        let tuples = partitions_multivariate(nu, &omega)?;
        let mut sum = 0.0;
        for t in tuples.iter() {
            let mut prod = 1.0;
            for (k, l) in t.ks.iter().zip(&t.ls) {
                let e = eps[l.order() as usize];
                let s = s_nu(l, x_star);
                let den = k.factorial() as f64 * (l.factorial() as f64).powi(k.order() as i32);
                prod *= e.powi(k.get(0) as i32) * (e * s).powi(k.get(1) as i32) / den;
            }
            sum += prod;
        }
        total += m_w * nu_fact * sum;
    }
    Ok(total)
}

/// T_{(0,k+1)}: the Lipschitz constant of the order-k pure-r derivative of
/// the composed right-hand side. The component-level expansion stacks the
/// n-vector state twice, so omega and the k_j run over 2n slots while the
/// l_j stay in the two (t, r) slots; conventions k_{j,0} = k_{j,2n+1} = 0 and
/// k_0 = k_{s+1} = 0.
pub fn t_0k1_constant(eps: &[f64], p: &HypothesisParams, x_star: f64) -> Result<f64> {
    let k = p.k;
    if eps.len() < k + 2 {
        return Err(Error::DimensionMismatch {
            expected: k + 2,
            got: eps.len(),
        });
    }
    let width = 2 * p.dim;
    let nu = MultiIndex::new(vec![0, k as u32]);
    let kfac = factorial(k as u32) as f64;

    let es = |l: &MultiIndex| -> f64 { eps[l.order() as usize] * s_nu(l, x_star) };
    let factor = |kj: &MultiIndex, lj: &MultiIndex| -> f64 {
        es(lj).powi(kj.order() as i32)
            / (kj.factorial() as f64 * (lj.factorial() as f64).powi(kj.order() as i32))
    };

    let mut first = 0.0;
    let mut second = 0.0;
    for omega in indices_with_order_range(width, 1, k as u32) {
        let q = omega.order() as usize;
        let tuples = partitions_multivariate(&nu, &omega)?;
        if tuples.is_empty() {
            continue;
        }
        let mut sum1 = 0.0;
        let mut sum2 = 0.0;
        for t in tuples.iter() {
            let mut prod = 1.0;
            for (kj, lj) in t.ks.iter().zip(&t.ls) {
                prod *= factor(kj, lj);
            }
            sum1 += prod;

            // J_s: replace position j by K_j / ((k_j!)(l_j!)^{|k_j|});
            // the k_0 / k_{s+1} boundary factors are identically 1.
            let mut js = 0.0;
            for j in 0..t.s() {
                let (kj, lj) = (&t.ks[j], &t.ls[j]);
                let esl = es(lj);
                let s_shift = s_nu(&MultiIndex::new(vec![lj.get(0), lj.get(1) + 1]), x_star);
                let mut kj_sum = 0.0;
                for i in 0..width {
                    let kji = kj.get(i);
                    if kji == 0 {
                        continue;
                    }
                    // remaining exponents at the other slots of position j
                    let rest = kj.order() - kji;
                    kj_sum += kji as f64
                        * eps[lj.order() as usize + 1]
                        * s_shift
                        * esl.powi(kji as i32 - 1)
                        * esl.powi(rest as i32);
                }
                let den = kj.factorial() as f64 * (lj.factorial() as f64).powi(kj.order() as i32);
                let mut others = 1.0;
                for (i, (ki, li)) in t.ks.iter().zip(&t.ls).enumerate() {
                    if i != j {
                        others *= factor(ki, li);
                    }
                }
                js += kj_sum / den * others;
            }
            sum2 += js;
        }
        first += p.m_j(q + 1) * sum1;
        second += p.m_j(q) * sum2;
    }
    let s01 = s_nu(&MultiIndex::new(vec![0, 1]), x_star);
    Ok(kfac * (eps[1] * s01 * first + second))
}

#[derive(Clone, Debug)]
pub struct EpsilonSchedule {
    /// eps_0..eps_{k+1}.
    pub eps: Vec<f64>,
    /// delta_1..delta_{k+1}.
    pub delta_js: Vec<f64>,
    pub delta: f64,
    /// The three positivity factors (order-1, orders 2..k, order k+1).
    pub positivity: Vec<f64>,
}

/// Positivity factor 1 - M sum_{nu_1=0}^{q} q! S_nu / (nu_1! nu_2!) for
/// mixed order q (shift = 0), or the shifted variant with S_{(nu_1, nu_2+1)}
/// (shift = 1) used at the Lipschitz level.
fn positivity_factor(p: &HypothesisParams, x_star: f64, q: usize, shift: u32) -> f64 {
    let qf = factorial(q as u32) as f64;
    let mut sum = 0.0;
    for nu1 in 0..=q {
        let nu2 = q - nu1;
        let s = s_nu(
            &MultiIndex::new(vec![nu1 as u32, nu2 as u32 + shift]),
            x_star,
        );
        sum += qf * s / (factorial(nu1 as u32) as f64 * factorial(nu2 as u32) as f64);
    }
    1.0 - p.m * sum
}

/// The epsilon/delta ladder of the delay-smoothness construction, taking all
/// displayed inequalities with equality to produce the least-conservative
/// delta = min{r0, delta_1, ..., delta_{k+1}}.
pub fn epsilon_schedule(p: &HypothesisParams, x_star: f64) -> Result<EpsilonSchedule> {
    let k = p.k;
    let kappa = contraction_rate(p, x_star);
    if kappa >= 1.0 {
        return Err(Error::Internal(format!("epsilon schedule with kappa = {kappa} >= 1")));
    }
    let f00 = p.m0;
    let eps0 = (p.d + f00 * p.r0 / (std::f64::consts::E * x_star)) / (1.0 - kappa);

    let mut eps = vec![eps0];
    let mut delta_js = Vec::new();
    let mut positivity = Vec::new();

    // order 1
    let p1 = 1.0 - p.m * x_star.exp() - p.m * s_nu(&MultiIndex::new(vec![0, 1]), x_star);
    positivity.push(p1);
    if p1 <= 0.0 {
        return Err(Error::Infeasible {
            reason: "order-1 positivity factor non-positive".into(),
            limit: p1,
        });
    }
    let eps1 = 2.0 * (p.m_j(1) * x_star.exp() * eps0 + f00) / p1;
    eps.push(eps1);
    let t01 = t_nu(&MultiIndex::new(vec![0, 1]), &eps, p, x_star)?;
    delta_js.push(p1 * eps1 * x_star / (2.0 * t01));

    // orders 2..k
    for q in 2..=k {
        let pq = positivity_factor(p, x_star, q, 0);
        positivity.push(pq);
        if pq <= 0.0 {
            return Err(Error::Infeasible {
                reason: format!("order-{q} positivity factor non-positive"),
                limit: pq,
            });
        }
        let qf = factorial(q as u32) as f64;
        let mut rhs = 0.0;
        for nu1 in 1..=q {
            let nu2 = q - nu1;
            let t = t_nu(
                &MultiIndex::new(vec![nu1 as u32 - 1, nu2 as u32]),
                &eps,
                p,
                x_star,
            )?;
            rhs += qf * t / (factorial(nu1 as u32) as f64 * factorial(nu2 as u32) as f64);
        }
        rhs *= 2.0;
        let eps_q = rhs / pq;
        eps.push(eps_q);
        let t0q = t_nu(&MultiIndex::new(vec![0, q as u32]), &eps, p, x_star)?;
        delta_js.push(pq * eps_q * (q as f64) * x_star / (2.0 * t0q));
    }

    // order k+1 (Lipschitz level)
    let pk1 = positivity_factor(p, x_star, k, 1);
    positivity.push(pk1);
    if pk1 <= 0.0 {
        return Err(Error::Infeasible {
            reason: "order-(k+1) positivity factor non-positive".into(),
            limit: pk1,
        });
    }
    let kf = factorial(k as u32) as f64;
    let mut rhs = 0.0;
    for nu1 in 1..=k {
        let nu2 = k - nu1;
        let t_a = t_nu(&MultiIndex::new(vec![nu1 as u32, nu2 as u32]), &eps, p, x_star)?;
        let t_b = t_nu(
            &MultiIndex::new(vec![nu1 as u32 - 1, nu2 as u32 + 1]),
            &eps,
            p,
            x_star,
        )?;
        rhs += kf * (t_a + t_b) / (factorial(nu1 as u32) as f64 * factorial(nu2 as u32) as f64);
    }
    rhs = 2.0 * rhs + 2.0 * t_nu(&MultiIndex::new(vec![0, k as u32]), &eps, p, x_star)?;
    let eps_k1 = rhs / pk1;
    eps.push(eps_k1);
    let t0k1 = t_0k1_constant(&eps, p, x_star)?;
    delta_js.push(pk1 * eps_k1 * (k as f64 + 1.0) * x_star / (2.0 * t0k1));

    let mut delta = p.r0;
    for &dj in &delta_js {
        delta = delta.min(dj);
    }
    if delta <= 0.0 {
        return Err(Error::Internal(format!("epsilon schedule delta = {delta} <= 0")));
    }
    Ok(EpsilonSchedule {
        eps,
        delta_js,
        delta,
        positivity,
    })
}

/// One re-evaluated inequality: `lhs <= rhs` up to floating slack.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn cert(name: String, lhs: f64, rhs: f64) -> Certificate {
    let slack = 1e-9 * rhs.abs().max(1.0);
    Certificate {
        name,
        lhs,
        rhs,
        holds: lhs <= rhs + slack,
    }
}

/// Direct re-evaluation of the self-map inequalities behind the beta
/// schedule: the beta_0 and beta_1 closures and, for each m = 2..k+1 and
/// every admissible r (worst case r = delta), the order-m closure.
pub fn beta_certificates(p: &HypothesisParams, x_star: f64, schedule: &BetaSchedule) -> Vec<Certificate> {
    let kappa = contraction_rate(p, x_star);
    let b = &schedule.betas;
    let mut out = Vec::new();
    out.push(cert(
        "d + M0 r0/x* + kappa beta0 <= beta0".into(),
        p.d + p.m0 * p.r0 / x_star + kappa * b[0],
        b[0],
    ));
    out.push(cert("1 + kappa beta1 <= beta1".into(), 1.0 + kappa * b[1], b[1]));
    for m in 2..=(p.k + 1) {
        let a_m = schedule.a_constants[m - 2];
        out.push(cert(
            format!("M beta{m} e^{{{m}x*}} + A{m} delta/x* <= beta{m}"),
            p.m * b[m] * ((m as f64) * x_star).exp() + a_m * schedule.delta / x_star,
            b[m],
        ));
    }
    out
}

/// Direct re-evaluation of the self-map bounds behind the epsilon schedule:
/// the weighted-norm closure at every derivative order 0..k+1, assembled
/// from the mixed-derivative bounds and the multilinear-norm expansion, at
/// the worst admissible delay r = delta.
pub fn epsilon_certificates(
    p: &HypothesisParams,
    x_star: f64,
    schedule: &EpsilonSchedule,
) -> Result<Vec<Certificate>> {
    let k = p.k;
    let eps = &schedule.eps;
    let delta = schedule.delta;
    let kappa = contraction_rate(p, x_star);
    let f00 = p.m0;
    let mut out = Vec::new();

    // order 0
    out.push(cert(
        "d + kappa eps0 + |f(0,0)| delta/(e x*) <= eps0".into(),
        p.d + kappa * eps[0] + f00 * delta / (std::f64::consts::E * x_star),
        eps[0],
    ));
    // order 1: |D F(x)| <= |d/dt| + |d/dr| bound
    let dt = p.m * x_star.exp() * eps[1] + p.m_j(1) * x_star.exp() * eps[0] + f00;
    let s01 = s_nu(&MultiIndex::new(vec![0, 1]), x_star);
    let t01 = t_nu(&MultiIndex::new(vec![0, 1]), eps, p, x_star)?;
    let dr = p.m * s01 * eps[1] + t01 * delta / x_star;
    out.push(cert("order-1 multilinear bound <= eps1".into(), dt + dr, eps[1]));

    // orders 2..k: sum over nu_1 + nu_2 = q of q!/(nu1! nu2!) * mixed bound
    for q in 2..=k {
        let qf = factorial(q as u32) as f64;
        let mut lhs = 0.0;
        for nu1 in 0..=q {
            let nu2 = q - nu1;
            let coef = qf / (factorial(nu1 as u32) as f64 * factorial(nu2 as u32) as f64);
            let s = s_nu(&MultiIndex::new(vec![nu1 as u32, nu2 as u32]), x_star);
            let mixed = if nu1 == 0 {
                let t0q = t_nu(&MultiIndex::new(vec![0, q as u32]), eps, p, x_star)?;
                p.m * s * eps[q] + t0q * delta / (q as f64 * x_star)
            } else {
                let t = t_nu(
                    &MultiIndex::new(vec![nu1 as u32 - 1, nu2 as u32]),
                    eps,
                    p,
                    x_star,
                )?;
                p.m * s * eps[q] + t
            };
            lhs += coef * mixed;
        }
        out.push(cert(format!("order-{q} multilinear bound <= eps{q}"), lhs, eps[q]));
    }

    // order k+1 (Lipschitz level)
    let kf = factorial(k as u32) as f64;
    let mut lhs = 0.0;
    for nu1 in 0..=k {
        let nu2 = k - nu1;
        let coef = kf / (factorial(nu1 as u32) as f64 * factorial(nu2 as u32) as f64);
        let s = s_nu(&MultiIndex::new(vec![nu1 as u32, nu2 as u32 + 1]), x_star);
        let mixed = if nu1 == 0 {
            let t0k1 = t_0k1_constant(eps, p, x_star)?;
            let t0k = t_nu(&MultiIndex::new(vec![0, k as u32]), eps, p, x_star)?;
            p.m * s * eps[k + 1] + t0k1 * delta / ((k as f64 + 1.0) * x_star) + t0k
        } else {
            let t_a = t_nu(&MultiIndex::new(vec![nu1 as u32, nu2 as u32]), eps, p, x_star)?;
            let t_b = t_nu(
                &MultiIndex::new(vec![nu1 as u32 - 1, nu2 as u32 + 1]),
                eps,
                p,
                x_star,
            )?;
            p.m * s * eps[k + 1] + t_a + t_b
        };
        lhs += coef * mixed;
    }
    out.push(cert(
        format!("order-{} Lipschitz multilinear bound <= eps{}", k + 1, k + 1),
        lhs,
        eps[k + 1],
    ));

    for (i, &pf) in schedule.positivity.iter().enumerate() {
        out.push(Certificate {
            name: format!("positivity factor #{i} > 0"),
            lhs: 0.0,
            rhs: pf,
            holds: pf > 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1_example() -> HypothesisParams {
        HypothesisParams {
            hypothesis: Hypothesis::H1,
            m: 0.1,
            m0: 1.0,
            mj: vec![1.0, 1.0],
            k: 1,
            r0: 0.2,
            d: 1.0,
            dim: 1,
        }
    }

    #[test]
    fn h_eval_values() {
        assert_eq!(h_eval(0.0, 0.3), 0.0);
        let m: f64 = 0.37;
        assert!(h_eval(-m.ln(), m).abs() < 1e-15);
        let v = h_eval(0.5, 0.1);
        assert!((v - (0.5 * (-0.5f64).exp() - 0.05)).abs() < 1e-15);
        assert!((v - 0.253265).abs() < 1e-6);
    }

    #[test]
    fn critical_point_constructed() {
        // M chosen so H'(0.5) = 0 exactly
        let m = 0.5 * (-0.5f64).exp();
        let x0 = critical_point(m).unwrap();
        assert!((x0 - 0.5).abs() < 1e-12);
        // residual check for a generic M
        let x0 = critical_point(0.1).unwrap();
        assert!(h_prime(x0, 0.1).abs() < 1e-12);
        assert!((x0 - 0.7815207694300065).abs() < 1e-9);
        // M -> 1 forces x0 -> 0
        let x0 = critical_point(0.999).unwrap();
        assert!(x0 > 0.0 && x0 < 0.01);
        assert!(critical_point(1.0).is_err());
    }

    #[test]
    fn root_interval_brackets() {
        let (m, m1, r) = (0.1, 1.0, 0.2);
        let x0 = critical_point(m).unwrap();
        let (x1, x2) = root_interval(m, m1, r).unwrap();
        assert!(0.0 < x1 && x1 < x0 && x0 < x2 && x2 < -m.ln());
        assert!((h_eval(x1, m) - 0.2).abs() <= 1e-12);
        assert!((h_eval(x2, m) - 0.2).abs() <= 1e-12);
        assert!((x1 - 0.31906760104067816).abs() < 1e-9);
        assert!((x2 - 1.426110074594592).abs() < 1e-9);

        // tangency: M1 r = H(x0) reported as the double root
        let hmax = h_eval(x0, m);
        let (a, b) = root_interval(m, 1.0, hmax).unwrap();
        assert_eq!(a, b);
        assert!((a - x0).abs() < 1e-9);

        // above the max: infeasible with the limit attached
        let err = root_interval(m, 1.0, hmax * 1.01).unwrap_err();
        match err {
            Error::Infeasible { limit, .. } => assert!((limit - hmax).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn root_interval_monotone_in_value() {
        let m = 0.25;
        let x0 = critical_point(m).unwrap();
        let hmax = h_eval(x0, m);
        let mut last = (0.0, -m.ln());
        for i in 1..20 {
            let v = hmax * (i as f64) / 20.0;
            let (x1, x2) = root_interval(m, 1.0, v).unwrap();
            assert!(x1 >= last.0 - 1e-12 && x2 <= last.1 + 1e-12, "i = {i}");
            last = (x1, x2);
        }
    }

    #[test]
    fn worked_h1_example_feasible() {
        let p = h1_example();
        let rep = check_hypotheses(&p, XStarPolicy::Fixed(0.5)).unwrap();
        assert!(rep.feasible, "{:?}", rep.reasons);
        let ceiling = rep.ceiling.unwrap();
        assert!((ceiling - (-(0.1f64).ln() / 2.0)).abs() < 1e-12);
        assert!((h_eval(ceiling, 0.1) - 0.249).abs() < 1e-3);
        let kappa = rep.kappa.unwrap();
        assert!((kappa - (0.5f64.exp() * 0.25 / 0.5)).abs() < 1e-12);
        assert!((kappa - 0.824).abs() < 1e-3);
        // exponential condition value
        assert!(0.1 * (2.0f64 * 0.5).exp() < 1.0);
        // beta_1 from the worked example
        let betas = rep.beta.as_ref().unwrap();
        let expect_b1 = 0.5 / (0.5 - 0.5 * 0.1 * 0.5f64.exp() - 0.2 * 0.5f64.exp());
        assert!((betas[1] - expect_b1).abs() < 1e-12);
        assert!(betas[1] > 0.0);
        assert!(rep.delta.unwrap() <= p.r0);
    }

    #[test]
    fn infeasible_reason_codes() {
        let mut p = h1_example();
        p.m = 1.0;
        let rep = check_hypotheses(&p, XStarPolicy::Auto).unwrap();
        assert!(!rep.feasible);
        assert!(matches!(rep.reasons[0], Reason::MOutOfRange { .. }));

        // H2 boundary M = 1/(2*3^k) excluded by the strict inequality
        let p = HypothesisParams {
            hypothesis: Hypothesis::H2,
            m: 1.0 / 18.0,
            m0: 0.0,
            mj: vec![1.0, 1.0, 1.0],
            k: 2,
            r0: 0.01,
            d: 1.5,
            dim: 1,
        };
        let rep = check_hypotheses(&p, XStarPolicy::Auto).unwrap();
        assert!(!rep.feasible);
        assert!(matches!(rep.reasons[0], Reason::MOutOfRange { .. }));
    }

    #[test]
    fn a2_matches_hand_expansion() {
        // A_2 = 1! e^{2x*} (M1 beta2/2 + M2 beta1^2/2)
        let mut p = h1_example();
        p.k = 2;
        p.mj = vec![1.0, 2.0, 1.5];
        let xs = 0.4;
        let betas = vec![3.0, 1.5, 2.0, 0.7];
        let a2 = a_m_constant(2, &betas, &p, xs).unwrap();
        let expect = (2.0f64 * xs).exp() * (1.0 * 2.0 / 2.0 + 2.0 * 1.5 * 1.5 / 2.0);
        assert!((a2 - expect).abs() < 1e-12 * expect);
        // all beta = 0 gives 0
        let zeros = vec![0.0; 4];
        assert_eq!(a_m_constant(2, &zeros, &p, xs).unwrap(), 0.0);
    }

    #[test]
    fn a3_matches_symbolic_expansion() {
        // p(3,1) = {(0,0,1)}, p(3,2) = {(1,1,0)}, p(3,3) = {(3,0,0)}
        // A_3 = 2! e^{3x*} [ M1 b3/6 + M2 b1 b2 / 2 + M3 b1^3/6 ]
        let p = HypothesisParams {
            hypothesis: Hypothesis::H1,
            m: 0.1,
            m0: 0.0,
            mj: vec![1.3, 0.7, 2.1, 0.9],
            k: 3,
            r0: 0.05,
            d: 1.0,
            dim: 1,
        };
        let xs = 0.3;
        let b = vec![1.0, 1.9, 0.8, 1.1, 0.5];
        let a3 = a_m_constant(3, &b, &p, xs).unwrap();
        let expect = 2.0
            * (3.0f64 * xs).exp()
            * (1.3 * b[3] / 6.0 + 0.7 * b[1] * b[2] / 2.0 + 2.1 * b[1].powi(3) / 6.0);
        assert!((a3 - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn a_k1_matches_hand_expansion_k1() {
        // k = 1: A^1_2 = beta1 e^{2x*} M2 beta1, A^2_2 = e^{2x*} M1 beta2
        let p = h1_example();
        let xs = 0.5;
        let b = vec![2.0, 1.4, 0.9];
        let a = a_k1_constant(&b, &p, xs).unwrap();
        let e2 = (2.0f64 * xs).exp();
        let expect = (b[1] * e2 * p.m_j(2) * b[1] + e2 * p.m_j(1) * b[2]) / 2.0;
        assert!((a - expect).abs() < 1e-12 * expect);
        let zeros = vec![0.0; 3];
        assert_eq!(a_k1_constant(&zeros, &p, xs).unwrap(), 0.0);
    }

    #[test]
    fn a_k1_matches_bruteforce_k2() {
        // brute force over p(2,m): p(2,1) = {(0,1)}, p(2,2) = {(2,0)}
        let p = HypothesisParams {
            hypothesis: Hypothesis::H1,
            m: 0.05,
            m0: 0.0,
            mj: vec![1.1, 0.6, 1.7],
            k: 2,
            r0: 0.05,
            d: 1.0,
            dim: 1,
        };
        let xs = 0.25;
        let b = vec![1.0, 1.3, 0.8, 0.55];
        let e3 = (3.0f64 * xs).exp();
        // A^1_3 = b1 e^{3x*} 2! [ M2 * b2/2 + M3 * b1^2/2 ]
        let a1 = b[1] * e3 * 2.0 * (p.m_j(2) * b[2] / 2.0 + p.m_j(3) * b[1] * b[1] / 2.0);
        // A^2_3 = e^{3x*} 2! [ M1 * (w=(0,1): j=2 term: b3*b2^0/(1!*(2!)^1)) ... ]
        // w = (0,1): only j=2 contributes: w2=1: 1*b3*b2^0/(1! * 2^1) = b3/2
        // w = (2,0): only j=1: w1=2: 2*b2*b1^1/(2! * 1) = b2 b1
        let a2 = e3 * 2.0 * (p.m_j(1) * (b[3] / 2.0) + p.m_j(2) * (b[2] * b[1]));
        let expect = (a1 + a2) / 3.0;
        let got = a_k1_constant(&b, &p, xs).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect, "got {got}, expect {expect}");
    }

    #[test]
    fn beta_schedule_closures_hold() {
        let p = h1_example();
        let rep = check_hypotheses(&p, XStarPolicy::Fixed(0.5)).unwrap();
        let xs = rep.x_star.unwrap();
        let sched = beta_schedule(&p, xs, &BetaPolicy::Geometric).unwrap();
        assert!(sched.delta > 0.0 && sched.delta <= p.r0);
        for c in beta_certificates(&p, xs, &sched) {
            assert!(c.holds, "{} : {} <= {}", c.name, c.lhs, c.rhs);
        }
    }

    #[test]
    fn beta_schedule_degenerate_limit() {
        // kappa -> 0: beta1 -> 1, beta0 -> d (take M, M1 tiny)
        let p = HypothesisParams {
            hypothesis: Hypothesis::H1,
            m: 1e-12,
            m0: 0.0,
            mj: vec![1e-12, 1.0],
            k: 1,
            r0: 1e-6,
            d: 2.0,
            dim: 1,
        };
        let sched = beta_schedule(&p, 0.5, &BetaPolicy::Geometric).unwrap();
        assert!((sched.betas[1] - 1.0).abs() < 1e-9);
        assert!((sched.betas[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn s_nu_values() {
        let xs = 0.7;
        assert!((s_nu(&MultiIndex::new(vec![1, 0]), xs) - xs.exp()).abs() < 1e-15);
        assert!((s_nu(&MultiIndex::new(vec![0, 1]), xs) - 2.0 * xs.exp()).abs() < 1e-15);
        assert_eq!(s_nu(&MultiIndex::new(vec![1, 2]), 0.0), 4.0);
    }

    fn h2_example() -> HypothesisParams {
        HypothesisParams {
            hypothesis: Hypothesis::H2,
            m: 1.0 / 40.0,
            m0: 0.025,
            mj: vec![1.0, 1.0, 1.0],
            k: 2,
            r0: 0.02,
            d: 1.5,
            dim: 1,
        }
    }

    #[test]
    fn t_nu_order_one_hand_expansion() {
        let p = h2_example();
        let xs = 0.2;
        let eps = vec![2.0, 0.7, 0.0, 0.0];
        // T_(1,0) = M1 (eps1 + eps1 S_(1,0))
        let t = t_nu(&MultiIndex::new(vec![1, 0]), &eps, &p, xs).unwrap();
        let expect = p.m_j(1) * (eps[1] + eps[1] * s_nu(&MultiIndex::new(vec![1, 0]), xs));
        assert!((t - expect).abs() < 1e-13);
        // T_(0,1) = M1 (eps1 + eps1 S_(0,1))
        let t = t_nu(&MultiIndex::new(vec![0, 1]), &eps, &p, xs).unwrap();
        let expect = p.m_j(1) * (eps[1] + eps[1] * s_nu(&MultiIndex::new(vec![0, 1]), xs));
        assert!((t - expect).abs() < 1e-13);
        // all eps = 0 -> 0
        let z = vec![0.0; 4];
        assert_eq!(t_nu(&MultiIndex::new(vec![0, 2]), &z, &p, xs).unwrap(), 0.0);
    }

    #[test]
    fn t_nu_order_two_bruteforce() {
        // nu = (0,2): enumerate the decomposition by hand.
        // omega with 1 <= |w| <= 2 over 2 slots; l-chains from {(0,1),(0,2)}.
        let p = h2_example();
        let xs = 0.15;
        let eps = vec![1.1, 0.8, 0.6, 0.0];
        let s = |a: u32, b: u32| s_nu(&MultiIndex::new(vec![a, b]), xs);
        let e = |q: usize| eps[q];
        // terms (nu! = 2):
        // |w|=1, s=1, l=(0,2), k=w: coeff 2/( 1 * (2)^1 ) = 1
        //   w=(1,0): e2 ; w=(0,1): e2 S02
        // |w|=2, s=1, l=(0,1), k=w (|k|=2): coeff 2/li: k=(2,0): 2/(2*1)=1 -> e1^2
        //   k=(1,1): 2/(1*1)=2 -> e1*(e1 S01); k=(0,2): 2/2=1 -> (e1 S01)^2
        let m1 = p.m_j(1);
        let m2 = p.m_j(2);
        let expect = m1 * (e(2) + e(2) * s(0, 2))
            + m2 * (e(1) * e(1) + 2.0 * e(1) * (e(1) * s(0, 1)) + (e(1) * s(0, 1)).powi(2));
        let got = t_nu(&MultiIndex::new(vec![0, 2]), &eps, &p, xs).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect, "got {got} expect {expect}");
    }

    #[test]
    fn t_0k1_zero_eps_and_scaling() {
        let p = h2_example();
        let xs = 0.15;
        let z = vec![0.0; 4];
        assert_eq!(t_0k1_constant(&z, &p, xs).unwrap(), 0.0);

        // scaling all eps by c > 0 scales T_{(0,k+1)} by a polynomial in c
        // with positive coefficients of degree <= k+1: check monotonicity
        let eps1: Vec<f64> = vec![1.0, 0.9, 0.7, 0.5];
        let eps2: Vec<f64> = eps1.iter().map(|&x| 2.0 * x).collect();
        let t1 = t_0k1_constant(&eps1, &p, xs).unwrap();
        let t2 = t_0k1_constant(&eps2, &p, xs).unwrap();
        assert!(t1 > 0.0 && t2 > t1);
        assert!(t2 <= 2f64.powi(p.k as i32 + 1) * t1 * (1.0 + 1e-12));
    }

    #[test]
    fn t_0k1_bruteforce_k2_n1() {
        // k = 2, n = 1: nu = (0,2), omega over 2 slots (2n = 2).
        // Enumerate p_s((0,2), w) by hand as in t_nu_order_two_bruteforce.
        let p = h2_example();
        let xs = 0.15;
        let eps = vec![1.1, 0.8, 0.6, 0.4];
        let s = |a: u32, b: u32| s_nu(&MultiIndex::new(vec![a, b]), xs);
        let es = |q: usize, a: u32, b: u32| eps[q] * s(a, b);

        // first sum: sum_w M_{|w|+1} eps1 S01 sum_{p_s} prod (es)^{|k|}/(k! l!^{|k|})
        // |w|=1: l=(0,2), |k|=1: weight es(2,0,2)/2 ... careful: the product
        //   factor is (eps_{|l|} S_l)^{|k|} / (k! (l!)^{|k|}): l=(0,2): l!=2
        //   -> es(2)^1 / (1 * 2) per w (two w's of order 1)
        // |w|=2: l=(0,1): k=w with |k|=2: k=(2,0) or (0,2): k!=2: es(1)^2/2
        //   k=(1,1): k!=1: es(1)^2
        let first = p.m_j(2) * eps[1] * s(0, 1) * (2.0 * (es(2, 0, 2) / 2.0))
            + p.m_j(3)
                * eps[1]
                * s(0, 1)
                * (2.0 * (es(1, 0, 1).powi(2) / 2.0) + es(1, 0, 1).powi(2));

        // second sum: sum_w M_{|w|} sum_{p_s} J_s, where for a single-position
        // tuple (s=1) J_1 = K_1/(k! l!^{|k|}) and
        // K_1 = sum_i k_i eps_{|l|+1} S_{(l1,l2+1)} (es_l)^{k_i-1} (es_l)^{|k|-k_i}
        // |w|=1, l=(0,2), k has one slot 1: K = eps3 S(0,3) (es2)^0 => /2
        // |w|=2, l=(0,1): k=(2,0)/(0,2): K = 2 eps2 S(0,2) es1 ; k! = 2
        //   k=(1,1): K = 1*eps2 S(0,2)*(es1)^0*(es1)^1 * 2 slots = 2 eps2 S02 es1; k! = 1
        let second = p.m_j(1) * (2.0 * (eps[3] * s(0, 3) / 2.0))
            + p.m_j(2)
                * (2.0 * (2.0 * eps[2] * s(0, 2) * es(1, 0, 1) / 2.0)
                    + 2.0 * eps[2] * s(0, 2) * es(1, 0, 1));

        let expect = 2.0 * (first + second);
        let got = t_0k1_constant(&eps, &p, xs).unwrap();
        assert!(
            (got - expect).abs() < 1e-12 * expect,
            "got {got} expect {expect}"
        );
    }

    #[test]
    fn epsilon_schedule_feasible_instance() {
        let p = h2_example();
        let rep = check_hypotheses(&p, XStarPolicy::Auto).unwrap();
        assert!(rep.feasible, "{:?}", rep.reasons);
        let xs = rep.x_star.unwrap();
        let sched = epsilon_schedule(&p, xs).unwrap();
        assert!(sched.delta > 0.0 && sched.delta <= p.r0);
        assert_eq!(sched.eps.len(), p.k + 2);
        for e in &sched.eps {
            assert!(e.is_finite() && *e >= 0.0);
        }
        for c in epsilon_certificates(&p, xs, &sched).unwrap() {
            assert!(c.holds, "{} : {} <= {}", c.name, c.lhs, c.rhs);
        }
        // d -> 0, f(0,0) = 0 forces eps0 -> 0 (H1-style degenerate check on
        // the formula itself)
        let mut p0 = p.clone();
        p0.d = 1.0 + 1e-12;
        p0.m0 = 0.0;
        let s0 = epsilon_schedule(&p0, xs).unwrap();
        assert!(s0.eps[0] < sched.eps[0]);
    }

    #[test]
    fn extreme_valid_inputs_stay_finite() {
        // constants remain finite and nonnegative across extreme-but-valid
        // parameter corners
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.gen_range(1..=3usize);
            let h2 = rng.gen_bool(0.5);
            let m_cap = if h2 { 1.0 / (2.0 * 3f64.powi(k as i32)) } else { 1.0 };
            let m = m_cap * rng.gen_range(0.001..0.999);
            let mj: Vec<f64> = (0..=k).map(|_| 10f64.powf(rng.gen_range(-3.0..2.0))).collect();
            let hypothesis = if h2 { Hypothesis::H2 } else { Hypothesis::H1 };
            let p = HypothesisParams {
                hypothesis,
                m,
                m0: 10f64.powf(rng.gen_range(-6.0..2.0)),
                mj,
                k,
                r0: 10f64.powf(rng.gen_range(-6.0..0.0)),
                d: rng.gen_range(1.01..50.0),
                dim: rng.gen_range(1..=2),
            };
            let rep = check_hypotheses(&p, XStarPolicy::Auto).unwrap();
            if !rep.feasible {
                continue;
            }
            for b in rep.beta.as_ref().unwrap() {
                assert!(b.is_finite() && *b >= 0.0, "beta {b}");
            }
            if let Some(eps) = rep.eps.as_ref() {
                for e in eps {
                    assert!(e.is_finite() && *e >= 0.0, "eps {e}");
                }
            }
            assert!(rep.delta.unwrap() > 0.0 && rep.delta.unwrap() <= p.r0);
            assert!(rep.kappa.unwrap().is_finite());
        }
    }

    #[test]
    fn kappa_matches_interval_test() {
        // kappa < 1 iff H(x*) > M1 r0, across random draws
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m: f64 = rng.gen_range(0.02..0.9);
            let m1: f64 = rng.gen_range(0.1..4.0);
            let x0 = critical_point(m).unwrap();
            let hmax = h_eval(x0, m);
            let r0 = rng.gen_range(0.05..0.95) * hmax / m1;
            let xs = rng.gen_range(0.01..-m.ln() * 0.99);
            let p = HypothesisParams {
                hypothesis: Hypothesis::H1,
                m,
                m0: 0.0,
                mj: vec![m1, 1.0],
                k: 1,
                r0,
                d: 1.0,
                dim: 1,
            };
            let kappa = contraction_rate(&p, xs);
            let interval = h_eval(xs, m) > m1 * r0;
            assert_eq!(kappa < 1.0, interval, "m={m} m1={m1} r0={r0} xs={xs}");
        }
    }
}
