//! Multi-index algebra, partition-set enumeration, and the multivariate
//! higher-order chain rule (Faa di Bruno) evaluation engine.
//!
//! Every derivative-bound constant in the library is assembled from the
//! partition sets enumerated here, so enumeration results are memoized and
//! combinatorial coefficients are computed in exact integer arithmetic
//! before conversion to `f64`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order supported by the enumeration machinery.
/// Desk-scale verification never needs more, and the cap protects against
/// accidental combinatorial blowup.
pub const MAX_ORDER: u32 = 8;

/// A tuple of nonnegative integers indexing a mixed partial derivative.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl std::fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl MultiIndex {
    pub fn new(components: Vec<u32>) -> Self {
        assert!(!components.is_empty(), "multi-index must have length >= 1");
        MultiIndex(components)
    }

    pub fn zeros(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// Unit index e_i.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut c = vec![0; n];
        c[i] = 1;
        MultiIndex(c)
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The order |nu| = sum of components.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// nu! = prod_i (nu_i!).
    pub fn factorial(&self) -> u128 {
        self.0.iter().map(|&c| factorial(c)).product()
    }

    /// x^nu = prod_i x_i^{nu_i}, with the 0^0 = 1 convention.
    pub fn pow(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&c, &v)| if c == 0 { 1.0 } else { v.powi(c as i32) })
            .product()
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }
}

pub fn factorial(n: u32) -> u128 {
    (1..=n as u128).product()
}

/// Strict order on multi-indices: mu < nu iff |mu| < |nu|, or the orders are
/// equal and mu precedes nu at the first differing component. Total on each
/// order class.
pub fn lex_prec(mu: &MultiIndex, nu: &MultiIndex) -> Result<bool> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch(mu.len(), nu.len()));
    }
    let (om, on) = (mu.order(), nu.order());
    if om != on {
        return Ok(om < on);
    }
    for (a, b) in mu.components().iter().zip(nu.components()) {
        if a != b {
            return Ok(a < b);
        }
    }
    Ok(false)
}

/// Univariate partition set p(m, j): all tuples (w_1..w_m) of nonnegative
/// integers with sum(w) = j and sum(i*w_i) = m. Returned in lexicographic
/// order for stable golden tests.
pub fn partitions_univariate(m: u32, j: u32) -> Result<Vec<Vec<u32>>> {
    if m > MAX_ORDER {
        return Err(Error::OrderTooHigh(m));
    }
    if j < 1 || j > m {
        return Err(Error::EmptyDomain(format!(
            "p(m,j) requires 1 <= j <= m, got m={m}, j={j}"
        )));
    }
    let mut out = Vec::new();
    let mut current = vec![0u32; m as usize];
    // fill position i (1-based part size i+1) with remaining sum/weight budget
    fn rec(i: usize, rem_count: u32, rem_weight: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        let m = current.len();
        if i == m {
            if rem_count == 0 && rem_weight == 0 {
                out.push(current.clone());
            }
            return;
        }
        let part = (i + 1) as u32;
        let max_by_weight = rem_weight / part;
        let max_w = rem_count.min(max_by_weight);
        for w in 0..=max_w {
            current[i] = w;
            rec(i + 1, rem_count - w, rem_weight - w * part, current, out);
        }
        current[i] = 0;
    }
    rec(0, j, m, &mut current, &mut out);
    out.sort();
    Ok(out)
}

/// One term of the multivariate partition decomposition: multiplicities
/// k_1..k_s paired with the strictly increasing chain l_1 < ... < l_s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionTuple {
    /// Multiplicity indices, same length as the omega that generated them.
    pub ks: Vec<MultiIndex>,
    /// Chain of derivative indices, same length as the nu that generated them.
    pub ls: Vec<MultiIndex>,
}

impl PartitionTuple {
    pub fn s(&self) -> usize {
        self.ks.len()
    }
}

type PartitionKey = (MultiIndex, MultiIndex);
type PartitionCache = Mutex<HashMap<PartitionKey, Arc<Vec<PartitionTuple>>>>;

fn partition_cache() -> &'static PartitionCache {
    static CACHE: OnceLock<PartitionCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// The complete multivariate partition sets p_s(nu, omega) for s = 1..|nu|,
/// flattened and ordered by (s, chain). Each tuple satisfies |k_j| > 0,
/// sum_j k_j = omega and sum_j |k_j| l_j = nu. Results are memoized.
pub fn partitions_multivariate(nu: &MultiIndex, omega: &MultiIndex) -> Result<Arc<Vec<PartitionTuple>>> {
    if nu.order() > MAX_ORDER {
        return Err(Error::OrderTooHigh(nu.order()));
    }
    if omega.order() < 1 {
        return Err(Error::EmptyDomain("partitions require |omega| >= 1".into()));
    }
    let key = (nu.clone(), omega.clone());
    if let Some(hit) = partition_cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let result = Arc::new(enumerate_partitions(nu, omega));
    partition_cache()
        .lock()
        .unwrap()
        .insert(key, result.clone());
    Ok(result)
}

/// Recursive descent over l-chains in lex_prec order. At each candidate l we
/// either skip it or attach a multiplicity k with |k| >= 1, consuming omega
/// and |k|*l of nu.
fn enumerate_partitions(nu: &MultiIndex, omega: &MultiIndex) -> Vec<PartitionTuple> {
    let n = nu.len();
    // Candidates: 0 <= l <= nu componentwise with |l| >= 1. Since every
    // |k_j| >= 1, any chain member must satisfy l <= nu.
    let mut cands: Vec<Vec<u32>> = Vec::new();
    let mut cur = vec![0u32; n];
    loop {
        if cur.iter().any(|&c| c > 0) {
            cands.push(cur.clone());
        }
        // odometer over the box [0, nu]
        let mut i = n;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if cur[i] < nu.get(i) {
                cur[i] += 1;
                for c in cur.iter_mut().skip(i + 1) {
                    *c = 0;
                }
                break;
            }
            if i == 0 {
                cur.clear();
                break;
            }
        }
        if cur.is_empty() {
            break;
        }
    }
    cands.sort_by(|a, b| {
        let (oa, ob) = (a.iter().sum::<u32>(), b.iter().sum::<u32>());
        oa.cmp(&ob).then_with(|| a.cmp(b))
    });

    let mut out: Vec<PartitionTuple> = Vec::new();
    let mut ks: Vec<MultiIndex> = Vec::new();
    let mut ls: Vec<MultiIndex> = Vec::new();

    fn k_candidates(rem_omega: &[u32], max_total_order: u32) -> Vec<Vec<u32>> {
        // all k with 0 < |k| <= max_total_order and k <= rem_omega
        let mut res = Vec::new();
        let m = rem_omega.len();
        let mut cur = vec![0u32; m];
        loop {
            let s: u32 = cur.iter().sum();
            if s >= 1 && s <= max_total_order {
                res.push(cur.clone());
            }
            let mut i = m;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if cur[i] < rem_omega[i] {
                    cur[i] += 1;
                    for c in cur.iter_mut().skip(i + 1) {
                        *c = 0;
                    }
                    break;
                }
                if i == 0 {
                    cur.clear();
                    break;
                }
            }
            if cur.is_empty() {
                break;
            }
        }
        res
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        idx: usize,
        cands: &[Vec<u32>],
        rem_nu: &mut Vec<i64>,
        rem_omega: &mut Vec<u32>,
        ks: &mut Vec<MultiIndex>,
        ls: &mut Vec<MultiIndex>,
        out: &mut Vec<PartitionTuple>,
    ) {
        let nu_left: i64 = rem_nu.iter().sum();
        let om_left: u32 = rem_omega.iter().sum();
        if nu_left == 0 && om_left == 0 {
            if !ks.is_empty() {
                out.push(PartitionTuple {
                    ks: ks.clone(),
                    ls: ls.clone(),
                });
            }
            return;
        }
        if idx == cands.len() || nu_left == 0 || om_left == 0 {
            return;
        }
        let l = &cands[idx];
        // skip this l
        rec(idx + 1, cands, rem_nu, rem_omega, ks, ls, out);
        // attach this l with some multiplicity k; |k| * l must fit in rem_nu
        if l.iter().zip(rem_nu.iter()).all(|(&lc, &rc)| lc as i64 <= rc) {
            let max_mult = l
                .iter()
                .zip(rem_nu.iter())
                .filter(|(&lc, _)| lc > 0)
                .map(|(&lc, &rc)| (rc / lc as i64) as u32)
                .min()
                .unwrap_or(0);
            if max_mult >= 1 {
                for k in k_candidates(rem_omega, max_mult) {
                    let kord: u32 = k.iter().sum();
                    for (rn, &lc) in rem_nu.iter_mut().zip(l.iter()) {
                        *rn -= kord as i64 * lc as i64;
                    }
                    for (ro, &kc) in rem_omega.iter_mut().zip(k.iter()) {
                        *ro -= kc;
                    }
                    ks.push(MultiIndex::new(k.clone()));
                    ls.push(MultiIndex::new(l.clone()));
                    rec(idx + 1, cands, rem_nu, rem_omega, ks, ls, out);
                    ls.pop();
                    ks.pop();
                    for (rn, &lc) in rem_nu.iter_mut().zip(l.iter()) {
                        *rn += kord as i64 * lc as i64;
                    }
                    for (ro, &kc) in rem_omega.iter_mut().zip(k.iter()) {
                        *ro += kc;
                    }
                }
            }
        }
    }

    let mut rem_nu: Vec<i64> = nu.components().iter().map(|&c| c as i64).collect();
    let mut rem_omega: Vec<u32> = omega.components().to_vec();
    rec(
        0,
        &cands,
        &mut rem_nu,
        &mut rem_omega,
        &mut ks,
        &mut ls,
        &mut out,
    );
    out.sort_by_key(|t| {
        (
            t.s(),
            t.ls.iter()
                .map(|l| l.components().to_vec())
                .collect::<Vec<_>>(),
            t.ks.iter()
                .map(|k| k.components().to_vec())
                .collect::<Vec<_>>(),
        )
    });
    out
}

/// Table of mixed partial derivatives keyed by multi-index. `width` is the
/// number of stored components per entry: 1 for a scalar-valued function,
/// m for the stacked inner functions of a composition.
#[derive(Clone, Debug)]
pub struct DerivativeTable {
    width: usize,
    entries: HashMap<MultiIndex, Vec<f64>>,
    max_order: u32,
}

impl DerivativeTable {
    pub fn new(width: usize) -> Self {
        DerivativeTable {
            width,
            entries: HashMap::new(),
            max_order: 0,
        }
    }

    pub fn insert(&mut self, index: MultiIndex, value: Vec<f64>) {
        assert_eq!(value.len(), self.width, "entry width mismatch");
        self.max_order = self.max_order.max(index.order());
        self.entries.insert(index, value);
    }

    pub fn insert_scalar(&mut self, index: MultiIndex, value: f64) {
        self.insert(index, vec![value]);
    }

    pub fn get(&self, index: &MultiIndex) -> Result<&[f64]> {
        self.entries
            .get(index)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingDerivative(index.clone()))
    }

    pub fn scalar(&self, index: &MultiIndex) -> Result<f64> {
        let v = self.get(index)?;
        Ok(v[0])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }
}

/// Exact rational coefficient nu! / (prod_j k_j! (l_j!)^{|k_j|}) reduced and
/// converted to f64. Exact below order ~20; we cap at MAX_ORDER anyway.
fn partition_coefficient(nu: &MultiIndex, tuple: &PartitionTuple) -> f64 {
    let mut num: u128 = nu.factorial();
    let mut den: u128 = 1;
    for (k, l) in tuple.ks.iter().zip(&tuple.ls) {
        den *= k.factorial();
        let lf = l.factorial();
        for _ in 0..k.order() {
            den *= lf;
        }
    }
    let g = gcd(num, den);
    num /= g;
    den /= g;
    num as f64 / den as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Multivariate Faa di Bruno: the mixed partial D^nu of the composition
/// h = g(g_1, ..., g_m) at the base point, assembled from `outer` (entries
/// g_omega, width 1, omega of length m) and `inner` (entries g^(i)_mu stacked
/// across i = 1..m, width m, mu of length n).
pub fn faa_di_bruno(outer: &DerivativeTable, inner: &DerivativeTable, nu: &MultiIndex) -> Result<f64> {
    if nu.order() > MAX_ORDER {
        return Err(Error::OrderTooHigh(nu.order()));
    }
    if nu.order() == 0 {
        return outer.scalar(&MultiIndex::zeros(inner.width()));
    }
    let m = inner.width();
    let mut total = 0.0;
    for omega in indices_with_order_range(m, 1, nu.order()) {
        let g_omega = outer.scalar(&omega)?;
        if g_omega == 0.0 {
            continue;
        }
        let tuples = partitions_multivariate(nu, &omega)?;
        let mut inner_sum = 0.0;
        for tuple in tuples.iter() {
            let coef = partition_coefficient(nu, tuple);
            let mut prod = 1.0;
            for (k, l) in tuple.ks.iter().zip(&tuple.ls) {
                let g_l = inner.get(l)?;
                prod *= k.pow(g_l);
            }
            inner_sum += coef * prod;
        }
        total += g_omega * inner_sum;
    }
    Ok(total)
}

/// All multi-indices of length n with lo <= order <= hi, in lex_prec order.
pub fn indices_with_order_range(n: usize, lo: u32, hi: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for q in lo..=hi {
        append_with_order(n, q, &mut out);
    }
    out
}

fn append_with_order(n: usize, q: u32, out: &mut Vec<MultiIndex>) {
    let mut cur = vec![0u32; n];
    fn rec(i: usize, rem: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        let n = cur.len();
        if i == n - 1 {
            cur[i] = rem;
            out.push(MultiIndex::new(cur.clone()));
            cur[i] = 0;
            return;
        }
        for v in 0..=rem {
            cur[i] = v;
            rec(i + 1, rem - v, cur, out);
            cur[i] = 0;
        }
    }
    rec(0, q, &mut cur, out);
}

/// The k-linear form D^k h(x)(xi_1, ..., xi_k) expanded over all n^k index
/// sequences: sum over (j_1..j_k) of D_{j_1}..D_{j_k} h * xi_{1,j_1} ... xi_{k,j_k}.
/// `partials` holds the order-k mixed partials of h (width 1, length-n indices).
pub fn dk_multilinear(partials: &DerivativeTable, directions: &[Vec<f64>]) -> Result<f64> {
    let k = directions.len();
    if k == 0 {
        return Err(Error::EmptyDomain("need at least one direction".into()));
    }
    if k as u32 > MAX_ORDER {
        return Err(Error::OrderTooHigh(k as u32));
    }
    let n = directions[0].len();
    for d in directions {
        if d.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: d.len(),
            });
        }
    }
    let mut total = 0.0;
    let mut seq = vec![0usize; k];
    loop {
        let mut mu = vec![0u32; n];
        let mut weight = 1.0;
        for (slot, &j) in seq.iter().enumerate() {
            mu[j] += 1;
            weight *= directions[slot][j];
        }
        if weight != 0.0 {
            total += partials.scalar(&MultiIndex::new(mu))? * weight;
        }
        // advance the sequence odometer
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            if seq[i] + 1 < n {
                seq[i] += 1;
                for s in seq.iter_mut().skip(i + 1) {
                    *s = 0;
                }
                break;
            }
            if i == 0 {
                return Ok(total);
            }
        }
    }
}
