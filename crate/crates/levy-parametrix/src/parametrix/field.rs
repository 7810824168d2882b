//! Kernel fields tabulated on a time grid and their time-space convolution.
//!
//! A field stores one mass-form matrix per grid time together with an
//! envelope exponent `p`, meaning that `F_t ≈ t^p Q_t` with `Q` slowly varying
//! in `ln t`. Off-grid times are interpolated cubically in `ln t` on `Q`, and
//! times before the first node follow the envelope. `head(σ)` returns
//! `∫_0^σ F_s ds` for `σ` below the first node.
//!
//! [`plan`] turns `(K ⋆ M)_t = ∫_0^t K_{t-s} M_s ds` into a short list of
//! products `c · K_a M_b`: the interval is split at `t/2`, each half is covered
//! by the grid nodes below `t/2` and integrated with weights that are exact for
//! `s^{p_M} (t-s)^{p_K}` times a piecewise linear function of `ln s`.

use std::borrow::Cow;

use ndarray::{Array1, Array2, ArrayView1};

use crate::quadrature::gl16;

/// Access to a kernel field at arbitrary times.
pub trait Field: Sync {
    fn exponent(&self) -> f64;
    fn at(&self, t: f64) -> Cow<'_, Array2<f64>>;
    /// `∫_0^σ F_s ds` for `σ` at most the first grid time.
    fn head(&self, sigma: f64) -> Cow<'_, Array2<f64>>;
}

#[derive(Debug, Clone)]
pub struct TimeField {
    times: Vec<f64>,
    mats: Vec<Array2<f64>>,
    exponent: f64,
    heads: Vec<(f64, Array2<f64>)>,
}

impl TimeField {
    pub fn new(times: Vec<f64>, mats: Vec<Array2<f64>>, exponent: f64, mut heads: Vec<(f64, Array2<f64>)>) -> Self {
        assert_eq!(times.len(), mats.len());
        assert!(!times.is_empty());
        heads.sort_by(|a, b| a.0.total_cmp(&b.0));
        TimeField { times, mats, exponent, heads }
    }

    /// A field that vanishes identically.
    pub fn zeros(times: Vec<f64>, n: usize, exponent: f64) -> Self {
        let mats = times.iter().map(|_| Array2::zeros((n, n))).collect();
        TimeField { times, mats, exponent, heads: Vec::new() }
    }

    /// True when every stored matrix is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.mats.iter().chain(self.heads.iter().map(|h| &h.1)).all(|m| m.iter().all(|&v| v == 0.0))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mats(&self) -> &[Array2<f64>] {
        &self.mats
    }

    pub fn mat(&self, k: usize) -> &Array2<f64> {
        &self.mats[k]
    }

    pub fn heads(&self) -> &[(f64, Array2<f64>)] {
        &self.heads
    }

    pub fn size(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn set_heads(&mut self, heads: Vec<(f64, Array2<f64>)>) {
        self.heads = heads;
        self.heads.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    /// `self += other` node by node, heads included.
    pub fn add_assign(&mut self, other: &TimeField) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b;
        }
        let sigmas: Vec<f64> = self.heads.iter().map(|h| h.0).chain(other.heads.iter().map(|h| h.0)).collect();
        let mut merged: Vec<(f64, Array2<f64>)> = Vec::new();
        for s in sigmas {
            if merged.iter().any(|(m, _)| (m / s - 1.0).abs() < 1e-12) {
                continue;
            }
            let h = self.head(s).into_owned() + &*other.head(s);
            merged.push((s, h));
        }
        self.set_heads(merged);
    }

    /// Largest absolute entry at each grid time, restricted to `rows × cols`.
    pub fn sup_norms(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
        self.mats
            .iter()
            .map(|m| {
                m.slice(ndarray::s![rows.clone(), cols.clone()]).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
            })
            .collect()
    }

    fn locate(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t)
    }
}

impl Field for TimeField {
    fn exponent(&self) -> f64 {
        self.exponent
    }

    fn at(&self, t: f64) -> Cow<'_, Array2<f64>> {
        if let Some(k) = self.locate(t) {
            return Cow::Borrowed(&self.mats[k]);
        }
        let ts = &self.times;
        let p = self.exponent;
        if t < ts[0] {
            return Cow::Owned(&self.mats[0] * (t / ts[0]).powf(p));
        }
        let n = ts.len();
        if n == 1 {
            return Cow::Owned(&self.mats[0] * (t / ts[0]).powf(p));
        }
        let i = ts.partition_point(|&s| s < t).clamp(1, n - 1);
        // cubic stencil i-2..=i+1 where available
        let lo = i.saturating_sub(2).min(n.saturating_sub(4));
        let hi = (lo + 4).min(n);
        let lt = t.ln();
        let nodes: Vec<f64> = (lo..hi).map(|k| ts[k].ln()).collect();
        let mut out = Array2::zeros(self.mats[0].raw_dim());
        for (a, k) in (lo..hi).enumerate() {
            let mut w = 1.0;
            for (b, &nb) in nodes.iter().enumerate() {
                if a != b {
                    w *= (lt - nb) / (nodes[a] - nb);
                }
            }
            w *= (t / ts[k]).powf(p);
            out.scaled_add(w, &self.mats[k]);
        }
        Cow::Owned(out)
    }

    fn head(&self, sigma: f64) -> Cow<'_, Array2<f64>> {
        let p1 = self.exponent + 1.0;
        if let Some((s, h)) = self.heads.iter().find(|(s, _)| *s >= sigma * (1.0 - 1e-12)) {
            if (s / sigma - 1.0).abs() < 1e-12 {
                return Cow::Borrowed(h);
            }
            return Cow::Owned(h * (sigma / s).powf(p1));
        }
        let t0 = self.times[0];
        Cow::Owned(&self.mats[0] * (t0 / p1 * (sigma / t0).powf(p1)))
    }
}

/// Time argument of one factor in a planned product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eval {
    At(f64),
    Head(f64),
}

/// Which half of `[0, t]` a term integrates over: `Early` has the `M` time
/// in `[0, t/2]`, `Late` has it in `[t/2, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Early,
    Late,
}

/// `coef · K[k] · M[m]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub k: Eval,
    pub m: Eval,
    pub half: Half,
}

/// Quadrature plan for `(K ⋆ M)_t` with envelope exponents `pk`, `pm` on the
/// grid `times`.
pub fn plan(times: &[f64], pk: f64, pm: f64, t: f64) -> Vec<Term> {
    let tau = 0.5 * t;
    let t0 = times[0];
    let sigma0 = t0.min(tau);
    let mut nodes = vec![sigma0];
    nodes.extend(times.iter().copied().filter(|&s| s > sigma0 * (1.0 + 1e-12) && s < tau * (1.0 - 1e-12)));
    if tau > sigma0 * (1.0 + 1e-12) {
        nodes.push(tau);
    }
    let mut terms = Vec::new();
    // heads over [0, σ0]
    let sa = sigma0 * (pm + 1.0) / (pm + 2.0);
    terms.push(Term { coef: 1.0, k: Eval::At(t - sa), m: Eval::Head(sigma0), half: Half::Early });
    let sb = sigma0 * (pk + 1.0) / (pk + 2.0);
    terms.push(Term { coef: 1.0, k: Eval::Head(sigma0), m: Eval::At(t - sb), half: Half::Late });
    if nodes.len() > 1 {
        let wa = hat_weights(&nodes, |s| s.powf(pm) * (t - s).powf(pk));
        let wb = hat_weights(&nodes, |s| s.powf(pk) * (t - s).powf(pm));
        for (n, &s) in nodes.iter().enumerate() {
            let ea = s.powf(pm) * (t - s).powf(pk);
            let eb = s.powf(pk) * (t - s).powf(pm);
            push(&mut terms, Term { coef: wa[n] / ea, k: Eval::At(t - s), m: Eval::At(s), half: Half::Early });
            push(&mut terms, Term { coef: wb[n] / eb, k: Eval::At(s), m: Eval::At(t - s), half: Half::Late });
        }
    }
    terms
}

pub(crate) fn same(a: Eval, b: Eval) -> bool {
    match (a, b) {
        (Eval::At(x), Eval::At(y)) | (Eval::Head(x), Eval::Head(y)) => (x - y).abs() <= 1e-12 * x.abs().max(y.abs()),
        _ => false,
    }
}

fn push(terms: &mut Vec<Term>, t: Term) {
    if let Some(e) = terms.iter_mut().find(|e| e.half == t.half && same(e.k, t.k) && same(e.m, t.m)) {
        e.coef += t.coef;
    } else {
        terms.push(t);
    }
}

/// `∫ E(s) φ_n(ln s) ds` for the hat functions on `nodes`.
fn hat_weights(nodes: &[f64], envelope: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    for n in 0..nodes.len() - 1 {
        let (a, b) = (nodes[n], nodes[n + 1]);
        let (la, lb) = (a.ln(), b.ln());
        for (s, q) in gl16().mapped(a, b) {
            let e = envelope(s) * q;
            let theta = (s.ln() - la) / (lb - la);
            w[n] += e * (1.0 - theta);
            w[n + 1] += e * theta;
        }
    }
    w
}

pub(crate) fn fetch<'a, F: Field + ?Sized>(f: &'a F, e: Eval) -> Cow<'a, Array2<f64>> {
    match e {
        Eval::At(t) => f.at(t),
        Eval::Head(s) => f.head(s),
    }
}

/// `(K ⋆ M)_t` as a matrix.
pub fn convolve<K: Field + ?Sized, M: Field + ?Sized>(k: &K, m: &M, times: &[f64], t: f64) -> Array2<f64> {
    let terms = plan(times, k.exponent(), m.exponent(), t);
    let mut out: Option<Array2<f64>> = None;
    for term in terms {
        let prod = fetch(k, term.k).dot(&*fetch(m, term.m));
        match out.as_mut() {
            None => out = Some(prod * term.coef),
            Some(o) => o.scaled_add(term.coef, &prod),
        }
    }
    out.unwrap()
}

/// `(K ⋆ M)_t v`.
pub fn convolve_apply<K: Field + ?Sized, M: Field + ?Sized>(
    k: &K,
    m: &M,
    times: &[f64],
    t: f64,
    v: ArrayView1<f64>,
) -> Array1<f64> {
    let mut out = Array1::zeros(v.len());
    for term in plan(times, k.exponent(), m.exponent(), t) {
        let mv = fetch(m, term.m).dot(&v);
        out.scaled_add(term.coef, &fetch(k, term.k).dot(&mv));
    }
    out
}

/// `u (K ⋆ M)_t`.
pub fn convolve_row<K: Field + ?Sized, M: Field + ?Sized>(
    k: &K,
    m: &M,
    times: &[f64],
    t: f64,
    u: ArrayView1<f64>,
) -> Array1<f64> {
    let mut out = Array1::zeros(u.len());
    for term in plan(times, k.exponent(), m.exponent(), t) {
        let uk = u.dot(&*fetch(k, term.k));
        out.scaled_add(term.coef, &uk.dot(&*fetch(m, term.m)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::beta::beta;

    fn power_field(times: &[f64], p: f64) -> TimeField {
        let mats = times.iter().map(|t| Array2::from_elem((1, 1), t.powf(p))).collect();
        let t0 = times[0];
        let heads = vec![(t0, Array2::from_elem((1, 1), t0.powf(p + 1.0) / (p + 1.0)))];
        TimeField::new(times.to_vec(), mats, p, heads)
    }

    fn grid() -> Vec<f64> {
        super::super::TimeGrid::new(&super::super::TimeSpec::default()).times().to_vec()
    }

    #[test]
    fn beta_function_oracle() {
        let times = grid();
        for (d1, d2) in [(0.5, 0.5), (0.2, 0.7), (1.0 / 3.0, 0.9), (0.72, 0.72)] {
            let k = power_field(&times, -1.0 + d1);
            let m = power_field(&times, -1.0 + d2);
            for t in [1.0, 0.5, 0.37, 0.01] {
                let got = convolve(&k, &m, &times, t)[[0, 0]];
                let want = t.powf(-1.0 + d1 + d2) * beta(d1, d2);
                assert!((got / want - 1.0).abs() < 1e-6, "{d1} {d2} {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn zero_field_gives_zero() {
        let times = grid();
        let k = power_field(&times, -0.5);
        let z = TimeField::zeros(times.clone(), 1, -0.5);
        assert_eq!(convolve(&k, &z, &times, 1.0)[[0, 0]], 0.0);
    }

    #[test]
    fn interpolation_follows_envelope() {
        let times = grid();
        let f = power_field(&times, -0.6);
        for t in [3e-5, 2e-3, 0.3, 0.77] {
            assert!((f.at(t)[[0, 0]] / t.powf(-0.6) - 1.0).abs() < 1e-12);
            if t < times[0] {
                assert!((f.head(t)[[0, 0]] / (t.powf(0.4) / 0.4) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_and_row_agree_with_matrix() {
        let times = grid();
        let mk = |p: f64, seed: f64| {
            let mats = times
                .iter()
                .map(|t| Array2::from_shape_fn((3, 3), |(i, j)| t.powf(p) * (1.0 + seed * (i as f64) - 0.3 * j as f64 * t)))
                .collect();
            TimeField::new(times.clone(), mats, p, vec![])
        };
        let (k, m) = (mk(0.0, 0.5), mk(-0.4, -0.2));
        let full = convolve(&k, &m, &times, 0.8);
        let v = ndarray::arr1(&[0.3, -1.0, 2.0]);
        let av = convolve_apply(&k, &m, &times, 0.8, v.view());
        let rv = convolve_row(&k, &m, &times, 0.8, v.view());
        for i in 0..3 {
            assert!((full.dot(&v)[i] - av[i]).abs() < 1e-12);
            assert!((v.dot(&full)[i] - rv[i]).abs() < 1e-12);
        }
        // not commutative for state-dependent factors
        let swapped = convolve(&m, &k, &times, 0.8);
        assert!((&full - &swapped).iter().any(|d| d.abs() > 1e-3));
    }
}
