//! The series `Ψ = Σ Φ^{⋆k}` with its truncation certificate.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::field::{convolve, Field, TimeField};
use super::{Parametrix, ParametrixError};

/// One instance of the Γ-quotient inequality
/// `n_{k+1}/n_k ≤ C_Φ C_H Γ(δ) Γ(kδ)/Γ((k+1)δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub k: usize,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

/// How the series was truncated and what the Γ-bound guarantees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationCertificate {
    pub delta: f64,
    pub kappa: f64,
    pub horizon: f64,
    /// Inflated `sup |Φ_t| t^{1-δ} / H_t`.
    pub c_phi: f64,
    /// Inflated sub-convolution constant of the hull.
    pub c_hull: f64,
    pub c_phi_measured: f64,
    pub c_hull_measured: f64,
    pub k_max: usize,
    /// `Σ_{k>k_max} (C_Φ Γ(δ))^k C_H^{k-1} T^{kδ} / Γ(kδ)`; `None` if it overflows.
    pub tail_bound: Option<f64>,
    pub log10_tail_bound: f64,
    pub tol: f64,
    /// Whether `tail_bound ≤ tol`.
    pub certified: bool,
    /// `sup_t t |Φ^{⋆k}_t| / sup p⁰_t`, the empirical size of each term.
    pub contributions: Vec<f64>,
    /// `sup |Φ^{⋆k}_t| t^{1-kδ} / H_t`.
    pub normalized_norms: Vec<f64>,
    pub ratio_checks: Vec<RatioCheck>,
}

impl TruncationCertificate {
    pub fn ratios_hold(&self) -> bool {
        self.ratio_checks.iter().all(|r| r.holds)
    }

    /// Smallest truncation order whose Γ-series remainder is below `tol`,
    /// searched up to `cap`.
    pub fn terms_needed(&self, cap: usize) -> Option<usize> {
        let target = self.tol.log10();
        let tail = |k| log10_tail(k, self.c_phi, self.c_hull, self.delta, self.horizon);
        if tail(cap) >= target {
            return None;
        }
        let (mut lo, mut hi) = (0, cap);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if tail(mid) < target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }
}

/// `ln` of the `k`-th term of the Γ-series.
fn ln_term(k: usize, c_phi: f64, c_hull: f64, delta: f64, horizon: f64) -> f64 {
    let kf = k as f64;
    kf * (c_phi * statrs::function::gamma::gamma(delta)).ln() + (kf - 1.0) * c_hull.ln() + kf * delta * horizon.ln()
        - ln_gamma(kf * delta)
}

/// `log10` of the Γ-series remainder after `k_max` terms.
pub(crate) fn log10_tail(k_max: usize, c_phi: f64, c_hull: f64, delta: f64, horizon: f64) -> f64 {
    if c_phi == 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut lmax = f64::NEG_INFINITY;
    let mut terms = Vec::new();
    let mut k = k_max + 1;
    loop {
        let l = ln_term(k, c_phi, c_hull, delta, horizon);
        terms.push(l);
        lmax = lmax.max(l);
        // the terms decay super-geometrically once Γ(kδ) dominates
        let decreasing = k > k_max + 2 && l < terms[terms.len() - 2];
        if (decreasing && l < lmax - 60.0) || k > k_max + 5_000_000 {
            break;
        }
        k += 1;
    }
    let s: f64 = terms.iter().map(|l| (l - lmax).exp()).sum();
    (lmax + s.ln()) / std::f64::consts::LN_10
}

fn normalized(field: &TimeField, hull: &TimeField, k: usize, delta: f64, rows: std::ops::Range<usize>) -> f64 {
    let mut best: f64 = 0.0;
    for (n, &t) in field.times().iter().enumerate() {
        let scale = t.powf(1.0 - k as f64 * delta);
        let f = field.mat(n);
        let h = hull.mat(n);
        for i in rows.clone() {
            for j in rows.clone() {
                let hv = h[[i, j]];
                if hv > 0.0 {
                    best = best.max(f[[i, j]].abs() * scale / hv);
                }
            }
        }
    }
    best
}

fn contribution(field: &TimeField, p0: &TimeField, rows: std::ops::Range<usize>) -> f64 {
    let sup_f = field.sup_norms(rows.clone(), rows.clone());
    let times = field.times();
    let mut best: f64 = 0.0;
    for (n, &t) in times.iter().enumerate() {
        let sup_p = p0.at(t).slice(ndarray::s![rows.clone(), rows.clone()]).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        best = best.max(t * sup_f[n] / sup_p);
    }
    best
}

/// Computes `Ψ` and the certificate for an assembled parametrix.
pub(super) fn psi_series(px: &Parametrix<'_>) -> Result<(TimeField, TruncationCertificate), ParametrixError> {
    let cfg = px.config();
    let delta = px.delta();
    let horizon = px.horizon();
    let times = px.grid().times().to_vec();
    let inner = px.lattice().interior();
    let phi = px.phi_field();
    let hull = px.hull_field();
    let c_phi_measured = normalized(phi, hull, 1, delta, inner.clone());
    let c_hull_measured = crate::hull_bounds::subconvolution_constant(px, &[0.1, 0.5, 0.9], horizon)?;
    let c_phi = cfg.inflation * c_phi_measured;
    let c_hull = cfg.inflation * c_hull_measured;
    let k_cert = (1..=cfg.k_max).find(|&k| log10_tail(k, c_phi, c_hull, delta, horizon) <= cfg.tol.log10());
    let mut psi = phi.clone();
    let mut term = phi.clone();
    let mut contributions = vec![contribution(phi, px.p0_field(), inner.clone())];
    let mut norms = vec![c_phi_measured];
    let mut k = 1;
    loop {
        let last = *contributions.last().unwrap();
        let empirical_done = last < cfg.tol;
        let cert_done = k_cert.map_or(true, |kc| k >= kc);
        if empirical_done && cert_done {
            break;
        }
        if k >= cfg.k_max {
            if !empirical_done {
                return Err(ParametrixError::Truncation { tol: cfg.tol, k_max: cfg.k_max, last });
            }
            break;
        }
        let mats: Vec<Array2<f64>> = times.par_iter().map(|&t| convolve(&term, phi, &times, t)).collect();
        k += 1;
        term = TimeField::new(times.clone(), mats, -1.0 + k as f64 * delta, Vec::new());
        psi.add_assign(&term);
        contributions.push(contribution(&term, px.p0_field(), inner.clone()));
        norms.push(normalized(&term, hull, k, delta, inner.clone()));
        log::info!("series term {k}: contribution {:.3e}", contributions.last().unwrap());
    }
    let ratio_checks = (1..k)
        .map(|j| {
            let jf = j as f64;
            let measured = if norms[j - 1] > 0.0 { norms[j] / norms[j - 1] } else { 0.0 };
            let bound = c_phi
                * c_hull
                * (statrs::function::gamma::ln_gamma(delta) + ln_gamma(jf * delta) - ln_gamma((jf + 1.0) * delta)).exp();
            RatioCheck { k: j, measured, bound, holds: measured <= bound }
        })
        .collect();
    let log10_tail_bound = log10_tail(k, c_phi, c_hull, delta, horizon);
    let tail = 10f64.powf(log10_tail_bound);
    let cert = TruncationCertificate {
        delta,
        kappa: px.kappa(),
        horizon,
        c_phi,
        c_hull,
        c_phi_measured,
        c_hull_measured,
        k_max: k,
        tail_bound: tail.is_finite().then_some(tail),
        log10_tail_bound: if log10_tail_bound.is_finite() { log10_tail_bound } else { -f64::MAX },
        tol: cfg.tol,
        certified: tail <= cfg.tol,
        contributions,
        normalized_norms: norms,
        ratio_checks,
    };
    Ok((psi, cert))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_of_zero_constant_vanishes() {
        assert_eq!(log10_tail(1, 0.0, 2.0, 0.5, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn tail_matches_direct_sum() {
        let (c, h, d, t) = (0.3, 1.2, 0.5, 1.0);
        let direct: f64 = (4..400).map(|k| ln_term(k, c, h, d, t).exp()).sum();
        assert!((10f64.powf(log10_tail(3, c, h, d, t)) / direct - 1.0).abs() < 1e-10);
        assert!(log10_tail(10, c, h, d, t) < log10_tail(3, c, h, d, t));
    }

    #[test]
    fn terms_needed_is_the_first_certified_order() {
        let cert = TruncationCertificate { c_phi: 0.3, c_hull: 1.2, delta: 0.5, horizon: 1.0, tol: 1e-6, ..Default::default() };
        let k = cert.terms_needed(1000).unwrap();
        assert!(log10_tail(k, 0.3, 1.2, 0.5, 1.0) < -6.0);
        assert!(log10_tail(k - 1, 0.3, 1.2, 0.5, 1.0) >= -6.0);
        let hopeless = TruncationCertificate { c_phi: 1e6, ..cert };
        assert_eq!(hopeless.terms_needed(20), None);
    }
}
