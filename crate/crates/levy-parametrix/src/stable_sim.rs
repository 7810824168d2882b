//! Monte-Carlo simulation of `dX = b(X) dt + σ(X_-) dZ` with `σ = a^{1/α}` and
//! `Z` a symmetric `α`-stable process, plus kernel density estimates with
//! bootstrap standard errors.
//!
//! Every path draws from its own ChaCha8 stream `(seed, path index)`, so an
//! ensemble does not depend on the number of worker threads.

use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient_model::CoefficientModel;

pub const MIN_PATHS: usize = 1000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("at least {MIN_PATHS} paths are required, got {0}")]
    TooFewPaths(usize),
    #[error("the ensemble was simulated without storing full paths")]
    MissingPaths,
    #[error("invalid simulation parameter: {0}")]
    Invalid(String),
}

/// Random stream of one path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// One draw of `scale · S` with `E e^{iξS} = e^{-|ξ|^α}`, by the
/// Chambers–Mallows–Stuck transform.
pub fn sample_stable<R: Rng + ?Sized>(alpha: f64, scale: f64, rng: &mut R) -> f64 {
    let u = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
    if alpha == 1.0 {
        return scale * u.tan();
    }
    let w = -(1.0 - rng.random::<f64>()).ln();
    let s = (alpha * u).sin() / u.cos().powf(1.0 / alpha) * ((u - alpha * u).cos() / w).powf((1.0 - alpha) / alpha);
    debug_assert!(u.abs() < FRAC_PI_2);
    scale * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
}

/// Kernel bandwidth: a fixed value or the interquartile rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) if h > 0.0 => Ok(Bandwidth::Fixed(h)),
            Raw::Name(s) if s == "auto" => Ok(Bandwidth::Auto),
            _ => Err(serde::de::Error::custom("bandwidth must be \"auto\" or a positive number")),
        }
    }
}

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub bandwidth: Bandwidth,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec { n_paths: 200_000, n_steps: 400, seed: 20240501, bandwidth: Bandwidth::Auto, x0: 0.0, horizon: 0.5 }
    }
}

/// Simulated trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub x0: f64,
    pub scheme: Scheme,
    /// Terminal values of the paths that stayed finite, in path order.
    pub terminal_values: Vec<f64>,
    /// Number of paths aborted on a non-finite state.
    pub aborted: usize,
    /// Full paths, `n_steps + 1` states each, when requested.
    pub paths: Option<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    /// CSV with header `path_id,terminal_value`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "path_id,terminal_value")?;
        for (i, v) in self.terminal_values.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    }
}

fn euler_path(model: &CoefficientModel, x0: f64, dt: f64, n_steps: usize, rng: &mut ChaCha8Rng, keep: bool) -> Option<(f64, Vec<f64>)> {
    let alpha = model.alpha();
    let noise = dt.powf(1.0 / alpha);
    let mut x = x0;
    let mut path = if keep { Vec::with_capacity(n_steps + 1) } else { Vec::new() };
    if keep {
        path.push(x);
    }
    for _ in 0..n_steps {
        let dz = sample_stable(alpha, noise, rng);
        x += model.b(x) * dt + model.a(x).powf(1.0 / alpha) * dz;
        if !x.is_finite() {
            return None;
        }
        if keep {
            path.push(x);
        }
    }
    Some((x, path))
}

fn simulate_impl(
    model: &CoefficientModel,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    keep: bool,
) -> Result<PathEnsemble, SimError> {
    if !(horizon > 0.0) || n_steps == 0 || !x0.is_finite() {
        return Err(SimError::Invalid(format!("horizon {horizon}, steps {n_steps}, start {x0}")));
    }
    let dt = horizon / n_steps as f64;
    let out: Vec<Option<(f64, Vec<f64>)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| euler_path(model, x0, dt, n_steps, &mut path_rng(seed, i), keep))
        .collect();
    let aborted = out.iter().filter(|o| o.is_none()).count();
    if aborted > 0 {
        log::warn!("{aborted} of {n_paths} paths left the finite range");
    }
    let (terminal_values, paths): (Vec<f64>, Vec<Vec<f64>>) = out.into_iter().flatten().unzip();
    Ok(PathEnsemble {
        seed,
        n_paths,
        n_steps,
        horizon,
        x0,
        scheme: Scheme::Euler,
        terminal_values,
        aborted,
        paths: keep.then_some(paths),
    })
}

/// Euler scheme `X_{k+1} = X_k + b(X_k) Δt + σ(X_k) ΔZ_k`, terminal values only.
pub fn simulate(
    model: &CoefficientModel,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble, SimError> {
    simulate_impl(model, x0, horizon, n_steps, n_paths, seed, false)
}

/// As [`simulate`], storing every path.
pub fn simulate_paths(
    model: &CoefficientModel,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble, SimError> {
    simulate_impl(model, x0, horizon, n_steps, n_paths, seed, true)
}

/// Terminal values with `n` and `2n` steps driven by the same noise: each
/// coarse increment is the sum of two fine ones.
pub fn simulate_coupled(
    model: &CoefficientModel,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let alpha = model.alpha();
    let dt = horizon / (2 * n_steps) as f64;
    let noise = dt.powf(1.0 / alpha);
    let sigma = |x: f64| model.a(x).powf(1.0 / alpha);
    (0..n_paths as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = path_rng(seed, i);
            let (mut coarse, mut fine) = (x0, x0);
            for _ in 0..n_steps {
                let z1 = sample_stable(alpha, noise, &mut rng);
                let z2 = sample_stable(alpha, noise, &mut rng);
                coarse += model.b(coarse) * 2.0 * dt + sigma(coarse) * (z1 + z2);
                fine += model.b(fine) * dt + sigma(fine) * z1;
                fine += model.b(fine) * dt + sigma(fine) * z2;
            }
            (coarse.is_finite() && fine.is_finite()).then_some((fine, coarse))
        })
        .collect()
}

/// Epanechnikov kernel `3/4 (1 - u²)` on `[-1, 1]`.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// `0.9 · (IQR / 1.349) · n^{-1/5}`.
pub fn iqr_bandwidth(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
    0.9 * iqr / 1.349 * (v.len() as f64).powf(-0.2)
}

/// Kernel density estimate on a set of nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl EmpiricalDensity {
    /// Trapezoid mass over the nodes.
    pub fn mass(&self) -> f64 {
        self.nodes.windows(2).zip(self.values.windows(2)).map(|(y, v)| 0.5 * (y[1] - y[0]) * (v[0] + v[1])).sum()
    }
}

/// Epanechnikov estimate at `y_nodes` with bootstrap standard errors drawn
/// from the stream `(seed, u64::MAX)`.
pub fn empirical_density(
    ensemble: &PathEnsemble,
    y_nodes: &[f64],
    bandwidth: Bandwidth,
    seed: u64,
) -> Result<EmpiricalDensity, SimError> {
    let n = ensemble.terminal_values.len();
    if n < MIN_PATHS {
        return Err(SimError::TooFewPaths(n));
    }
    let h = match bandwidth {
        Bandwidth::Auto => iqr_bandwidth(&ensemble.terminal_values),
        Bandwidth::Fixed(h) => h,
    };
    let mut sorted: Vec<(f64, usize)> = ensemble.terminal_values.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // the contributing samples and kernel weights of every node
    let windows: Vec<Vec<(usize, f64)>> = y_nodes
        .iter()
        .map(|&y| {
            let lo = sorted.partition_point(|s| s.0 <= y - h);
            let hi = sorted.partition_point(|s| s.0 < y + h);
            sorted[lo..hi].iter().map(|&(v, i)| (i, epanechnikov((y - v) / h))).collect()
        })
        .collect();
    let norm = 1.0 / (n as f64 * h);
    let values: Vec<f64> = windows.iter().map(|w| norm * w.iter().map(|p| p.1).sum::<f64>()).collect();
    let mut rng = path_rng(seed, u64::MAX);
    let mut counts = vec![0u32; n];
    let mut sum = vec![0.0; y_nodes.len()];
    let mut sum2 = vec![0.0; y_nodes.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        for (k, w) in windows.iter().enumerate() {
            let est = norm * w.iter().map(|&(i, kv)| counts[i] as f64 * kv).sum::<f64>();
            sum[k] += est;
            sum2[k] += est * est;
        }
    }
    let b = BOOTSTRAP_RESAMPLES as f64;
    let std_errors = sum.iter().zip(&sum2).map(|(s, s2)| ((s2 - s * s / b) / (b - 1.0)).max(0.0).sqrt()).collect();
    Ok(EmpiricalDensity { nodes: y_nodes.to_vec(), values, std_errors, bandwidth: h, n_samples: n })
}

/// Mean with bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Sample mean of `values` with a bootstrap standard error.
pub fn bootstrap_mean(values: &[f64], seed: u64) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = path_rng(seed, u64::MAX - 1);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let m = (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64;
        s += m;
        s2 += m * m;
    }
    let b = BOOTSTRAP_RESAMPLES as f64;
    Estimate { mean, std_error: ((s2 - s * s / b) / (b - 1.0)).max(0.0).sqrt() }
}

/// `E[f(X_T) - f(x_0) - ∫_0^T h_f(X_s) ds]` along stored paths, the time
/// integral taken at left end points like the scheme itself.
pub fn martingale_residual(
    ensemble: &PathEnsemble,
    f: impl Fn(f64) -> f64 + Sync,
    h_f: impl Fn(f64) -> f64 + Sync,
) -> Result<Estimate, SimError> {
    let paths = ensemble.paths.as_ref().ok_or(SimError::MissingPaths)?;
    let dt = ensemble.horizon / ensemble.n_steps as f64;
    let per_path: Vec<f64> = paths
        .par_iter()
        .map(|p| {
            let integral: f64 = p[..p.len() - 1].iter().map(|&x| h_f(x)).sum::<f64>() * dt;
            f(*p.last().unwrap()) - f(p[0]) - integral
        })
        .collect();
    Ok(bootstrap_mean(&per_path, ensemble.seed))
}

/// One rung of a step-doubling ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorRung {
    pub n_steps: usize,
    /// `E f(X^{(2n)}) - E f(X^{(n)})` with common noise.
    pub difference: Estimate,
}

/// Weak-error differences along the ladder `ns`.
pub fn weak_error_ladder(
    model: &CoefficientModel,
    x0: f64,
    horizon: f64,
    ns: &[usize],
    n_paths: usize,
    seed: u64,
    f: impl Fn(f64) -> f64 + Sync,
) -> Vec<WeakErrorRung> {
    ns.iter()
        .map(|&n| {
            let pairs = simulate_coupled(model, x0, horizon, n, n_paths, seed);
            let diffs: Vec<f64> = pairs.iter().map(|&(fine, coarse)| f(fine) - f(coarse)).collect();
            WeakErrorRung { n_steps: n, difference: bootstrap_mean(&diffs, seed) }
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between a sample and a distribution function.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical KS distance at the 1% level, asymptotically `1.628 / √n_eff`.
pub fn ks_critical_1pct(n: usize, m: Option<usize>) -> f64 {
    let n_eff = match m {
        None => n as f64,
        Some(m) => (n * m) as f64 / (n + m) as f64,
    };
    1.628 / n_eff.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient_model::{ModelConfig, Regime};

    fn model(a: &str, b: &str, alpha: f64) -> CoefficientModel {
        CoefficientModel::from_config(&ModelConfig::new(a, b, alpha, 1.0, Regime::B)).unwrap()
    }

    #[test]
    fn cauchy_quartiles_and_median() {
        let mut rng = path_rng(7, 0);
        let n = 1_000_000;
        let mut v: Vec<f64> = (0..n).map(|_| sample_stable(1.0, 1.0, &mut rng)).collect();
        v.sort_by(f64::total_cmp);
        // SE of the p-quantile: sqrt(p(1-p)/n) / f(q_p); f(±1) = 1/(2π)
        let se_q = (0.75f64 * 0.25 / n as f64).sqrt() * 2.0 * std::f64::consts::PI;
        assert!((quantile(&v, 0.25) + 1.0).abs() < 3.0 * se_q);
        assert!((quantile(&v, 0.75) - 1.0).abs() < 3.0 * se_q);
        let se_m = (0.25f64 / n as f64).sqrt() * std::f64::consts::PI;
        assert!(quantile(&v, 0.5).abs() < 3.0 * se_m);
    }

    #[test]
    fn stable_scaling_in_distribution() {
        let (alpha, t) = (0.8f64, 0.3f64);
        let n = 20_000;
        let mut r1 = path_rng(1, 0);
        let mut r2 = path_rng(1, 1);
        let a: Vec<f64> = (0..n).map(|_| t.powf(1.0 / alpha) * sample_stable(alpha, 1.0, &mut r1)).collect();
        let b: Vec<f64> = (0..n).map(|_| sample_stable(alpha, t.powf(1.0 / alpha), &mut r2)).collect();
        assert!(ks_two_sample(&a, &b) < ks_critical_1pct(n, Some(n)));
    }

    #[test]
    fn seeds_reproduce_ensembles() {
        let m = model("1 + 0.3*sin(x)", "0.5*cos(x)", 1.5);
        let e1 = simulate(&m, 0.0, 0.5, 50, 2000, 11).unwrap();
        let e2 = simulate(&m, 0.0, 0.5, 50, 2000, 11).unwrap();
        let e3 = simulate(&m, 0.0, 0.5, 50, 2000, 12).unwrap();
        assert_eq!(e1, e2);
        assert_ne!(e1.terminal_values, e3.terminal_values);
    }

    #[test]
    fn small_noise_tracks_linear_flow() {
        let m = model("1e-6", "-x", 1.5);
        let e = simulate(&m, 2.0, 1.0, 400, 1000, 3).unwrap();
        let target = 2.0 * (-1.0f64).exp();
        // Euler bias of the deterministic part plus a generous noise band
        let euler = 2.0 * (1.0 - 1.0 / 400.0f64).powi(400);
        for v in &e.terminal_values {
            assert!((v - euler).abs() < 1e-2, "{v}");
        }
        assert!((euler - target).abs() < 2e-3);
    }

    #[test]
    fn too_few_paths_rejected() {
        let m = model("1", "0", 1.5);
        let e = simulate(&m, 0.0, 0.5, 10, 999, 1).unwrap();
        assert!(matches!(empirical_density(&e, &[0.0], Bandwidth::Auto, 1), Err(SimError::TooFewPaths(999))));
        let e = simulate(&m, 0.0, 0.5, 10, 1000, 1).unwrap();
        assert!(matches!(martingale_residual(&e, |x| x, |_| 0.0), Err(SimError::MissingPaths)));
    }

    #[test]
    fn zero_test_function_has_zero_residual() {
        let m = model("1", "0", 1.5);
        let e = simulate_paths(&m, 0.0, 0.5, 20, 1000, 1).unwrap();
        let r = martingale_residual(&e, |_| 0.0, |_| 0.0).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn bandwidth_config_forms() {
        #[derive(Deserialize)]
        struct W {
            bandwidth: Bandwidth,
        }
        assert_eq!(toml::from_str::<W>("bandwidth = \"auto\"").unwrap().bandwidth, Bandwidth::Auto);
        assert_eq!(toml::from_str::<W>("bandwidth = 0.1").unwrap().bandwidth, Bandwidth::Fixed(0.1));
        assert!(toml::from_str::<W>("bandwidth = -1.0").is_err());
    }
}
