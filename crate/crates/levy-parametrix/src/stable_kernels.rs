//! Symmetric α-stable density profiles and their derivatives.
//!
//! A [`StableProfile`] tabulates the unit-time density `g` with
//! `∫ e^{iξx} g(x) dx = e^{-|ξ|^α}` together with the kernels needed by the
//! parametrix: `∇g`, `Lg = -(-Δ)^{α/2} g`, `∇Lg` and `∇²g`. Values close to the
//! origin come from Fourier quadrature, far values from the power series in
//! `|x|^{-α}`; the table is interpolated with cubic Hermite polynomials whose
//! slopes are the exact next derivative.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::quadrature::{gl16, GaussLegendre};

/// The tabulated kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    G,
    GradG,
    FracLapG,
    GradFracLapG,
    HessG,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::G,
        KernelKind::GradG,
        KernelKind::FracLapG,
        KernelKind::GradFracLapG,
        KernelKind::HessG,
    ];

    /// (value, first derivative, second derivative) columns of the table.
    fn columns(self) -> (usize, usize, usize) {
        match self {
            KernelKind::G => (G, D1, D2),
            KernelKind::GradG => (D1, D2, D3),
            KernelKind::HessG => (D2, D3, D4),
            KernelKind::FracLapG => (LG, LD1, LD2),
            KernelKind::GradFracLapG => (LD1, LD2, LD3),
        }
    }

    pub fn is_odd(self) -> bool {
        matches!(self, KernelKind::GradG | KernelKind::GradFracLapG)
    }

    pub fn csv_name(self) -> &'static str {
        match self {
            KernelKind::G => "g",
            KernelKind::GradG => "grad_g",
            KernelKind::FracLapG => "fraclap_g",
            KernelKind::GradFracLapG => "grad_fraclap_g",
            KernelKind::HessG => "hess_g",
        }
    }
}

const G: usize = 0;
const D1: usize = 1;
const D2: usize = 2;
const D3: usize = 3;
const LG: usize = 4;
const LD1: usize = 5;
const LD2: usize = 6;
const D4: usize = 7;
const LD3: usize = 8;
const NCOL: usize = 9;
const EXTRA_COLUMNS: [usize; 4] = [D3, LD2, D4, LD3];
const EXTRA_CSV: [&str; 4] = ["d3_g", "d2_fraclap_g", "d4_g", "d3_fraclap_g"];

/// Values of all kernels at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelValues {
    pub g: f64,
    pub grad_g: f64,
    pub fraclap_g: f64,
    pub grad_fraclap_g: f64,
    pub hess_g: f64,
}

impl KernelValues {
    pub fn get(&self, kind: KernelKind) -> f64 {
        match kind {
            KernelKind::G => self.g,
            KernelKind::GradG => self.grad_g,
            KernelKind::FracLapG => self.fraclap_g,
            KernelKind::GradFracLapG => self.grad_fraclap_g,
            KernelKind::HessG => self.hess_g,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("alpha must lie in (0, 2), got {0}")]
    InvalidAlpha(f64),
    #[error("alpha = {0} is below the supported minimum 0.1")]
    AlphaTooSmall(f64),
    #[error("alpha = {alpha} < 0.3 requires radius_max >= 200, got {radius_max}")]
    SmallAlphaRadius { alpha: f64, radius_max: f64 },
    #[error("only dimension 1 is supported, got {0}")]
    UnsupportedDimension(usize),
    #[error("resolution must be at least 256, got {0}")]
    InvalidResolution(usize),
    #[error("radius_max must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("malformed profile file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MIN_RESOLUTION: usize = 256;
pub const DEFAULT_RESOLUTION: usize = 4096;

pub fn default_radius_max(alpha: f64) -> f64 {
    50f64.max(20.0 / alpha)
}

/// Coefficients of `g(x) = (1/π) Σ_k c_k x^{-kα-1}` and the term-wise
/// derivative multipliers.
#[derive(Debug, Clone)]
struct TailSeries {
    alpha: f64,
    coeff: Vec<f64>,
}

const SERIES_TERMS: usize = 240;

impl TailSeries {
    fn new(alpha: f64) -> Self {
        let coeff = (1..=SERIES_TERMS)
            .map(|k| {
                let kf = k as f64;
                let s = (kf * PI * alpha / 2.0).sin();
                if s.abs() < 1e-14 {
                    0.0
                } else {
                    let mag = (ln_gamma(kf * alpha + 1.0) - ln_gamma(kf + 1.0)).exp();
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign * mag * s
                }
            })
            .collect();
        TailSeries { alpha, coeff }
    }

    fn multiplier(&self, col: usize, k: usize, x: f64) -> f64 {
        let a = self.alpha;
        let kf = k as f64;
        let p1 = kf * a + 1.0;
        let p2 = kf * a + 2.0;
        let p3 = kf * a + 3.0;
        let p4 = kf * a + 4.0;
        match col {
            G => 1.0,
            D1 => -p1 / x,
            D2 => p1 * p2 / (x * x),
            D3 => -p1 * p2 * p3 / (x * x * x),
            LG => kf,
            LD1 => -kf * p1 / x,
            LD2 => kf * p1 * p2 / (x * x),
            D4 => p1 * p2 * p3 * p4 / (x * x * x * x),
            LD3 => -kf * p1 * p2 * p3 / (x * x * x),
            _ => unreachable!(),
        }
    }

    /// Sums the series for column `col` at `x > 0`.
    ///
    /// Returns `(sum, smallest |term|, largest |term|)`; for α > 1 the sum stops
    /// at the smallest term.
    fn sum(&self, col: usize, x: f64) -> (f64, f64, f64) {
        let xa = x.powf(-self.alpha);
        let mut pw = 1.0 / (PI * x);
        let mut s = 0.0;
        let mut smallest = f64::INFINITY;
        let mut largest: f64 = 0.0;
        let mut quiet = 0;
        for (i, c) in self.coeff.iter().enumerate() {
            pw *= xa;
            if *c == 0.0 {
                continue;
            }
            let term = c * pw * self.multiplier(col, i + 1, x);
            let m = term.abs();
            if !m.is_finite() {
                break;
            }
            if self.alpha > 1.0 && m > smallest {
                break;
            }
            s += term;
            largest = largest.max(m);
            smallest = smallest.min(m);
            if m <= 1e-17 * s.abs() {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        (s, smallest, largest)
    }

    fn value(&self, col: usize, x: f64) -> f64 {
        self.sum(col, x).0
    }

    /// Whether all series are accurate to about 1e-13 relative to their
    /// leading term at `x`.
    fn reliable(&self, x: f64) -> bool {
        let lead = self.coeff[0] / (PI * x.powf(self.alpha + 1.0));
        (0..NCOL).all(|col| {
            let scale = (lead * self.multiplier(col, 1, x)).abs();
            let (sum, smallest, largest) = self.sum(col, x);
            smallest <= 1e-14 * scale && largest <= 1e2 * scale.min(sum.abs())
        })
    }

    /// `∫_x^∞` of the series for `g`.
    fn mass_beyond(&self, x: f64) -> f64 {
        let xa = x.powf(-self.alpha);
        let mut pw = 1.0;
        let mut s: f64 = 0.0;
        let mut previous = f64::INFINITY;
        for (i, c) in self.coeff.iter().enumerate() {
            pw *= xa;
            if *c == 0.0 {
                continue;
            }
            let term = c * pw / ((i + 1) as f64 * self.alpha);
            if self.alpha > 1.0 && term.abs() > previous {
                break;
            }
            previous = term.abs();
            s += term;
            if term.abs() <= 1e-17 * s.abs() {
                break;
            }
        }
        s / PI
    }
}

/// `g`, `∇g` and `Lg` beyond a fixed radius as polynomials in `x^{-α}`.
#[derive(Debug, Clone)]
struct FarSeries {
    alpha: f64,
    g: Vec<f64>,
    d: Vec<f64>,
    l: Vec<f64>,
}

impl FarSeries {
    /// Keeps the terms that matter at `x0`; they matter less further out.
    fn new(series: &TailSeries, x0: f64) -> Self {
        let a = series.alpha;
        let z0 = x0.powf(-a);
        let mut zk = 1.0;
        let mut first = 0.0;
        let mut previous = f64::INFINITY;
        let mut quiet = 0;
        let mut n = 0;
        for (i, c) in series.coeff.iter().enumerate() {
            zk *= z0;
            n = i + 1;
            if *c == 0.0 {
                continue;
            }
            let kf = (i + 1) as f64;
            let m = (c * zk).abs() * (kf * a + 1.0).max(kf);
            if !m.is_finite() || (a > 1.0 && m > previous) {
                n = i;
                break;
            }
            previous = m;
            if first == 0.0 {
                first = m;
            }
            if m <= 1e-17 * first {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        let c = &series.coeff[..n];
        FarSeries {
            alpha: a,
            g: c.to_vec(),
            d: c.iter().enumerate().map(|(i, c)| -c * ((i + 1) as f64 * a + 1.0)).collect(),
            l: c.iter().enumerate().map(|(i, c)| c * (i + 1) as f64).collect(),
        }
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let z = x.powf(-self.alpha);
        let (mut g, mut d, mut l) = (0.0, 0.0, 0.0);
        for k in (0..self.g.len()).rev() {
            g = g * z + self.g[k];
            d = d * z + self.d[k];
            l = l * z + self.l[k];
        }
        let f = z / (PI * x);
        (g * f, d * f / x, l * f)
    }
}

/// Fourier quadrature for the tabulated columns at `x ≥ 0`.
struct FourierRule {
    alpha: f64,
    r: Vec<f64>,
    w: Vec<f64>,
}

impl FourierRule {
    fn new(alpha: f64, x_max: f64) -> Self {
        let r_max = 50f64.powf(1.0 / alpha);
        let width = (PI / (2.0 * x_max.max(1e-3))).min(r_max);
        let rule: &GaussLegendre = gl16();
        let mut edges = vec![0.0];
        let mut e = 1e-10f64.min(width);
        while e < width {
            edges.push(e);
            e *= 2.0;
        }
        let mut e = edges.last().copied().unwrap_or(0.0);
        while e < r_max {
            e = (e + width).min(r_max);
            edges.push(e);
        }
        let mut r = Vec::new();
        let mut w = Vec::new();
        for p in edges.windows(2) {
            for (node, weight) in rule.mapped(p[0], p[1]) {
                let damp = (-node.powf(alpha)).exp();
                r.push(node);
                w.push(weight * damp / PI);
            }
        }
        FourierRule { alpha, r, w }
    }

    fn eval(&self, x: f64) -> [f64; NCOL] {
        let mut out = [0.0; NCOL];
        for (r, w) in self.r.iter().zip(&self.w) {
            let (s, c) = (x * r).sin_cos();
            let ra = r.powf(self.alpha);
            let r2 = r * r;
            out[G] += w * c;
            out[D1] -= w * r * s;
            out[D2] -= w * r2 * c;
            out[D3] += w * r2 * r * s;
            out[LG] -= w * ra * c;
            out[LD1] += w * ra * r * s;
            out[LD2] += w * ra * r2 * c;
            out[D4] += w * r2 * r2 * c;
            out[LD3] -= w * ra * r2 * r * s;
        }
        out
    }
}

fn values_at_origin(alpha: f64) -> [f64; NCOL] {
    let moment = |m: f64| gamma((m + 1.0) / alpha) / (alpha * PI);
    let mut out = [0.0; NCOL];
    out[G] = moment(0.0);
    out[D2] = -moment(2.0);
    out[LG] = -moment(alpha);
    out[LD2] = moment(alpha + 2.0);
    out[D4] = moment(4.0);
    out
}

/// Tabulated radial profile of the symmetric α-stable density and its kernels.
#[derive(Debug, Clone)]
pub struct StableProfile {
    alpha: f64,
    dim: usize,
    step: f64,
    radius_max: f64,
    table: [Vec<f64>; NCOL],
    series: TailSeries,
    far: FarSeries,
    tail_scale: [f64; NCOL],
    series_from: f64,
}

/// Builds the profile table for `alpha` in dimension `dim`.
pub fn build_profile(alpha: f64, dim: usize, resolution: usize, radius_max: f64) -> Result<StableProfile, ProfileError> {
    validate(alpha, dim, resolution, radius_max)?;
    let series = TailSeries::new(alpha);
    let series_from = switch_point(&series);
    let step = radius_max / (resolution - 1) as f64;
    let fourier_max = series_from.min(radius_max);
    let fourier = FourierRule::new(alpha, fourier_max);
    let origin = values_at_origin(alpha);
    let mut table: [Vec<f64>; NCOL] = Default::default();
    for col in table.iter_mut() {
        col.reserve(resolution);
    }
    for i in 0..resolution {
        let x = i as f64 * step;
        let row = if i == 0 {
            origin
        } else if x >= series_from {
            std::array::from_fn(|c| series.value(c, x))
        } else {
            fourier.eval(x)
        };
        for c in 0..NCOL {
            table[c].push(row[c]);
        }
    }
    let tail_scale = std::array::from_fn(|c| {
        let s = series.value(c, radius_max);
        let t = table[c][resolution - 1];
        if s != 0.0 && s.is_finite() && t != 0.0 {
            t / s
        } else {
            1.0
        }
    });
    let far = FarSeries::new(&series, radius_max);
        Ok(StableProfile { alpha, dim, step, radius_max, table, series, far, tail_scale, series_from })
}

fn validate(alpha: f64, dim: usize, resolution: usize, radius_max: f64) -> Result<(), ProfileError> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(ProfileError::InvalidAlpha(alpha));
    }
    if alpha < 0.1 {
        return Err(ProfileError::AlphaTooSmall(alpha));
    }
    if dim != 1 {
        return Err(ProfileError::UnsupportedDimension(dim));
    }
    if resolution < MIN_RESOLUTION {
        return Err(ProfileError::InvalidResolution(resolution));
    }
    if !(radius_max > 0.0 && radius_max.is_finite()) {
        return Err(ProfileError::InvalidRadius(radius_max));
    }
    if alpha < 0.3 {
        if radius_max < 200.0 {
            return Err(ProfileError::SmallAlphaRadius { alpha, radius_max });
        }
        log::warn!("alpha = {alpha} < 0.3: profile precision is degraded");
    }
    Ok(())
}

fn switch_point(series: &TailSeries) -> f64 {
    let mut best = f64::INFINITY;
    let mut j = 80i32;
    while j >= -60 {
        let x = 2f64.powf(j as f64 / 4.0);
        if !series.reliable(x) {
            break;
        }
        best = x;
        j -= 1;
    }
    best
}

impl StableProfile {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius_max(&self) -> f64 {
        self.radius_max
    }

    pub fn resolution(&self) -> usize {
        self.table[G].len()
    }

    /// Radius beyond which table values come from the series.
    pub fn series_switch(&self) -> f64 {
        self.series_from
    }

    /// Power-law decay exponents of `[g, ∇g, Lg, ∇Lg, ∇²g]`.
    pub fn tail_exponents(&self) -> [f64; 5] {
        let a = self.alpha;
        [1.0 + a, 2.0 + a, 1.0 + a, 2.0 + a, 3.0 + a]
    }

    fn column(&self, (col, d1, d2): (usize, usize, usize), r: f64) -> f64 {
        if r >= self.radius_max {
            return self.tail_scale[col] * self.series.value(col, r);
        }
        let u = r / self.step;
        let i = (u as usize).min(self.resolution() - 2);
        let t = u - i as f64;
        let h = self.step;
        let (f, d, s) = (&self.table[col], &self.table[d1], &self.table[d2]);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
        h0 * f[i] + h3 * f[i + 1] + h * (h1 * d[i] + h4 * d[i + 1]) + h * h * (h2 * s[i] + h5 * s[i + 1])
    }

    /// Evaluates one kernel at `x`.
    pub fn eval(&self, kind: KernelKind, x: f64) -> f64 {
        let v = self.column(kind.columns(), x.abs());
        if kind.is_odd() && x < 0.0 {
            -v
        } else {
            v
        }
    }

    /// Evaluates `g`, `∇g` and `Lg`, the combination used by the parametrix.
    pub fn eval_core(&self, x: f64) -> (f64, f64, f64) {
        let r = x.abs();
        if r >= self.radius_max {
            let (g, d, l) = self.far.eval(r);
            let d = d * self.tail_scale[D1];
            return (g * self.tail_scale[G], if x < 0.0 { -d } else { d }, l * self.tail_scale[LG]);
        }
        let g = self.column(KernelKind::G.columns(), r);
        let d = self.column(KernelKind::GradG.columns(), r);
        let l = self.column(KernelKind::FracLapG.columns(), r);
        (g, if x < 0.0 { -d } else { d }, l)
    }

    /// Evaluates all tabulated kernels at `x`.
    pub fn eval_all(&self, x: f64) -> KernelValues {
        KernelValues {
            g: self.eval(KernelKind::G, x),
            grad_g: self.eval(KernelKind::GradG, x),
            fraclap_g: self.eval(KernelKind::FracLapG, x),
            grad_fraclap_g: self.eval(KernelKind::GradFracLapG, x),
            hess_g: self.eval(KernelKind::HessG, x),
        }
    }

    /// Density of the stable law at time `t`, `t^{-1/α} g(t^{-1/α} x)`.
    pub fn density_at(&self, t: f64, x: f64) -> f64 {
        let s = t.powf(1.0 / self.alpha);
        self.eval(KernelKind::G, x / s) / s
    }

    fn cell_mass(&self, i: usize, upto: f64) -> f64 {
        let h = self.step;
        let t = upto;
        let (f, d, s) = (&self.table[G], &self.table[D1], &self.table[D2]);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let t6 = t5 * t;
        let i0 = t - 2.5 * t4 + 3.0 * t5 - t6;
        let i1 = 0.5 * t2 - 1.5 * t4 + 1.6 * t5 - 0.5 * t6;
        let i2 = t3 / 6.0 - 0.375 * t4 + 0.3 * t5 - t6 / 12.0;
        let i3 = 2.5 * t4 - 3.0 * t5 + t6;
        let i4 = -t4 + 1.4 * t5 - 0.5 * t6;
        let i5 = t4 / 8.0 - t5 / 5.0 + t6 / 12.0;
        h * (f[i] * i0 + f[i + 1] * i3) + h * h * (d[i] * i1 + d[i + 1] * i4) + h * h * h * (s[i] * i2 + s[i + 1] * i5)
    }

    /// `∫_0^r g`, exact for the interpolant.
    fn half_mass(&self, r: f64) -> f64 {
        if r >= self.radius_max {
            let body: f64 = (0..self.resolution() - 1).map(|i| self.cell_mass(i, 1.0)).sum();
            let tail = self.tail_scale[G] * (self.series.mass_beyond(self.radius_max) - self.series.mass_beyond(r));
            return body + tail;
        }
        let u = r / self.step;
        let i = (u as usize).min(self.resolution() - 2);
        let full: f64 = (0..i).map(|k| self.cell_mass(k, 1.0)).sum();
        full + self.cell_mass(i, u - i as f64)
    }

    /// Total mass of the interpolated density including the analytic tail.
    pub fn mass(&self) -> f64 {
        2.0 * self.half_mass(f64::INFINITY)
    }

    /// Distribution function of the unit-time law.
    pub fn cdf(&self, x: f64) -> f64 {
        let m = if x.is_infinite() { 0.5 } else { self.half_mass(x.abs()) };
        if x >= 0.0 {
            0.5 + m
        } else {
            0.5 - m
        }
    }

    /// Writes the table as CSV: two header rows `alpha,<α>` and `dim,<d>`,
    /// then one row per radius.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), ProfileError> {
        writeln!(w, "alpha,{}", self.alpha)?;
        writeln!(w, "dim,{}", self.dim)?;
        write!(w, "radius")?;
        for k in KernelKind::ALL {
            write!(w, ",{}", k.csv_name())?;
        }
        for name in EXTRA_CSV {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.resolution() {
            let r = i as f64 * self.step;
            write!(w, "{r:e}")?;
            for k in KernelKind::ALL {
                write!(w, ",{:e}", self.table[k.columns().0][i])?;
            }
            for c in EXTRA_COLUMNS {
                write!(w, ",{:e}", self.table[c][i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). The four
    /// trailing derivative columns are optional and are estimated by finite
    /// differences when absent.
    pub fn read_csv(r: impl BufRead) -> Result<Self, ProfileError> {
        let bad = |m: &str| ProfileError::Malformed(m.to_string());
        let mut lines = r.lines();
        let mut header_value = |name: &str| -> Result<f64, ProfileError> {
            let line = lines.next().ok_or_else(|| bad("missing header"))??;
            let (k, v) = line.split_once(',').ok_or_else(|| bad("bad header"))?;
            if k.trim() != name {
                return Err(bad(&format!("expected header {name}")));
            }
            v.trim().parse::<f64>().map_err(|_| bad("bad header value"))
        };
        let alpha = header_value("alpha")?;
        let dim = header_value("dim")? as usize;
        let cols_line = lines.next().ok_or_else(|| bad("missing column names"))??;
        let names: Vec<&str> = cols_line.split(',').map(str::trim).collect();
        let mut want: Vec<&str> = vec!["radius"];
        want.extend(KernelKind::ALL.iter().map(|k| k.csv_name()));
        if names.len() < want.len() || names[..want.len()] != want[..] {
            return Err(bad("unexpected column names"));
        }
        let extras = names.len() == want.len() + EXTRA_CSV.len() && names[want.len()..] == EXTRA_CSV[..];
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|_| bad("non-numeric value"))?;
            if row.len() != names.len() {
                return Err(bad("ragged row"));
            }
            rows.push(row);
        }
        let n = rows.len();
        if n < 2 {
            return Err(bad("too few rows"));
        }
        validate(alpha, dim, n, rows[n - 1][0])?;
        let step = rows[1][0] - rows[0][0];
        let radius_max = rows[n - 1][0];
        if rows[0][0] != 0.0 || step <= 0.0 {
            return Err(bad("radius must start at 0 and increase"));
        }
        let mut table: [Vec<f64>; NCOL] = Default::default();
        for (k, kind) in KernelKind::ALL.iter().enumerate() {
            table[kind.columns().0] = rows.iter().map(|r| r[k + 1]).collect();
        }
        if extras {
            for (k, c) in EXTRA_COLUMNS.iter().enumerate() {
                table[*c] = rows.iter().map(|r| r[6 + k]).collect();
            }
        } else {
            table[D3] = finite_difference(&table[D2], step, true);
            table[LD2] = finite_difference(&table[LD1], step, false);
            table[D4] = finite_difference(&table[D3], step, false);
            table[LD3] = finite_difference(&table[LD2], step, true);
        }
        let series = TailSeries::new(alpha);
        let series_from = switch_point(&series);
        let tail_scale = std::array::from_fn(|c| {
            let s = series.value(c, radius_max);
            let t = table[c][n - 1];
            if s != 0.0 && s.is_finite() && t != 0.0 {
                t / s
            } else {
                1.0
            }
        });
        let far = FarSeries::new(&series, radius_max);
        Ok(StableProfile { alpha, dim, step, radius_max, table, series, far, tail_scale, series_from })
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_csv(f)
    }
}

fn finite_difference(f: &[f64], h: f64, derivative_is_odd: bool) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                if derivative_is_odd {
                    0.0
                } else {
                    (f[1] - f[0]) / h
                }
            } else if i == n - 1 {
                (f[n - 1] - f[n - 2]) / h
            } else {
                (f[i + 1] - f[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// The polynomial hull `G^{(β)}(x) = min(|x|^{-d-β}, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullFunction {
    pub beta: f64,
    pub dim: usize,
}

impl HullFunction {
    pub fn new(beta: f64, dim: usize) -> Self {
        assert!(beta > 0.0, "hull exponent must be positive");
        HullFunction { beta, dim }
    }

    pub fn value(&self, x: f64) -> f64 {
        let r = x.abs();
        if r <= 1.0 {
            1.0
        } else {
            r.powf(-(self.dim as f64) - self.beta)
        }
    }

    /// `∫_a^b G^{(β)}` in dimension one.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        if b <= a {
            return 0.0;
        }
        let beta = self.beta;
        // antiderivative on [0, ∞)
        let half = |r: f64| {
            if r <= 1.0 {
                r
            } else if r.is_infinite() {
                1.0 + 1.0 / beta
            } else {
                1.0 + (1.0 - r.powf(-beta)) / beta
            }
        };
        let prim = |x: f64| if x >= 0.0 { half(x) } else { -half(-x) };
        prim(b) - prim(a)
    }

    /// `∫ G^{(β)} = 2 + 2/β` in dimension one.
    pub fn total(&self) -> f64 {
        self.integral(f64::NEG_INFINITY, f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_values_match_moments() {
        let p = build_profile(1.0, 1, 1024, 50.0).unwrap();
        assert!((p.eval(KernelKind::G, 0.0) - 1.0 / PI).abs() < 1e-15);
        assert!((p.eval(KernelKind::FracLapG, 0.0) + 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn series_and_fourier_agree_near_switch() {
        for alpha in [0.6, 1.0, 1.3, 1.7] {
            let series = TailSeries::new(alpha);
            let x0 = switch_point(&series);
            let x = x0 * 1.2;
            let rule = FourierRule::new(alpha, x * 1.1);
            let f = rule.eval(x);
            for c in 0..NCOL {
                let s = series.value(c, x);
                assert!((f[c] - s).abs() < 1e-10, "alpha={alpha} col={c} fourier={} series={s}", f[c]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_profile(2.0, 1, 512, 50.0), Err(ProfileError::InvalidAlpha(_))));
        assert!(matches!(build_profile(0.05, 1, 512, 50.0), Err(ProfileError::AlphaTooSmall(_))));
        assert!(matches!(build_profile(0.2, 1, 512, 50.0), Err(ProfileError::SmallAlphaRadius { .. })));
        assert!(matches!(build_profile(1.0, 2, 512, 50.0), Err(ProfileError::UnsupportedDimension(2))));
        assert!(matches!(build_profile(1.0, 1, 100, 50.0), Err(ProfileError::InvalidResolution(100))));
    }

    #[test]
    fn fused_core_matches_columns() {
        for alpha in [0.6, 1.5] {
            let p = build_profile(alpha, 1, 512, 50.0).unwrap();
            for x in [-3e4, -80.0, 0.3, 51.0, 700.0, 1e9] {
                let (g, d, l) = p.eval_core(x);
                let v = p.eval_all(x);
                for (a, b) in [(g, v.g), (d, v.grad_g), (l, v.fraclap_g)] {
                    assert!((a - b).abs() <= 1e-12 * b.abs() + 1e-300, "{alpha} {x} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn hull_function_values() {
        let h = HullFunction::new(0.5, 1);
        assert_eq!(h.value(0.5), 1.0);
        assert!((h.value(2.0) - 2f64.powf(-1.5)).abs() < 1e-15);
        assert!(HullFunction::new(1.0, 1).value(3.0) <= h.value(3.0));
        assert!((h.total() - 6.0).abs() < 1e-12);
        assert!((h.integral(-1.0, 4.0) - (2.0 + 2.0 * (1.0 - 0.5))).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let p = build_profile(1.2, 1, 512, 50.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = StableProfile::read_csv(std::io::Cursor::new(buf)).unwrap();
        for x in [-7.3, -0.2, 0.0, 0.4, 3.1, 80.0] {
            for k in KernelKind::ALL {
                let a = p.eval(k, x);
                let b = q.eval(k, x);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{k:?} {x}");
            }
        }
    }
}
