//! The generator `L f = a L^{(α)} f + b f'` applied by principal-value
//! quadrature, and the invariant suites run against an assembled parametrix.
//!
//! The constant of the jump integral is calibrated by matching the
//! quadrature of `g^{(α)}` against its Fourier-side table at five points.

use std::io::{self, Write};

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coefficient_model::{CoefficientModel, Regime};
use crate::expr::{Expr, ExprError};
use crate::hull_bounds;
use crate::parametrix::{Field, KernelKindTag, LatticeSpec, Parametrix, ParametrixConfig, ParametrixError, TimeSpec};
use crate::quadrature::gl8;
use crate::stable_kernels::{KernelKind, StableProfile};
use crate::stable_sim::{self, SimError, SimSpec};

pub const CALIBRATION_POINTS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
pub const CALIBRATION_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Parametrix(#[from] ParametrixError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("jump-integral calibration spread {spread:e} exceeds {CALIBRATION_TOL:e}")]
    Calibration { spread: f64 },
    #[error("the stencil and the parametrix use different models")]
    ModelMismatch,
}

/// A function with first and second derivatives.
pub trait TestFunction: Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// An expression with central-difference derivatives.
#[derive(Debug, Clone)]
pub struct ExprFunction {
    expr: Expr,
    step: f64,
}

impl ExprFunction {
    pub fn new(expr: Expr) -> Self {
        ExprFunction { expr, step: 1e-3 }
    }

    pub fn parse(source: &str) -> Result<Self, ExprError> {
        Ok(Self::new(Expr::parse(source)?))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// `sup |f|` sampled on `[-50, 50]`.
    pub fn sup_norm(&self) -> f64 {
        (0..=100_000).map(|i| self.expr.eval(-50.0 + i as f64 * 1e-3).abs()).fold(0.0, f64::max)
    }
}

impl TestFunction for ExprFunction {
    fn value(&self, x: f64) -> f64 {
        self.expr.eval(x)
    }

    fn d1(&self, x: f64) -> f64 {
        let h = self.step;
        (self.expr.eval(x + h) - self.expr.eval(x - h)) / (2.0 * h)
    }

    fn d2(&self, x: f64) -> f64 {
        let h = self.step;
        (self.expr.eval(x + h) - 2.0 * self.expr.eval(x) + self.expr.eval(x - h)) / (h * h)
    }
}

/// The unit stable density with its tabulated derivatives.
pub struct ProfileFunction<'p>(pub &'p StableProfile);

impl TestFunction for ProfileFunction<'_> {
    fn value(&self, x: f64) -> f64 {
        self.0.eval(KernelKind::G, x)
    }

    fn d1(&self, x: f64) -> f64 {
        self.0.eval(KernelKind::GradG, x)
    }

    fn d2(&self, x: f64) -> f64 {
        self.0.eval(KernelKind::HessG, x)
    }
}

/// Natural cubic spline, constant beyond the end nodes.
#[derive(Debug, Clone)]
pub struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    pub fn new(x: &[f64], y: &[f64]) -> Spline {
        let n = x.len();
        assert!(n >= 3 && n == y.len());
        // tridiagonal system for the second derivatives, m_0 = m_{n-1} = 0
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0 - a * c[i - 1];
            c[i] = h1 / 6.0 / b;
            d[i] = ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0 - a * d[i - 1]) / b;
        }
        let mut m = vec![0.0; n];
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        Spline { x: x.to_vec(), y: y.to_vec(), m }
    }

    fn locate(&self, x: f64) -> Option<(usize, f64, f64)> {
        let n = self.x.len();
        if x <= self.x[0] || x >= self.x[n - 1] {
            return None;
        }
        let i = self.x.partition_point(|&v| v <= x) - 1;
        let h = self.x[i + 1] - self.x[i];
        Some((i, h, (x - self.x[i]) / h))
    }
}

impl TestFunction for Spline {
    fn value(&self, x: f64) -> f64 {
        match self.locate(x) {
            None => {
                if x <= self.x[0] {
                    self.y[0]
                } else {
                    *self.y.last().unwrap()
                }
            }
            Some((i, h, t)) => {
                let s = 1.0 - t;
                s * self.y[i]
                    + t * self.y[i + 1]
                    + h * h / 6.0 * ((s * s * s - s) * self.m[i] + (t * t * t - t) * self.m[i + 1])
            }
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self.locate(x) {
            None => 0.0,
            Some((i, h, t)) => {
                let s = 1.0 - t;
                (self.y[i + 1] - self.y[i]) / h
                    + h / 6.0 * (-(3.0 * s * s - 1.0) * self.m[i] + (3.0 * t * t - 1.0) * self.m[i + 1])
            }
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match self.locate(x) {
            None => 0.0,
            Some((i, _, t)) => (1.0 - t) * self.m[i] + t * self.m[i + 1],
        }
    }
}

/// Quadrature layout of the jump integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StencilSpec {
    /// Resolution of the near field; the principal-value cutoff is twice this.
    pub grid_spacing: f64,
    /// Panels of five grid spacings up to `near`, geometric panels up to `far`.
    pub near: f64,
    pub far: f64,
}

impl Default for StencilSpec {
    fn default() -> Self {
        StencilSpec { grid_spacing: 0.01, near: 50.0, far: 1e6 }
    }
}

/// `P.V. ∫ (f(x+u) - f(x)) |u|^{-1-α} du` with the part inside the cutoff
/// replaced by its second-order Taylor term.
pub fn jump_integral(spec: &StencilSpec, alpha: f64, f: &dyn TestFunction, x: f64) -> f64 {
    let rho = 2.0 * spec.grid_spacing;
    let fx = f.value(x);
    let inner = f.d2(x) * rho.powf(2.0 - alpha) / (2.0 - alpha);
    let sym = |u: f64| (f.value(x + u) + f.value(x - u) - 2.0 * fx) * u.powf(-1.0 - alpha);
    let width = 5.0 * spec.grid_spacing;
    let panels = ((spec.near - rho) / width).ceil() as usize;
    let w = (spec.near - rho) / panels as f64;
    let mut outer = 0.0;
    for k in 0..panels {
        let a = rho + k as f64 * w;
        outer += gl8().integrate(a, a + w, sym);
    }
    let mut a = spec.near;
    while a < spec.far {
        let b = (1.5 * a).min(spec.far);
        outer += gl8().integrate(a, b, sym);
        a = b;
    }
    // f is taken as settled to its values at ±far beyond the last panel
    inner + outer + (f.value(x + spec.far) + f.value(x - spec.far) - 2.0 * fx) * spec.far.powf(-alpha) / alpha
}

/// `α 2^{α-1} Γ((1+α)/2) / (√π Γ(1-α/2))`.
pub fn closed_form_c_alpha(alpha: f64) -> f64 {
    use statrs::function::gamma::gamma;
    alpha * 2f64.powf(alpha - 1.0) * gamma(0.5 * (1.0 + alpha)) / (std::f64::consts::PI.sqrt() * gamma(1.0 - 0.5 * alpha))
}

/// Result of the jump-integral calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub points: Vec<f64>,
    pub constants: Vec<f64>,
    pub c_alpha: f64,
    /// Largest relative deviation of a point constant from their mean.
    pub spread: f64,
}

/// The generator of the process as a quadrature stencil.
#[derive(Debug, Clone)]
pub struct GeneratorStencil<'m> {
    model: &'m CoefficientModel,
    spec: StencilSpec,
    calibration: Calibration,
}

impl<'m> GeneratorStencil<'m> {
    /// Calibrates the jump constant against the tabulated `L^{(α)} g^{(α)}`.
    pub fn calibrate(
        model: &'m CoefficientModel,
        profile: &StableProfile,
        spec: StencilSpec,
    ) -> Result<Self, VerifyError> {
        let alpha = model.alpha();
        if (profile.alpha() - alpha).abs() > 1e-12 {
            return Err(ParametrixError::ProfileMismatch { profile: profile.alpha(), model: alpha }.into());
        }
        let g = ProfileFunction(profile);
        let constants: Vec<f64> = CALIBRATION_POINTS
            .iter()
            .map(|&x| profile.eval(KernelKind::FracLapG, x) / jump_integral(&spec, alpha, &g, x))
            .collect();
        let c_alpha = constants.iter().sum::<f64>() / constants.len() as f64;
        let spread = constants.iter().map(|c| (c / c_alpha - 1.0).abs()).fold(0.0, f64::max);
        if spread >= CALIBRATION_TOL {
            return Err(VerifyError::Calibration { spread });
        }
        let calibration = Calibration { points: CALIBRATION_POINTS.to_vec(), constants, c_alpha, spread };
        Ok(GeneratorStencil { model, spec, calibration })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn spec(&self) -> &StencilSpec {
        &self.spec
    }

    pub fn pv_cutoff(&self) -> f64 {
        2.0 * self.spec.grid_spacing
    }

    /// `L^{(α)} f(x)`.
    pub fn fractional_laplacian(&self, f: &dyn TestFunction, x: f64) -> f64 {
        self.calibration.c_alpha * jump_integral(&self.spec, self.model.alpha(), f, x)
    }

    /// `L f(x) = a(x) L^{(α)} f(x) + b(x) f'(x)`.
    pub fn apply(&self, f: &dyn TestFunction, x: f64) -> f64 {
        self.model.a(x) * self.fractional_laplacian(f, x) + self.model.b(x) * f.d1(x)
    }

    /// `L f` at every point of `xs`.
    pub fn apply_all(&self, f: &dyn TestFunction, xs: &[f64]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.apply(f, x)).collect()
    }

    /// `L f` tabulated with spacing `step` on `[lo, hi]` and on geometric
    /// wings reaching `1e6` beyond it, linear in between and evaluated
    /// directly outside.
    pub fn table<'s>(&'s self, f: &'s dyn TestFunction, lo: f64, hi: f64, step: f64) -> GeneratorTable<'s, 'm> {
        let n = ((hi - lo) / step).ceil() as usize;
        let step = (hi - lo) / n as f64;
        let mut wing = Vec::new();
        let (mut d, mut w) = (0.0, step);
        while d < 1e6 {
            w *= 1.01;
            d += w;
            wing.push(d);
        }
        let mut xs: Vec<f64> = wing.iter().rev().map(|d| lo - d).collect();
        xs.extend((0..=n).map(|i| lo + i as f64 * step));
        xs.extend(wing.iter().map(|d| hi + d));
        let values = self.apply_all(f, &xs);
        GeneratorTable { stencil: self, f, xs, values }
    }
}

/// Tabulated `L f`.
pub struct GeneratorTable<'s, 'm> {
    stencil: &'s GeneratorStencil<'m>,
    f: &'s dyn TestFunction,
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl GeneratorTable<'_, '_> {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x < self.xs[n - 1]) {
            return self.stencil.apply(self.f, x);
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// The invariant suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Mass,
    Positivity,
    ChapmanKolmogorov,
    Duhamel,
    PdeResidual,
    ResidueBound,
    HullChecks,
    McAgreement,
    Martingale,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Mass,
        Suite::Positivity,
        Suite::ChapmanKolmogorov,
        Suite::Duhamel,
        Suite::PdeResidual,
        Suite::ResidueBound,
        Suite::HullChecks,
        Suite::McAgreement,
        Suite::Martingale,
    ];
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string())).map_err(|_| format!("unknown suite `{s}`"))
    }
}

fn default_bank() -> Vec<String> {
    [
        "exp(-x*x/0.5)",
        "exp(-(x-1)*(x-1))",
        "exp(-(x+1.5)*(x+1.5)/0.32)",
        "exp(-(x-0.5)*(x-0.5)/4.5)",
        "exp(-(x+0.3)*(x+0.3)/0.18)",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Parameters of the suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suites: Vec<Suite>,
    /// Test functions as expressions in `x`.
    pub bank: Vec<String>,
    pub stencil: StencilSpec,
    pub mass_times: Vec<f64>,
    pub mass_points: Vec<f64>,
    pub mass_tol: f64,
    pub dt_mass_tol: f64,
    pub positivity_tol: f64,
    pub ck_pairs: Vec<(f64, f64)>,
    pub ck_tol: f64,
    pub ck_floor: f64,
    pub duhamel_time: f64,
    pub duhamel_tol: f64,
    pub short_times: Vec<f64>,
    pub pde_times: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    pub pde_tol: f64,
    pub pde_fd_step: f64,
    /// Departure points `|x| ≤ check_radius` enter the functional checks.
    pub check_radius: f64,
    pub residue_tol: f64,
    pub hull_fractions: Vec<f64>,
    pub hull_times: Vec<f64>,
    pub simulation: SimSpec,
    pub mc_threshold: f64,
    pub martingale_paths: usize,
    pub martingale_steps: usize,
    pub martingale_allowance: f64,
    pub weak_error_steps: Vec<usize>,
    pub weak_error_paths: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            suites: Suite::ALL.to_vec(),
            bank: default_bank(),
            stencil: StencilSpec::default(),
            mass_times: vec![0.1, 0.5, 1.0],
            mass_points: vec![-2.0, 0.0, 2.0],
            mass_tol: 5e-3,
            dt_mass_tol: 2e-2,
            positivity_tol: 1e-6,
            ck_pairs: vec![(1.0, 0.25), (1.0, 0.5), (0.5, 0.25)],
            ck_tol: 2e-2,
            ck_floor: 1e-4,
            duhamel_time: 0.5,
            duhamel_tol: 1e-2,
            short_times: vec![0.1, 0.01, 0.001],
            pde_times: vec![0.25, 0.5, 1.0],
            eps_ladder: vec![0.2, 0.1, 0.05],
            pde_tol: 5e-2,
            pde_fd_step: 5e-3,
            check_radius: 10.0,
            residue_tol: 0.25,
            hull_fractions: vec![0.1, 0.5, 0.9],
            hull_times: vec![0.1, 0.5, 1.0],
            simulation: SimSpec::default(),
            mc_threshold: 4.0,
            martingale_paths: 20_000,
            martingale_steps: 200,
            martingale_allowance: 0.02,
            weak_error_steps: vec![50, 100, 200, 400],
            weak_error_paths: 20_000,
        }
    }
}

/// One line of a suite report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub check: String,
    pub regime: Regime,
    pub alpha: f64,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub details: serde_json::Value,
}

/// Writes reports as JSON lines.
pub fn write_json_lines(reports: &[CheckReport], mut w: impl Write) -> io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Runs suites against one parametrix.
pub struct Verifier<'p, 'a> {
    px: &'p Parametrix<'a>,
    stencil: GeneratorStencil<'a>,
    bank: Vec<ExprFunction>,
    norms: Vec<f64>,
    config: VerifyConfig,
}

impl<'p, 'a> Verifier<'p, 'a> {
    pub fn new(px: &'p Parametrix<'a>, config: &VerifyConfig) -> Result<Self, VerifyError> {
        let kernels = px.kernels();
        let stencil = GeneratorStencil::calibrate(kernels.model(), kernels.profile(), config.stencil)?;
        let bank = config.bank.iter().map(|s| ExprFunction::parse(s)).collect::<Result<Vec<_>, _>>()?;
        let norms = bank.iter().map(|f| f.sup_norm()).collect();
        Ok(Verifier { px, stencil, bank, norms, config: config.clone() })
    }

    pub fn stencil(&self) -> &GeneratorStencil<'a> {
        &self.stencil
    }

    pub fn run(&self, suite: Suite) -> Result<Vec<CheckReport>, VerifyError> {
        log::info!("running suite {suite}");
        match suite {
            Suite::Mass => self.mass(),
            Suite::Positivity => self.positivity(),
            Suite::ChapmanKolmogorov => self.chapman_kolmogorov(),
            Suite::Duhamel => self.duhamel(),
            Suite::PdeResidual => self.pde_residual(),
            Suite::ResidueBound => self.residue_bound(),
            Suite::HullChecks => self.hull_checks(),
            Suite::McAgreement => self.mc_agreement(),
            Suite::Martingale => self.martingale(),
        }
    }

    /// Every configured suite, in order.
    pub fn run_all(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let mut out = Vec::new();
        for &s in &self.config.suites {
            out.extend(self.run(s)?);
        }
        Ok(out)
    }

    fn report(&self, suite: Suite, check: &str, pass: bool, measured: f64, tolerance: f64, details: serde_json::Value) -> CheckReport {
        CheckReport {
            suite,
            check: check.to_string(),
            regime: self.px.regime(),
            alpha: self.px.kernels().alpha(),
            pass,
            measured,
            tolerance,
            details,
        }
    }

    /// Lattice rows `i` with `|x_i| ≤ check_radius`.
    fn check_rows(&self) -> Vec<usize> {
        let lat = self.px.lattice();
        lat.interior().filter(|&i| lat.node(i).abs() <= self.config.check_radius).collect()
    }

    /// Bank functions sampled at every lattice node, one column each.
    fn bank_matrix(&self) -> Array2<f64> {
        let nodes = self.px.lattice().nodes();
        let mut m = Array2::zeros((nodes.len(), self.bank.len()));
        for (k, f) in self.bank.iter().enumerate() {
            for (i, &x) in nodes.iter().enumerate() {
                m[[i, k]] = f.value(x);
            }
        }
        m
    }

    fn apply_many(&self, t: f64, f: &Array2<f64>) -> Result<Array2<f64>, VerifyError> {
        let cols: Vec<Array1<f64>> =
            f.axis_iter(Axis(1)).map(|c| self.px.apply(t, c)).collect::<Result<_, ParametrixError>>()?;
        Ok(ndarray::stack(Axis(1), &cols.iter().map(|c| c.view()).collect::<Vec<_>>()).unwrap())
    }

    fn apply_eps_many(&self, t: f64, eps: f64, f: &Array2<f64>) -> Result<Array2<f64>, VerifyError> {
        let cols: Vec<Array1<f64>> =
            f.axis_iter(Axis(1)).map(|c| self.px.apply_eps(t, eps, c)).collect::<Result<_, ParametrixError>>()?;
        Ok(ndarray::stack(Axis(1), &cols.iter().map(|c| c.view()).collect::<Vec<_>>()).unwrap())
    }

    fn mass(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let px = self.px;
        let mut out = Vec::new();
        for &t in &cfg.mass_times {
            let rows = px.density_rows(t, &cfg.mass_points)?;
            let errs: Vec<f64> = rows.axis_iter(Axis(0)).map(|r| (r.sum() - 1.0).abs()).collect();
            let worst = errs.iter().copied().fold(0.0, f64::max);
            out.push(self.report(
                Suite::Mass,
                &format!("mass_t{t}"),
                worst < cfg.mass_tol,
                worst,
                cfg.mass_tol,
                json!({ "t": t, "x": cfg.mass_points, "errors": errs }),
            ));
        }
        // conservation differentiated in time, and the derivative bound
        let inner = px.lattice().interior();
        let alpha = px.kernels().alpha();
        let mut dt_mass: f64 = 0.0;
        let mut dt_ratio: f64 = 0.0;
        let rows = self.check_rows();
        let times: Vec<f64> = px.grid().times().iter().copied().filter(|&t| t >= 0.05).collect();
        for &t in &times {
            let d = px.dt_density_matrix(t)?;
            let h = px.hull_field().at(t);
            let scale = (1.0 / t).max(t.powf(-1.0 / alpha));
            for &i in &rows {
                dt_mass = dt_mass.max(d.row(i).sum().abs());
                for j in inner.clone() {
                    dt_ratio = dt_ratio.max(d[[i, j]].abs() / (scale * h[[i, j]]));
                }
            }
        }
        out.push(self.report(
            Suite::Mass,
            "dt_mass",
            dt_mass < cfg.dt_mass_tol,
            dt_mass,
            cfg.dt_mass_tol,
            json!({ "times": times }),
        ));
        out.push(self.report(
            Suite::Mass,
            "dt_bound",
            dt_ratio.is_finite(),
            dt_ratio,
            f64::INFINITY,
            json!({ "times": times }),
        ));
        Ok(out)
    }

    fn positivity(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let px = self.px;
        let tol = self.config.positivity_tol;
        let mut worst = f64::INFINITY;
        let mut at = (0.0, 0.0, 0.0);
        for &t in px.grid().times() {
            let p = px.lattice_grid(KernelKindTag::Density, &[t])?;
            let n = p.y.len();
            for (ix, &x) in p.x.iter().enumerate() {
                let scale = p.y.iter().map(|&y| px.kernels().p0(t, x, y)).collect::<Result<Vec<_>, _>>()?;
                let scale = scale.into_iter().fold(0.0, f64::max);
                for iy in 0..n {
                    let v = p.value(0, ix, iy) / scale;
                    if v < worst {
                        worst = v;
                        at = (t, x, p.y[iy]);
                    }
                }
            }
        }
        Ok(vec![self.report(
            Suite::Positivity,
            "min_relative_density",
            worst >= -tol,
            worst,
            tol,
            json!({ "t": at.0, "x": at.1, "y": at.2 }),
        )])
    }

    fn chapman_kolmogorov(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let px = self.px;
        let lat = px.lattice();
        let inner = lat.interior();
        let mut out = Vec::new();
        for &(t, s) in &cfg.ck_pairs {
            let composed = px.density_matrix(t - s)?.dot(&px.density_matrix(s)?);
            let direct = px.density_matrix(t)?;
            let mut worst: f64 = 0.0;
            for i in inner.clone() {
                for j in inner.clone() {
                    let p = direct[[i, j]] / lat.width(j);
                    if p > cfg.ck_floor {
                        worst = worst.max((composed[[i, j]] / direct[[i, j]] - 1.0).abs());
                    }
                }
            }
            out.push(self.report(
                Suite::ChapmanKolmogorov,
                &format!("ck_t{t}_s{s}"),
                worst < cfg.ck_tol,
                worst,
                cfg.ck_tol,
                json!({ "t": t, "s": s, "floor": cfg.ck_floor }),
            ));
        }
        Ok(out)
    }

    fn duhamel(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let px = self.px;
        let t = cfg.duhamel_time;
        let nodes = px.lattice().nodes().to_vec();
        let f = self.bank_matrix();
        let mut lf = Array2::zeros(f.raw_dim());
        for (k, func) in self.bank.iter().enumerate() {
            lf.column_mut(k).assign(&Array1::from(self.stencil.apply_all(func, &nodes)));
        }
        // ∫_0^t P_s Lf ds: P_s Lf → Lf as s → 0 on [0, t_0], Gauss panels between grid times
        let mut knots = vec![0.0];
        knots.extend(px.grid().times().iter().copied().filter(|&s| s < t * (1.0 - 1e-12)));
        knots.push(t);
        let mut integral = Array2::zeros(f.raw_dim());
        let first = knots[1];
        integral.scaled_add(0.5 * first, &lf);
        integral.scaled_add(0.5 * first, &self.apply_many(first, &lf)?);
        for w in knots[1..].windows(2) {
            for (s, q) in crate::quadrature::gl4().mapped(w[0], w[1]) {
                integral.scaled_add(q, &self.apply_many(s, &lf)?);
            }
        }
        let pt = self.apply_many(t, &f)?;
        let rows = self.check_rows();
        let mut out = Vec::new();
        for k in 0..self.bank.len() {
            let worst = rows
                .iter()
                .map(|&i| (pt[[i, k]] - f[[i, k]] - integral[[i, k]]).abs())
                .fold(0.0, f64::max)
                / self.norms[k];
            out.push(self.report(
                Suite::Duhamel,
                &format!("duhamel_f{k}"),
                worst < cfg.duhamel_tol,
                worst,
                cfg.duhamel_tol,
                json!({ "t": t, "f": self.bank[k].expr().source() }),
            ));
        }
        // short-time identity P_t f → f
        let mut sups = Vec::new();
        for &s in &cfg.short_times {
            let ps = self.apply_many(s, &f)?;
            let sup = rows
                .iter()
                .flat_map(|&i| (0..self.bank.len()).map(move |k| (i, k)))
                .map(|(i, k)| (ps[[i, k]] - f[[i, k]]).abs() / self.norms[k])
                .fold(0.0, f64::max);
            sups.push(sup);
        }
        let decreasing = sups.windows(2).all(|w| w[1] < w[0]);
        out.push(self.report(
            Suite::Duhamel,
            "short_time_identity",
            decreasing,
            *sups.last().unwrap_or(&0.0),
            f64::NAN,
            json!({ "times": cfg.short_times, "sup_errors": sups }),
        ));
        Ok(out)
    }

    /// `sup_x |(L_x - ∂_t) ∫ p_{t,ε}(x, y) f(y) dy| / ‖f‖` per bank function.
    /// Also returns the node where the supremum is attained.
    fn pde_residuals(&self, t: f64, eps: f64) -> Result<Vec<(f64, f64)>, VerifyError> {
        let px = self.px;
        let f = self.bank_matrix();
        let k = self.config.pde_fd_step;
        let nodes = px.lattice().nodes();
        let u = self.apply_eps_many(t, eps, &f)?;
        let dt = if t + k <= px.horizon() {
            (self.apply_eps_many(t + k, eps, &f)? - self.apply_eps_many(t - k, eps, &f)?) / (2.0 * k)
        } else {
            (3.0 * &u - 4.0 * self.apply_eps_many(t - k, eps, &f)? + self.apply_eps_many(t - 2.0 * k, eps, &f)?)
                / (2.0 * k)
        };
        let rows = self.check_rows();
        let xs: Vec<f64> = rows.iter().map(|&i| nodes[i]).collect();
        let mut out = Vec::new();
        for c in 0..self.bank.len() {
            let spline = Spline::new(nodes, &u.column(c).to_vec());
            let lu = self.stencil.apply_all(&spline, &xs);
            let (worst, at) = rows
                .iter()
                .zip(&lu)
                .map(|(&i, l)| ((l - dt[[i, c]]).abs(), nodes[i]))
                .fold((0.0, f64::NAN), |m, v| if v.0 > m.0 { v } else { m });
            out.push((worst / self.norms[c], at));
        }
        Ok(out)
    }

    fn pde_residual(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let mut out = Vec::new();
        for &t in &cfg.pde_times {
            let ladder: Vec<Vec<(f64, f64)>> =
                cfg.eps_ladder.iter().map(|&e| self.pde_residuals(t, e)).collect::<Result<_, _>>()?;
            for k in 0..self.bank.len() {
                let vals: Vec<f64> = ladder.iter().map(|v| v[k].0).collect();
                let argmax: Vec<f64> = ladder.iter().map(|v| v[k].1).collect();
                let decreasing = vals.windows(2).all(|w| w[1] < w[0]);
                let last = *vals.last().unwrap();
                out.push(self.report(
                    Suite::PdeResidual,
                    &format!("pde_t{t}_f{k}"),
                    decreasing && last < cfg.pde_tol,
                    last,
                    cfg.pde_tol,
                    json!({ "t": t, "eps": cfg.eps_ladder, "residuals": vals, "argmax_x": argmax, "decreasing": decreasing }),
                ));
            }
        }
        // p_{t,ε} → p_t along the ladder
        let px = self.px;
        let t = 0.5;
        let p = px.density_matrix(t)?;
        let rows = self.check_rows();
        let inner = px.lattice().interior();
        let mut diffs = Vec::new();
        for &e in &cfg.eps_ladder {
            let pe = px.density_eps_matrix(t, e)?;
            let d = rows
                .iter()
                .flat_map(|&i| inner.clone().map(move |j| (i, j)))
                .map(|(i, j)| (pe[[i, j]] - p[[i, j]]).abs() / px.lattice().width(j))
                .fold(0.0, f64::max);
            diffs.push(d);
        }
        out.push(self.report(
            Suite::PdeResidual,
            "eps_convergence",
            diffs.windows(2).all(|w| w[1] < w[0]),
            *diffs.last().unwrap(),
            f64::NAN,
            json!({ "t": t, "eps": cfg.eps_ladder, "sup_differences": diffs }),
        ));
        Ok(out)
    }

    fn residue_bound(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let px = self.px;
        let base = px.config();
        // the coarse construction has half the nodes and the squared time ratio,
        // so the given parametrix is its 2x refinement
        let coarse_cfg = ParametrixConfig {
            lattice: LatticeSpec { nodes: base.lattice.nodes.div_ceil(2), ..base.lattice.clone() },
            time: TimeSpec { ratio: base.time.ratio * base.time.ratio, max_step: 2.0 * base.time.max_step, ..base.time.clone() },
            ..base.clone()
        };
        let k = px.kernels();
        let coarse = Parametrix::new(k.model(), k.profile(), px.regime(), &coarse_cfg)?;
        let times: Vec<f64> = coarse.grid().times().to_vec();
        let measure = |p: &Parametrix<'_>| -> Result<f64, VerifyError> {
            let delta = p.delta();
            let inner = p.lattice().interior();
            let mut best: f64 = 0.0;
            for &t in &times {
                let r = p.residue_matrix(t)?;
                let h = p.hull_field().at(t);
                let s = t.powf(delta);
                for i in inner.clone() {
                    for j in inner.clone() {
                        best = best.max(r[[i, j]].abs() / (s * h[[i, j]]));
                    }
                }
            }
            Ok(best)
        };
        let c = measure(&coarse)?;
        let f = measure(px)?;
        let change = (f / c - 1.0).abs();
        let tol = self.config.residue_tol;
        Ok(vec![self.report(
            Suite::ResidueBound,
            "residue_over_hull",
            c.is_finite() && f.is_finite() && change < tol,
            change,
            tol,
            json!({ "coarse": c, "fine": f, "delta": px.delta(), "kappa": px.kappa(), "times": times }),
        )])
    }

    fn hull_checks(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let px = self.px;
        let k = px.kernels();
        let spec = &px.config().lattice;
        let wrap = |r: hull_bounds::HullReport, tol: f64| {
            let details = serde_json::to_value(&r).unwrap();
            self.report(Suite::HullChecks, &r.check, r.pass, r.refinement_ratio, tol, details)
        };
        let mut out = Vec::new();
        out.push(wrap(hull_bounds::check_subconvolution(k, spec, px.horizon(), &cfg.hull_fractions)?, 2.0));
        out.push(wrap(hull_bounds::check_mass_bounds(k, &cfg.hull_times, &cfg.mass_points)?, 2.0));
        out.push(wrap(hull_bounds::check_domination(k, spec, &cfg.hull_times)?, 2.0));
        let beta = k.alpha() - k.kappa();
        let closed = hull_bounds::check_hull_integral(beta);
        let err = (closed.measured_constant - (2.0 + 2.0 / beta)).abs();
        out.push(self.report(
            Suite::HullChecks,
            "hull_integral",
            closed.pass,
            err,
            1e-6,
            json!({ "beta": beta, "quadrature": closed.measured_constant }),
        ));
        let xs: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 0.01).collect();
        let eps = 0.5 * beta;
        let (dilation, absorption, chain) = hull_bounds::hull_function_constants(beta, eps, &xs);
        out.push(self.report(
            Suite::HullChecks,
            "hull_function_properties",
            chain && dilation.is_finite() && absorption.is_finite(),
            dilation.max(absorption),
            f64::INFINITY,
            json!({ "beta": beta, "dilation": dilation, "absorption": absorption, "domination_chain": chain }),
        ));
        Ok(out)
    }

    fn mc_agreement(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let sim = &cfg.simulation;
        let px = self.px;
        let model = px.kernels().model();
        let ens = stable_sim::simulate(model, sim.x0, sim.horizon, sim.n_steps, sim.n_paths, sim.seed)?;
        let lat = px.lattice();
        let spec = lat.spec();
        let h = match sim.bandwidth {
            stable_sim::Bandwidth::Auto => stable_sim::iqr_bandwidth(&ens.terminal_values),
            stable_sim::Bandwidth::Fixed(h) => h,
        };
        let nodes: Vec<f64> =
            lat.interior_nodes().iter().copied().filter(|&y| y - h >= spec.lo && y + h <= spec.hi).collect();
        let emp = stable_sim::empirical_density(&ens, &nodes, stable_sim::Bandwidth::Fixed(h), sim.seed)?;
        // parametrix density smoothed with the same kernel
        let dz = h / 16.0;
        let nz = ((spec.hi - spec.lo) / dz).floor() as usize;
        let zs: Vec<f64> = (0..=nz).map(|i| spec.lo + i as f64 * dz).collect();
        let p = px.density_grid(sim.horizon, &[sim.x0], &zs)?;
        let smoothed: Vec<f64> = nodes
            .iter()
            .map(|&y| {
                let lo = zs.partition_point(|&z| z <= y - h);
                let hi = zs.partition_point(|&z| z < y + h);
                (lo..hi).map(|i| p.values[i] * stable_sim::epanechnikov((y - zs[i]) / h)).sum::<f64>() * dz / h
            })
            .collect();
        let mut scores: Vec<(f64, usize)> = (0..nodes.len())
            .filter(|&k| emp.std_errors[k] > 0.0)
            .map(|k| ((emp.values[k] - smoothed[k]).abs() / emp.std_errors[k], k))
            .collect();
        let counted = scores.len();
        scores.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (worst, at) = scores.first().map_or((0.0, f64::NAN), |&(z, k)| (z, nodes[k]));
        let largest: Vec<serde_json::Value> = scores
            .iter()
            .take(5)
            .map(|&(z, k)| json!({ "y": nodes[k], "z": z, "empirical": emp.values[k], "parametrix": smoothed[k], "se": emp.std_errors[k] }))
            .collect();
        let mut out = vec![self.report(
            Suite::McAgreement,
            "standardized_deviation",
            worst <= cfg.mc_threshold,
            worst,
            cfg.mc_threshold,
            json!({
                "t": sim.horizon, "x0": sim.x0, "n_paths": sim.n_paths, "n_steps": sim.n_steps,
                "bandwidth": h, "worst_node": at, "nodes_with_se": counted, "aborted": ens.aborted,
                "largest": largest,
            }),
        )];
        // wide bins with binomial errors from the parametrix probabilities
        let edges: [f64; 10] = [-15.0, -11.0, -8.0, -5.0, -2.0, 2.0, 5.0, 8.0, 11.0, 15.0];
        let n = ens.terminal_values.len() as f64;
        let mut bins = Vec::new();
        let mut worst_bin: f64 = 0.0;
        for w in edges.windows(2) {
            let (a, b) = (w[0].max(spec.lo), w[1].min(spec.hi));
            if a >= b {
                continue;
            }
            let count = ens.terminal_values.iter().filter(|&&x| x >= a && x < b).count() as f64;
            let prob: f64 = zs
                .windows(2)
                .zip(p.values.windows(2))
                .filter(|(z, _)| z[0] >= a && z[1] <= b)
                .map(|(z, v)| 0.5 * (z[1] - z[0]) * (v[0] + v[1]))
                .sum();
            let z = (count / n - prob) / (prob * (1.0 - prob) / n).sqrt();
            worst_bin = worst_bin.max(z.abs());
            bins.push(json!({ "bin": [a, b], "empirical": count / n, "parametrix": prob, "z": z }));
        }
        out.push(self.report(
            Suite::McAgreement,
            "binned_probabilities",
            worst_bin <= cfg.mc_threshold,
            worst_bin,
            cfg.mc_threshold,
            json!({ "bins": bins }),
        ));
        let mass = emp.mass();
        out.push(self.report(
            Suite::McAgreement,
            "empirical_mass",
            (0.9..=1.0).contains(&mass),
            mass,
            0.9,
            json!({ "box": [spec.lo, spec.hi] }),
        ));
        // weak error of the scheme under step doubling
        let f0 = &self.bank[0];
        let ladder = stable_sim::weak_error_ladder(
            model,
            sim.x0,
            sim.horizon,
            &cfg.weak_error_steps,
            cfg.weak_error_paths,
            sim.seed,
            |x| f0.value(x),
        );
        let monotone = ladder.windows(2).all(|w| {
            let (a, b) = (w[0].difference, w[1].difference);
            b.mean.abs() <= a.mean.abs() + 2.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
        });
        out.push(self.report(
            Suite::McAgreement,
            "weak_error_decay",
            monotone,
            ladder.last().map_or(0.0, |r| r.difference.mean.abs()),
            f64::NAN,
            serde_json::to_value(&ladder).unwrap(),
        ));
        Ok(out)
    }

    fn martingale(&self) -> Result<Vec<CheckReport>, VerifyError> {
        let cfg = &self.config;
        let sim = &cfg.simulation;
        let model = self.px.kernels().model();
        let ens =
            stable_sim::simulate_paths(model, sim.x0, sim.horizon, cfg.martingale_steps, cfg.martingale_paths, sim.seed)?;
        let mut out = Vec::new();
        for (k, f) in self.bank.iter().enumerate() {
            let table = self.stencil.table(f, sim.x0 - 20.0, sim.x0 + 20.0, 0.01);
            let est = stable_sim::martingale_residual(&ens, |x| f.value(x), |x| table.eval(x))?;
            let allowance = cfg.martingale_allowance * self.norms[k];
            let bound = 4.0 * est.std_error + allowance;
            out.push(self.report(
                Suite::Martingale,
                &format!("martingale_f{k}"),
                est.mean.abs() <= bound,
                est.mean.abs(),
                bound,
                json!({
                    "f": f.expr().source(), "std_error": est.std_error, "n_paths": cfg.martingale_paths,
                    "n_steps": cfg.martingale_steps, "t": sim.horizon,
                }),
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient_model::ModelConfig;
    use crate::stable_kernels::{build_profile, default_radius_max};

    fn flat(alpha: f64) -> CoefficientModel {
        CoefficientModel::from_config(&ModelConfig::new("1", "0", alpha, 1.0, Regime::B)).unwrap()
    }

    #[test]
    fn calibration_recovers_closed_form_constant() {
        for alpha in [0.8, 1.5] {
            let m = flat(alpha);
            let p = build_profile(alpha, 1, 4096, default_radius_max(alpha)).unwrap();
            let s = GeneratorStencil::calibrate(&m, &p, StencilSpec::default()).unwrap();
            let c = s.calibration();
            assert!(c.spread < CALIBRATION_TOL);
            assert!((c.c_alpha / closed_form_c_alpha(alpha) - 1.0).abs() < 1e-4, "{alpha}: {}", c.c_alpha);
        }
    }

    #[test]
    fn gaussian_against_fourier_side() {
        use statrs::function::gamma::gamma;
        let alpha = 1.5;
        let m = flat(alpha);
        let p = build_profile(alpha, 1, 4096, default_radius_max(alpha)).unwrap();
        let s = GeneratorStencil::calibrate(&m, &p, StencilSpec::default()).unwrap();
        let f = ExprFunction::parse("exp(-x*x)").unwrap();
        // -(1/2π) ∫ |ξ|^α √π e^{-ξ²/4} dξ
        let exact = -2f64.powf(alpha) * gamma(0.5 * (alpha + 1.0)) / std::f64::consts::PI.sqrt();
        let got = s.apply(&f, 0.0);
        assert!((got / exact - 1.0).abs() < 1e-4, "{got} vs {exact}");
    }

    #[test]
    fn constants_are_annihilated() {
        let m = CoefficientModel::from_config(&ModelConfig::new("1 + 0.3*sin(x)", "0.5*cos(x)", 1.5, 1.0, Regime::B))
            .unwrap();
        let p = build_profile(1.5, 1, 4096, default_radius_max(1.5)).unwrap();
        let s = GeneratorStencil::calibrate(&m, &p, StencilSpec::default()).unwrap();
        let f = ExprFunction::parse("2.5").unwrap();
        for x in [-1.0, 0.0, 3.0] {
            assert!(s.apply(&f, x).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_density_matches_tables() {
        let alpha = 1.5;
        let m = CoefficientModel::from_config(&ModelConfig::new("1 + 0.3*sin(x)", "0.5*cos(x)", alpha, 1.0, Regime::B))
            .unwrap();
        let p = build_profile(alpha, 1, 4096, default_radius_max(alpha)).unwrap();
        let s = GeneratorStencil::calibrate(&m, &p, StencilSpec::default()).unwrap();
        let g = ProfileFunction(&p);
        for x in [-1.3, 0.2, 2.5] {
            let want = m.a(x) * p.eval(KernelKind::FracLapG, x) + m.b(x) * p.eval(KernelKind::GradG, x);
            assert!((s.apply(&g, x) - want).abs() < 1e-4 * want.abs().max(0.1));
        }
    }

    #[test]
    fn spline_reproduces_cubics_derivatives() {
        let xs: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let s = Spline::new(&xs, &ys);
        for x in [-1.23, 0.0, 0.77] {
            assert!((s.value(x) - f64::sin(x)).abs() < 1e-5);
            assert!((s.d1(x) - f64::cos(x)).abs() < 1e-3);
            assert!((s.d2(x) + f64::sin(x)).abs() < 2e-2);
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
