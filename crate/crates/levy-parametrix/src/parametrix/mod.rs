//! Parametrix construction of the transition density.
//!
//! The density is `p = p⁰ + p⁰ ⋆ Ψ` with `Ψ = Σ_{k≥1} Φ^{⋆k}`. Kernels are
//! kept in mass form on a [`Lattice`]: entry `(i, j)` of a matrix is the
//! integral of the kernel from node `x_i` over arrival cell `j`, so that a
//! space convolution is a matrix product and row sums are total masses.

pub mod field;
pub mod grid;
pub mod kernels;
pub mod lattice;
mod series;
mod solution;

pub use field::{convolve, convolve_apply, convolve_row, plan, Eval, Field, Half, Term, TimeField};
pub use grid::{TimeGrid, TimeSpec};
pub use kernels::{Assembler, CellMatrices, Extras, Kernels, PointValues};
pub use lattice::{Lattice, LatticeSpec, Panel};
pub use series::{RatioCheck, TruncationCertificate};
pub use solution::{DensityGrid, KernelKindTag};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::coefficient_model::{CoefficientModel, ModelError, Regime};
use crate::flow::FlowError;
use crate::quadrature::gl8;
use crate::stable_kernels::StableProfile;

#[derive(Debug, thiserror::Error)]
pub enum ParametrixError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("profile built for alpha = {profile} but the model has alpha = {model}")]
    ProfileMismatch { profile: f64, model: f64 },
    #[error("kappa = {kappa} must lie in (0, min(gamma, alpha)) with alpha = {alpha}, gamma = {gamma}")]
    InvalidKappa { kappa: f64, alpha: f64, gamma: f64 },
    #[error("time {t} lies outside (0, {horizon}]")]
    InvalidTime { t: f64, horizon: f64 },
    #[error("smoothing shift must lie in (0, {max}], got {eps}")]
    InvalidShift { eps: f64, max: f64 },
    #[error("series did not reach tolerance {tol} within {k_max} convolution powers (last contribution {last:e})")]
    Truncation { tol: f64, k_max: usize, last: f64 },
    #[error("point {x} lies outside the lattice box [{lo}, {hi}]")]
    OutsideBox { x: f64, lo: f64, hi: f64 },
    #[error("finite-difference step {step} is too large for t = {t}")]
    StepTooLarge { step: f64, t: f64 },
}

/// Numerical parameters of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParametrixConfig {
    pub lattice: LatticeSpec,
    pub time: TimeSpec,
    /// Hull parameter; defaults to `min(γ, 0.9α)`.
    pub kappa: Option<f64>,
    /// Series tolerance relative to the local `p⁰` scale.
    pub tol: f64,
    pub k_max: usize,
    /// Inflation of measured constants in the certificate.
    pub inflation: f64,
    /// Largest smoothing shift supported by [`Parametrix::density_eps`].
    pub shift_max: f64,
    /// Central-difference step for the time derivative of `Ψ`.
    pub fd_step: f64,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        ParametrixConfig {
            lattice: LatticeSpec::default(),
            time: TimeSpec::default(),
            kappa: None,
            tol: 1e-6,
            k_max: 40,
            inflation: 1.5,
            shift_max: 0.2,
            fd_step: 1e-3,
        }
    }
}

/// The assembled parametrix for one model and regime.
#[derive(Debug)]
pub struct Parametrix<'a> {
    kernels: Kernels<'a>,
    lattice: Lattice,
    grid: TimeGrid,
    config: ParametrixConfig,
    p0: TimeField,
    phi: TimeField,
    dt: TimeField,
    hull: TimeField,
    psi: TimeField,
    psi_vanishes: bool,
    certificate: TruncationCertificate,
}

const HEAD_RULE: fn() -> &'static crate::quadrature::GaussLegendre = gl8;

impl<'a> Parametrix<'a> {
    /// Assembles `p⁰`, `Φ` and the series `Ψ`.
    pub fn new(
        model: &'a CoefficientModel,
        profile: &'a StableProfile,
        regime: Regime,
        config: &ParametrixConfig,
    ) -> Result<Self, ParametrixError> {
        let kappa = config.kappa.unwrap_or_else(|| model.default_kappa());
        let kernels = Kernels::new(model, profile, regime, kappa)?;
        let probe = Lattice::new(&config.lattice, f64::INFINITY);
        let panel = (0.5 * kernels.coefficient_scale()).max(probe.step());
        let lattice = Lattice::new(&config.lattice, panel);
        let grid = TimeGrid::new(&config.time);
        let (p0, phi, dt, hull) = assemble_fields(&kernels, &lattice, &grid, config)?;
        let mut px = Parametrix {
            kernels,
            lattice,
            grid,
            config: config.clone(),
            psi: phi.clone(),
            psi_vanishes: false,
            p0,
            phi,
            dt,
            hull,
            certificate: TruncationCertificate::default(),
        };
        let (psi, cert) = series::psi_series(&px)?;
        px.psi_vanishes = psi.is_zero();
        px.psi = psi;
        px.certificate = cert;
        Ok(px)
    }

    pub fn kernels(&self) -> &Kernels<'a> {
        &self.kernels
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn config(&self) -> &ParametrixConfig {
        &self.config
    }

    pub fn regime(&self) -> Regime {
        self.kernels.regime()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.last()
    }

    pub fn delta(&self) -> f64 {
        self.kernels.delta()
    }

    pub fn kappa(&self) -> f64 {
        self.kernels.kappa()
    }

    pub fn certificate(&self) -> &TruncationCertificate {
        &self.certificate
    }

    /// Mass-form `p⁰` on the extended grid.
    pub fn p0_field(&self) -> &TimeField {
        &self.p0
    }

    pub fn phi_field(&self) -> &TimeField {
        &self.phi
    }

    pub fn psi_field(&self) -> &TimeField {
        &self.psi
    }

    pub fn hull_field(&self) -> &TimeField {
        &self.hull
    }

    pub fn dt_field(&self) -> &TimeField {
        &self.dt
    }

    /// Fresh cell matrices at an arbitrary time.
    pub fn cell_matrices(&self, t: f64, extras: Extras) -> Result<CellMatrices, ParametrixError> {
        Assembler::new(&self.kernels, &self.lattice).matrices(t, extras)
    }

    fn check_time(&self, t: f64) -> Result<(), ParametrixError> {
        let horizon = self.horizon();
        if t > 0.0 && t <= horizon * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(ParametrixError::InvalidTime { t, horizon })
        }
    }
}

/// Grid of the `p⁰` field: the main grid extended past the horizon by the
/// largest smoothing shift.
fn extended_times(grid: &TimeGrid, shift_max: f64, ratio: f64) -> Vec<f64> {
    let mut times = grid.times().to_vec();
    let end = grid.last() + shift_max;
    let step = grid.last() * (ratio - 1.0) / 2.0;
    let mut t = grid.last();
    while t < end - 1e-12 {
        t = (t + step).min(end);
        times.push(t);
    }
    times
}

type Fields = (TimeField, TimeField, TimeField, TimeField);

fn assemble_fields(
    kernels: &Kernels<'_>,
    lattice: &Lattice,
    grid: &TimeGrid,
    config: &ParametrixConfig,
) -> Result<Fields, ParametrixError> {
    let asm = Assembler::new(kernels, lattice);
    let times = grid.times().to_vec();
    let ext = extended_times(grid, config.shift_max, config.time.ratio);
    let n = lattice.len();
    let (mut p0, mut phi, mut dt, mut hull) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, &t) in ext.iter().enumerate() {
        let inside = k < times.len();
        let m = asm.matrices(t, Extras { dt: inside, hull: inside })?;
        log::debug!("assembled kernels at t = {t}");
        p0.push(m.p0);
        if inside {
            phi.push(m.phi);
            dt.push(m.dt.unwrap());
            hull.push(m.hull.unwrap());
        }
    }
    let delta = kernels.delta();
    let t0 = times[0];
    // s = t0 u^{1/δ} absorbs the s^{-1+δ} singularity of Φ
    let (mut head_p0, mut head_phi) = (Array2::zeros((n, n)), Array2::zeros((n, n)));
    for (u, w) in HEAD_RULE().mapped(0.0, 1.0) {
        let s = t0 * u.powf(1.0 / delta);
        let ds = t0 / delta * u.powf(1.0 / delta - 1.0) * w;
        let m = asm.matrices(s, Extras::default())?;
        head_p0.scaled_add(ds, &m.p0);
        head_phi.scaled_add(ds, &m.phi);
    }
    // ∫_0^σ ∂_s p⁰ = p⁰_σ - identity in mass form
    let head_dt = &p0[0] - &Array2::<f64>::eye(n);
    let heads = (vec![(t0, head_p0)], vec![(t0, head_phi)], vec![(t0, head_dt)], vec![]);
    Ok((
        TimeField::new(ext, p0, 0.0, heads.0),
        TimeField::new(times.clone(), phi, -1.0 + delta, heads.1),
        TimeField::new(times.clone(), dt, -1.0, heads.2),
        TimeField::new(times, hull, 0.0, heads.3),
    ))
}
