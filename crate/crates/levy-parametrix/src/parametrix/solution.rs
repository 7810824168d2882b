//! The density `p = p⁰ + p⁰ ⋆ Ψ`, its time-shifted smoothing `p_{t,ε}` and
//! its time derivative, on the lattice or from arbitrary departure points.

use std::borrow::Cow;
use std::io::{self, Write};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::field::{fetch, same};
use super::{
    convolve, convolve_apply, plan, Assembler, Eval, Extras, Field, Half, Parametrix, ParametrixError, Term, TimeField,
};
use crate::quadrature::gl4;

/// What a [`DensityGrid`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKindTag {
    P0,
    Phi,
    PhiPower(usize),
    Psi,
    Residue,
    Density,
    PEps(f64),
    DtDensity,
}

impl std::fmt::Display for KernelKindTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelKindTag::P0 => f.write_str("p0"),
            KernelKindTag::Phi => f.write_str("phi"),
            KernelKindTag::PhiPower(k) => write!(f, "phi_power({k})"),
            KernelKindTag::Psi => f.write_str("psi"),
            KernelKindTag::Residue => f.write_str("residue"),
            KernelKindTag::Density => f.write_str("density"),
            KernelKindTag::PEps(e) => write!(f, "p_eps({e})"),
            KernelKindTag::DtDensity => f.write_str("dt_density"),
        }
    }
}

/// Values of a space-time kernel on a `(t, x, y)` product lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub kind: KernelKindTag,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Quadrature weights of the `y` nodes.
    pub weights: Vec<f64>,
    /// Row-major in `(t, x, y)`.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn value(&self, it: usize, ix: usize, iy: usize) -> f64 {
        self.values[(it * self.x.len() + ix) * self.y.len() + iy]
    }

    /// Quadrature of `∫ k_t(x, y) dy` over the `y` nodes.
    pub fn mass(&self, it: usize, ix: usize) -> f64 {
        (0..self.y.len()).map(|iy| self.weights[iy] * self.value(it, ix, iy)).sum()
    }

    /// CSV with header `t,x,y,value`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "t,x,y,value")?;
        for (it, t) in self.times.iter().enumerate() {
            for (ix, x) in self.x.iter().enumerate() {
                for (iy, y) in self.y.iter().enumerate() {
                    writeln!(w, "{t},{x},{y},{}", self.value(it, ix, iy))?;
                }
            }
        }
        Ok(())
    }
}

/// `p⁰` shifted forward in time by `eps`.
struct Shifted<'f> {
    field: &'f TimeField,
    eps: f64,
}

impl Field for Shifted<'_> {
    fn exponent(&self) -> f64 {
        0.0
    }

    fn at(&self, t: f64) -> Cow<'_, Array2<f64>> {
        self.field.at(t + self.eps)
    }

    fn head(&self, sigma: f64) -> Cow<'_, Array2<f64>> {
        Cow::Owned(self.field.at(self.eps + 0.5 * sigma).into_owned() * sigma)
    }
}

/// Rows of a kernel tabulated at the evaluations a plan needs.
struct Rows(Vec<(Eval, Array2<f64>)>);

impl Rows {
    fn get(&self, e: Eval) -> &Array2<f64> {
        let hit = self.0.iter().find(|(k, _)| same(*k, e));
        &hit.expect("evaluation missing from the tabulated rows").1
    }
}

fn combine<'a>(
    terms: &[Term],
    k: impl Fn(&Term) -> Cow<'a, Array2<f64>>,
    m: impl Fn(&Term) -> Cow<'a, Array2<f64>>,
) -> Option<Array2<f64>> {
    let mut out: Option<Array2<f64>> = None;
    for term in terms {
        let prod = k(term).dot(&*m(term));
        match out.as_mut() {
            None => out = Some(prod * term.coef),
            Some(o) => o.scaled_add(term.coef, &prod),
        }
    }
    out
}

impl<'a> Parametrix<'a> {
    fn assembler(&self) -> Assembler<'_> {
        Assembler::new(&self.kernels, &self.lattice)
    }

    fn check_points(&self, pts: &[f64]) -> Result<(), ParametrixError> {
        let spec = self.lattice.spec();
        match pts.iter().find(|&&x| !(x >= spec.lo && x <= spec.hi)) {
            Some(&x) => Err(ParametrixError::OutsideBox { x, lo: spec.lo, hi: spec.hi }),
            None => Ok(()),
        }
    }

    fn check_shift(&self, eps: f64) -> Result<(), ParametrixError> {
        let max = self.config.shift_max;
        if eps > 0.0 && eps <= max * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(ParametrixError::InvalidShift { eps, max })
        }
    }

    /// Mass-form residue `r̃_t = (p⁰ ⋆ Ψ)_t` on the lattice.
    pub fn residue_matrix(&self, t: f64) -> Result<Array2<f64>, ParametrixError> {
        self.check_time(t)?;
        if self.psi_vanishes {
            let n = self.lattice.len();
            return Ok(Array2::zeros((n, n)));
        }
        Ok(convolve(&self.p0, &self.psi, self.grid.times(), t))
    }

    /// Mass-form density `p̃_t = p̃⁰_t + r̃_t` on the lattice.
    pub fn density_matrix(&self, t: f64) -> Result<Array2<f64>, ParametrixError> {
        Ok(self.residue_matrix(t)? + &*self.p0.at(t))
    }

    /// Mass-form `p_{t,ε}` on the lattice.
    pub fn density_eps_matrix(&self, t: f64, eps: f64) -> Result<Array2<f64>, ParametrixError> {
        self.check_time(t)?;
        self.check_shift(eps)?;
        let shifted = Shifted { field: &self.p0, eps };
        Ok(convolve(&shifted, &self.psi, self.grid.times(), t) + &*self.p0.at(t + eps))
    }

    /// `(P_t f)(x_i) = Σ_j p̃_t[i, j] f(y_j)` for `f` sampled at every lattice node.
    pub fn apply(&self, t: f64, f: ArrayView1<f64>) -> Result<Array1<f64>, ParametrixError> {
        self.check_time(t)?;
        let times = self.grid.times();
        Ok(self.p0.at(t).dot(&f) + convolve_apply(&self.p0, &self.psi, times, t, f))
    }

    /// As [`Parametrix::apply`] for `p_{t,ε}`.
    pub fn apply_eps(&self, t: f64, eps: f64, f: ArrayView1<f64>) -> Result<Array1<f64>, ParametrixError> {
        self.check_time(t)?;
        self.check_shift(eps)?;
        let shifted = Shifted { field: &self.p0, eps };
        Ok(self.p0.at(t + eps).dot(&f) + convolve_apply(&shifted, &self.psi, self.grid.times(), t, f))
    }

    /// Mass-form `p⁰` rows from `xs` at `t + shift` for every `K` evaluation of `terms`.
    fn p0_rows(
        &self,
        asm: &Assembler<'_>,
        terms: &[Term],
        shift: f64,
        xs: &[f64],
        dt: bool,
    ) -> Result<Rows, ParametrixError> {
        let pick = |m: super::CellMatrices| if dt { m.dt.unwrap() } else { m.p0 };
        let extras = Extras { dt, hull: false };
        let mut rows: Vec<(Eval, Array2<f64>)> = Vec::new();
        for term in terms {
            if rows.iter().any(|(e, _)| same(*e, term.k)) {
                continue;
            }
            let m = match term.k {
                Eval::At(u) => pick(asm.rows(u + shift, xs, extras)?),
                Eval::Head(sigma) => {
                    let mut acc = Array2::zeros((xs.len(), self.lattice.len()));
                    for (u, w) in gl4().mapped(0.0, sigma) {
                        acc.scaled_add(w, &pick(asm.rows(u + shift, xs, extras)?));
                    }
                    acc
                }
            };
            rows.push((term.k, m));
        }
        Ok(Rows(rows))
    }

    fn residue_rows(&self, asm: &Assembler<'_>, t: f64, shift: f64, xs: &[f64]) -> Result<Array2<f64>, ParametrixError> {
        if self.psi_vanishes {
            return Ok(Array2::zeros((xs.len(), self.lattice.len())));
        }
        let terms = plan(self.grid.times(), 0.0, self.psi.exponent(), t);
        let k = self.p0_rows(asm, &terms, shift, xs, false)?;
        Ok(combine(&terms, |term| Cow::Borrowed(k.get(term.k)), |term| fetch(&self.psi, term.m)).unwrap())
    }

    /// Mass-form density rows from arbitrary departure points.
    pub fn density_rows(&self, t: f64, xs: &[f64]) -> Result<Array2<f64>, ParametrixError> {
        self.check_time(t)?;
        self.check_points(xs)?;
        let asm = self.assembler();
        Ok(asm.rows(t, xs, Extras::default())?.p0 + self.residue_rows(&asm, t, 0.0, xs)?)
    }

    /// Mass-form `p_{t,ε}` rows from arbitrary departure points.
    pub fn density_eps_rows(&self, t: f64, eps: f64, xs: &[f64]) -> Result<Array2<f64>, ParametrixError> {
        self.check_time(t)?;
        self.check_shift(eps)?;
        self.check_points(xs)?;
        let asm = self.assembler();
        Ok(asm.rows(t + eps, xs, Extras::default())?.p0 + self.residue_rows(&asm, t, eps, xs)?)
    }

    /// Pointwise value of a mass-form row at `y`: linear in the cell averages
    /// of the interior lattice.
    fn row_value(&self, row: ArrayView1<f64>, y: f64) -> f64 {
        let lat = &self.lattice;
        let inner = lat.interior();
        let avg = |c: usize| row[c] / lat.width(c);
        let nodes = lat.interior_nodes();
        let j = nodes.partition_point(|&v| v <= y).clamp(1, nodes.len() - 1);
        let (a, b) = (nodes[j - 1], nodes[j]);
        let w = ((y - a) / (b - a)).clamp(0.0, 1.0);
        (1.0 - w) * avg(inner.start + j - 1) + w * avg(inner.start + j)
    }

    fn point_grid(
        &self,
        kind: KernelKindTag,
        t: f64,
        xs: &[f64],
        ys: &[f64],
        smooth: &Array2<f64>,
        singular: impl Fn(f64, f64) -> Result<f64, ParametrixError>,
    ) -> Result<DensityGrid, ParametrixError> {
        self.check_points(ys)?;
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for (i, &x) in xs.iter().enumerate() {
            for &y in ys {
                values.push(singular(x, y)? + self.row_value(smooth.row(i), y));
            }
        }
        Ok(DensityGrid {
            kind,
            times: vec![t],
            x: xs.to_vec(),
            y: ys.to_vec(),
            weights: quadrature_weights(ys),
            values,
        })
    }

    /// `p_t(x, y) = p⁰_t(x, y) + r_t(x, y)` on `xs × ys`.
    pub fn density_grid(&self, t: f64, xs: &[f64], ys: &[f64]) -> Result<DensityGrid, ParametrixError> {
        self.check_time(t)?;
        self.check_points(xs)?;
        let r = self.residue_rows(&self.assembler(), t, 0.0, xs)?;
        self.point_grid(KernelKindTag::Density, t, xs, ys, &r, |x, y| self.kernels.p0(t, x, y))
    }

    pub fn density(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.density_grid(t, &[x], &[y])?.values[0])
    }

    /// `p_{t,ε}(x, y)` on `xs × ys`.
    pub fn density_eps_grid(&self, t: f64, eps: f64, xs: &[f64], ys: &[f64]) -> Result<DensityGrid, ParametrixError> {
        self.check_time(t)?;
        self.check_shift(eps)?;
        self.check_points(xs)?;
        let r = self.residue_rows(&self.assembler(), t, eps, xs)?;
        self.point_grid(KernelKindTag::PEps(eps), t, xs, ys, &r, |x, y| self.kernels.p0(t + eps, x, y))
    }

    pub fn density_eps(&self, t: f64, eps: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.density_eps_grid(t, eps, &[x], &[y])?.values[0])
    }

    fn dpsi(&self, u: f64) -> Array2<f64> {
        let h = self.config.fd_step;
        (&*self.psi.at(u + h) - &*self.psi.at(u - h)) / (2.0 * h)
    }

    fn check_fd(&self, t: f64) -> Result<(), ParametrixError> {
        self.check_time(t)?;
        let step = self.config.fd_step;
        if t > 2.0 * step {
            Ok(())
        } else {
            Err(ParametrixError::StepTooLarge { step, t })
        }
    }

    /// Mass-form `∂_t r̃_t` from `K` rows of `p⁰` and `∂_t p⁰`: the early half
    /// differentiates `p⁰_{t-s}`, the late half `Ψ_{t-u}`, and the moving
    /// split point contributes `p⁰_{t/2} Ψ_{t/2}`.
    fn dt_residue(
        &self,
        t: f64,
        terms: &[Term],
        p0: impl Fn(Eval) -> Cow<'a, Array2<f64>>,
        dp0: impl Fn(Eval) -> Cow<'a, Array2<f64>>,
        split: &Array2<f64>,
    ) -> Array2<f64> {
        let (early, late): (Vec<Term>, Vec<Term>) = terms.iter().partition(|t| t.half == Half::Early);
        let mut out = combine(&early, |term| dp0(term.k), |term| fetch(&self.psi, term.m)).unwrap();
        let dpsi = |e: Eval| match e {
            Eval::At(u) => self.dpsi(u),
            Eval::Head(_) => unreachable!("late terms evaluate Ψ on [t/2, t]"),
        };
        out += &combine(&late, |term| p0(term.k), |term| Cow::Owned(dpsi(term.m))).unwrap();
        out += &split.dot(&*self.psi.at(0.5 * t));
        out
    }

    /// Mass-form `∂_t p̃_t` on the lattice.
    pub fn dt_density_matrix(&self, t: f64) -> Result<Array2<f64>, ParametrixError> {
        self.check_fd(t)?;
        let terms = plan(self.grid.times(), 0.0, self.psi.exponent(), t);
        let split = self.p0.at(0.5 * t).into_owned();
        let r = self.dt_residue(t, &terms, |e| fetch(&self.p0, e), |e| fetch(&self.dt, e), &split);
        Ok(r + &*self.dt.at(t))
    }

    /// `∂_t p_t(x, y)` on `xs × ys`.
    pub fn dt_density_grid(&self, t: f64, xs: &[f64], ys: &[f64]) -> Result<DensityGrid, ParametrixError> {
        self.check_fd(t)?;
        self.check_points(xs)?;
        let asm = self.assembler();
        let terms = plan(self.grid.times(), 0.0, self.psi.exponent(), t);
        let (early, late): (Vec<Term>, Vec<Term>) = terms.iter().partition(|t| t.half == Half::Early);
        let p0 = self.p0_rows(&asm, &late, 0.0, xs, false)?;
        let dp0 = self.p0_rows(&asm, &early, 0.0, xs, true)?;
        let split = asm.rows(0.5 * t, xs, Extras::default())?.p0;
        let r = self.dt_residue(t, &terms, |e| Cow::Owned(p0.get(e).clone()), |e| Cow::Owned(dp0.get(e).clone()), &split);
        self.point_grid(KernelKindTag::DtDensity, t, xs, ys, &r, |x, y| self.kernels.dt_p0(t, x, y))
    }

    pub fn dt_density(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.dt_density_grid(t, &[x], &[y])?.values[0])
    }

    /// Pointwise values of a lattice field on the interior nodes: `p⁰` and
    /// `Φ` parts are evaluated exactly, convolution parts from cell averages.
    pub fn lattice_grid(&self, kind: KernelKindTag, times: &[f64]) -> Result<DensityGrid, ParametrixError> {
        let nodes = self.lattice.interior_nodes().to_vec();
        let inner = self.lattice.interior();
        let mut values = Vec::with_capacity(times.len() * nodes.len() * nodes.len());
        for &t in times {
            self.check_time(t)?;
            let (smooth, exact): (Option<Array2<f64>>, Option<fn(&super::Kernels<'_>, f64, f64, f64) -> Result<f64, ParametrixError>>) =
                match kind {
                    KernelKindTag::P0 => (None, Some(|k, t, x, y| k.p0(t, x, y))),
                    KernelKindTag::Phi => (None, Some(|k, t, x, y| k.phi(t, x, y))),
                    KernelKindTag::Psi => (Some(self.psi.at(t).into_owned()), None),
                    KernelKindTag::Residue => (Some(self.residue_matrix(t)?), None),
                    KernelKindTag::Density => (Some(self.residue_matrix(t)?), Some(|k, t, x, y| k.p0(t, x, y))),
                    KernelKindTag::PEps(eps) => {
                        let shifted = Shifted { field: &self.p0, eps };
                        self.check_shift(eps)?;
                        let r = convolve(&shifted, &self.psi, self.grid.times(), t);
                        let m = r + &*self.p0.at(t + eps);
                        (Some(m), None)
                    }
                    KernelKindTag::DtDensity => {
                        let m = self.dt_density_matrix(t)? - &*self.dt.at(t);
                        (Some(m), Some(|k, t, x, y| k.dt_p0(t, x, y)))
                    }
                    KernelKindTag::PhiPower(_) => unimplemented!("convolution powers are not retained"),
                };
            for (a, &x) in nodes.iter().enumerate() {
                for (b, &y) in nodes.iter().enumerate() {
                    let mut v = 0.0;
                    if let Some(m) = &smooth {
                        let c = inner.start + b;
                        v += m[[inner.start + a, c]] / self.lattice.width(c);
                    }
                    if let Some(f) = exact {
                        v += f(&self.kernels, t, x, y)?;
                    }
                    values.push(v);
                }
            }
        }
        let weights = inner.map(|c| self.lattice.width(c)).collect();
        Ok(DensityGrid { kind, times: times.to_vec(), x: nodes.clone(), y: nodes, weights, values })
    }
}

/// Trapezoid weights for increasing nodes.
fn quadrature_weights(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { ys[i] - ys[i - 1] } else { 0.0 };
            let right = if i + 1 < n { ys[i + 1] - ys[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}
