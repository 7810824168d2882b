//! The zero-order kernel `p⁰`, its defect `Φ = (L_x - ∂_t) p⁰`, the time
//! derivative `∂_t p⁰` and the hull `H`, pointwise and integrated over the
//! arrival cells of a [`Lattice`].
//!
//! All kernels share the form `s^{-1} k((c_t(y) - x)/s)` with
//! `s = (t a(y))^{1/α}` and a regime-dependent centre `c_t(y)`: `y` in regime A,
//! `y - t b(y)` in regime B and `θ_t(y)` in regime C.

use ndarray::Array2;
use rayon::prelude::*;

use super::lattice::{Lattice, Panel};
use super::ParametrixError;
use crate::coefficient_model::{CoefficientModel, Regime};
use crate::flow::FlowSolver;
use crate::quadrature::{gl5, gl8, graded_edges, GaussLegendre};
use crate::stable_kernels::{HullFunction, StableProfile};

/// Coefficients seen from the departure point.
#[derive(Debug, Clone, Copy)]
pub struct Departure {
    pub x: f64,
    pub a: f64,
    pub b: f64,
}

/// Frozen coefficients at an arrival point for a fixed time.
#[derive(Debug, Clone, Copy)]
pub struct Arrival {
    pub a: f64,
    pub scale: f64,
    pub centre: f64,
    /// Drift entering the frozen operator: `0`, `b(y)` or `b(θ_t(y))`.
    pub drift: f64,
}

/// `p⁰`, `Φ`, `∂_t p⁰` and `H` at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointValues {
    pub p0: f64,
    pub phi: f64,
    pub dt: f64,
    pub hull: f64,
}

#[derive(Debug, Clone)]
pub struct Kernels<'a> {
    model: &'a CoefficientModel,
    profile: &'a StableProfile,
    regime: Regime,
    kappa: f64,
    hull: HullFunction,
}

impl<'a> Kernels<'a> {
    pub fn new(
        model: &'a CoefficientModel,
        profile: &'a StableProfile,
        regime: Regime,
        kappa: f64,
    ) -> Result<Self, ParametrixError> {
        let alpha = model.alpha();
        if (profile.alpha() - alpha).abs() > 1e-12 {
            return Err(ParametrixError::ProfileMismatch { profile: profile.alpha(), model: alpha });
        }
        model.check_regime(regime)?;
        if !(kappa > 0.0 && kappa <= model.gamma() + 1e-12 && kappa < alpha) {
            return Err(ParametrixError::InvalidKappa { kappa, alpha, gamma: model.gamma() });
        }
        Ok(Kernels { model, profile, regime, kappa, hull: HullFunction::new(alpha - kappa, 1) })
    }

    pub fn model(&self) -> &'a CoefficientModel {
        self.model
    }

    pub fn profile(&self) -> &'a StableProfile {
        self.profile
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn alpha(&self) -> f64 {
        self.model.alpha()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn hull_function(&self) -> HullFunction {
        self.hull
    }

    /// Hull exponent `δ` of the regime.
    pub fn delta(&self) -> f64 {
        let (alpha, kappa, gamma) = (self.alpha(), self.kappa, self.model.gamma());
        let ap = alpha.max(1.0);
        match self.regime {
            Regime::A => (kappa / alpha).min(1.0 - 1.0 / alpha),
            Regime::B => (kappa / ap).min(1.0 - 1.0 / alpha + gamma / ap),
            Regime::C => kappa / ap,
        }
    }

    pub fn departure(&self, x: f64) -> Departure {
        Departure { x, a: self.model.a(x), b: self.model.b(x) }
    }

    /// Frozen data at `y`; `theta` supplies `θ_t(y)` in regime C.
    pub fn arrival_with(&self, t: f64, y: f64, theta: f64) -> Arrival {
        let a = self.model.a(y);
        let scale = (t * a).powf(1.0 / self.alpha());
        match self.regime {
            Regime::A => Arrival { a, scale, centre: y, drift: 0.0 },
            Regime::B => {
                let b = self.model.b(y);
                Arrival { a, scale, centre: y - t * b, drift: b }
            }
            Regime::C => Arrival { a, scale, centre: theta, drift: self.model.b(theta) },
        }
    }

    pub fn arrival(&self, t: f64, y: f64) -> Result<Arrival, ParametrixError> {
        let theta = match self.regime {
            Regime::C => FlowSolver::new(self.model).backward(t, y)?,
            _ => y,
        };
        Ok(self.arrival_with(t, y, theta))
    }

    /// Kernel values; the hull is evaluated only when `hull_scale = t^{1/α}`
    /// is given.
    pub fn values(&self, t: f64, d: &Departure, y: &Arrival, hull_scale: Option<f64>) -> PointValues {
        let s = y.scale;
        let u = (y.centre - d.x) / s;
        let (g, dg, lg) = self.profile.eval_core(u);
        PointValues {
            p0: g / s,
            phi: (d.a - y.a) * lg / (t * y.a * s) + (y.drift - d.b) * dg / (s * s),
            dt: lg / (t * s) - y.drift * dg / (s * s),
            hull: hull_scale.map_or(0.0, |tau| self.hull.value((y.centre - d.x) / tau) / tau),
        }
    }

    pub fn point(&self, t: f64, x: f64, y: f64) -> Result<PointValues, ParametrixError> {
        let tau = t.powf(1.0 / self.alpha());
        Ok(self.values(t, &self.departure(x), &self.arrival(t, y)?, Some(tau)))
    }

    pub fn p0(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.point(t, x, y)?.p0)
    }

    pub fn phi(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.point(t, x, y)?.phi)
    }

    pub fn dt_p0(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.point(t, x, y)?.dt)
    }

    pub fn hull(&self, t: f64, x: f64, y: f64) -> Result<f64, ParametrixError> {
        Ok(self.point(t, x, y)?.hull)
    }

    /// Shortest length on which the coefficients vary by their full range,
    /// estimated by sampling the working domain.
    pub fn coefficient_scale(&self) -> f64 {
        let (lo, hi) = self.model.domain();
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let mut scale = f64::INFINITY;
        let b_range = 2.0 * self.model.constants().b_sup;
        let (a_min, a_max) = (self.model.constants().a_min, self.model.constants().a_max);
        let mut da: f64 = 0.0;
        let mut db: f64 = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            da = da.max((self.model.a(x + h) - self.model.a(x)).abs() / h);
            db = db.max((self.model.b(x + h) - self.model.b(x)).abs() / h);
        }
        if da > 0.0 {
            scale = scale.min((a_max - a_min) / da);
        }
        if db > 0.0 {
            scale = scale.min(b_range / db);
        }
        scale
    }
}

/// Piecewise linear table of `θ_t(y) - y` for one time.
#[derive(Debug, Clone)]
struct FlowTable {
    knots: Vec<f64>,
    shift: Vec<f64>,
}

impl FlowTable {
    fn eval(&self, y: f64) -> f64 {
        let k = &self.knots;
        let i = k.partition_point(|&v| v <= y);
        let shift = if i == 0 {
            self.shift[0]
        } else if i == k.len() {
            *self.shift.last().unwrap()
        } else {
            let w = (y - k[i - 1]) / (k[i] - k[i - 1]);
            (1.0 - w) * self.shift[i - 1] + w * self.shift[i]
        };
        y + shift
    }
}

/// A static quadrature node.
#[derive(Debug, Clone, Copy)]
struct Node {
    y: f64,
    w: f64,
}

/// Which cell matrices to build besides `p⁰` and `Φ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Extras {
    pub dt: bool,
    pub hull: bool,
}

/// Cell integrals in mass form: entry `(i, j)` is `∫_{cell j} k_t(x_i, y) dy`.
#[derive(Debug, Clone)]
pub struct CellMatrices {
    pub p0: Array2<f64>,
    pub phi: Array2<f64>,
    pub dt: Option<Array2<f64>>,
    pub hull: Option<Array2<f64>>,
}

/// Builds cell matrices of the kernels on a lattice.
#[derive(Debug)]
pub struct Assembler<'k> {
    kernels: &'k Kernels<'k>,
    lattice: &'k Lattice,
    nodes: Vec<Node>,
    /// Per cell, the static panels and the range of their nodes.
    panels: Vec<Vec<(Panel, std::ops::Range<usize>)>>,
    knots: Vec<f64>,
}

const TAIL_RULE: fn() -> &'static GaussLegendre = gl8;

impl<'k> Assembler<'k> {
    pub fn new(kernels: &'k Kernels<'k>, lattice: &'k Lattice) -> Self {
        let alpha = kernels.alpha();
        let mut nodes = Vec::new();
        let mut panels = Vec::with_capacity(lattice.len());
        for c in 0..lattice.len() {
            let mut list = Vec::new();
            for &p in lattice.panels(c) {
                let start = nodes.len();
                match p {
                    Panel::Finite(a, b) => {
                        let rule = if b - a > lattice.step() * 1.5 { crate::quadrature::gl4() } else { gl5() };
                        nodes.extend(rule.mapped(a, b).map(|(y, w)| Node { y, w }));
                    }
                    Panel::Tail { edge, sign } => {
                        let e = edge.abs();
                        for (v, w) in TAIL_RULE().mapped(0.0, 1.0) {
                            let y = sign * e * v.powf(-1.0 / alpha);
                            nodes.push(Node { y, w: w * e / alpha * v.powf(-1.0 / alpha - 1.0) });
                        }
                    }
                }
                list.push((p, start..nodes.len()));
            }
            panels.push(list);
        }
        let mut knots: Vec<f64> = Vec::new();
        if kernels.regime() == Regime::C {
            let spec = lattice.spec();
            let margin = 5.0 + 2.0 * kernels.model().constants().b_sup * 4.0;
            let h = lattice.step() / 4.0;
            let n = ((spec.hi - spec.lo + 2.0 * margin) / h).ceil() as usize;
            knots.extend((0..=n).map(|i| spec.lo - margin + i as f64 * h));
            knots.extend(nodes.iter().map(|n| n.y));
            knots.sort_by(f64::total_cmp);
            knots.dedup();
        }
        Assembler { kernels, lattice, nodes, panels, knots }
    }

    pub fn kernels(&self) -> &Kernels<'k> {
        self.kernels
    }

    pub fn lattice(&self) -> &Lattice {
        self.lattice
    }

    fn flow_table(&self, t: f64) -> Result<Option<FlowTable>, ParametrixError> {
        if self.kernels.regime() != Regime::C {
            return Ok(None);
        }
        let solver = FlowSolver::new(self.kernels.model());
        let shift = self
            .knots
            .par_iter()
            .map(|&y| solver.backward(t, y).map(|v| v - y))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(FlowTable { knots: self.knots.clone(), shift }))
    }

    /// Arrival point `y*` where the kernel from `x` peaks, i.e. `c_t(y*) = x`.
    fn peak(&self, t: f64, x: f64, flow: Option<&FlowTable>) -> f64 {
        let m = self.kernels.model();
        match self.kernels.regime() {
            Regime::A => x,
            Regime::B => {
                let mut y = x + t * m.b(x);
                for _ in 0..4 {
                    y = x + t * m.b(y);
                }
                y
            }
            Regime::C => {
                let f = flow.expect("flow table");
                let mut y = x + t * m.b(x);
                for _ in 0..6 {
                    y += x - f.eval(y);
                }
                y
            }
        }
    }

    /// Cell matrices at time `t`.
    pub fn matrices(&self, t: f64, extras: Extras) -> Result<CellMatrices, ParametrixError> {
        self.rows(t, self.lattice.nodes(), extras)
    }

    /// Cell integrals from arbitrary departure points: row `i` starts at `xs[i]`.
    pub fn rows(&self, t: f64, xs: &[f64], extras: Extras) -> Result<CellMatrices, ParametrixError> {
        let n = self.lattice.len();
        let m = xs.len();
        let flow = self.flow_table(t)?;
        let k = self.kernels;
        let arrivals: Vec<Arrival> = self
            .nodes
            .iter()
            .map(|nd| {
                let theta = flow.as_ref().map_or(nd.y, |f| f.eval(nd.y));
                k.arrival_with(t, nd.y, theta)
            })
            .collect();
        let rows: Vec<[Vec<f64>; 4]> =
            xs.par_iter().map(|&x| self.row(t, x, &arrivals, flow.as_ref(), extras)).collect();
        let mut out = [Array2::zeros((m, n)), Array2::zeros((m, n)), Array2::zeros((0, 0)), Array2::zeros((0, 0))];
        if extras.dt {
            out[2] = Array2::zeros((m, n));
        }
        if extras.hull {
            out[3] = Array2::zeros((m, n));
        }
        for (i, r) in rows.into_iter().enumerate() {
            for (q, v) in r.into_iter().enumerate() {
                if !v.is_empty() {
                    out[q].row_mut(i).assign(&ndarray::ArrayView1::from(&v));
                }
            }
        }
        let [p0, phi, dt, hull] = out;
        Ok(CellMatrices {
            p0,
            phi,
            dt: extras.dt.then_some(dt),
            hull: extras.hull.then_some(hull),
        })
    }

    fn row(&self, t: f64, x: f64, arrivals: &[Arrival], flow: Option<&FlowTable>, extras: Extras) -> [Vec<f64>; 4] {
        let n = self.lattice.len();
        let k = self.kernels;
        let dep = k.departure(x);
        let ystar = self.peak(t, dep.x, flow);
        let width = (t * k.model().a(ystar)).powf(1.0 / k.alpha());
        let hull_scale = extras.hull.then(|| t.powf(1.0 / k.alpha()));
        let mut out = [vec![0.0; n], vec![0.0; n], vec![], vec![]];
        if extras.dt {
            out[2] = vec![0.0; n];
        }
        if extras.hull {
            out[3] = vec![0.0; n];
        }
        let add = |j: usize, w: f64, v: PointValues, out: &mut [Vec<f64>; 4]| {
            out[0][j] += w * v.p0;
            out[1][j] += w * v.phi;
            if extras.dt {
                out[2][j] += w * v.dt;
            }
            if extras.hull {
                out[3][j] += w * v.hull;
            }
        };
        for j in 0..n {
            for (panel, range) in &self.panels[j] {
                let dynamic = match *panel {
                    Panel::Finite(a, b) => {
                        let d = if ystar < a {
                            a - ystar
                        } else if ystar > b {
                            ystar - b
                        } else {
                            0.0
                        };
                        (b - a > 0.5 * width.max(d)).then_some((a, b))
                    }
                    Panel::Tail { .. } => None,
                };
                match dynamic {
                    None => {
                        for q in range.clone() {
                            let v = k.values(t, &dep, &arrivals[q], hull_scale);
                            add(j, self.nodes[q].w, v, &mut out);
                        }
                    }
                    Some((a, b)) => {
                        let edges = graded_edges(a, b, ystar, 0.25 * width, 2.0);
                        for e in edges.windows(2) {
                            for (y, w) in gl5().mapped(e[0], e[1]) {
                                let theta = flow.map_or(y, |f| f.eval(y));
                                let v = k.values(t, &dep, &k.arrival_with(t, y, theta), hull_scale);
                                add(j, w, v, &mut out);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient_model::ModelConfig;
    use crate::parametrix::lattice::LatticeSpec;
    use crate::stable_kernels::build_profile;

    fn model(a: &str, b: &str, alpha: f64, regime: Regime) -> CoefficientModel {
        CoefficientModel::from_config(&ModelConfig::new(a, b, alpha, 1.0, regime)).unwrap()
    }

    #[test]
    fn regime_b_example_value() {
        let m = model("1", "0.5", 1.0, Regime::B);
        let p = build_profile(1.0, 1, 1024, 50.0).unwrap();
        let k = Kernels::new(&m, &p, Regime::B, 0.9).unwrap();
        let v = k.p0(0.2, 0.0, 0.1).unwrap();
        assert!((v - 1.0 / (0.2 * std::f64::consts::PI)).abs() < 1e-9);
        assert!(k.phi(0.2, 0.3, -1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn regime_c_without_drift_matches_a() {
        let m = model("1 + 0.3*sin(x)", "0", 1.5, Regime::C);
        let p = build_profile(1.5, 1, 1024, 50.0).unwrap();
        let ka = Kernels::new(&m, &p, Regime::A, 0.9).unwrap();
        let kc = Kernels::new(&m, &p, Regime::C, 0.9).unwrap();
        for (t, x, y) in [(0.3, 0.1, 0.9), (1.0, -2.0, 1.0)] {
            let (a, c) = (ka.point(t, x, y).unwrap(), kc.point(t, x, y).unwrap());
            assert!((a.p0 - c.p0).abs() < 1e-12 && (a.phi - c.phi).abs() < 1e-12);
        }
    }

    #[test]
    fn time_derivative_matches_difference_quotient() {
        let m = model("1 + 0.3*sin(x)", "0.5*cos(x)", 1.5, Regime::C);
        let p = build_profile(1.5, 1, 2048, 50.0).unwrap();
        for r in [Regime::A, Regime::B, Regime::C] {
            let k = Kernels::new(&m, &p, r, 0.9).unwrap();
            let (t, x, y, h) = (0.4, 0.2, 0.7, 1e-5);
            let fd = (k.p0(t + h, x, y).unwrap() - k.p0(t - h, x, y).unwrap()) / (2.0 * h);
            assert!((fd - k.dt_p0(t, x, y).unwrap()).abs() < 1e-6, "{r}");
        }
    }

    #[test]
    fn flat_cell_masses_sum_to_one() {
        let p = build_profile(0.8, 1, 2048, 50.0).unwrap();
        let m = model("2", "0", 0.8, Regime::B);
        let k = Kernels::new(&m, &p, Regime::B, 0.72).unwrap();
        let l = Lattice::new(&LatticeSpec { nodes: 129, ..LatticeSpec::default() }, 1.0);
        let asm = Assembler::new(&k, &l);
        for t in [1e-4, 0.1, 1.0] {
            let mats = asm.matrices(t, Extras { dt: true, hull: false }).unwrap();
            for x in [-15.0, 0.0, 3.3] {
                let i = l.nearest_interior(x);
                assert!((mats.p0.row(i).sum() - 1.0).abs() < 1e-7, "{t} {x} {}", mats.p0.row(i).sum());
                assert!(mats.dt.as_ref().unwrap().row(i).sum().abs() < 1e-6 / t);
                assert_eq!(mats.phi.row(i).sum(), 0.0);
            }
        }
    }

    #[test]
    fn variable_cell_masses_are_close_to_one() {
        let m = model("1 + 0.3*sin(x)", "0.5*cos(x)", 1.5, Regime::C);
        let p = build_profile(1.5, 1, 2048, 50.0).unwrap();
        let spec = LatticeSpec { nodes: 129, ..LatticeSpec::default() };
        for r in [Regime::A, Regime::B, Regime::C] {
            let k = Kernels::new(&m, &p, r, 0.9).unwrap();
            let l = Lattice::new(&spec, 0.5 * k.coefficient_scale());
            let asm = Assembler::new(&k, &l);
            for t in [1e-4, 0.1, 1.0] {
                let mats = asm.matrices(t, Extras::default()).unwrap();
                let mass: f64 = mats.p0.row(l.nearest_interior(0.0)).sum();
                assert!((mass - 1.0).abs() < 0.2, "{r} {t} {mass}");
            }
        }
    }
}
