//! Flows of the drift: `χ_t` solves `v' = b(v)`, `θ_t` solves `v' = -b(v)`.
//!
//! Integration uses the embedded Dormand–Prince 5(4) pair with absolute
//! tolerance [`FLOW_TOL`].

use crate::coefficient_model::CoefficientModel;

pub const FLOW_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 1_000_000;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("flow integration from {start} did not reach t = {t} within the step budget")]
    StepBudget { start: f64, t: f64 },
    #[error("flow left the finite range starting from {start}")]
    Blowup { start: f64 },
}

/// Integrates the autonomous system `y' = f(y)` from `y0` over `[0, t]`,
/// reporting the state at each of the increasing `stops`.
pub fn dormand_prince<const N: usize>(
    f: impl Fn(&[f64; N]) -> [f64; N],
    y0: [f64; N],
    stops: &[f64],
    tol: f64,
) -> Result<Vec<[f64; N]>, FlowError> {
    let mut out = Vec::with_capacity(stops.len());
    let mut y = y0;
    let mut t = 0.0;
    let mut h = 1e-3f64;
    let mut steps = 0;
    for &stop in stops {
        while t < stop {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(FlowError::StepBudget { start: y0[0], t: stop });
            }
            let step = h.min(stop - t);
            let mut k = [[0.0; N]; 7];
            k[0] = f(&y);
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    for d in 0..N {
                        ys[d] += step * A[s][j] * kj[d];
                    }
                }
                k[s] = f(&ys);
            }
            let mut y5 = y;
            let mut err: f64 = 0.0;
            for d in 0..N {
                let mut hi = 0.0;
                let mut lo = 0.0;
                for s in 0..7 {
                    hi += B5[s] * k[s][d];
                    lo += B4[s] * k[s][d];
                }
                y5[d] += step * hi;
                err = err.max((step * (hi - lo)).abs());
            }
            if err <= tol {
                t += step;
                y = y5;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(FlowError::Blowup { start: y0[0] });
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h = step * factor;
            if t >= stop {
                break;
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Flow maps of the drift of a model.
#[derive(Debug, Clone, Copy)]
pub struct FlowSolver<'m> {
    model: &'m CoefficientModel,
    tol: f64,
}

impl<'m> FlowSolver<'m> {
    pub fn new(model: &'m CoefficientModel) -> Self {
        FlowSolver { model, tol: FLOW_TOL }
    }

    pub fn with_tolerance(self, tol: f64) -> Self {
        FlowSolver { tol, ..self }
    }

    /// `χ_t(x)`.
    pub fn forward(&self, t: f64, x: f64) -> Result<f64, FlowError> {
        let m = self.model;
        Ok(dormand_prince(|y: &[f64; 1]| [m.b(y[0])], [x], &[t], self.tol)?[0][0])
    }

    /// `θ_t(y)`, the inverse of `χ_t`.
    pub fn backward(&self, t: f64, y: f64) -> Result<f64, FlowError> {
        let m = self.model;
        Ok(dormand_prince(|v: &[f64; 1]| [-m.b(v[0])], [y], &[t], self.tol)?[0][0])
    }

    /// `θ_s(y)` for each of the increasing times `ts`.
    pub fn backward_path(&self, ts: &[f64], y: f64) -> Result<Vec<f64>, FlowError> {
        let m = self.model;
        Ok(dormand_prince(|v: &[f64; 1]| [-m.b(v[0])], [y], ts, self.tol)?.into_iter().map(|v| v[0]).collect())
    }

    /// `(χ_t(x), ∂_x χ_t(x))`, the Jacobian solving `D' = b'(χ) D`, `D_0 = 1`.
    pub fn jacobian(&self, t: f64, x: f64) -> Result<(f64, f64), FlowError> {
        let m = self.model;
        let r = dormand_prince(|y: &[f64; 2]| [m.b(y[0]), m.b_prime(y[0]) * y[1]], [x, 1.0], &[t], self.tol)?;
        Ok((r[0][0], r[0][1]))
    }

    /// `∂_y θ_t(y)`.
    pub fn backward_jacobian(&self, t: f64, y: f64) -> Result<f64, FlowError> {
        let m = self.model;
        let r = dormand_prince(|v: &[f64; 2]| [-m.b(v[0]), -m.b_prime(v[0]) * v[1]], [y, 1.0], &[t], self.tol)?;
        Ok(r[0][1])
    }
}
