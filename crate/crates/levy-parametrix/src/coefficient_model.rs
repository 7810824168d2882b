//! Coefficients `a`, `b`, the stable index and the admissible regime.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, ExprError};

/// Which leading-order kernel the parametrix uses.
///
/// * `A`: `p⁰_t(x, y) = g_{t a(y)}(y - x)`, needs `α ∈ (1, 2)`.
/// * `B`: the argument is shifted by `t b(y)`, needs `α > 1/(1+γ)`.
/// * `C`: the argument follows the backward flow of `b`, needs `b` Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    A,
    B,
    C,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::A => "A",
            Regime::B => "B",
            Regime::C => "C",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "A" | "a" => Ok(Regime::A),
            "B" | "b" => Ok(Regime::B),
            "C" | "c" => Ok(Regime::C),
            other => Err(format!("unknown regime `{other}`, expected A, B or C")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("coefficient `{which}`: {source}")]
    Expr {
        which: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("invalid model file: {0}")]
    Config(String),
    #[error("alpha must lie in (0, 2), got {0}")]
    InvalidAlpha(f64),
    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("domain [{0}, {1}] is empty")]
    EmptyDomain(f64, f64),
    #[error("a must be positive: a({x}) = {value}")]
    NotElliptic { x: f64, value: f64 },
    #[error("coefficient `{which}` is not finite at x = {x}")]
    NonFinite { which: &'static str, x: f64 },
    #[error("coefficient `{which}` is not Hölder continuous of order {gamma} on the domain")]
    Irregular { which: &'static str, gamma: f64 },
    #[error("regime {regime} is not admissible: {reason}")]
    InadmissibleRegime { regime: Regime, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_gamma() -> f64 {
    1.0
}

fn default_lo() -> f64 {
    -15.0
}

fn default_hi() -> f64 {
    15.0
}

/// On-disk description of a model; TOML compatible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: String,
    pub b: String,
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub regime: Regime,
    #[serde(default = "default_lo")]
    pub domain_lo: f64,
    #[serde(default = "default_hi")]
    pub domain_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_b: Option<f64>,
}

impl ModelConfig {
    pub fn new(a: &str, b: &str, alpha: f64, gamma: f64, regime: Regime) -> Self {
        ModelConfig {
            a: a.into(),
            b: b.into(),
            alpha,
            gamma,
            regime,
            domain_lo: default_lo(),
            domain_hi: default_hi(),
            holder_a: None,
            holder_b: None,
            lipschitz_b: None,
        }
    }
}

/// Regularity constants of the coefficients on the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub a_min: f64,
    pub a_max: f64,
    pub b_sup: f64,
    pub holder_a: f64,
    pub holder_b: f64,
    pub lipschitz_b: Option<f64>,
}

pub const ESTIMATION_POINTS: usize = 10_000;
pub const INFLATION: f64 = 1.25;

/// Validated coefficients.
#[derive(Debug, Clone)]
pub struct CoefficientModel {
    a: Expr,
    b: Expr,
    alpha: f64,
    gamma: f64,
    regime: Regime,
    domain: (f64, f64),
    constants: Constants,
}

/// Parses a TOML model description and validates it.
pub fn parse_coefficients(source: &str) -> Result<CoefficientModel, ModelError> {
    let cfg: ModelConfig = toml::from_str(source).map_err(|e| ModelError::Config(e.to_string()))?;
    CoefficientModel::from_config(&cfg)
}

pub fn load_coefficients(path: &Path) -> Result<CoefficientModel, ModelError> {
    parse_coefficients(&std::fs::read_to_string(path)?)
}

impl CoefficientModel {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let a = Expr::parse(&cfg.a).map_err(|source| ModelError::Expr { which: "a", source })?;
        let b = Expr::parse(&cfg.b).map_err(|source| ModelError::Expr { which: "b", source })?;
        if !(cfg.alpha > 0.0 && cfg.alpha < 2.0) {
            return Err(ModelError::InvalidAlpha(cfg.alpha));
        }
        if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
            return Err(ModelError::InvalidGamma(cfg.gamma));
        }
        if !(cfg.domain_lo < cfg.domain_hi) || !cfg.domain_lo.is_finite() || !cfg.domain_hi.is_finite() {
            return Err(ModelError::EmptyDomain(cfg.domain_lo, cfg.domain_hi));
        }
        let domain = (cfg.domain_lo, cfg.domain_hi);
        let mut constants = estimate_constants(&a, &b, cfg.gamma, domain)?;
        if let Some(h) = cfg.holder_a {
            constants.holder_a = h;
        }
        if let Some(h) = cfg.holder_b {
            constants.holder_b = h;
        }
        if cfg.lipschitz_b.is_some() {
            constants.lipschitz_b = cfg.lipschitz_b;
        }
        let model = CoefficientModel { a, b, alpha: cfg.alpha, gamma: cfg.gamma, regime: cfg.regime, domain, constants };
        model.check_regime(cfg.regime)?;
        Ok(model)
    }

    /// The same coefficients under another regime.
    pub fn with_regime(&self, regime: Regime) -> Result<Self, ModelError> {
        self.check_regime(regime)?;
        Ok(CoefficientModel { regime, ..self.clone() })
    }

    /// The same coefficients with another stable index.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(ModelError::InvalidAlpha(alpha));
        }
        let m = CoefficientModel { alpha, ..self.clone() };
        m.check_regime(m.regime)?;
        Ok(m)
    }

    pub fn check_regime(&self, regime: Regime) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::InadmissibleRegime { regime, reason });
        match regime {
            Regime::A if !(self.alpha > 1.0) => fail(format!("requires alpha in (1, 2), got {}", self.alpha)),
            Regime::B if !(self.alpha > 1.0 / (1.0 + self.gamma)) => {
                fail(format!("requires alpha > 1/(1+gamma) = {}, got {}", 1.0 / (1.0 + self.gamma), self.alpha))
            }
            Regime::C if self.constants.lipschitz_b.is_none() => fail("requires a Lipschitz drift".into()),
            _ => Ok(()),
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            a: self.a.source().into(),
            b: self.b.source().into(),
            alpha: self.alpha,
            gamma: self.gamma,
            regime: self.regime,
            domain_lo: self.domain.0,
            domain_hi: self.domain.1,
            holder_a: Some(self.constants.holder_a),
            holder_b: Some(self.constants.holder_b),
            lipschitz_b: self.constants.lipschitz_b,
        }
    }

    #[inline]
    pub fn a(&self, x: f64) -> f64 {
        self.a.eval(x)
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.b.eval(x)
    }

    /// Derivative of `b` by central differences, one-sided at kinks in the
    /// direction of `b(x)`.
    pub fn b_prime(&self, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        let b0 = self.b(x);
        let right = (self.b(x + h) - b0) / h;
        let left = (b0 - self.b(x - h)) / h;
        if (right - left).abs() <= 1e-4 * (1.0 + right.abs().max(left.abs())) {
            0.5 * (right + left)
        } else if b0 >= 0.0 {
            right
        } else {
            left
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn a_expr(&self) -> &Expr {
        &self.a
    }

    pub fn b_expr(&self) -> &Expr {
        &self.b
    }

    /// Default hull exponent parameter `κ = min(γ, 0.9α)`.
    pub fn default_kappa(&self) -> f64 {
        self.gamma.min(0.9 * self.alpha)
    }

    /// Whether `a` is constant and `b` vanishes identically.
    pub fn is_flat(&self) -> bool {
        self.a.is_constant() && self.b.is_constant() && self.b.eval(0.0) == 0.0
    }
}

fn lattice(domain: (f64, f64), n: usize) -> Vec<f64> {
    let h = (domain.1 - domain.0) / (n - 1) as f64;
    (0..n).map(|i| domain.0 + i as f64 * h).collect()
}

fn sample(e: &Expr, which: &'static str, xs: &[f64]) -> Result<Vec<f64>, ModelError> {
    xs.iter()
        .map(|&x| {
            let v = e.eval(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ModelError::NonFinite { which, x })
            }
        })
        .collect()
}

fn holder(xs: &[f64], fs: &[f64], gamma: f64) -> f64 {
    let n = xs.len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..(i + 65).min(n) {
            best = best.max((fs[j] - fs[i]).abs() / (xs[j] - xs[i]).powf(gamma));
        }
    }
    let stride = (n / 400).max(1);
    for i in (0..n).step_by(stride) {
        for j in (i + stride..n).step_by(stride) {
            best = best.max((fs[j] - fs[i]).abs() / (xs[j] - xs[i]).powf(gamma));
        }
    }
    best
}

fn lipschitz(e: &Expr, domain: (f64, f64), n: usize) -> Result<f64, ModelError> {
    let xs = lattice(domain, n);
    let fs = sample(e, "b", &xs)?;
    Ok(xs.windows(2).zip(fs.windows(2)).map(|(x, f)| (f[1] - f[0]).abs() / (x[1] - x[0])).fold(0.0, f64::max))
}

/// Estimates bounds and regularity constants on a lattice of
/// [`ESTIMATION_POINTS`] points, inflated by [`INFLATION`].
pub fn estimate_constants(a: &Expr, b: &Expr, gamma: f64, domain: (f64, f64)) -> Result<Constants, ModelError> {
    let xs = lattice(domain, ESTIMATION_POINTS);
    let av = sample(a, "a", &xs)?;
    let bv = sample(b, "b", &xs)?;
    for (x, v) in xs.iter().zip(&av) {
        if *v <= 0.0 {
            return Err(ModelError::NotElliptic { x: *x, value: *v });
        }
    }
    let a_min = av.iter().copied().fold(f64::INFINITY, f64::min);
    let a_max = av.iter().copied().fold(0.0, f64::max);
    let b_sup = bv.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let fine_xs = lattice(domain, 2 * ESTIMATION_POINTS);
    let mut holder_consts = [0.0; 2];
    for (k, (e, values, which)) in [(a, &av, "a"), (b, &bv, "b")].into_iter().enumerate() {
        let coarse = holder(&xs, values, gamma);
        let fine = holder(&fine_xs, &sample(e, which, &fine_xs)?, gamma);
        if fine > 1.5 * coarse.max(1e-12) && fine > 1e-12 {
            return Err(ModelError::Irregular { which, gamma });
        }
        holder_consts[k] = fine;
    }
    let coarse = lipschitz(b, domain, ESTIMATION_POINTS)?;
    let fine = lipschitz(b, domain, 2 * ESTIMATION_POINTS)?;
    let lipschitz_b = if fine <= 1.5 * coarse.max(1e-12) || fine < 1e-12 { Some(INFLATION * fine) } else { None };
    Ok(Constants {
        a_min,
        a_max,
        b_sup: INFLATION * b_sup,
        holder_a: INFLATION * holder_consts[0],
        holder_b: INFLATION * holder_consts[1],
        lipschitz_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCH: &str = r#"
a = "1 + 0.3*sin(x)"
b = "0.5*cos(x)"
alpha = 1.5
gamma = 1.0
regime = "A"
domain_lo = -15
domain_hi = 15
"#;

    #[test]
    fn parses_benchmark() {
        let m = parse_coefficients(BENCH).unwrap();
        let c = m.constants();
        assert!((c.a_min - 0.7).abs() < 1e-6);
        assert!((c.a_max - 1.3).abs() < 1e-6);
        assert!((c.holder_a - 1.25 * 0.3).abs() < 1e-3);
        assert!((c.lipschitz_b.unwrap() - 1.25 * 0.5).abs() < 1e-3);
        assert!((m.b_prime(0.3) + 0.5 * 0.3f64.sin()).abs() < 1e-8);
        assert_eq!(m.default_kappa(), 1.0);
    }

    #[test]
    fn rejects_degenerate_and_inadmissible() {
        let cfg = ModelConfig::new("sin(x)", "0", 1.5, 1.0, Regime::A);
        assert!(matches!(CoefficientModel::from_config(&cfg), Err(ModelError::NotElliptic { .. })));
        let cfg = ModelConfig::new("1", "0", 0.8, 1.0, Regime::A);
        assert!(matches!(CoefficientModel::from_config(&cfg), Err(ModelError::InadmissibleRegime { .. })));
        let cfg = ModelConfig::new("1", "0", 0.4, 0.5, Regime::B);
        assert!(matches!(CoefficientModel::from_config(&cfg), Err(ModelError::InadmissibleRegime { .. })));
        let cfg = ModelConfig::new("1", "1/x", 1.5, 1.0, Regime::A);
        assert!(CoefficientModel::from_config(&cfg).is_err());
        assert!(parse_coefficients("a = \"1\"\nb = \"0\"\nalpha = 1.2\nregime = \"Q\"").is_err());
        assert!(parse_coefficients("a = \"1\"\nb = \"0\"\nalpha = 1.2\nregime = \"A\"\nextra = 1").is_err());
    }

    #[test]
    fn jump_in_drift_is_detected() {
        let cfg = ModelConfig::new("1", "tanh(x*1e7)", 1.5, 1.0, Regime::C);
        assert!(matches!(CoefficientModel::from_config(&cfg), Err(ModelError::Irregular { which: "b", .. })));
    }
}
