//! Gauss–Legendre rules and small scalar integrators.

use std::sync::OnceLock;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, w * h))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

macro_rules! cached_rule {
    ($name:ident, $n:expr) => {
        pub fn $name() -> &'static GaussLegendre {
            static RULE: OnceLock<GaussLegendre> = OnceLock::new();
            RULE.get_or_init(|| GaussLegendre::new($n))
        }
    };
}

cached_rule!(gl4, 4);
cached_rule!(gl5, 5);
cached_rule!(gl8, 8);
cached_rule!(gl16, 16);
cached_rule!(gl32, 32);

/// Composite rule with panels whose edges grow geometrically away from `c`.
///
/// Integrates over `[a, b]`; the innermost panels on either side of `c` have width `w`.
pub fn graded(a: f64, b: f64, c: f64, w: f64, ratio: f64, rule: &GaussLegendre, mut f: impl FnMut(f64) -> f64) -> f64 {
    let edges = graded_edges(a, b, c, w, ratio);
    let mut s = 0.0;
    for pair in edges.windows(2) {
        s += rule.integrate(pair[0], pair[1], &mut f);
    }
    s
}

/// Panel edges used by [`graded`].
pub fn graded_edges(a: f64, b: f64, c: f64, w: f64, ratio: f64) -> Vec<f64> {
    let mut edges = vec![a, b];
    if c > a && c < b {
        edges.push(c);
    }
    let mut d = w.max(1e-300);
    while c - d > a || c + d < b {
        for e in [c - d, c + d] {
            if e > a && e < b {
                edges.push(e);
            }
        }
        d *= ratio;
    }
    edges.sort_by(f64::total_cmp);
    edges
}

/// Adaptive Gauss–Kronrod-free bisection using a pair of Gauss–Legendre rules.
pub fn adaptive(a: f64, b: f64, tol: f64, depth: usize, f: &mut impl FnMut(f64) -> f64) -> f64 {
    let coarse = gl8().integrate(a, b, &mut *f);
    let m = 0.5 * (a + b);
    let fine = gl8().integrate(a, m, &mut *f) + gl8().integrate(m, b, &mut *f);
    if depth == 0 || (fine - coarse).abs() <= tol.max(1e-15 * fine.abs()) {
        fine
    } else {
        adaptive(a, m, 0.5 * tol, depth - 1, f) + adaptive(m, b, 0.5 * tol, depth - 1, f)
    }
}
