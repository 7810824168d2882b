//! Spatial lattice: a uniform interior box, geometric outer cells and two
//! semi-infinite tail cells.

use serde::{Deserialize, Serialize};

/// User-facing description of a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    /// Growth ratio of the outer cell widths.
    pub outer_ratio: f64,
    /// Outer cells extend to `extent_factor · (hi - lo)` from the box.
    pub extent_factor: f64,
    /// Outer cells closer than this to the box are split into panels no wider
    /// than the coefficient length scale.
    pub resolved_extent: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec { lo: -15.0, hi: 15.0, nodes: 513, outer_ratio: 1.5, extent_factor: 1e4, resolved_extent: 600.0 }
    }
}

/// A static integration panel of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Panel {
    Finite(f64, f64),
    /// `[edge, ∞)` when `sign > 0`, `(-∞, edge]` otherwise.
    Tail { edge: f64, sign: f64 },
}

#[derive(Debug, Clone)]
pub struct Lattice {
    spec: LatticeSpec,
    step: f64,
    nodes: Vec<f64>,
    edges: Vec<f64>,
    first_interior: usize,
    panels: Vec<Vec<Panel>>,
}

impl Lattice {
    /// `panel_width` bounds static panels inside the resolved region.
    pub fn new(spec: &LatticeSpec, panel_width: f64) -> Lattice {
        assert!(spec.nodes >= 3 && spec.hi > spec.lo);
        let n = spec.nodes;
        let step = (spec.hi - spec.lo) / (n - 1) as f64;
        let extent = spec.extent_factor * (spec.hi - spec.lo);
        let mut right = vec![spec.hi + 0.5 * step];
        let mut width = step * spec.outer_ratio;
        while *right.last().unwrap() < spec.hi + extent {
            let e = *right.last().unwrap() + width;
            right.push(e);
            width *= spec.outer_ratio;
        }
        let mut left: Vec<f64> = right.iter().map(|e| spec.lo - (e - spec.hi)).collect();
        left.reverse();
        let mut edges = Vec::new();
        edges.push(f64::NEG_INFINITY);
        edges.extend(&left);
        let first_interior = edges.len() - 1;
        for i in 1..n {
            edges.push(spec.lo + (i as f64 - 0.5) * step);
        }
        edges.extend(&right);
        edges.push(f64::INFINITY);
        let cells = edges.len() - 1;
        let mut nodes = Vec::with_capacity(cells);
        for c in 0..cells {
            let (a, b) = (edges[c], edges[c + 1]);
            let x = if a.is_infinite() {
                2.0 * b - spec.lo
            } else if b.is_infinite() {
                2.0 * a - spec.hi
            } else if c >= first_interior && c < first_interior + n {
                spec.lo + (c - first_interior) as f64 * step
            } else {
                0.5 * (a + b)
            };
            nodes.push(x);
        }
        let resolved_lo = spec.lo - spec.resolved_extent;
        let resolved_hi = spec.hi + spec.resolved_extent;
        let panels = (0..cells)
            .map(|c| {
                let (a, b) = (edges[c], edges[c + 1]);
                if b.is_infinite() {
                    vec![Panel::Finite(a, 4.0 * a - 3.0 * spec.hi), Panel::Tail { edge: 4.0 * a - 3.0 * spec.hi, sign: 1.0 }]
                } else if a.is_infinite() {
                    vec![Panel::Tail { edge: 4.0 * b - 3.0 * spec.lo, sign: -1.0 }, Panel::Finite(4.0 * b - 3.0 * spec.lo, b)]
                } else {
                    let (ra, rb) = (a.max(resolved_lo), b.min(resolved_hi));
                    if ra >= rb || b - a <= panel_width {
                        return vec![Panel::Finite(a, b)];
                    }
                    let mut out = Vec::new();
                    if a < ra {
                        out.push(Panel::Finite(a, ra));
                    }
                    let k = ((rb - ra) / panel_width).ceil() as usize;
                    let w = (rb - ra) / k as f64;
                    for q in 0..k {
                        out.push(Panel::Finite(ra + q as f64 * w, if q + 1 == k { rb } else { ra + (q + 1) as f64 * w }));
                    }
                    if rb < b {
                        out.push(Panel::Finite(rb, b));
                    }
                    out
                }
            })
            .collect();
        Lattice { spec: spec.clone(), step, nodes, edges, first_interior, panels }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    /// Spacing of the interior nodes.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of cells including outer and tail cells.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Representative points of all cells.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, c: usize) -> f64 {
        self.nodes[c]
    }

    pub fn cell(&self, c: usize) -> (f64, f64) {
        (self.edges[c], self.edges[c + 1])
    }

    pub fn width(&self, c: usize) -> f64 {
        self.edges[c + 1] - self.edges[c]
    }

    pub fn panels(&self, c: usize) -> &[Panel] {
        &self.panels[c]
    }

    /// Index range of the interior cells.
    pub fn interior(&self) -> std::ops::Range<usize> {
        self.first_interior..self.first_interior + self.spec.nodes
    }

    /// Interior node values.
    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[self.interior()]
    }

    /// Cell index of the interior node closest to `x`.
    pub fn nearest_interior(&self, x: f64) -> usize {
        let k = ((x - self.spec.lo) / self.step).round().clamp(0.0, (self.spec.nodes - 1) as f64) as usize;
        self.first_interior + k
    }

    /// Cell containing `x`.
    pub fn locate(&self, x: f64) -> usize {
        match self.edges.binary_search_by(|e| e.total_cmp(&x)) {
            Ok(i) => i.min(self.len() - 1),
            Err(i) => i - 1,
        }
    }
}
