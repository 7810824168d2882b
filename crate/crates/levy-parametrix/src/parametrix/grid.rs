//! Geometric time grids.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    /// First node as a fraction of the horizon.
    pub first: f64,
    pub ratio: f64,
    /// Intervals wider than this are split uniformly.
    pub max_step: f64,
    /// Times that must be grid nodes.
    pub required: Vec<f64>,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { horizon: 1.0, first: 1e-4, ratio: 1.5, max_step: 0.1, required: vec![0.1, 0.25, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(spec: &TimeSpec) -> TimeGrid {
        assert!(spec.horizon > 0.0 && spec.first > 0.0 && spec.first < 1.0 && spec.ratio > 1.0 && spec.max_step > 0.0);
        let t_max = spec.horizon;
        let mut times = Vec::new();
        let mut t = t_max;
        while t > spec.first * t_max * (1.0 + 1e-9) {
            times.push(t);
            t /= spec.ratio;
        }
        times.push(spec.first * t_max);
        times.reverse();
        let snap = spec.ratio.powf(0.35);
        for &r in &spec.required {
            if !(r > 0.0 && r <= t_max) {
                continue;
            }
            let (k, dist) = times
                .iter()
                .enumerate()
                .map(|(k, &t)| (k, (t / r).ln().abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if dist < snap.ln() && k + 1 != times.len() && k != 0 {
                times[k] = r;
            } else if dist > 1e-12 {
                times.push(r);
                times.sort_by(f64::total_cmp);
            }
        }
        times.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-12);
        let mut split = vec![times[0]];
        for w in times.windows(2) {
            let k = ((w[1] - w[0]) / spec.max_step * (1.0 - 1e-9)).ceil().max(1.0) as usize;
            for q in 1..k {
                split.push(w[0] + (w[1] - w[0]) * q as f64 / k as f64);
            }
            split.push(w[1]);
        }
        TimeGrid { times: split }
    }

    pub fn from_times(mut times: Vec<f64>) -> TimeGrid {
        times.sort_by(f64::total_cmp);
        times.dedup();
        assert!(!times.is_empty() && times[0] > 0.0);
        TimeGrid { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the node equal to `t` up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs())
    }

    /// Grid with every interval split geometrically in two.
    pub fn refined(&self) -> TimeGrid {
        let mut out = Vec::with_capacity(2 * self.times.len());
        out.push(self.times[0] / (self.times[1] / self.times[0]).sqrt());
        for w in self.times.windows(2) {
            out.push(w[0]);
            out.push((w[0] * w[1]).sqrt());
        }
        out.push(self.last());
        TimeGrid { times: out }
    }
}
