//! Certified extremum search over axis-aligned sub-boxes of a ReLU network's
//! input domain.
//!
//! Every query fixes some coordinates and lets the others range over closed
//! intervals. [`maximize`]/[`minimize`] run a best-first branch-and-bound with
//! interval bounds; a sub-box on which every neuron is stable is solved exactly
//! because the network is affine there. [`line_extremum_exact`] handles the
//! one-free-coordinate case by walking activation breakpoints, and
//! [`find_pair_counterexample`] searches the space of monotonicity violating
//! pairs for a single feature.

mod bnb;
mod bounds;
mod line;
mod pair;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, BOX_TOLERANCE};

/// Linearize-and-jump steps used to pick candidates inside unstable boxes.
const VERTEX_STEPS: usize = 3;

pub use bnb::{maximize, minimize, optimize};
pub use bounds::{interval_bounds, Interval, IntervalBounds, NeuronBounds};
pub use line::{breakpoints, line_extremum_exact};
pub use pair::{find_pair_counterexample, PairCounterexample, PairMode, PairOutcome, PairSearch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target optimality gap.
    pub epsilon: f64,
    /// Margin realizing strict inequalities: `a > b` is checked as `a > b + delta`.
    pub delta: f64,
    /// Node budget per query.
    pub max_nodes: usize,
    /// Neurons whose pre-activation is within this distance of a fixed branch
    /// are treated as stable; the induced error is added to the bound.
    #[serde(rename = "stability_slack")]
    pub neuron_stability_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-6,
            delta: 1e-9,
            max_nodes: 1_000_000,
            neuron_stability_slack: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation("solver epsilon must be positive".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Validation("solver delta must be non-negative".into()));
        }
        if self.max_nodes == 0 {
            return Err(Error::Validation("solver max_nodes must be at least 1".into()));
        }
        if !(self.neuron_stability_slack >= 0.0) {
            return Err(Error::Validation("stability slack must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

impl Sense {
    pub(crate) fn sign(self) -> f64 {
        match self {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coord {
    Fixed(f64),
    Free { lo: f64, hi: f64 },
}

/// A sub-box of the input domain: every feature is either fixed or free in a
/// closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQuery {
    coords: Vec<Coord>,
}

impl BoxQuery {
    /// Query fixing every coordinate at `x`.
    pub fn at_point(x: &[f64]) -> Self {
        BoxQuery {
            coords: x.iter().map(|&v| Coord::Fixed(v)).collect(),
        }
    }

    /// Query freeing every coordinate over the network's input box.
    pub fn whole_box(net: &Network) -> Self {
        let b = net.input_box();
        BoxQuery {
            coords: b
                .lower
                .iter()
                .zip(&b.upper)
                .map(|(&lo, &hi)| Coord::Free { lo, hi })
                .collect(),
        }
    }

    pub fn with_free(mut self, index: usize, lo: f64, hi: f64) -> Self {
        self.coords[index] = Coord::Free { lo, hi };
        self
    }

    pub fn with_fixed(mut self, index: usize, value: f64) -> Self {
        self.coords[index] = Coord::Fixed(value);
        self
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn fixed(&self) -> BTreeMap<usize, f64> {
        self.coords
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match *c {
                Coord::Fixed(v) => Some((i, v)),
                Coord::Free { .. } => None,
            })
            .collect()
    }

    pub fn free(&self) -> BTreeMap<usize, (f64, f64)> {
        self.coords
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match *c {
                Coord::Free { lo, hi } => Some((i, (lo, hi))),
                Coord::Fixed(_) => None,
            })
            .collect()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        self.free().into_keys().collect()
    }

    /// Lower/upper corner vectors (fixed coordinates have `lo == hi`).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.coords
            .iter()
            .map(|c| match *c {
                Coord::Fixed(v) => (v, v),
                Coord::Free { lo, hi } => (lo, hi),
            })
            .unzip()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let (lo, hi) = self.bounds();
        x.len() == lo.len()
            && x
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let b = net.input_box();
        if self.dim() != net.input_dim() {
            return Err(Error::InvalidInput(format!(
                "query has {} coordinates, network expects {}",
                self.dim(),
                net.input_dim()
            )));
        }
        for (i, c) in self.coords.iter().enumerate() {
            let (lo, hi) = match *c {
                Coord::Fixed(v) => (v, v),
                Coord::Free { lo, hi } => (lo, hi),
            };
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidInput(format!(
                    "coordinate {i} has an invalid interval [{lo}, {hi}]"
                )));
            }
            if lo < b.lower[i] - BOX_TOLERANCE || hi > b.upper[i] + BOX_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "coordinate {i} range [{lo}, {hi}] leaves the input box [{}, {}]",
                    b.lower[i], b.upper[i]
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of a certified extremum query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremumResult {
    pub witness: Vec<f64>,
    pub witness_value: f64,
    /// Sound bound on the true extremum (upper bound for max, lower for min).
    pub certified_bound: f64,
    /// Distance between `certified_bound` and `witness_value`, non-negative.
    pub gap: f64,
    pub nodes_explored: usize,
    /// Seconds.
    pub wall_time: f64,
    /// False when the node budget ran out before the gap reached epsilon.
    pub complete: bool,
}
