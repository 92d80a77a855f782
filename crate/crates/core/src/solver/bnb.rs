use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::error::Result;
use crate::nn::Network;

use super::bounds::{max_linear_with_cuts, Analysis, Cut};
use super::{BoxQuery, ExtremumResult, Sense, SolverConfig, VERTEX_STEPS};

/// Boxes with at most this many unstable neurons are solved by enumerating
/// their activation patterns.
const MAX_SPLIT_NEURONS: usize = 2;

/// Evaluation of one sub-box, in objective space (always maximized).
pub(crate) struct NodeEval {
    /// Sound upper bound of the objective over the box.
    pub ub: f64,
    /// Best feasible point found in the box with its objective value.
    pub candidate: Option<(Vec<f64>, f64)>,
    /// The box needs no further splitting: `ub` is already tight.
    pub closed: bool,
}

/// A maximization problem over a box of branching coordinates.
pub(crate) trait Subproblem {
    fn evaluate(&mut self, lo: &[f64], hi: &[f64]) -> NodeEval;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    /// Gap closed to epsilon.
    Converged,
    /// Stopped because the bound dropped to `certify_below`.
    Certified,
    /// Stopped because a candidate exceeded `stop_above`.
    Found,
    Budget,
}

pub(crate) struct Outcome {
    pub best: Option<(Vec<f64>, f64)>,
    pub bound: f64,
    pub nodes: usize,
    pub status: Status,
}

pub(crate) struct Driver {
    pub epsilon: f64,
    pub max_nodes: usize,
    pub stop_above: Option<f64>,
    pub certify_below: Option<f64>,
}

struct Node {
    ub: f64,
    seq: u64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap on the bound; older nodes first on ties so runs are deterministic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.ub
            .total_cmp(&other.ub)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl Driver {
    pub fn run<P: Subproblem>(&self, problem: &mut P, lo: Vec<f64>, hi: Vec<f64>) -> Outcome {
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut closed_ub = f64::NEG_INFINITY;
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        let mut nodes = 0usize;

        let mut visit = |lo: Vec<f64>,
                         hi: Vec<f64>,
                         problem: &mut P,
                         best: &mut Option<(Vec<f64>, f64)>,
                         closed_ub: &mut f64,
                         heap: &mut BinaryHeap<Node>| {
            let eval = problem.evaluate(&lo, &hi);
            if let Some((x, v)) = eval.candidate {
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    *best = Some((x, v));
                }
            }
            let splittable = lo.iter().zip(&hi).any(|(l, h)| h > l);
            if eval.closed || !splittable {
                *closed_ub = closed_ub.max(eval.ub);
            } else if eval.ub > f64::NEG_INFINITY {
                heap.push(Node {
                    ub: eval.ub,
                    seq,
                    lo,
                    hi,
                });
                seq += 1;
            }
        };

        visit(lo, hi, problem, &mut best, &mut closed_ub, &mut heap);
        nodes += 1;

        let status = loop {
            let best_v = best.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
            if let Some(t) = self.stop_above {
                if best_v > t {
                    break Status::Found;
                }
            }
            let open_ub = heap.peek().map_or(f64::NEG_INFINITY, |n| n.ub);
            if let Some(t) = self.certify_below {
                if open_ub.max(closed_ub) <= t {
                    break Status::Certified;
                }
            }
            // while a certification threshold is pending, closing the gap above
            // a candidate that does not clear it proves nothing
            let pending = self.certify_below.is_some_and(|t| best_v <= t);
            if heap.is_empty() || (open_ub <= best_v + self.epsilon && !pending) {
                break Status::Converged;
            }
            if nodes >= self.max_nodes {
                break Status::Budget;
            }
            let node = heap.pop().expect("heap non-empty while open bound is finite");
            let (lo, hi) = (node.lo, node.hi);
            let axis = widest_axis(&lo, &hi);
            let mid = 0.5 * (lo[axis] + hi[axis]);
            let mut left_hi = hi.clone();
            left_hi[axis] = mid;
            let mut right_lo = lo.clone();
            right_lo[axis] = mid;
            visit(lo, left_hi, problem, &mut best, &mut closed_ub, &mut heap);
            visit(right_lo, hi, problem, &mut best, &mut closed_ub, &mut heap);
            nodes += 2;
        };

        let best_v = best.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
        let open_ub = heap.peek().map_or(f64::NEG_INFINITY, |n| n.ub);
        Outcome {
            bound: open_ub.max(closed_ub).max(best_v),
            best,
            nodes,
            status,
        }
    }
}

fn widest_axis(lo: &[f64], hi: &[f64]) -> usize {
    let mut axis = 0;
    let mut width = f64::NEG_INFINITY;
    for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
        if h - l > width {
            width = h - l;
            axis = i;
        }
    }
    axis
}

/// Maximizes `sign * f` over a box whose branching coordinates are the free
/// coordinates of a [`BoxQuery`].
struct BoxProblem<'a> {
    analysis: Analysis<'a>,
    sign: f64,
    slack: f64,
    /// Full-dimension template with fixed coordinates filled in.
    base_lo: Vec<f64>,
    base_hi: Vec<f64>,
    free: Vec<usize>,
    point: Vec<f64>,
}

impl BoxProblem<'_> {
    fn embed(&mut self, lo: &[f64], hi: &[f64]) {
        for (k, &i) in self.free.iter().enumerate() {
            self.base_lo[i] = lo[k];
            self.base_hi[i] = hi[k];
        }
    }

    fn value_at(&mut self, free_point: &[f64]) -> f64 {
        for (k, &i) in self.free.iter().enumerate() {
            self.point[i] = free_point[k];
        }
        self.sign * self.analysis.net.eval(&self.point)
    }

    /// Corner of the box maximizing the affine model with gradient `grad`.
    fn best_corner(&self, grad: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(k, &i)| if self.sign * grad[i] > 0.0 { hi[k] } else { lo[k] })
            .collect()
    }
}

impl BoxProblem<'_> {
    fn closed_by_stability(&mut self, ub: f64, lo: &[f64], hi: &[f64]) -> Option<NodeEval> {
        let st = self.analysis.stability(self.slack)?;
        let grad = self.analysis.gradient(&st.mask);
        let corner = self.best_corner(&grad, lo, hi);
        let v = self.value_at(&corner);
        Some(NodeEval {
            ub: ub.min(v + 2.0 * st.penalty).max(v),
            candidate: Some((corner, v)),
            closed: true,
        })
    }
}

impl BoxProblem<'_> {
    /// With one or two unstable neurons the box splits into pieces, each a
    /// box cut by half-spaces, on which the network is affine; every piece is
    /// solved as a small linear program.
    fn closed_by_split(&mut self, ub: f64, _lo: &[f64], _hi: &[f64]) -> Option<NodeEval> {
        let st = self.analysis.classify(self.slack);
        let k = st.unstable.len();
        if k == 0 || k > MAX_SPLIT_NEURONS {
            return None;
        }
        let mut bound = f64::NEG_INFINITY;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for pattern in 0..(1u32 << k) {
            let mut mask = st.mask.clone();
            for (b, &n) in st.unstable.iter().enumerate() {
                mask[n] = pattern >> b & 1 == 1;
            }
            let g = self.analysis.gradient(&mask);
            let (out0, pre0) = self.analysis.masked_eval(&mask, &self.base_lo);
            let c = out0 - dot(&g, &self.base_lo);
            let mut cuts = Vec::with_capacity(k);
            for &n in &st.unstable {
                let a = self.analysis.neuron_gradient(&mask, n);
                let e = pre0[n] - dot(&a, &self.base_lo);
                // active: a.x + e >= 0; inactive: a.x + e <= 0
                cuts.push(if mask[n] {
                    Cut { q: a.iter().map(|v| -v).collect(), r: e }
                } else {
                    Cut { q: a, r: -e }
                });
            }
            let p: Vec<f64> = g.iter().map(|v| self.sign * v).collect();
            if let Some((z, v)) = max_linear_with_cuts(&p, &cuts, &self.base_lo, &self.base_hi) {
                bound = bound.max(v + self.sign * c);
                let free_point: Vec<f64> = self.free.iter().map(|&i| z[i]).collect();
                let actual = self.value_at(&free_point);
                if best.as_ref().is_none_or(|(_, b)| actual > *b) {
                    best = Some((free_point, actual));
                }
            }
        }
        let (free_point, v) = best?;
        if bound - v > 1e-9 * (1.0 + v.abs()) {
            return None;
        }
        Some(NodeEval {
            ub: ub.min(bound + 2.0 * st.penalty).max(v),
            candidate: Some((free_point, v)),
            closed: true,
        })
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| x * y).sum()
}

impl Subproblem for BoxProblem<'_> {
    fn evaluate(&mut self, lo: &[f64], hi: &[f64]) -> NodeEval {
        self.embed(lo, hi);
        let out = self.analysis.propagate(&self.base_lo, &self.base_hi);
        let ub_ibp = if self.sign > 0.0 { out.hi } else { -out.lo };
        if let Some(eval) = self.closed_by_stability(ub_ibp, lo, hi) {
            return eval;
        }

        self.analysis.tighten(&self.base_lo, &self.base_hi);
        let (ub_lin, coef) = self.analysis.linear_output_bound(&self.base_lo, &self.base_hi, self.sign);
        let ub = ub_ibp.min(ub_lin);
        if let Some(eval) = self.closed_by_stability(ub, lo, hi) {
            return eval;
        }
        if let Some(eval) = self.closed_by_split(ub, lo, hi) {
            return eval;
        }

        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut consider = |z: Vec<f64>, v: f64| {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((z, v));
            }
        };
        // corner maximizing the relaxation (coef is already in objective space)
        let corner = self.best_corner(&coef.iter().map(|c| self.sign * c).collect::<Vec<_>>(), lo, hi);
        let v = self.value_at(&corner);
        consider(corner, v);
        // linearize at the center, jump to the corner it favors, and repeat from there
        let mut z: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        for _ in 0..VERTEX_STEPS {
            let v = self.value_at(&z);
            let mask = self.analysis.pattern_at(&self.point);
            let grad = self.analysis.gradient(&mask);
            let next = self.best_corner(&grad, lo, hi);
            let done = next == z;
            consider(std::mem::replace(&mut z, next), v);
            if done {
                break;
            }
        }
        let v = self.value_at(&z);
        consider(z, v);
        let candidate = best.expect("at least one candidate");
        NodeEval {
            ub: ub.max(candidate.1),
            candidate: Some(candidate),
            closed: false,
        }
    }
}

/// Certified extremum of `net` over the query box.
pub fn optimize(net: &Network, query: &BoxQuery, sense: Sense, cfg: &SolverConfig) -> Result<ExtremumResult> {
    cfg.validate()?;
    query.validate(net)?;
    let start = Instant::now();
    let (base_lo, base_hi) = query.bounds();
    let free = query.free_indices();
    let lo: Vec<f64> = free.iter().map(|&i| base_lo[i]).collect();
    let hi: Vec<f64> = free.iter().map(|&i| base_hi[i]).collect();
    let mut problem = BoxProblem {
        analysis: Analysis::new(net),
        sign: sense.sign(),
        slack: cfg.neuron_stability_slack,
        point: base_lo.clone(),
        base_lo,
        base_hi,
        free,
    };
    let driver = Driver {
        epsilon: cfg.epsilon,
        max_nodes: cfg.max_nodes,
        stop_above: None,
        certify_below: None,
    };
    let outcome = driver.run(&mut problem, lo, hi);
    let (free_point, best) = outcome.best.expect("root evaluation always yields a candidate");
    let mut witness = problem.point.clone();
    for (k, &i) in problem.free.iter().enumerate() {
        witness[i] = free_point[k];
    }
    let sign = sense.sign();
    Ok(ExtremumResult {
        witness,
        witness_value: sign * best,
        certified_bound: sign * outcome.bound,
        gap: (outcome.bound - best).max(0.0),
        nodes_explored: outcome.nodes,
        wall_time: start.elapsed().as_secs_f64(),
        complete: outcome.status == Status::Converged,
    })
}

pub fn maximize(net: &Network, query: &BoxQuery, cfg: &SolverConfig) -> Result<ExtremumResult> {
    optimize(net, query, Sense::Max, cfg)
}

pub fn minimize(net: &Network, query: &BoxQuery, cfg: &SolverConfig) -> Result<ExtremumResult> {
    optimize(net, query, Sense::Min, cfg)
}
