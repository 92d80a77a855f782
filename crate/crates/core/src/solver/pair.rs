//! Search for pairs `(x, x')` that agree off one feature, satisfy
//! `x[i] <= x'[i]`, and have `f(x) > f(x')`.
//!
//! The branching space is `(x, t')`: the first `d` coordinates are `x` with
//! `t = x[i]`, the last is `t' = x'[i]`. The objective `f(x) - f(x')` is
//! bounded by the tighter of plain interval arithmetic and a difference
//! propagation in which the shared coordinates cancel.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;

use super::bnb::{Driver, NodeEval, Status, Subproblem};
use super::bounds::Analysis;
use super::{SolverConfig, VERTEX_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Stop at the first pair whose violation exceeds `delta`.
    Any,
    /// Maximize the violation to within `epsilon`.
    Maximal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCounterexample {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub feature: usize,
    /// `f(x) - f(x')`.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum PairOutcome {
    Counterexample(PairCounterexample),
    /// Certified: no pair violates by more than `delta`.
    Monotone,
    /// Budget exhausted before either verdict; carries the best pair seen.
    Inconclusive { best: Option<PairCounterexample> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSearch {
    pub outcome: PairOutcome,
    /// Upper bound on the supremum violation when the search stopped.
    pub bound: f64,
    pub nodes_explored: usize,
    pub wall_time: f64,
}

impl PairSearch {
    pub fn counterexample(&self) -> Option<&PairCounterexample> {
        match &self.outcome {
            PairOutcome::Counterexample(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.outcome == PairOutcome::Monotone
    }
}

struct PairProblem<'a> {
    net: &'a Network,
    a1: Analysis<'a>,
    a2: Analysis<'a>,
    feature: usize,
    slack: f64,
    lo1: Vec<f64>,
    hi1: Vec<f64>,
    lo2: Vec<f64>,
    hi2: Vec<f64>,
    x: Vec<f64>,
    xp: Vec<f64>,
}

impl<'a> PairProblem<'a> {
    fn new(net: &'a Network, feature: usize, slack: f64) -> Self {
        let d = net.input_dim();
        PairProblem {
            net,
            a1: Analysis::new(net),
            a2: Analysis::new(net),
            feature,
            slack,
            lo1: vec![0.0; d],
            hi1: vec![0.0; d],
            lo2: vec![0.0; d],
            hi2: vec![0.0; d],
            x: vec![0.0; d],
            xp: vec![0.0; d],
        }
    }

    fn dim(&self) -> usize {
        self.x.len()
    }

    fn split(&mut self, z: &[f64]) {
        let d = self.dim();
        self.x.copy_from_slice(&z[..d]);
        self.xp.copy_from_slice(&z[..d]);
        self.xp[self.feature] = z[d];
    }

    fn objective(&mut self, z: &[f64]) -> f64 {
        self.split(z);
        self.net.eval(&self.x) - self.net.eval(&self.xp)
    }

    /// Upper bound on `f(x) - f(x')` given the pre-activation intervals
    /// currently stored in `a1` (for `x`) and `a2` (for `x'`), with
    /// `t - t'` in `[dt_lo, dt_hi]`.
    fn difference_bound(&self, dt_lo: f64, dt_hi: f64) -> f64 {
        let layers = self.net.layers();
        let first = &layers[0];
        let mut dlo: Vec<f64> = Vec::with_capacity(first.out_dim());
        let mut dhi: Vec<f64> = Vec::with_capacity(first.out_dim());
        for o in 0..first.out_dim() {
            let w = first.weight(o, self.feature);
            let (p, q) = (w * dt_lo, w * dt_hi);
            dlo.push(p.min(q));
            dhi.push(p.max(q));
        }
        let mut offset = 0;
        for layer in &layers[1..] {
            // activation of the previous (hidden) layer
            for k in 0..dlo.len() {
                let g = offset + k;
                let (l1, h1) = (self.a1.pre_lo[g], self.a1.pre_hi[g]);
                let (l2, h2) = (self.a2.pre_lo[g], self.a2.pre_hi[g]);
                if l1 >= 0.0 && l2 >= 0.0 {
                    continue;
                }
                if h1 <= 0.0 && h2 <= 0.0 {
                    dlo[k] = 0.0;
                    dhi[k] = 0.0;
                    continue;
                }
                let lo = dlo[k].min(0.0).max(l1.max(0.0) - h2.max(0.0));
                let hi = dhi[k].max(0.0).min(h1.max(0.0) - l2.max(0.0));
                if lo <= hi {
                    dlo[k] = lo;
                    dhi[k] = hi;
                } else {
                    dlo[k] = dlo[k].min(0.0);
                    dhi[k] = dhi[k].max(0.0);
                }
            }
            offset += dlo.len();
            let mut nlo = vec![0.0; layer.out_dim()];
            let mut nhi = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                for (k, &w) in layer.row(o).iter().enumerate() {
                    if w >= 0.0 {
                        nlo[o] += w * dlo[k];
                        nhi[o] += w * dhi[k];
                    } else {
                        nlo[o] += w * dhi[k];
                        nhi[o] += w * dlo[k];
                    }
                }
            }
            dlo = nlo;
            dhi = nhi;
        }
        dhi[0]
    }

    /// Vertex of the feasible region maximizing the affine model
    /// `g1 . x - g2 . x'`.
    fn vertex(&self, g1: &[f64], g2: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let i = self.feature;
        let mut z: Vec<f64> = (0..d)
            .map(|k| if g1[k] - g2[k] > 0.0 { hi[k] } else { lo[k] })
            .collect();
        let (a, b, c, e) = (lo[i], hi[i], lo[d], hi[d]);
        let model = |t: f64, tp: f64| g1[i] * t - g2[i] * tp;
        let mut best = (a, e);
        let mut best_v = model(a, e);
        let mut consider = |t: f64, tp: f64| {
            let v = model(t, tp);
            if v > best_v {
                best_v = v;
                best = (t, tp);
            }
        };
        for (t, tp) in [(a, c), (b, c), (b, e)] {
            if t <= tp {
                consider(t, tp);
            }
        }
        let (m_lo, m_hi) = (a.max(c), b.min(e));
        for v in [a, b, c, e] {
            if v >= m_lo && v <= m_hi {
                consider(v, v);
            }
        }
        z[i] = best.0;
        z.push(best.1);
        z
    }
}

impl PairProblem<'_> {
    fn closed_by_stability(&mut self, ub: f64, flo: &[f64], fhi: &[f64]) -> Option<NodeEval> {
        let s1 = self.a1.stability(self.slack)?;
        let s2 = self.a2.stability(self.slack)?;
        let g1 = self.a1.gradient(&s1.mask);
        let g2 = self.a2.gradient(&s2.mask);
        let z = self.vertex(&g1, &g2, flo, fhi);
        let v = self.objective(&z);
        Some(NodeEval {
            ub: ub.min(v + 2.0 * (s1.penalty + s2.penalty)).max(v),
            candidate: Some((z, v)),
            closed: true,
        })
    }
}

impl Subproblem for PairProblem<'_> {
    fn evaluate(&mut self, lo: &[f64], hi: &[f64]) -> NodeEval {
        let d = self.dim();
        let i = self.feature;
        let (a, b, c, e) = (lo[i], hi[i], lo[d], hi[d]);
        if a > e {
            return NodeEval {
                ub: f64::NEG_INFINITY,
                candidate: None,
                closed: true,
            };
        }
        // feasible ranges of t and t' under t <= t'
        let (tb, tc) = (b.min(e), c.max(a));
        self.lo1.copy_from_slice(&lo[..d]);
        self.hi1.copy_from_slice(&hi[..d]);
        self.lo2.copy_from_slice(&lo[..d]);
        self.hi2.copy_from_slice(&hi[..d]);
        self.lo1[i] = a;
        self.hi1[i] = tb;
        self.lo2[i] = tc;
        self.hi2[i] = e;
        let out1 = self.a1.propagate(&self.lo1, &self.hi1);
        let out2 = self.a2.propagate(&self.lo2, &self.hi2);
        let (dt_lo, dt_hi) = (a - e, (tb - tc).min(0.0));
        let mut ub = (out1.hi - out2.lo).min(self.difference_bound(dt_lo, dt_hi));

        let mut flo = lo.to_vec();
        let mut fhi = hi.to_vec();
        flo[i] = a;
        fhi[i] = tb;
        flo[d] = tc;
        fhi[d] = e;

        if let Some(eval) = self.closed_by_stability(ub, &flo, &fhi) {
            return eval;
        }
        self.a1.tighten(&self.lo1, &self.hi1);
        self.a2.tighten(&self.lo2, &self.hi2);
        let (u1, _) = self.a1.linear_output_bound(&self.lo1, &self.hi1, 1.0);
        let (u2, _) = self.a2.linear_output_bound(&self.lo2, &self.hi2, -1.0);
        ub = ub.min(u1 + u2).min(self.difference_bound(dt_lo, dt_hi));
        if let Some(eval) = self.closed_by_stability(ub, &flo, &fhi) {
            return eval;
        }

        let center: Vec<f64> = flo.iter().zip(&fhi).map(|(l, h)| 0.5 * (l + h)).collect();
        let mut spread = center.clone();
        spread[i] = a;
        spread[d] = e;

        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut consider = |z: Vec<f64>, v: f64| {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((z, v));
            }
        };
        let v = self.objective(&spread);
        consider(spread, v);
        // linearize, jump to the favored vertex, and repeat from there
        let mut z = center;
        for _ in 0..VERTEX_STEPS {
            let v = self.objective(&z);
            let m1 = self.a1.pattern_at(&self.x);
            let m2 = self.a2.pattern_at(&self.xp);
            let g1 = self.a1.gradient(&m1);
            let g2 = self.a2.gradient(&m2);
            let next = self.vertex(&g1, &g2, &flo, &fhi);
            let done = next == z;
            consider(std::mem::replace(&mut z, next), v);
            if done {
                break;
            }
        }
        let v = self.objective(&z);
        consider(z, v);
        let best_v = best.as_ref().map_or(f64::NEG_INFINITY, |(_, v)| *v);
        NodeEval {
            ub: ub.max(best_v),
            candidate: best,
            closed: false,
        }
    }
}

/// Searches for a monotonicity counterexample pair along `feature`, treated
/// as increasing.
pub fn find_pair_counterexample(
    net: &Network,
    feature: usize,
    cfg: &SolverConfig,
    mode: PairMode,
) -> Result<PairSearch> {
    cfg.validate()?;
    let d = net.input_dim();
    if feature >= d {
        return Err(Error::InvalidInput(format!(
            "feature {feature} out of range for {d} inputs"
        )));
    }
    let start = Instant::now();
    let b = net.input_box();
    let mut lo = b.lower.clone();
    let mut hi = b.upper.clone();
    lo.push(b.lower[feature]);
    hi.push(b.upper[feature]);

    let mut problem = PairProblem::new(net, feature, cfg.neuron_stability_slack);
    let driver = Driver {
        epsilon: cfg.epsilon,
        max_nodes: cfg.max_nodes,
        stop_above: match mode {
            PairMode::Any => Some(cfg.delta),
            PairMode::Maximal => None,
        },
        certify_below: Some(cfg.delta),
    };
    let outcome = driver.run(&mut problem, lo, hi);

    let pair = outcome.best.map(|(z, v)| {
        problem.split(&z);
        PairCounterexample {
            x: problem.x.clone(),
            x_prime: problem.xp.clone(),
            feature,
            violation: v,
        }
    });
    let violating = pair.filter(|p| p.violation > cfg.delta);
    let outcome_kind = match outcome.status {
        Status::Certified => PairOutcome::Monotone,
        Status::Found => PairOutcome::Counterexample(violating.expect("found implies a violating pair")),
        Status::Converged => match violating {
            Some(p) => PairOutcome::Counterexample(p),
            None if outcome.bound <= cfg.delta => PairOutcome::Monotone,
            None => PairOutcome::Inconclusive { best: None },
        },
        Status::Budget => PairOutcome::Inconclusive { best: violating },
    };
    Ok(PairSearch {
        outcome: outcome_kind,
        bound: outcome.bound,
        nodes_explored: outcome.nodes,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
