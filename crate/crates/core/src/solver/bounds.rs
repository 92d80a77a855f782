use crate::error::Result;
use crate::nn::{Layer, Network};

use super::BoxQuery;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn relu(&self) -> Interval {
        Interval {
            lo: self.lo.max(0.0),
            hi: self.hi.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBounds {
    pub pre: Interval,
    pub post: Interval,
}

/// Interval enclosure of every hidden neuron and of the output over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBounds {
    /// `hidden[layer][neuron]`.
    pub hidden: Vec<Vec<NeuronBounds>>,
    pub output: Interval,
}

/// Interval bound propagation of `net` over the query box.
pub fn interval_bounds(net: &Network, query: &BoxQuery) -> Result<IntervalBounds> {
    query.validate(net)?;
    let (lo, hi) = query.bounds();
    let mut a = Analysis::new(net);
    let output = a.propagate(&lo, &hi);
    let mut hidden = Vec::new();
    let mut offset = 0;
    for layer in net.hidden_layers() {
        let n = layer.out_dim();
        hidden.push(
            (offset..offset + n)
                .map(|k| {
                    let pre = Interval::new(a.pre_lo[k], a.pre_hi[k]);
                    NeuronBounds {
                        pre,
                        post: pre.relu(),
                    }
                })
                .collect(),
        );
        offset += n;
    }
    Ok(IntervalBounds { hidden, output })
}

#[inline]
pub(crate) fn affine_interval(layer: &Layer, lo: &[f64], hi: &[f64], out_lo: &mut [f64], out_hi: &mut [f64]) {
    for o in 0..layer.out_dim() {
        let row = layer.row(o);
        let b = layer.biases()[o];
        let (mut l, mut h) = (b, b);
        for ((&w, &xl), &xh) in row.iter().zip(lo).zip(hi) {
            if w >= 0.0 {
                l += w * xl;
                h += w * xh;
            } else {
                l += w * xh;
                h += w * xl;
            }
        }
        out_lo[o] = l;
        out_hi[o] = h;
    }
}

/// Outcome of classifying every hidden neuron over a box.
pub(crate) struct Stability {
    /// Branch used for each hidden neuron (true = identity, false = zero).
    pub mask: Vec<bool>,
    /// Bound on |f - affine surrogate| over the box, from near-zero neurons.
    pub penalty: f64,
    /// Global indices of neurons whose sign changes over the box.
    pub unstable: Vec<usize>,
}

/// Reusable per-network state for bound computations: downstream
/// sensitivities of every hidden neuron plus scratch buffers.
pub(crate) struct Analysis<'a> {
    pub net: &'a Network,
    /// Upper bound on |d output / d h| for each hidden post-activation.
    sens: Vec<f64>,
    offsets: Vec<usize>,
    pub pre_lo: Vec<f64>,
    pub pre_hi: Vec<f64>,
    cur_lo: Vec<f64>,
    cur_hi: Vec<f64>,
    nxt_lo: Vec<f64>,
    nxt_hi: Vec<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
}

impl<'a> Analysis<'a> {
    pub fn new(net: &'a Network) -> Self {
        let hidden = net.hidden_layers();
        let mut offsets = Vec::with_capacity(hidden.len() + 1);
        let mut total = 0;
        for l in hidden {
            offsets.push(total);
            total += l.out_dim();
        }
        offsets.push(total);

        // Backward pass of |W| products, ReLU being 1-Lipschitz.
        let mut sens = vec![0.0; total];
        let layers = net.layers();
        let mut down: Vec<f64> = vec![1.0];
        for li in (0..hidden.len()).rev() {
            let next = &layers[li + 1];
            let mut s = vec![0.0; next.in_dim()];
            for (o, &d) in down.iter().enumerate() {
                for (k, slot) in s.iter_mut().enumerate() {
                    *slot += d * next.weight(o, k).abs();
                }
            }
            sens[offsets[li]..offsets[li + 1]].copy_from_slice(&s);
            down = s;
        }

        let w = net.max_width();
        Analysis {
            net,
            sens,
            offsets,
            pre_lo: vec![0.0; total],
            pre_hi: vec![0.0; total],
            cur_lo: Vec::with_capacity(w),
            cur_hi: Vec::with_capacity(w),
            nxt_lo: vec![0.0; w],
            nxt_hi: vec![0.0; w],
            buf_a: Vec::with_capacity(w),
            buf_b: Vec::with_capacity(w),
        }
    }

    pub fn hidden_total(&self) -> usize {
        self.pre_lo.len()
    }

    /// Propagates the box `[lo, hi]`, filling `pre_lo`/`pre_hi`, and returns the output interval.
    pub fn propagate(&mut self, lo: &[f64], hi: &[f64]) -> Interval {
        self.cur_lo.clear();
        self.cur_lo.extend_from_slice(lo);
        self.cur_hi.clear();
        self.cur_hi.extend_from_slice(hi);
        let layers = self.net.layers();
        let n_hidden = layers.len() - 1;
        for (li, layer) in layers.iter().enumerate() {
            let n = layer.out_dim();
            affine_interval(layer, &self.cur_lo, &self.cur_hi, &mut self.nxt_lo[..n], &mut self.nxt_hi[..n]);
            if li < n_hidden {
                let off = self.offsets[li];
                self.pre_lo[off..off + n].copy_from_slice(&self.nxt_lo[..n]);
                self.pre_hi[off..off + n].copy_from_slice(&self.nxt_hi[..n]);
                self.cur_lo.clear();
                self.cur_hi.clear();
                self.cur_lo.extend(self.nxt_lo[..n].iter().map(|v| v.max(0.0)));
                self.cur_hi.extend(self.nxt_hi[..n].iter().map(|v| v.max(0.0)));
            }
        }
        Interval::new(self.nxt_lo[0], self.nxt_hi[0])
    }

    /// Tightens the hidden pre-activation bounds of the last propagated box by
    /// back-substituting linear ReLU relaxations down to the inputs. Requires a
    /// preceding [`Analysis::propagate`] over the same box.
    pub fn tighten(&mut self, lo: &[f64], hi: &[f64]) {
        let layers = self.net.layers();
        for li in 1..layers.len() - 1 {
            let layer = &layers[li];
            let off = self.offsets[li];
            for o in 0..layer.out_dim() {
                for sign in [1.0, -1.0] {
                    let row: Vec<f64> = layer.row(o).iter().map(|w| sign * w).collect();
                    let (coef, c) = self.back_substitute(li - 1, row, sign * layer.biases()[o]);
                    let ub = concretize_upper(&coef, c, lo, hi);
                    if sign > 0.0 {
                        self.pre_hi[off + o] = self.pre_hi[off + o].min(ub);
                    } else {
                        self.pre_lo[off + o] = self.pre_lo[off + o].max(-ub);
                    }
                }
            }
        }
    }

    /// Upper bound on `sign * f` over the box from the linear relaxation of the
    /// current pre-activation bounds, with the input coefficients of the
    /// bounding affine function.
    pub fn linear_output_bound(&mut self, lo: &[f64], hi: &[f64], sign: f64) -> (f64, Vec<f64>) {
        let layers = self.net.layers();
        let out = &layers[layers.len() - 1];
        let row: Vec<f64> = out.row(0).iter().map(|w| sign * w).collect();
        let (coef, c) = self.back_substitute(layers.len() - 2, row, sign * out.biases()[0]);
        (concretize_upper(&coef, c, lo, hi), coef)
    }

    /// Rewrites the upper bound `row . h + c`, where `h` are the
    /// post-activations of hidden layer `li`, as an affine function of the inputs.
    fn back_substitute(&self, li: usize, mut row: Vec<f64>, mut c: f64) -> (Vec<f64>, f64) {
        let layers = self.net.layers();
        for k in (0..=li).rev() {
            let layer = &layers[k];
            let off = self.offsets[k];
            for (j, lam) in row.iter_mut().enumerate() {
                let (l, u) = (self.pre_lo[off + j], self.pre_hi[off + j]);
                if l >= 0.0 {
                    continue;
                }
                if u <= 0.0 {
                    *lam = 0.0;
                } else if *lam >= 0.0 {
                    let s = u / (u - l);
                    c -= *lam * s * l;
                    *lam *= s;
                } else if u <= -l {
                    *lam = 0.0;
                }
            }
            let mut next = vec![0.0; layer.in_dim()];
            for (j, &lam) in row.iter().enumerate() {
                if lam == 0.0 {
                    continue;
                }
                c += lam * layer.biases()[j];
                for (n, w) in next.iter_mut().zip(layer.row(j)) {
                    *n += lam * w;
                }
            }
            row = next;
        }
        (row, c)
    }

    /// Classifies the neurons of the last propagated box. Unstable neurons are
    /// listed and left inactive in the mask.
    pub fn classify(&self, slack: f64) -> Stability {
        let mut mask = Vec::with_capacity(self.hidden_total());
        let mut penalty = 0.0;
        let mut unstable = Vec::new();
        for k in 0..self.hidden_total() {
            let (lo, hi) = (self.pre_lo[k], self.pre_hi[k]);
            if lo >= 0.0 {
                mask.push(true);
            } else if hi <= 0.0 {
                mask.push(false);
            } else {
                // error of treating as identity is -lo, as zero is hi
                let (err, active) = if -lo <= hi { (-lo, true) } else { (hi, false) };
                if err > slack {
                    unstable.push(k);
                    mask.push(false);
                } else {
                    penalty += err * self.sens[k];
                    mask.push(active);
                }
            }
        }
        Stability {
            mask,
            penalty,
            unstable,
        }
    }

    /// Like [`Analysis::classify`], but `None` when some neuron is unstable.
    pub fn stability(&self, slack: f64) -> Option<Stability> {
        Some(self.classify(slack)).filter(|s| s.unstable.is_empty())
    }

    /// Activation pattern at a point (`pre > 0`).
    pub fn pattern_at(&mut self, x: &[f64]) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.hidden_total());
        let cur = &mut self.buf_a;
        let next = &mut self.buf_b;
        cur.clear();
        cur.extend_from_slice(x);
        let layers = self.net.layers();
        for layer in &layers[..layers.len() - 1] {
            next.resize(layer.out_dim(), 0.0);
            layer.affine_into(cur, next);
            for v in next.iter_mut() {
                mask.push(*v > 0.0);
                *v = v.max(0.0);
            }
            std::mem::swap(cur, next);
        }
        mask
    }

    /// Gradient of the output with respect to the inputs for a fixed pattern.
    pub fn gradient(&mut self, mask: &[bool]) -> Vec<f64> {
        let layers = self.net.layers();
        let last = layers.len() - 1;
        self.backward(mask, last, layers[last].row(0).to_vec())
    }

    /// Gradient of the pre-activation of hidden neuron `k` (global index) for
    /// a fixed pattern of the layers below it.
    pub fn neuron_gradient(&mut self, mask: &[bool], k: usize) -> Vec<f64> {
        let li = self.offsets.partition_point(|&o| o <= k) - 1;
        let row = self.net.layers()[li].row(k - self.offsets[li]).to_vec();
        self.backward(mask, li, row)
    }

    /// Pulls `seed`, a row over the inputs of layer `li`, back to the network inputs.
    fn backward(&mut self, mask: &[bool], li: usize, seed: Vec<f64>) -> Vec<f64> {
        let layers = self.net.layers();
        self.buf_a.clear();
        self.buf_a.extend_from_slice(&seed);
        for lj in (0..li).rev() {
            let layer = &layers[lj];
            let off = self.offsets[lj];
            self.buf_b.clear();
            self.buf_b.resize(layer.in_dim(), 0.0);
            for (o, &go) in self.buf_a.iter().enumerate() {
                if go == 0.0 || !mask[off + o] {
                    continue;
                }
                for (p, w) in self.buf_b.iter_mut().zip(layer.row(o)) {
                    *p += go * w;
                }
            }
            std::mem::swap(&mut self.buf_a, &mut self.buf_b);
        }
        self.buf_a.clone()
    }

    /// Forward pass with ReLUs replaced by the fixed pattern `mask`. Returns
    /// the output and every hidden pre-activation.
    pub fn masked_eval(&mut self, mask: &[bool], x: &[f64]) -> (f64, Vec<f64>) {
        let mut pre = Vec::with_capacity(self.hidden_total());
        let cur = &mut self.buf_a;
        let next = &mut self.buf_b;
        cur.clear();
        cur.extend_from_slice(x);
        let layers = self.net.layers();
        let last = layers.len() - 1;
        for (li, layer) in layers.iter().enumerate() {
            next.resize(layer.out_dim(), 0.0);
            layer.affine_into(cur, next);
            if li < last {
                for v in next.iter_mut() {
                    pre.push(*v);
                    if !mask[pre.len() - 1] {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(cur, next);
        }
        (cur[0], pre)
    }
}

/// A half-space `q . z <= r`.
pub(crate) struct Cut {
    pub q: Vec<f64>,
    pub r: f64,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn slack_tol(r: f64) -> f64 {
    1e-12 * (1.0 + r.abs())
}

/// Maximizes `p . z` over the box `[lo, hi]` cut by one half-space, exactly.
/// Starts from the unconstrained maximizer and walks coordinates back in order
/// of objective lost per unit of constraint recovered. `None` when infeasible.
pub(crate) fn max_linear_one_cut(p: &[f64], cut: &Cut, lo: &[f64], hi: &[f64]) -> Option<(Vec<f64>, f64)> {
    let (q, r) = (&cut.q, cut.r);
    let mut z: Vec<f64> = p
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&pj, (&l, &h))| if pj > 0.0 { h } else { l })
        .collect();
    let mut excess = dot(q, &z) - r;
    if excess > 0.0 {
        // (cost per unit of q.z reduction, coordinate)
        let mut moves: Vec<(f64, usize)> = (0..z.len())
            .filter(|&j| {
                let toward = if q[j] > 0.0 { lo[j] } else { hi[j] };
                q[j] != 0.0 && toward != z[j]
            })
            .map(|j| (p[j].abs() / q[j].abs(), j))
            .collect();
        moves.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, j) in moves {
            let toward = if q[j] > 0.0 { lo[j] } else { hi[j] };
            let room = q[j] * (z[j] - toward);
            if room >= excess {
                z[j] -= excess / q[j];
                excess = 0.0;
                break;
            }
            z[j] = toward;
            excess -= room;
        }
        if excess > slack_tol(r) {
            return None;
        }
    }
    let v = dot(p, &z);
    Some((z, v))
}

/// Upper bound on `max p . z` over the box cut by one or two half-spaces,
/// with a feasible point. Exact for one cut; for two, the second cut is
/// dualized and its multiplier found by bisection, so the bound is the
/// smallest dual value seen.
pub(crate) fn max_linear_with_cuts(p: &[f64], cuts: &[Cut], lo: &[f64], hi: &[f64]) -> Option<(Vec<f64>, f64)> {
    match cuts {
        [] => max_linear_one_cut(p, &Cut { q: vec![0.0; p.len()], r: 0.0 }, lo, hi),
        [c] => max_linear_one_cut(p, c, lo, hi),
        [c1, c2] => {
            let first = max_linear_one_cut(p, c1, lo, hi)?;
            if dot(&c2.q, &first.0) <= c2.r + slack_tol(c2.r) {
                return Some(first);
            }
            if let Some(second) = max_linear_one_cut(p, c2, lo, hi) {
                if dot(&c1.q, &second.0) <= c1.r + slack_tol(c1.r) {
                    return Some(second);
                }
            }
            let neg: Vec<f64> = c2.q.iter().map(|v| -v).collect();
            let (_, v) = max_linear_one_cut(&neg, c1, lo, hi)?;
            if -v > c2.r + slack_tol(c2.r) {
                return None;
            }
            let dual = |mu: f64| {
                let pm: Vec<f64> = p.iter().zip(&c2.q).map(|(a, b)| a - mu * b).collect();
                let (z, v) = max_linear_one_cut(&pm, c1, lo, hi).expect("feasible for the first cut");
                let violated = dot(&c2.q, &z) > c2.r;
                (z, v + mu * c2.r, violated)
            };
            let mut best = f64::INFINITY;
            let (mut mu_lo, mut mu_hi) = (0.0, 1.0);
            let mut violating = first.0;
            let mut feasible = loop {
                let (z, v, violated) = dual(mu_hi);
                best = best.min(v);
                if !violated {
                    break z;
                }
                if mu_hi > 1e15 {
                    return None;
                }
                mu_lo = mu_hi;
                mu_hi *= 2.0;
                violating = z;
            };
            for _ in 0..100 {
                let mid = 0.5 * (mu_lo + mu_hi);
                if mid <= mu_lo || mid >= mu_hi {
                    break;
                }
                let (z, v, violated) = dual(mid);
                best = best.min(v);
                if violated {
                    mu_lo = mid;
                    violating = z;
                } else {
                    mu_hi = mid;
                    feasible = z;
                }
            }
            // Both bracketing maximizers satisfy the first cut; mix them so the
            // second holds with equality.
            let (sv, sf) = (dot(&c2.q, &violating) - c2.r, dot(&c2.q, &feasible) - c2.r);
            if sv > sf {
                let theta = (sv / (sv - sf)).clamp(0.0, 1.0);
                let mixed: Vec<f64> = violating
                    .iter()
                    .zip(&feasible)
                    .zip(lo.iter().zip(hi))
                    .map(|((a, b), (&l, &h))| ((1.0 - theta) * a + theta * b).clamp(l, h))
                    .collect();
                if dot(p, &mixed) > dot(p, &feasible) {
                    feasible = mixed;
                }
            }
            Some((feasible, best))
        }
        _ => None,
    }
}

fn concretize_upper(coef: &[f64], c: f64, lo: &[f64], hi: &[f64]) -> f64 {
    coef.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&a, (&l, &h))| if a >= 0.0 { a * h } else { a * l })
        .sum::<f64>()
        + c
}
