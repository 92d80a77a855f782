//! Exact extremum along a single free coordinate.
//!
//! Along a segment the network is piecewise affine. Starting at the left end,
//! the walk propagates value and slope through the current activation pattern,
//! jumps to the nearest pre-activation zero crossing, and repeats. The
//! extremum is attained at a breakpoint or an endpoint.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::{Activation, Network};

use super::{BoxQuery, Coord, ExtremumResult, Sense};

/// Safety cap on the number of segments walked.
const MAX_SEGMENTS: usize = 10_000_000;

struct Walk {
    /// Positions (in the free coordinate) where some hidden pre-activation is zero.
    breakpoints: Vec<f64>,
    /// Evaluated points (endpoints and breakpoints) with their values.
    samples: Vec<(f64, f64)>,
    segments: usize,
}

fn single_free(query: &BoxQuery) -> Result<(usize, f64, f64)> {
    let mut found = None;
    for (i, c) in query.coords().iter().enumerate() {
        if let Coord::Free { lo, hi } = *c {
            if found.is_some() {
                return Err(Error::InvalidInput(
                    "line search requires exactly one free coordinate".into(),
                ));
            }
            found = Some((i, lo, hi));
        }
    }
    found.ok_or_else(|| Error::InvalidInput("line search requires exactly one free coordinate".into()))
}

fn walk(net: &Network, query: &BoxQuery) -> Result<Walk> {
    query.validate(net)?;
    let (axis, lo, hi) = single_free(query)?;
    let (mut point, _) = query.bounds();
    let layers = net.layers();
    let scale = (hi - lo).abs().max(1.0);

    let mut breakpoints = Vec::new();
    let mut samples = Vec::new();
    let mut t = lo;
    let mut segments = 0;

    let mut val = Vec::new();
    let mut slope = Vec::new();
    let mut nval = Vec::new();
    let mut nslope = Vec::new();

    loop {
        point[axis] = t;
        samples.push((t, net.eval(&point)));
        segments += 1;
        if segments > MAX_SEGMENTS {
            return Err(Error::Numeric("breakpoint walk did not terminate".into()));
        }

        // forward value and directional derivative, recording the time to the
        // nearest zero crossing under the pattern valid just right of t
        let mut step = f64::INFINITY;
        let mut zero_here = false;
        val.clear();
        val.extend_from_slice(&point);
        slope.clear();
        slope.resize(point.len(), 0.0);
        slope[axis] = 1.0;
        for layer in layers {
            nval.clear();
            nslope.clear();
            for o in 0..layer.out_dim() {
                let row = layer.row(o);
                let mut y = layer.biases()[o];
                let mut dy = 0.0;
                let mut mag = y.abs();
                for ((w, v), s) in row.iter().zip(&val).zip(&slope) {
                    y += w * v;
                    dy += w * s;
                    mag += (w * v).abs();
                }
                if layer.activation() == Activation::Relu {
                    let tol = 1e-12 * (1.0 + mag);
                    if y.abs() <= tol {
                        zero_here = true;
                    }
                    let active = y > tol || (y >= -tol && dy > 0.0);
                    if active && dy < 0.0 {
                        step = step.min(y.max(0.0) / -dy);
                    } else if !active && dy > 0.0 {
                        step = step.min(-y / dy);
                    }
                    if active {
                        nval.push(y);
                        nslope.push(dy);
                    } else {
                        nval.push(0.0);
                        nslope.push(0.0);
                    }
                } else {
                    nval.push(y);
                    nslope.push(dy);
                }
            }
            std::mem::swap(&mut val, &mut nval);
            std::mem::swap(&mut slope, &mut nslope);
        }
        if zero_here && breakpoints.last() != Some(&t) {
            breakpoints.push(t);
        }
        if t >= hi {
            break;
        }
        let mut next = t + step;
        if !(next > t) {
            next = t.next_up();
        }
        if next >= hi - 1e-15 * scale {
            if t < hi {
                t = hi;
                continue;
            }
            break;
        }
        t = next;
    }
    Ok(Walk {
        breakpoints,
        samples,
        segments,
    })
}

/// Exact extremum over a query with exactly one free coordinate.
pub fn line_extremum_exact(net: &Network, query: &BoxQuery, sense: Sense) -> Result<ExtremumResult> {
    let start = Instant::now();
    let w = walk(net, query)?;
    let (axis, _, _) = single_free(query)?;
    let sign = sense.sign();
    let (t, v) = w
        .samples
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, (t, v)| {
            if sign * v > acc.1 {
                (t, sign * v)
            } else {
                acc
            }
        });
    let (mut witness, _) = query.bounds();
    witness[axis] = t;
    Ok(ExtremumResult {
        witness,
        witness_value: sign * v,
        certified_bound: sign * v,
        gap: 0.0,
        nodes_explored: w.segments,
        wall_time: start.elapsed().as_secs_f64(),
        complete: true,
    })
}

/// Positions along the single free coordinate where a hidden pre-activation
/// vanishes, endpoints included.
pub fn breakpoints(net: &Network, query: &BoxQuery) -> Result<Vec<f64>> {
    Ok(walk(net, query)?.breakpoints)
}
