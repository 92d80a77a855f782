//! Monotone envelopes evaluated on the fly.
//!
//! The upper envelope at `x` is the maximum of `f` over all points that agree
//! with `x` off the monotone features and are dominated by `x` on them; the
//! lower envelope is the minimum over dominating points. Both are monotone
//! because the search boxes are nested. Nothing is materialized: each
//! prediction issues one solver query.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{canonicalize, reflect_point, MonotoneSpec, Network, OutputKind, BOX_TOLERANCE};
use crate::solver::{line_extremum_exact, optimize, BoxQuery, ExtremumResult, Sense, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeMode {
    Upper,
    Lower,
}

impl EnvelopeMode {
    fn sense(self) -> Sense {
        match self {
            EnvelopeMode::Upper => Sense::Max,
            EnvelopeMode::Lower => Sense::Min,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeMode::Upper => "upper",
            EnvelopeMode::Lower => "lower",
        }
    }
}

impl std::str::FromStr for EnvelopeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(EnvelopeMode::Upper),
            "lower" => Ok(EnvelopeMode::Lower),
            other => Err(Error::InvalidInput(format!("unknown envelope mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// No counterexample: the network's own output.
    Original,
    /// The value of a counterexample found by a complete query.
    Counterexample,
    /// The solver ran out of budget; the value is its certified bound.
    CertifiedBound,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Original => "original",
            Source::Counterexample => "counterexample",
            Source::CertifiedBound => "certified-bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopePrediction {
    /// Envelope of the raw network output (the logit for classifiers).
    pub value: f64,
    /// `sigmoid(value)` for classifiers.
    pub probability: Option<f64>,
    pub source: Source,
    pub witness: Option<Vec<f64>>,
    pub solver_gap: f64,
    /// Seconds.
    pub query_time: f64,
    pub incomplete: bool,
}

/// Per-point counterexample flags over a point set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleCount {
    pub count: usize,
    pub fraction: f64,
    pub flags: Vec<bool>,
    /// Points whose queries ran out of budget without a verdict.
    pub inconclusive: usize,
}

/// Envelope counterexample for a canonical (all-increasing) spec.
///
/// Returns the query result when its witness beats `f(x)` by more than
/// `cfg.delta`, or when the query is incomplete and its certified bound leaves
/// that possibility open.
pub fn envelope_counterexample(
    net: &Network,
    spec: &MonotoneSpec,
    x: &[f64],
    mode: EnvelopeMode,
    cfg: &SolverConfig,
) -> Result<Option<ExtremumResult>> {
    if !spec.is_canonical() {
        return Err(Error::InvalidInput(
            "envelope queries need a spec with increasing features only".into(),
        ));
    }
    if spec.is_empty() {
        return Err(Error::InvalidInput("monotone spec is empty".into()));
    }
    spec.validate(net.input_dim())?;
    let fx = net.forward(x)?;
    if !net.input_box().contains(x, BOX_TOLERANCE) {
        return Err(Error::InvalidInput("point lies outside the input box".into()));
    }
    let b = net.input_box();
    let mut q = BoxQuery::at_point(x);
    for i in spec.indices() {
        let xi = x[i].clamp(b.lower[i], b.upper[i]);
        q = match mode {
            EnvelopeMode::Upper => q.with_free(i, b.lower[i], xi),
            EnvelopeMode::Lower => q.with_free(i, xi, b.upper[i]),
        };
    }
    let r = if spec.len() == 1 {
        line_extremum_exact(net, &q, mode.sense())?
    } else {
        optimize(net, &q, mode.sense(), cfg)?
    };
    let beats = |v: f64| match mode {
        EnvelopeMode::Upper => v > fx + cfg.delta,
        EnvelopeMode::Lower => v < fx - cfg.delta,
    };
    if beats(r.witness_value) || (!r.complete && beats(r.certified_bound)) {
        Ok(Some(r))
    } else {
        Ok(None)
    }
}

/// A network wrapped with its monotone envelopes for a given spec.
///
/// Decreasing features are handled by reflecting them internally; inputs and
/// witnesses are always in the caller's coordinates.
#[derive(Debug, Clone)]
pub struct Envelope {
    original: Network,
    canonical: Network,
    spec: MonotoneSpec,
    canonical_spec: MonotoneSpec,
    cfg: SolverConfig,
}

impl Envelope {
    pub fn new(net: &Network, spec: &MonotoneSpec, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate(net.input_dim())?;
        if spec.is_empty() {
            return Err(Error::InvalidInput("monotone spec is empty".into()));
        }
        let (canonical, canonical_spec) = canonicalize(net, spec);
        Ok(Envelope {
            original: net.clone(),
            canonical,
            spec: spec.clone(),
            canonical_spec,
            cfg: *cfg,
        })
    }

    pub fn network(&self) -> &Network {
        &self.original
    }

    pub fn spec(&self) -> &MonotoneSpec {
        &self.spec
    }

    pub fn solver_config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Envelope counterexample at `x`, with the witness in caller coordinates.
    pub fn counterexample(&self, x: &[f64], mode: EnvelopeMode) -> Result<Option<ExtremumResult>> {
        // reflection keeps the dominance order, so the mode carries over unchanged
        let z = reflect_point(x, &self.spec);
        let found = envelope_counterexample(&self.canonical, &self.canonical_spec, &z, mode, &self.cfg)?;
        Ok(found.map(|mut r| {
            r.witness = reflect_point(&r.witness, &self.spec);
            r
        }))
    }

    pub fn predict(&self, x: &[f64], mode: EnvelopeMode) -> Result<EnvelopePrediction> {
        let start = Instant::now();
        let fx = self.original.forward(x)?;
        let ce = self.counterexample(x, mode)?;
        let (value, source, witness, gap, incomplete) = match ce {
            None => (fx, Source::Original, None, 0.0, false),
            Some(r) if r.complete => (r.witness_value, Source::Counterexample, Some(r.witness), r.gap, false),
            Some(r) => {
                let v = match mode {
                    EnvelopeMode::Upper => fx.max(r.certified_bound),
                    EnvelopeMode::Lower => fx.min(r.certified_bound),
                };
                log::warn!("envelope query incomplete (gap {:.3e}); using certified bound", r.gap);
                (v, Source::CertifiedBound, Some(r.witness), r.gap, true)
            }
        };
        let probability = match self.original.output_kind() {
            OutputKind::Regression => None,
            OutputKind::BinaryLogit => Some(crate::nn::sigmoid(value)),
        };
        Ok(EnvelopePrediction {
            value,
            probability,
            source,
            witness,
            solver_gap: gap,
            query_time: start.elapsed().as_secs_f64(),
            incomplete,
        })
    }

    /// Predictions for many points, computed in parallel and returned in input order.
    pub fn predict_batch(&self, points: &[Vec<f64>], mode: EnvelopeMode) -> Result<Vec<EnvelopePrediction>> {
        points.par_iter().map(|x| self.predict(x, mode)).collect()
    }

    /// Flags points having an upper or a lower envelope counterexample.
    pub fn count_counterexamples(&self, points: &[Vec<f64>]) -> Result<CounterexampleCount> {
        let verdicts: Vec<(bool, bool)> = points
            .par_iter()
            .map(|x| {
                let mut flagged = false;
                let mut unknown = false;
                for mode in [EnvelopeMode::Upper, EnvelopeMode::Lower] {
                    match self.counterexample(x, mode)? {
                        Some(r) if r.complete || self.beats(x, mode, r.witness_value)? => {
                            flagged = true;
                            break;
                        }
                        Some(_) => unknown = true,
                        None => {}
                    }
                }
                Ok((flagged, unknown && !flagged))
            })
            .collect::<Result<_>>()?;
        let flags: Vec<bool> = verdicts.iter().map(|v| v.0).collect();
        let count = flags.iter().filter(|&&f| f).count();
        Ok(CounterexampleCount {
            count,
            fraction: if points.is_empty() {
                0.0
            } else {
                count as f64 / points.len() as f64
            },
            flags,
            inconclusive: verdicts.iter().filter(|v| v.1).count(),
        })
    }

    fn beats(&self, x: &[f64], mode: EnvelopeMode, v: f64) -> Result<bool> {
        let fx = self.original.forward(x)?;
        Ok(match mode {
            EnvelopeMode::Upper => v > fx + self.cfg.delta,
            EnvelopeMode::Lower => v < fx - self.cfg.delta,
        })
    }

    /// Sampled monotonicity check of the envelope itself: for each point and
    /// each monotone feature, evaluates the envelope on `steps` evenly spaced
    /// values of that feature and counts points where it fails to follow the
    /// declared direction by more than `tol`.
    pub fn sampled_violations(&self, points: &[Vec<f64>], mode: EnvelopeMode, steps: usize, tol: f64) -> Result<usize> {
        let b = self.original.input_box().clone();
        let flags: Vec<bool> = points
            .par_iter()
            .map(|x| {
                for f in self.spec.entries() {
                    let i = f.index;
                    let mut prev: Option<f64> = None;
                    for k in 0..steps.max(2) {
                        let mut p = x.clone();
                        p[i] = b.lower[i] + (b.upper[i] - b.lower[i]) * k as f64 / (steps.max(2) - 1) as f64;
                        let v = self.predict(&p, mode)?.value;
                        let v = match f.direction {
                            crate::nn::Direction::Increasing => v,
                            crate::nn::Direction::Decreasing => -v,
                        };
                        if prev.is_some_and(|pv| v < pv - tol) {
                            return Ok(true);
                        }
                        prev = Some(v);
                    }
                }
                Ok(false)
            })
            .collect::<Result<_>>()?;
        Ok(flags.iter().filter(|&&f| f).count())
    }
}

/// One-shot envelope prediction; builds the canonical network on every call.
pub fn predict(
    net: &Network,
    spec: &MonotoneSpec,
    x: &[f64],
    mode: EnvelopeMode,
    cfg: &SolverConfig,
) -> Result<EnvelopePrediction> {
    Envelope::new(net, spec, cfg)?.predict(x, mode)
}

/// One-shot counterexample count over a point set.
pub fn count_counterexamples(
    net: &Network,
    spec: &MonotoneSpec,
    points: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<CounterexampleCount> {
    Envelope::new(net, spec, cfg)?.count_counterexamples(points)
}

/// Writes a batch prediction report with columns
/// `point_id, f_x, envelope_value, source, witness_json, gap, time_s`.
/// When `record_timing` is false the time column is written as 0.
pub fn write_predictions_csv<W: Write>(
    out: W,
    net: &Network,
    points: &[Vec<f64>],
    predictions: &[EnvelopePrediction],
    record_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point_id", "f_x", "envelope_value", "source", "witness_json", "gap", "time_s"])?;
    for (k, (x, p)) in points.iter().zip(predictions).enumerate() {
        let witness = match &p.witness {
            Some(v) => serde_json::to_string(v)?,
            None => String::new(),
        };
        let time = if record_timing { p.query_time } else { 0.0 };
        w.write_record([
            k.to_string(),
            net.forward(x)?.to_string(),
            p.value.to_string(),
            p.source.as_str().to_string(),
            witness,
            p.solver_gap.to_string(),
            time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
