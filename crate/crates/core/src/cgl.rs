//! Counterexample-guided learning: alternate between finding envelope
//! counterexamples at every training point and fine-tuning on the training
//! set augmented with those counterexamples.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{Envelope, EnvelopeMode};
use crate::nn::{Direction, MonotoneSpec, Network, OutputKind, BOX_TOLERANCE};
use crate::solver::SolverConfig;
use crate::trainer::{dataset_loss, train, LabeledDataset, Loss, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labeling {
    /// Counterexamples and their training point all get the mean network
    /// output over the point and its existing counterexamples.
    RegressionAverage,
    /// Counterexamples copy the training point's label.
    ClassificationCopy,
}

impl Labeling {
    pub fn for_output(kind: OutputKind) -> Labeling {
        match kind {
            OutputKind::Regression => Labeling::RegressionAverage,
            OutputKind::BinaryLogit => Labeling::ClassificationCopy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    MinTrainError,
    MinCounterexamples,
}

fn default_iterations() -> usize {
    4
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CglConfig {
    /// Number of augment-and-fine-tune rounds.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Defaults to the rule matching the network output kind.
    #[serde(default)]
    pub labeling: Option<Labeling>,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Fine-tuning run per round; its seed is offset by the round number.
    pub retrain: TrainConfig,
    /// Training weight of each counterexample relative to an original point.
    #[serde(default = "default_weight")]
    pub counterexample_weight: f64,
}

impl CglConfig {
    pub fn new(iterations: usize, retrain: TrainConfig) -> Self {
        CglConfig {
            iterations,
            labeling: None,
            selection: Selection::default(),
            solver: SolverConfig::default(),
            retrain,
            counterexample_weight: default_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.retrain.validate()?;
        if !(self.counterexample_weight.is_finite() && self.counterexample_weight >= 0.0) {
            return Err(Error::Validation("counterexample_weight must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Original,
    UpperCe,
    LowerCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPoint {
    pub input: Vec<f64>,
    pub label: f64,
    pub origin: Origin,
    /// Index of the training point this record derives from.
    pub parent_index: usize,
}

/// One round's training set: every original point (possibly relabeled)
/// followed by the counterexamples found.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub points: Vec<AugmentedPoint>,
    /// Training points with an upper or a lower counterexample.
    pub flagged: usize,
    /// Training points skipped because a solver query was incomplete.
    pub incomplete: usize,
}

impl Augmentation {
    pub fn counterexamples(&self) -> usize {
        self.points.iter().filter(|p| p.origin != Origin::Original).count()
    }

    pub fn to_dataset(&self, counterexample_weight: f64) -> Result<LabeledDataset> {
        let inputs = self.points.iter().map(|p| p.input.clone()).collect();
        let labels = self.points.iter().map(|p| p.label).collect();
        let weights = self
            .points
            .iter()
            .map(|p| if p.origin == Origin::Original { 1.0 } else { counterexample_weight })
            .collect();
        LabeledDataset::new(inputs, labels)?.with_weights(weights)
    }
}

/// Queries both envelope counterexamples at every training point and labels
/// them. Original points always come first, in order.
pub fn generate_augmentation(
    net: &Network,
    spec: &MonotoneSpec,
    data: &LabeledDataset,
    labeling: Labeling,
    solver: &SolverConfig,
) -> Result<Augmentation> {
    let env = Envelope::new(net, spec, solver)?;
    type Found = (Option<(Vec<f64>, f64)>, Option<(Vec<f64>, f64)>, bool);
    let found: Vec<Found> = data
        .inputs()
        .par_iter()
        .map(|x| {
            let mut out = [None, None];
            let mut incomplete = false;
            for (slot, mode) in out.iter_mut().zip([EnvelopeMode::Upper, EnvelopeMode::Lower]) {
                if let Some(r) = env.counterexample(x, mode)? {
                    if r.complete {
                        *slot = Some((r.witness, r.witness_value));
                    } else {
                        incomplete = true;
                    }
                }
            }
            let [up, low] = out;
            Ok((up, low, incomplete))
        })
        .collect::<Result<_>>()?;

    let mut originals = Vec::with_capacity(data.len());
    let mut extra = Vec::new();
    let (mut flagged, mut incomplete) = (0, 0);
    for (i, (up, low, inc)) in found.into_iter().enumerate() {
        let x = &data.inputs()[i];
        let y = data.targets()[i];
        if inc {
            log::info!("training point {i}: incomplete envelope query, no counterexamples used");
            incomplete += 1;
            originals.push(AugmentedPoint {
                input: x.clone(),
                label: y,
                origin: Origin::Original,
                parent_index: i,
            });
            continue;
        }
        let ces: Vec<(Vec<f64>, f64, Origin)> = [(up, Origin::UpperCe), (low, Origin::LowerCe)]
            .into_iter()
            .filter_map(|(c, o)| c.map(|(w, v)| (w, v, o)))
            .collect();
        if !ces.is_empty() {
            flagged += 1;
        }
        let (own_label, ce_label) = match labeling {
            Labeling::RegressionAverage if !ces.is_empty() => {
                let fx = net.eval(x);
                let mean = (fx + ces.iter().map(|c| c.1).sum::<f64>()) / (ces.len() + 1) as f64;
                (mean, mean)
            }
            _ => (y, y),
        };
        originals.push(AugmentedPoint {
            input: x.clone(),
            label: own_label,
            origin: Origin::Original,
            parent_index: i,
        });
        for (w, _, origin) in ces {
            debug_assert!(net.input_box().contains(&w, BOX_TOLERANCE));
            extra.push(AugmentedPoint {
                input: w,
                label: ce_label,
                origin,
                parent_index: i,
            });
        }
    }
    originals.extend(extra);
    Ok(Augmentation {
        points: originals,
        flagged,
        incomplete,
    })
}

/// Writes augmented points as CSV (`parent_index,origin,label,input_json`).
pub fn write_augmentation_csv(out: impl Write, points: &[AugmentedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parent_index", "origin", "label", "input_json"])?;
    for p in points {
        let origin = match p.origin {
            Origin::Original => "original",
            Origin::UpperCe => "upper-ce",
            Origin::LowerCe => "lower-ce",
        };
        w.write_record([
            p.parent_index.to_string(),
            origin.to_string(),
            p.label.to_string(),
            serde_json::to_string(&p.input)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CglRecord {
    /// 0 is the input network.
    pub iteration: usize,
    /// Training loss on the original labels; infinite for a diverged round.
    pub train_error: f64,
    pub train_ce_count: usize,
    pub test_ce_count: usize,
    pub wall_time: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct CglOutcome {
    pub network: Network,
    pub selected_iteration: usize,
    pub history: Vec<CglRecord>,
    /// Model after each round, `None` for diverged rounds.
    pub models: Vec<Option<Network>>,
}

/// Runs `cfg.iterations` rounds starting from a trained `net`. Each round
/// regenerates counterexamples from the current model (earlier ones are
/// dropped and original labels restored), then fine-tunes on the augmented
/// set. Rounds whose training diverges keep the previous weights and are not
/// eligible for selection. The returned model is the best fine-tuned round
/// under `cfg.selection` (ties go to the earlier round); the input network is
/// returned only when no round completed.
pub fn cgl_train(
    net: &Network,
    spec: &MonotoneSpec,
    data: &LabeledDataset,
    test_points: &[Vec<f64>],
    cfg: &CglConfig,
) -> Result<CglOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let labeling = cfg.labeling.unwrap_or(Labeling::for_output(net.output_kind()));
    let loss = Loss::for_output(net.output_kind());
    let test_count = |m: &Network| -> Result<usize> {
        if test_points.is_empty() {
            return Ok(0);
        }
        Ok(Envelope::new(m, spec, &cfg.solver)?.count_counterexamples(test_points)?.count)
    };

    let mut current = net.clone();
    let mut aug = generate_augmentation(&current, spec, data, labeling, &cfg.solver)?;
    let mut history = vec![CglRecord {
        iteration: 0,
        train_error: dataset_loss(&current, data, loss),
        train_ce_count: aug.flagged,
        test_ce_count: test_count(&current)?,
        wall_time: start.elapsed().as_secs_f64(),
        diverged: false,
    }];
    let mut models = vec![Some(current.clone())];
    for it in 1..=cfg.iterations {
        let train_set = aug.to_dataset(cfg.counterexample_weight)?;
        let mut round_cfg = cfg.retrain.clone();
        round_cfg.seed = round_cfg.seed.wrapping_add(it as u64);
        let diverged = match train(&current, &train_set, &round_cfg) {
            Ok(m) => {
                current = m;
                false
            }
            Err(Error::Diverged { epoch, loss }) => {
                log::warn!("round {it}: fine-tuning diverged at epoch {epoch} (loss {loss}); keeping previous weights");
                true
            }
            Err(e) => return Err(e),
        };
        aug = generate_augmentation(&current, spec, data, labeling, &cfg.solver)?;
        history.push(CglRecord {
            iteration: it,
            train_error: if diverged { f64::INFINITY } else { dataset_loss(&current, data, loss) },
            train_ce_count: aug.flagged,
            test_ce_count: test_count(&current)?,
            wall_time: start.elapsed().as_secs_f64(),
            diverged,
        });
        models.push((!diverged).then(|| current.clone()));
        log::info!(
            "round {it}: train error {:.4e}, {} flagged training points, {} counterexamples",
            history[it].train_error,
            aug.flagged,
            aug.counterexamples()
        );
    }
    let selected = select(&history, cfg.selection);
    Ok(CglOutcome {
        network: models[selected].clone().expect("selected round has a model"),
        selected_iteration: selected,
        history,
        models,
    })
}

/// Round chosen by `selection` among the fine-tuned rounds that did not
/// diverge, ties going to the earlier round. Falls back to round 0 when there
/// is no such round.
pub fn select(history: &[CglRecord], selection: Selection) -> usize {
    let key = |r: &CglRecord| match selection {
        Selection::MinTrainError => (r.train_error, r.train_ce_count as f64),
        Selection::MinCounterexamples => (r.train_ce_count as f64, r.train_error),
    };
    history
        .iter()
        .filter(|r| r.iteration > 0 && !r.diverged)
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(a.iteration.cmp(&b.iteration))
        })
        .map_or(0, |r| r.iteration)
}

/// Writes the round history as CSV
/// (`iteration,train_error,train_ce_count,test_ce_count,wall_time`). With
/// `record_timing` off the time column is written as 0.
pub fn write_history_csv(out: impl Write, history: &[CglRecord], record_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "train_error", "train_ce_count", "test_ce_count", "wall_time"])?;
    for r in history {
        let t = if record_timing { r.wall_time } else { 0.0 };
        w.write_record([
            r.iteration.to_string(),
            r.train_error.to_string(),
            r.train_ce_count.to_string(),
            r.test_ce_count.to_string(),
            t.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeReduction {
    pub train_before: usize,
    pub train_after: usize,
    pub test_before: usize,
    pub test_after: usize,
    /// `100 * (before - after) / before`, or 0 when `before` is 0.
    pub train_reduction_pct: f64,
    pub test_reduction_pct: f64,
}

fn reduction_pct(before: usize, after: usize) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (before as f64 - after as f64) / before as f64
    }
}

/// Flagged-point counts of two models on the same point sets.
pub fn ce_reduction_report(
    before: &Network,
    after: &Network,
    spec: &MonotoneSpec,
    train_points: &[Vec<f64>],
    test_points: &[Vec<f64>],
    solver: &SolverConfig,
) -> Result<CeReduction> {
    let count = |m: &Network, pts: &[Vec<f64>]| -> Result<usize> {
        Ok(Envelope::new(m, spec, solver)?.count_counterexamples(pts)?.count)
    };
    let (train_before, train_after) = (count(before, train_points)?, count(after, train_points)?);
    let (test_before, test_after) = (count(before, test_points)?, count(after, test_points)?);
    Ok(CeReduction {
        train_before,
        train_after,
        test_before,
        test_after,
        train_reduction_pct: reduction_pct(train_before, train_after),
        test_reduction_pct: reduction_pct(test_before, test_after),
    })
}

/// Whether `a` is dominated by `b` along `spec`: equal off the spec, and
/// ordered by each feature's direction on it.
pub fn dominated_by(a: &[f64], b: &[f64], spec: &MonotoneSpec, tol: f64) -> bool {
    a.iter().zip(b).enumerate().all(|(i, (&u, &v))| match spec.direction(i) {
        None => (u - v).abs() <= tol,
        Some(Direction::Increasing) => u <= v + tol,
        Some(Direction::Decreasing) => u >= v - tol,
    })
}
