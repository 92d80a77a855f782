//! Training from scratch: He-uniform initialization, minibatch Adam on
//! squared error or logistic loss, evaluation, grid search and a
//! finite-difference gradient check.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Fold, TargetTransform};
use crate::nn::{sigmoid, Activation, InputBox, Layer, Network, OutputKind};
use crate::{Error, Result};

/// A loss this many times larger than the initial one (or 1, if larger) is
/// treated as divergence even while still finite.
const DIVERGENCE_FACTOR: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    /// Logistic loss on the output logit.
    BinaryCrossEntropy,
}

impl Loss {
    pub fn for_output(kind: OutputKind) -> Loss {
        match kind {
            OutputKind::Regression => Loss::Mse,
            OutputKind::BinaryLogit => Loss::BinaryCrossEntropy,
        }
    }

    /// Per-example loss and its derivative with respect to the network output.
    #[inline]
    fn value_and_slope(self, out: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Mse => {
                let r = out - y;
                (r * r, 2.0 * r)
            }
            Loss::BinaryCrossEntropy => {
                let l = out.max(0.0) - out * y + (-out.abs()).exp().ln_1p();
                (l, sigmoid(out) - y)
            }
        }
    }
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    pub loss: Loss,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, learning_rate: f64, loss: Loss) -> Self {
        TrainConfig {
            batch_size,
            epochs,
            learning_rate,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            seed: 0,
            loss,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning_rate must be positive and finite".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Validation("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Validation("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden layer widths, input to output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(hidden: Vec<usize>) -> Self {
        Architecture { hidden }
    }

    /// `layers` hidden layers of `width` neurons each.
    pub fn uniform(layers: usize, width: usize) -> Self {
        Architecture {
            hidden: vec![width; layers],
        }
    }

    pub fn label(&self) -> String {
        if self.hidden.is_empty() {
            return "linear".into();
        }
        self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

/// Cartesian grid of architectures and training settings. Candidates are
/// enumerated architecture-major, then batch size, epochs, learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub architectures: Vec<Architecture>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    /// Defaults to the loss matching the network output kind.
    #[serde(default)]
    pub loss: Option<Loss>,
}

impl GridSpec {
    pub fn single(arch: Architecture, cfg: &TrainConfig) -> Self {
        GridSpec {
            architectures: vec![arch],
            batch_sizes: vec![cfg.batch_size],
            epochs: vec![cfg.epochs],
            learning_rates: vec![cfg.learning_rate],
            loss: Some(cfg.loss),
        }
    }

    pub fn candidates(&self, kind: OutputKind, seed: u64) -> Vec<(Architecture, TrainConfig)> {
        let loss = self.loss.unwrap_or(Loss::for_output(kind));
        let mut out = Vec::new();
        for arch in &self.architectures {
            for &b in &self.batch_sizes {
                for &e in &self.epochs {
                    for &lr in &self.learning_rates {
                        out.push((arch.clone(), TrainConfig::new(b, e, lr, loss).with_seed(seed)));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty()
            || self.batch_sizes.is_empty()
            || self.epochs.is_empty()
            || self.learning_rates.is_empty()
        {
            return Err(Error::Validation("grid has no candidates".into()));
        }
        Ok(())
    }
}

/// Inputs with targets and optional per-example weights (default 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::Validation("inputs have unequal lengths".into()));
            }
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("targets must be finite".into()));
        }
        Ok(LabeledDataset {
            inputs,
            targets,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.targets.len() {
            return Err(Error::Validation("one weight per example is required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("example weights must be finite and nonnegative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            weights: self.weights.as_ref().map(|w| indices.iter().map(|&i| w[i]).collect()),
        }
    }

    fn check_for(&self, net: &Network) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        if self.dim() != net.input_dim() {
            return Err(Error::InvalidInput(format!(
                "dataset has {} features, network expects {}",
                self.dim(),
                net.input_dim()
            )));
        }
        Ok(())
    }
}

/// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
pub fn init_network(arch: &Architecture, input_box: InputBox, kind: OutputKind, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.hidden.len() + 1);
    let mut fan_in = input_box.dim();
    for (i, &width) in arch.hidden.iter().chain(std::iter::once(&1)).enumerate() {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = (0..width * fan_in).map(|_| rng.gen_range(-limit..=limit)).collect();
        let activation = if i < arch.hidden.len() {
            Activation::Relu
        } else {
            Activation::Linear
        };
        layers.push(Layer::from_flat(fan_in, width, weights, vec![0.0; width], activation)?);
        fan_in = width;
    }
    Network::new(layers, input_box, kind)
}

/// Flat parameter vector: per layer, weights row-major then biases.
pub fn parameters(net: &Network) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weights().iter().chain(l.biases()).copied())
        .collect()
}

pub fn set_parameters(net: &mut Network, params: &[f64]) {
    let mut at = 0;
    for layer in net.layers_mut() {
        let (w, b) = layer.params_mut();
        w.copy_from_slice(&params[at..at + w.len()]);
        at += w.len();
        b.copy_from_slice(&params[at..at + b.len()]);
        at += b.len();
    }
}

/// Reusable buffers for per-example backpropagation.
struct Backprop {
    /// Layer inputs: `acts[0]` is the example, `acts[l]` the output of layer `l - 1`.
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

impl Backprop {
    fn new(net: &Network) -> Self {
        let mut acts = vec![vec![0.0; net.input_dim()]];
        let mut pres = Vec::new();
        for l in net.layers() {
            acts.push(vec![0.0; l.out_dim()]);
            pres.push(vec![0.0; l.out_dim()]);
        }
        Backprop {
            acts,
            pres,
            delta: Vec::new(),
            prev: Vec::new(),
        }
    }

    fn forward(&mut self, net: &Network, x: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(x);
        for (l, layer) in net.layers().iter().enumerate() {
            let (inputs, rest) = self.acts.split_at_mut(l + 1);
            layer.affine_into(&inputs[l], &mut self.pres[l]);
            for (a, &p) in rest[0].iter_mut().zip(&self.pres[l]) {
                *a = layer.activation().apply(p);
            }
        }
        self.acts[net.layers().len()][0]
    }

    /// Adds `scale * d out / d params` to `grad`, after a call to `forward`.
    fn accumulate(&mut self, net: &Network, scale: f64, grad: &mut [f64]) {
        let layers = net.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut at = 0;
        for l in layers {
            offsets.push(at);
            at += l.weights().len() + l.biases().len();
        }
        self.delta.clear();
        self.delta.push(scale);
        for (l, layer) in layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
            let input = &self.acts[l];
            let g = &mut grad[offsets[l]..offsets[l] + n_in * n_out + n_out];
            for o in 0..n_out {
                let d = self.delta[o];
                if d == 0.0 {
                    continue;
                }
                for (gw, &a) in g[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *gw += d * a;
                }
                g[n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            self.prev.clear();
            self.prev.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = self.delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in self.prev.iter_mut().zip(layer.row(o)) {
                    *p += d * w;
                }
            }
            let below = &layers[l - 1];
            for (p, &z) in self.prev.iter_mut().zip(&self.pres[l - 1]) {
                if below.activation() == Activation::Relu && z <= 0.0 {
                    *p = 0.0;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.prev);
        }
    }
}

/// Weighted mean loss over `indices` and its gradient.
fn batch_loss_and_gradient(
    net: &Network,
    data: &LabeledDataset,
    indices: &[usize],
    loss: Loss,
    bp: &mut Backprop,
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let total_w: f64 = indices.iter().map(|&i| data.weight(i)).sum();
    if total_w <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for &i in indices {
        let w = data.weight(i) / total_w;
        if w == 0.0 {
            continue;
        }
        let out = bp.forward(net, &data.inputs[i]);
        let (l, slope) = loss.value_and_slope(out, data.targets[i]);
        sum += w * l;
        bp.accumulate(net, w * slope, grad);
    }
    sum
}

/// Weighted mean loss of `net` on the whole dataset.
pub fn dataset_loss(net: &Network, data: &LabeledDataset, loss: Loss) -> f64 {
    let total_w: f64 = (0..data.len()).map(|i| data.weight(i)).sum();
    if total_w <= 0.0 {
        return 0.0;
    }
    (0..data.len())
        .map(|i| data.weight(i) * loss.value_and_slope(net.eval(&data.inputs[i]), data.targets[i]).0)
        .sum::<f64>()
        / total_w
}

/// Loss on the whole dataset and its gradient, in [`parameters`] order.
pub fn loss_gradient(net: &Network, data: &LabeledDataset, loss: Loss) -> Result<(f64, Vec<f64>)> {
    data.check_for(net)?;
    let mut grad = vec![0.0; net.parameter_count()];
    let all: Vec<usize> = (0..data.len()).collect();
    let l = batch_loss_and_gradient(net, data, &all, loss, &mut Backprop::new(net), &mut grad);
    Ok((l, grad))
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Loss on the full training set after each epoch.
    pub log: Vec<EpochRecord>,
}

/// Trains `net` on `data`; see [`train_logged`].
pub fn train(net: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Network> {
    train_logged(net, data, cfg).map(|o| o.network)
}

/// Minibatch Adam starting from `net`. Each epoch visits the examples in an
/// order shuffled by a generator seeded from `cfg.seed`, so equal inputs give
/// bit-identical results. Fails with [`Error::Diverged`] when the epoch loss
/// becomes non-finite or explodes.
pub fn train_logged(net: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check_for(net)?;
    let start = Instant::now();
    let mut net = net.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { network: net, log });
    }
    let initial = dataset_loss(&net, data, cfg.loss);
    let limit = DIVERGENCE_FACTOR * initial.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = parameters(&net);
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), cfg);
    let mut bp = Backprop::new(&net);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let l = batch_loss_and_gradient(&net, data, batch, cfg.loss, &mut bp, &mut grad);
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss: l });
            }
            adam.step(&mut params, &grad);
            set_parameters(&mut net, &params);
        }
        let l = dataset_loss(&net, data, cfg.loss);
        if !l.is_finite() || l > limit {
            return Err(Error::Diverged { epoch, loss: l });
        }
        log::debug!("epoch {epoch}: loss {l:.6e}");
        log.push(EpochRecord {
            epoch,
            train_loss: l,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { network: net, log })
}

/// Writes a training log as CSV (`epoch,train_loss,wall_time`). With
/// `record_timing` off the time column is written as 0.
pub fn write_log_csv(out: impl Write, log: &[EpochRecord], record_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "wall_time"])?;
    for r in log {
        let t = if record_timing { r.wall_time } else { 0.0 };
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Mean squared error on the original target scale.
    Mse,
    /// Fraction correct, predicting class 1 when the probability is at least 0.5.
    Accuracy,
}

impl Metric {
    pub fn for_output(kind: OutputKind) -> Metric {
        match kind {
            OutputKind::Regression => Metric::Mse,
            OutputKind::BinaryLogit => Metric::Accuracy,
        }
    }
}

/// Scores predictions (regression values or class-1 probabilities, on the
/// normalized target scale) against the dataset targets. Example weights are
/// ignored.
pub fn score(predictions: &[f64], data: &LabeledDataset, metric: Metric, target: &TargetTransform) -> Result<f64> {
    if predictions.len() != data.len() || data.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} examples",
            predictions.len(),
            data.len()
        )));
    }
    let n = data.len() as f64;
    Ok(match metric {
        Metric::Mse => {
            predictions
                .iter()
                .zip(&data.targets)
                .map(|(&p, &y)| (target.denormalize(p) - target.denormalize(y)).powi(2))
                .sum::<f64>()
                / n
        }
        Metric::Accuracy => {
            predictions
                .iter()
                .zip(&data.targets)
                .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
                .count() as f64
                / n
        }
    })
}

/// Metric of `net` on `data`. The metric must match the output kind.
pub fn evaluate(net: &Network, data: &LabeledDataset, metric: Metric, target: &TargetTransform) -> Result<f64> {
    data.check_for(net)?;
    if metric != Metric::for_output(net.output_kind()) {
        return Err(Error::InvalidInput(format!(
            "metric {metric:?} does not apply to {:?} networks",
            net.output_kind()
        )));
    }
    let preds: Vec<f64> = data
        .inputs
        .par_iter()
        .map(|x| net.predict_value(net.eval(x)))
        .collect();
    score(&preds, data, metric, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub architecture: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Mean final training loss over folds; infinite when any fold diverged.
    pub mean_train_error: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Best candidate trained on the first fold's training set.
    pub network: Network,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub rows: Vec<GridRow>,
    /// Training log of the returned network.
    pub log: Vec<EpochRecord>,
}

/// Trains every grid candidate on every fold and keeps the one with the
/// smallest mean training loss (first in grid order on ties). Diverging
/// candidates score infinity.
pub fn grid_search(
    grid: &GridSpec,
    data: &LabeledDataset,
    folds: &[Fold],
    input_box: &InputBox,
    kind: OutputKind,
    seed: u64,
) -> Result<GridResult> {
    grid.validate()?;
    if folds.is_empty() {
        return Err(Error::Validation("grid search needs at least one fold".into()));
    }
    let candidates = grid.candidates(kind, seed);
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<Option<(f64, TrainOutcome)>>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (arch, cfg) = &candidates[c];
            let train_set = data.subset(&folds[f].train);
            let init = init_network(arch, input_box.clone(), kind, cfg.seed)?;
            match train_logged(&init, &train_set, cfg) {
                Ok(out) => Ok(Some((dataset_loss(&out.network, &train_set, cfg.loss), out))),
                Err(Error::Diverged { epoch, loss }) => {
                    log::warn!(
                        "candidate {} lr {} diverged on fold {f} at epoch {epoch} (loss {loss})",
                        arch.label(),
                        cfg.learning_rate
                    );
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut per_job = results.into_iter();
    let mut rows = Vec::with_capacity(candidates.len());
    let mut first_fold_nets = Vec::with_capacity(candidates.len());
    for (arch, cfg) in &candidates {
        let mut errors = Vec::with_capacity(folds.len());
        let mut first = None;
        for f in 0..folds.len() {
            match per_job.next().expect("one result per job")? {
                Some((err, run)) => {
                    errors.push(if err.is_finite() { err } else { f64::INFINITY });
                    if f == 0 {
                        first = Some(run);
                    }
                }
                None => errors.push(f64::INFINITY),
            }
        }
        rows.push(GridRow {
            architecture: arch.clone(),
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            mean_train_error: errors.iter().sum::<f64>() / errors.len() as f64,
        });
        first_fold_nets.push(first);
    }
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mean_train_error.is_finite())
        .min_by(|a, b| a.1.mean_train_error.total_cmp(&b.1.mean_train_error).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numeric("every grid candidate diverged".into()))?;
    let best_run = first_fold_nets[best].take().expect("finite error implies a trained network");
    Ok(GridResult {
        network: best_run.network,
        log: best_run.log,
        architecture: candidates[best].0.clone(),
        config: candidates[best].1.clone(),
        rows,
    })
}

/// Writes the grid report as CSV, one row per candidate.
pub fn write_grid_csv(out: impl Write, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["architecture", "batch_size", "epochs", "learning_rate", "mean_train_error"])?;
    for r in rows {
        w.write_record([
            r.architecture.label(),
            r.batch_size.to_string(),
            r.epochs.to_string(),
            r.learning_rate.to_string(),
            r.mean_train_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest relative difference between the backpropagated gradient and
/// central differences with step 1e-5, over all parameters. The relative
/// difference is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(net: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<f64> {
    const H: f64 = 1e-5;
    let (_, analytic) = loss_gradient(net, data, cfg.loss)?;
    let mut params = parameters(net);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + H;
        set_parameters(&mut probe, &params);
        let up = dataset_loss(&probe, data, cfg.loss);
        params[k] = orig - H;
        set_parameters(&mut probe, &params);
        let down = dataset_loss(&probe, data, cfg.loss);
        params[k] = orig;
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[k];
        let diff = (a - numeric).abs();
        if diff > 0.0 {
            worst = worst.max(diff / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    Ok(worst)
}
