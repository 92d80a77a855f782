//! The `train`, `envelope`, `cgl`, `verify` and `count-ce` commands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use monoenv_core::cgl::{cgl_train, write_history_csv, CglRecord};
use monoenv_core::envelope::{write_predictions_csv, CounterexampleCount, Envelope, EnvelopeMode};
use monoenv_core::nn::{Direction, MonotoneFeature, MonotoneSpec, Network};
use monoenv_core::solver::{find_pair_counterexample, PairMode, PairOutcome, PairSearch};
use monoenv_core::trainer::{evaluate, write_grid_csv, write_log_csv, Metric};
use serde::Serialize;

use crate::config::{Dataset, RunConfig};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_model(path: &Path) -> Result<Network> {
    Network::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads points from a CSV with a header row; one numeric column per model input.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading points {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}: non-numeric cell", path.display(), i + 2))?;
        out.push(row);
    }
    Ok(out)
}

/// Monotone spec for a command. `--feature` narrows it to one feature, keeping
/// the configured direction when that feature is configured, else increasing.
pub fn resolve_spec(cfg: &RunConfig, data: Option<&Dataset>, feature: Option<usize>) -> Result<MonotoneSpec> {
    let configured = cfg.monotone_spec(data);
    match feature {
        None => configured,
        Some(index) => {
            let direction = configured
                .ok()
                .and_then(|s| s.direction(index))
                .unwrap_or(Direction::Increasing);
            Ok(MonotoneSpec::new(vec![MonotoneFeature { index, direction }])?)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub architecture: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub metric: Metric,
    pub train_score: f64,
    pub test_score: f64,
}

/// Grid search per fold; writes `model_fold{k}.json`, `grid_fold{k}.csv`,
/// `train_log_fold{k}.csv`, `normalization.json` and `train_report.csv`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<FoldReport>> {
    let grid = cfg.grid.as_ref().context("config has no `grid` section")?;
    let data = cfg.load_data()?;
    fs::create_dir_all(out)?;
    let loaded = &data.loaded;
    let kind = loaded.task.output_kind();
    let metric = Metric::for_output(kind);
    let mut reports = Vec::new();
    for (k, fold) in data.folds.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(k as u64);
        let result = monoenv_core::trainer::grid_search(
            grid,
            &loaded.data,
            std::slice::from_ref(fold),
            &loaded.input_box,
            kind,
            seed,
        )?;
        result.network.save(out.join(format!("model_fold{k}.json")))?;
        write_grid_csv(create(&out.join(format!("grid_fold{k}.csv")))?, &result.rows)?;
        write_log_csv(create(&out.join(format!("train_log_fold{k}.csv")))?, &result.log, cfg.record_timing)?;
        let score = |idx: &[usize]| -> Result<f64> {
            if idx.is_empty() {
                return Ok(f64::NAN);
            }
            Ok(evaluate(&result.network, &loaded.data.subset(idx), metric, &loaded.params.target)?)
        };
        let report = FoldReport {
            fold: k,
            architecture: result.architecture.label(),
            batch_size: result.config.batch_size,
            epochs: result.config.epochs,
            learning_rate: result.config.learning_rate,
            metric,
            train_score: score(&fold.train)?,
            test_score: score(&fold.test)?,
        };
        log::info!(
            "fold {k}: {} batch {} epochs {} lr {}: train {:.4} test {:.4}",
            report.architecture,
            report.batch_size,
            report.epochs,
            report.learning_rate,
            report.train_score,
            report.test_score
        );
        reports.push(report);
    }
    write_json(&out.join("normalization.json"), &loaded.params)?;
    let mut w = csv::Writer::from_writer(create(&out.join("train_report.csv"))?);
    for r in &reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(reports)
}

/// Points to score: an explicit file, or a fold's test points.
fn points_for(points: Option<&Path>, data: Option<&Dataset>, fold: usize) -> Result<Vec<Vec<f64>>> {
    match (points, data) {
        (Some(p), _) => read_points(p),
        (None, Some(d)) => Ok(d.points(&d.fold(fold)?.test)),
        (None, None) => bail!("no points: pass --points or add a `data` section to the config"),
    }
}

fn optional_data(cfg: &RunConfig) -> Result<Option<Dataset>> {
    cfg.data.as_ref().map(|_| cfg.load_data()).transpose()
}

/// Envelope predictions at every point; writes `predictions_{mode}.csv`.
pub fn cmd_envelope(
    cfg: &RunConfig,
    model: &Path,
    points: Option<&Path>,
    mode: EnvelopeMode,
    feature: Option<usize>,
    fold: usize,
    out: &Path,
) -> Result<PathBuf> {
    let net = load_model(model)?;
    let data = optional_data(cfg)?;
    let spec = resolve_spec(cfg, data.as_ref(), feature)?;
    let pts = points_for(points, data.as_ref(), fold)?;
    let env = Envelope::new(&net, &spec, &cfg.solver)?;
    let preds = env.predict_batch(&pts, mode)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("predictions_{}.csv", mode.as_str()));
    write_predictions_csv(create(&path)?, &net, &pts, &preds, cfg.record_timing)?;
    Ok(path)
}

pub struct CglRun {
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub history: Vec<CglRecord>,
    pub selected_iteration: usize,
}

/// Counterexample-guided fine-tuning on one fold; writes
/// `model_cgl_fold{k}.json` and `cgl_history_fold{k}.csv`.
pub fn cmd_cgl(cfg: &RunConfig, model: &Path, feature: Option<usize>, fold: usize, out: &Path) -> Result<CglRun> {
    let cgl = cfg.cgl.as_ref().context("config has no `cgl` section")?;
    let net = load_model(model)?;
    let data = cfg.load_data()?;
    let spec = resolve_spec(cfg, Some(&data), feature)?;
    let f = data.fold(fold)?;
    let outcome = cgl_train(&net, &spec, &data.loaded.data.subset(&f.train), &data.points(&f.test), cgl)?;
    fs::create_dir_all(out)?;
    let model_path = out.join(format!("model_cgl_fold{fold}.json"));
    let history_path = out.join(format!("cgl_history_fold{fold}.csv"));
    outcome.network.save(&model_path)?;
    write_history_csv(create(&history_path)?, &outcome.history, cfg.record_timing)?;
    Ok(CglRun {
        model_path,
        history_path,
        history: outcome.history,
        selected_iteration: outcome.selected_iteration,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub feature: usize,
    pub mode: &'static str,
    #[serde(flatten)]
    pub outcome: PairOutcome,
    pub bound: f64,
    pub nodes_explored: usize,
    pub wall_time: f64,
}

/// One-line verdict for a pair search.
pub fn verdict_line(s: &PairSearch) -> String {
    match &s.outcome {
        PairOutcome::Monotone => "monotone".into(),
        PairOutcome::Counterexample(c) => format!(
            "counterexample x={:?} x'={:?} violation={}",
            c.x, c.x_prime, c.violation
        ),
        PairOutcome::Inconclusive { best } => match best {
            Some(c) => format!("inconclusive (best violation {} at x={:?} x'={:?})", c.violation, c.x, c.x_prime),
            None => format!("inconclusive (bound {})", s.bound),
        },
    }
}

/// Pair search on one feature of the model (in its increasing sense, after
/// reflecting a configured decreasing feature). Writes `verify.json` when
/// `out` is given.
pub fn cmd_verify(
    cfg: &RunConfig,
    model: &Path,
    feature: usize,
    mode: PairMode,
    out: Option<&Path>,
) -> Result<PairSearch> {
    let net = load_model(model)?;
    let data = optional_data(cfg)?;
    let spec = resolve_spec(cfg, data.as_ref(), Some(feature))?;
    let (canonical, _) = monoenv_core::nn::canonicalize(&net, &spec);
    let mut search = find_pair_counterexample(&canonical, feature, &cfg.solver, mode)?;
    let reflect = |c: &mut monoenv_core::solver::PairCounterexample| {
        c.x = monoenv_core::nn::reflect_point(&c.x, &spec);
        c.x_prime = monoenv_core::nn::reflect_point(&c.x_prime, &spec);
    };
    match &mut search.outcome {
        PairOutcome::Counterexample(c) => reflect(c),
        PairOutcome::Inconclusive { best: Some(c) } => reflect(c),
        _ => {}
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let report = VerifyReport {
            feature,
            mode: match mode {
                PairMode::Any => "any",
                PairMode::Maximal => "maximal",
            },
            outcome: search.outcome.clone(),
            bound: search.bound,
            nodes_explored: search.nodes_explored,
            wall_time: if cfg.record_timing { search.wall_time } else { 0.0 },
        };
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(search)
}

#[derive(Debug, Clone, Serialize)]
pub struct CountReport {
    pub set: String,
    pub points: usize,
    pub count: usize,
    pub fraction: f64,
    pub inconclusive: usize,
}

impl CountReport {
    fn new(set: &str, c: &CounterexampleCount) -> Self {
        CountReport {
            set: set.into(),
            points: c.flags.len(),
            count: c.count,
            fraction: c.fraction,
            inconclusive: c.inconclusive,
        }
    }
}

/// Points with an upper or lower envelope counterexample, on an explicit point
/// file or on a fold's train and test sets; writes `ce_counts.json`.
pub fn cmd_count_ce(
    cfg: &RunConfig,
    model: &Path,
    points: Option<&Path>,
    feature: Option<usize>,
    fold: usize,
    out: &Path,
) -> Result<Vec<CountReport>> {
    let net = load_model(model)?;
    let data = optional_data(cfg)?;
    let spec = resolve_spec(cfg, data.as_ref(), feature)?;
    let env = Envelope::new(&net, &spec, &cfg.solver)?;
    let sets: Vec<(&str, Vec<Vec<f64>>)> = match (points, &data) {
        (Some(p), _) => vec![("points", read_points(p)?)],
        (None, Some(d)) => {
            let f = d.fold(fold)?;
            vec![("train", d.points(&f.train)), ("test", d.points(&f.test))]
        }
        (None, None) => bail!("no points: pass --points or add a `data` section to the config"),
    };
    let reports = sets
        .iter()
        .map(|(name, pts)| Ok(CountReport::new(name, &env.count_counterexamples(pts)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    write_json(&out.join("ce_counts.json"), &reports)?;
    Ok(reports)
}
