//! The `benchmark` command: baseline, envelope, counterexample-guided and
//! combined models over every fold and monotone feature set, written as report
//! tables and plot data.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use monoenv_core::cgl::{ce_reduction_report, cgl_train, select, CeReduction, Selection};
use monoenv_core::data::TargetTransform;
use monoenv_core::envelope::{Envelope, EnvelopeMode};
use monoenv_core::nn::{MonotoneSpec, Network};
use monoenv_core::solver::SolverConfig;
use monoenv_core::trainer::{evaluate, grid_search, init_network, score, train, GridSpec, LabeledDataset, Metric};
use serde::Serialize;

use crate::config::{Dataset, RunConfig, TimingSection};

/// Scores of one fold and feature set.
#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub features: String,
    pub nn_b: f64,
    pub envelope: f64,
    pub envelope_mode: EnvelopeMode,
    pub cgl: f64,
    pub comet: f64,
    /// Envelope of the round with the fewest training counterexamples.
    pub comet_min_ce: f64,
    pub cgl_round: usize,
    pub min_ce_round: usize,
    pub train_ce_pct: f64,
    pub test_ce_pct: f64,
    #[serde(flatten)]
    pub reduction: CeReduction,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub model_size: String,
    pub n_monotone_features: usize,
    pub baseline_time_s: f64,
    pub envelope_time_s: f64,
}

pub struct BenchReport {
    pub dataset: String,
    pub metric: Metric,
    pub folds: Vec<FoldResult>,
    /// Envelope times on the first fold's baseline, by number of monotone features.
    pub timing_by_features: Vec<TimingRow>,
    /// Envelope times for freshly trained architectures on the first feature set.
    pub timing_by_size: Vec<TimingRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn better(metric: Metric, a: f64, b: f64) -> bool {
    match metric {
        Metric::Mse => a < b,
        Metric::Accuracy => a > b,
    }
}

/// Scores envelope predictions on labeled data.
pub struct Scorer<'a> {
    pub metric: Metric,
    pub target: &'a TargetTransform,
    pub solver: &'a SolverConfig,
}

impl Scorer<'_> {
    pub fn envelope_score(&self, net: &Network, spec: &MonotoneSpec, data: &LabeledDataset, mode: EnvelopeMode) -> Result<f64> {
        let env = Envelope::new(net, spec, self.solver)?;
        let preds: Vec<f64> = env
            .predict_batch(data.inputs(), mode)?
            .iter()
            .map(|p| net.predict_value(p.value))
            .collect();
        Ok(score(&preds, data, self.metric, self.target)?)
    }

    /// Test score of the envelope direction that scores better on the training
    /// set (upper on ties).
    pub fn best_envelope(
        &self,
        net: &Network,
        spec: &MonotoneSpec,
        train: &LabeledDataset,
        test: &LabeledDataset,
    ) -> Result<(EnvelopeMode, f64)> {
        let up = self.envelope_score(net, spec, train, EnvelopeMode::Upper)?;
        let low = self.envelope_score(net, spec, train, EnvelopeMode::Lower)?;
        let mode = if better(self.metric, low, up) {
            EnvelopeMode::Lower
        } else {
            EnvelopeMode::Upper
        };
        Ok((mode, self.envelope_score(net, spec, test, mode)?))
    }
}

fn capped(indices: &[usize], cap: Option<usize>) -> Vec<usize> {
    indices[..cap.map_or(indices.len(), |c| c.min(indices.len()))].to_vec()
}

/// Runs the full benchmark and writes its tables into `out`.
pub fn cmd_benchmark(cfg: &RunConfig, out: &Path) -> Result<BenchReport> {
    let grid = cfg.grid.as_ref().context("config has no `grid` section")?;
    let cgl_cfg = cfg.cgl.as_ref().context("config has no `cgl` section")?;
    let bench = cfg.benchmark.as_ref().context("config has no `benchmark` section")?;
    let data = cfg.load_data()?;
    let loaded = &data.loaded;
    let kind = loaded.task.output_kind();
    let metric = Metric::for_output(kind);
    let scorer = Scorer {
        metric,
        target: &loaded.params.target,
        solver: &cfg.solver,
    };
    let specs = bench
        .feature_sets
        .iter()
        .map(|names| Ok((names.join("+"), loaded.spec_for(names)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut folds = Vec::new();
    let mut baselines = Vec::new();
    for (k, fold) in data.folds.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(k as u64);
        let baseline = grid_search(grid, &loaded.data, std::slice::from_ref(fold), &loaded.input_box, kind, seed)?.network;
        let train_full = loaded.data.subset(&fold.train);
        let train = loaded.data.subset(&capped(&fold.train, bench.max_points));
        let test = loaded.data.subset(&capped(&fold.test, bench.max_points));
        let nn_b = evaluate(&baseline, &test, metric, scorer.target)?;
        for (label, spec) in &specs {
            let (envelope_mode, envelope) = scorer.best_envelope(&baseline, spec, &train, &test)?;
            let cgl_run = cgl_train(&baseline, spec, &train_full, test.inputs(), cgl_cfg)?;
            let min_ce_round = select(&cgl_run.history, Selection::MinCounterexamples);
            let min_ce_net = cgl_run.models[min_ce_round].as_ref().expect("selected round has a model");
            let reduction = ce_reduction_report(&baseline, &cgl_run.network, spec, train.inputs(), test.inputs(), &cfg.solver)?;
            let pct = |count: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 };
            let result = FoldResult {
                fold: k,
                features: label.clone(),
                nn_b,
                envelope,
                envelope_mode,
                cgl: evaluate(&cgl_run.network, &test, metric, scorer.target)?,
                comet: scorer.best_envelope(&cgl_run.network, spec, &train, &test)?.1,
                comet_min_ce: scorer.best_envelope(min_ce_net, spec, &train, &test)?.1,
                cgl_round: cgl_run.selected_iteration,
                min_ce_round,
                train_ce_pct: pct(reduction.train_before, train.len()),
                test_ce_pct: pct(reduction.test_before, test.len()),
                reduction,
            };
            log::info!(
                "fold {k} [{label}]: nn_b {:.4} envelope {:.4} cgl {:.4} comet {:.4}",
                result.nn_b,
                result.envelope,
                result.cgl,
                result.comet
            );
            folds.push(result);
        }
        baselines.push(baseline);
    }

    let (timing_by_features, timing_by_size) = timing_study(cfg, &data, &baselines[0], bench.timing.as_ref(), &specs)?;
    let report = BenchReport {
        dataset: data.name.clone(),
        metric,
        folds,
        timing_by_features,
        timing_by_size,
    };
    write_report(&report, &specs.iter().map(|s| s.0.clone()).collect::<Vec<_>>(), out)?;
    Ok(report)
}

/// Mean per-point seconds for a plain forward pass and for an upper envelope query.
fn time_points(net: &Network, spec: &MonotoneSpec, points: &[Vec<f64>], solver: &SolverConfig) -> Result<(f64, f64)> {
    let n = points.len().max(1) as f64;
    let start = Instant::now();
    for x in points {
        std::hint::black_box(net.forward(x)?);
    }
    let baseline = start.elapsed().as_secs_f64() / n;
    let env = Envelope::new(net, spec, solver)?;
    let start = Instant::now();
    for x in points {
        std::hint::black_box(env.predict(x, EnvelopeMode::Upper)?);
    }
    Ok((baseline, start.elapsed().as_secs_f64() / n))
}

/// Prediction times against the number of monotone features (on the first
/// fold's baseline) and against model size (freshly trained architectures).
fn timing_study(
    cfg: &RunConfig,
    data: &Dataset,
    baseline: &Network,
    section: Option<&TimingSection>,
    specs: &[(String, MonotoneSpec)],
) -> Result<(Vec<TimingRow>, Vec<TimingRow>)> {
    let fold = data.fold(0)?;
    let n_points = section.map_or(20, |t| t.points);
    let points = data.points(&capped(&fold.test, Some(n_points)));
    let size_label = |net: &Network| {
        let widths: Vec<String> = net.hidden_layers().iter().map(|l| l.out_dim().to_string()).collect();
        if widths.is_empty() {
            "linear".to_string()
        } else {
            widths.join("x")
        }
    };
    let mut by_features = Vec::new();
    let mut sizes: Vec<usize> = specs.iter().map(|s| s.1.len()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let widest = specs.iter().max_by_key(|s| s.1.len()).map(|s| s.1.clone());
    if let Some(widest) = &widest {
        for &n in &sizes {
            let spec = MonotoneSpec::new(widest.entries()[..n].to_vec())?;
            let (b, e) = time_points(baseline, &spec, &points, &cfg.solver)?;
            by_features.push(TimingRow {
                model_size: size_label(baseline),
                n_monotone_features: n,
                baseline_time_s: b,
                envelope_time_s: e,
            });
        }
    }
    let mut by_size = Vec::new();
    if let (Some(t), Some(spec)) = (section, specs.first().map(|s| &s.1)) {
        let loaded = &data.loaded;
        let kind = loaded.task.output_kind();
        let base_cfg = GridSpec::candidates(cfg.grid.as_ref().context("config has no `grid` section")?, kind, cfg.seed)
            .into_iter()
            .next()
            .context("empty grid")?
            .1;
        let train_set = loaded.data.subset(&fold.train);
        for arch in &t.architectures {
            let mut tc = base_cfg.clone();
            tc.epochs = t.epochs;
            let init = init_network(arch, loaded.input_box.clone(), kind, cfg.seed)?;
            let net = train(&init, &train_set, &tc)?;
            let (b, e) = time_points(&net, spec, &points, &cfg.solver)?;
            by_size.push(TimingRow {
                model_size: arch.label(),
                n_monotone_features: spec.len(),
                baseline_time_s: b,
                envelope_time_s: e,
            });
        }
    }
    Ok((by_features, by_size))
}

fn write_report(report: &BenchReport, feature_labels: &[String], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let writer = |name: &str| -> Result<csv::Writer<fs::File>> {
        let path = out.join(name);
        csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
    };
    let per_set = |label: &str, f: &dyn Fn(&FoldResult) -> f64| -> (f64, f64) {
        let v: Vec<f64> = report.folds.iter().filter(|r| r.features == label).map(f).collect();
        mean_std(&v)
    };
    let cell = |(m, s): (f64, f64)| format!("{m:.4} ± {s:.4}");

    let path = out.join("fold_results.json");
    fs::write(&path, serde_json::to_string_pretty(&report.folds)? + "\n").with_context(|| format!("writing {}", path.display()))?;

    let mut w = writer("table_quality.csv")?;
    w.write_record(["dataset", "features", "nn_b", "envelope", "cgl", "comet"])?;
    for label in feature_labels {
        w.write_record([
            report.dataset.clone(),
            label.clone(),
            cell(per_set(label, &|r| r.nn_b)),
            cell(per_set(label, &|r| r.envelope)),
            cell(per_set(label, &|r| r.cgl)),
            cell(per_set(label, &|r| r.comet)),
        ])?;
    }
    w.flush()?;

    let mut w = writer("table_ce_percent.csv")?;
    w.write_record(["dataset", "features", "train_pct", "test_pct"])?;
    for label in feature_labels {
        w.write_record([
            report.dataset.clone(),
            label.clone(),
            cell(per_set(label, &|r| r.train_ce_pct)),
            cell(per_set(label, &|r| r.test_ce_pct)),
        ])?;
    }
    w.flush()?;

    let mut w = writer("table_ce_reduction.csv")?;
    w.write_record([
        "dataset",
        "features",
        "train_nn_b",
        "train_cgl",
        "test_nn_b",
        "test_cgl",
        "train_reduction_pct",
        "test_reduction_pct",
    ])?;
    for label in feature_labels {
        let m = |f: &dyn Fn(&FoldResult) -> f64| format!("{:.2}", per_set(label, f).0);
        w.write_record([
            report.dataset.clone(),
            label.clone(),
            m(&|r| r.reduction.train_before as f64),
            m(&|r| r.reduction.train_after as f64),
            m(&|r| r.reduction.test_before as f64),
            m(&|r| r.reduction.test_after as f64),
            m(&|r| r.reduction.train_reduction_pct),
            m(&|r| r.reduction.test_reduction_pct),
        ])?;
    }
    w.flush()?;

    let mut w = writer("timing.csv")?;
    for r in report.timing_by_features.iter().chain(&report.timing_by_size) {
        w.serialize(r)?;
    }
    w.flush()?;

    let series = |name: &str, rows: Vec<(String, String, f64)>| -> Result<()> {
        let mut w = writer(name)?;
        w.write_record(["series", "x", "y"])?;
        for (s, x, y) in rows {
            w.write_record([s, x, y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    let mut rows = Vec::new();
    for label in feature_labels {
        rows.push(("train".into(), label.clone(), per_set(label, &|r| r.train_ce_pct).0));
        rows.push(("test".into(), label.clone(), per_set(label, &|r| r.test_ce_pct).0));
    }
    series("fig_ce_percent.csv", rows)?;

    let mut rows = Vec::new();
    for label in feature_labels {
        rows.push(("nn_b_envelope".into(), label.clone(), per_set(label, &|r| r.envelope).0));
        rows.push(("comet_min_train_error".into(), label.clone(), per_set(label, &|r| r.comet).0));
        rows.push(("comet_min_counterexamples".into(), label.clone(), per_set(label, &|r| r.comet_min_ce).0));
    }
    series("fig_model_selection.csv", rows)?;

    let mut rows = Vec::new();
    for r in &report.timing_by_features {
        rows.push(("baseline".into(), r.n_monotone_features.to_string(), r.baseline_time_s));
        rows.push(("envelope".into(), r.n_monotone_features.to_string(), r.envelope_time_s));
    }
    series("fig_time_vs_features.csv", rows)?;

    let mut rows = Vec::new();
    for r in &report.timing_by_size {
        rows.push(("baseline".into(), r.model_size.clone(), r.baseline_time_s));
        rows.push(("envelope".into(), r.model_size.clone(), r.envelope_time_s));
    }
    series("fig_time_vs_model_size.csv", rows)?;
    Ok(())
}
