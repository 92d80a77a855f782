//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use monoenv_cli::bench::Scorer;
use monoenv_cli::commands::{cmd_cgl, cmd_train};
use monoenv_cli::config::RunConfig;
use monoenv_core::envelope::{Envelope, EnvelopeMode};
use monoenv_core::nn::{canonicalize, Activation, Direction, MonotoneFeature, MonotoneSpec, Network, OutputKind};
use monoenv_core::reference::{house1d, random_network, three_peaks};
use monoenv_core::solver::{
    find_pair_counterexample, line_extremum_exact, maximize, BoxQuery, PairMode, Sense, SolverConfig,
};
use monoenv_core::trainer::{gradient_check, LabeledDataset, Loss, Metric, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/auto-mpg.json")
}

// Criterion 1

fn random_spec(rng: &mut ChaCha8Rng, d: usize) -> MonotoneSpec {
    let size = rng.gen_range(1..=d);
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..d {
        idx.swap(i, rng.gen_range(i..d));
    }
    MonotoneSpec::new(
        idx[..size]
            .iter()
            .map(|&index| MonotoneFeature {
                index,
                direction: if rng.gen() { Direction::Increasing } else { Direction::Decreasing },
            })
            .collect(),
    )
    .unwrap()
}

fn random_widths(rng: &mut ChaCha8Rng, max_units: usize) -> Vec<usize> {
    if rng.gen() {
        vec![rng.gen_range(1..=max_units)]
    } else {
        let a = rng.gen_range(1..max_units);
        vec![a, rng.gen_range(1..=max_units - a)]
    }
}

fn envelope_monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SolverConfig::default();
    let mut violations = 0;
    let mut incomplete = 0;
    for n in 0..50 {
        let d = rng.gen_range(1..=3);
        let widths = random_widths(&mut rng, 16);
        let net = random_network(1000 + n, d, &widths);
        let spec = random_spec(&mut rng, d);
        let env = Envelope::new(&net, &spec, &cfg).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let mut y = x.clone();
            for f in spec.entries() {
                let i = f.index;
                y[i] = match f.direction {
                    Direction::Increasing => rng.gen_range(x[i]..=1.0),
                    Direction::Decreasing => rng.gen_range(0.0..=x[i]),
                };
            }
            let px = env.predict(&x, EnvelopeMode::Upper).unwrap();
            let py = env.predict(&y, EnvelopeMode::Upper).unwrap();
            incomplete += px.incomplete as usize + py.incomplete as usize;
            if px.value > py.value + 2.0 * EPS {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations over 50000 pairs ({incomplete} incomplete queries)"),
    )
}

// Criterion 2

/// Forward pass specialised for sweeping one coordinate with the others held.
struct Sweep<'a> {
    net: &'a Network,
    base: Vec<f64>,
    col: Vec<f64>,
    buf: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Sweep<'a> {
    fn new(net: &'a Network) -> Self {
        let w = net.max_width().max(1);
        Sweep {
            net,
            base: Vec::new(),
            col: Vec::new(),
            buf: vec![0.0; w],
            next: vec![0.0; w],
        }
    }

    /// Fixes every coordinate of `x` except `axis`.
    fn hold(&mut self, x: &[f64], axis: usize) {
        let l = &self.net.layers()[0];
        self.base = (0..l.out_dim())
            .map(|k| {
                l.biases()[k]
                    + (0..l.in_dim())
                        .filter(|&m| m != axis)
                        .map(|m| l.weight(k, m) * x[m])
                        .sum::<f64>()
            })
            .collect();
        self.col = (0..l.out_dim()).map(|k| l.weight(k, axis)).collect();
    }

    fn eval(&mut self, t: f64) -> f64 {
        let layers = self.net.layers();
        let relu = |v: f64, a: Activation| if a == Activation::Relu { v.max(0.0) } else { v };
        let a0 = layers[0].activation();
        let mut width = self.base.len();
        for k in 0..width {
            self.buf[k] = relu(self.base[k] + self.col[k] * t, a0);
        }
        for l in &layers[1..] {
            for k in 0..l.out_dim() {
                let row = l.row(k);
                let mut s = l.biases()[k];
                for m in 0..width {
                    s += row[m] * self.buf[m];
                }
                self.next[k] = relu(s, l.activation());
            }
            width = l.out_dim();
            std::mem::swap(&mut self.buf, &mut self.next);
        }
        self.buf[0]
    }
}

/// Max of `f` over a grid of `n` points per free axis, then refined by
/// repeated local grids around the best points of distinct grid blocks.
fn grid_oracle(net: &Network, q: &BoxQuery, n: usize) -> f64 {
    let (lo, hi) = q.bounds();
    let free = q.free_indices();
    let at = |k: usize, i: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (n - 1) as f64;
    let mut sweep = Sweep::new(net);
    let mut x = lo.clone();
    let block = 100;
    let mut blocks: Vec<(f64, Vec<f64>)> = Vec::new();
    let last = *free.last().unwrap();
    let outer: Vec<usize> = if free.len() == 2 { (0..n).collect() } else { vec![0] };
    let blocks_per_axis = n.div_ceil(block);
    blocks.resize(blocks_per_axis * if free.len() == 2 { blocks_per_axis } else { 1 }, (f64::NEG_INFINITY, vec![]));
    for &a in &outer {
        if free.len() == 2 {
            x[free[0]] = at(a, free[0]);
        }
        sweep.hold(&x, last);
        for b in 0..n {
            let t = at(b, last);
            let v = sweep.eval(t);
            let id = (a / block) * blocks_per_axis + b / block;
            if v > blocks[id].0 {
                let mut p = x.clone();
                p[last] = t;
                blocks[id] = (v, p);
            }
        }
    }
    blocks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = blocks[0].0;
    for (v0, p0) in blocks.iter().take(8) {
        let (mut v, mut p) = (*v0, p0.clone());
        let mut r: Vec<f64> = free.iter().map(|&i| (hi[i] - lo[i]) / (n - 1) as f64).collect();
        for _ in 0..40 {
            let centre = p.clone();
            let steps = 10i32;
            let grid: Vec<Vec<f64>> = free
                .iter()
                .zip(&r)
                .map(|(&i, &ri)| {
                    (-steps..=steps)
                        .map(|s| (centre[i] + ri * s as f64 / steps as f64).clamp(lo[i], hi[i]))
                        .collect()
                })
                .collect();
            let mut probe = centre.clone();
            let combos = grid.iter().map(|g| g.len()).product::<usize>();
            for c in 0..combos {
                let mut rest = c;
                for (g, &i) in grid.iter().zip(&free) {
                    probe[i] = g[rest % g.len()];
                    rest /= g.len();
                }
                let fv = net.eval(&probe);
                if fv > v {
                    v = fv;
                    p = probe.clone();
                }
            }
            r.iter_mut().for_each(|ri| *ri *= 0.5);
        }
        best = best.max(v);
    }
    best
}

fn pattern(net: &Network, x: &[f64]) -> Vec<bool> {
    net.forward_trace(x).unwrap().preactivations.iter().map(|&v| v > 0.0).collect()
}

/// Extremum of `sign * f` along one axis: scan for activation pattern changes,
/// bisect each to its breakpoint, and evaluate at breakpoints and endpoints.
fn breakpoint_oracle(net: &Network, x: &[f64], axis: usize, lo: f64, hi: f64, sign: f64) -> f64 {
    let n = 20_000;
    let at = |t: f64| {
        let mut p = x.to_vec();
        p[axis] = t;
        p
    };
    let f = |t: f64| sign * net.eval(&at(t));
    let mut best = f(lo).max(f(hi));
    let mut prev_t = lo;
    let mut prev_p = pattern(net, &at(lo));
    for k in 1..=n {
        let t = lo + (hi - lo) * k as f64 / n as f64;
        let p = pattern(net, &at(t));
        if p != prev_p {
            let (mut a, mut b) = (prev_t, t);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if pattern(net, &at(m)) == prev_p {
                    a = m;
                } else {
                    b = m;
                }
            }
            best = best.max(f(a)).max(f(b));
        }
        prev_t = t;
        prev_p = p;
    }
    best
}

fn random_query(rng: &mut ChaCha8Rng, d: usize, n_free: usize) -> BoxQuery {
    let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
    let mut q = BoxQuery::at_point(&x);
    let mut axes: Vec<usize> = (0..d).collect();
    for i in 0..d {
        axes.swap(i, rng.gen_range(i..d));
    }
    for &i in &axes[..n_free] {
        let (a, b) = if rng.gen_bool(0.3) {
            (0.0, 1.0)
        } else {
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            (u.min(v), u.max(v).max(u.min(v) + 1e-3).min(1.0))
        };
        q = q.with_free(i, a, b);
    }
    q
}

fn solver_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SolverConfig::default();
    let (mut worst_box, mut worst_line) = (0.0f64, 0.0f64);
    let mut unsound = 0;
    for n in 0..100 {
        let d = rng.gen_range(1..=3);
        let widths = random_widths(&mut rng, 8);
        let net = random_network(5000 + n, d, &widths);
        let n_free = rng.gen_range(1..=d.min(2));
        let q = random_query(&mut rng, d, n_free);
        let r = maximize(&net, &q, &cfg).unwrap();
        let oracle = grid_oracle(&net, &q, 10_000);
        worst_box = worst_box.max((r.witness_value - oracle).abs());
        if r.certified_bound < oracle - 1e-9 {
            unsound += 1;
        }

        let axis = rng.gen_range(0..d);
        let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
        let (lo, hi) = (0.0, 1.0);
        let lq = BoxQuery::at_point(&x).with_free(axis, lo, hi);
        for (sense, sign) in [(Sense::Max, 1.0), (Sense::Min, -1.0)] {
            let walk = line_extremum_exact(&net, &lq, sense).unwrap();
            let want = sign * breakpoint_oracle(&net, &x, axis, lo, hi, sign);
            worst_line = worst_line.max((walk.witness_value - want).abs());
        }
    }
    verdict(
        worst_box <= 1e-5 && worst_line <= 1e-9 && unsound == 0,
        format!("max |maximize - grid| = {worst_box:.2e}, max |line walk - breakpoints| = {worst_line:.2e}, {unsound} bounds below the grid"),
    )
}

// Criterion 3

fn house_envelopes() -> Verdict {
    let net = house1d();
    let spec = MonotoneSpec::increasing(&[0]).unwrap();
    let env = Envelope::new(&net, &spec, &SolverConfig::default()).unwrap();
    let values = |mode| -> Vec<f64> {
        (1..=7)
            .map(|i| env.predict(&[i as f64], mode).unwrap().value)
            .collect()
    };
    let (up, low) = (values(EnvelopeMode::Upper), values(EnvelopeMode::Lower));
    let close = |got: &[f64], want: [f64; 7]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-6);
    verdict(
        close(&up, [7.0, 13.0, 13.0, 13.0, 13.0, 18.0, 20.0]) && close(&low, [7.0, 9.0, 9.0, 9.0, 10.0, 18.0, 20.0]),
        format!("upper {up:?}, lower {low:?}"),
    )
}

// Criterion 4

fn joint_search_beats_per_axis_maxima() -> Verdict {
    let net = three_peaks();
    let f = |a: f64, b: f64| net.forward(&[a, b]).unwrap();
    let ordering = f(3.0, 3.0) > f(1.0, 5.0) && f(1.0, 5.0) > f(7.0, 2.0);
    let per_axis = |x: [f64; 2]| {
        let lower = &net.input_box().lower;
        (0..2)
            .map(|i| {
                let q = BoxQuery::at_point(&x).with_free(i, lower[i], x[i]);
                line_extremum_exact(&net, &q, Sense::Max).unwrap().witness_value
            })
            .fold(net.forward(&x).unwrap(), f64::max)
    };
    let (a, b) = ([3.0, 5.0], [7.0, 5.0]);
    let (pa, pb) = (per_axis(a), per_axis(b));
    let env = Envelope::new(&net, &MonotoneSpec::increasing(&[0, 1]).unwrap(), &SolverConfig::default()).unwrap();
    let ja = env.predict(&a, EnvelopeMode::Upper).unwrap().value;
    let jb = env.predict(&b, EnvelopeMode::Upper).unwrap().value;
    verdict(
        ordering && pa > pb && ja <= jb + 2.0 * EPS,
        format!("per-axis {pa} at (3,5) vs {pb} at (7,5); joint {ja} vs {jb}"),
    )
}

// Criterion 5

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 2];
    for n in 0..20 {
        let d = rng.gen_range(1..=3);
        let widths = random_widths(&mut rng, 12);
        let base = random_network(9000 + n, d, &widths);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        for (k, loss) in [Loss::Mse, Loss::BinaryCrossEntropy].into_iter().enumerate() {
            let (net, ys): (Network, Vec<f64>) = match loss {
                Loss::Mse => (base.clone(), xs.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()),
                Loss::BinaryCrossEntropy => (
                    Network::new(base.layers().to_vec(), base.input_box().clone(), OutputKind::BinaryLogit).unwrap(),
                    xs.iter().map(|_| if rng.gen() { 1.0 } else { 0.0 }).collect(),
                ),
            };
            assert!(net.parameter_count() <= 200);
            let data = LabeledDataset::new(xs.clone(), ys).unwrap();
            let err = gradient_check(&net, &data, &TrainConfig::new(16, 1, 0.01, loss)).unwrap();
            worst[k] = worst[k].max(err);
        }
    }
    verdict(
        worst.iter().all(|&w| w <= 1e-4),
        format!("max relative discrepancy: mse {:.2e}, cross-entropy {:.2e}", worst[0], worst[1]),
    )
}

// Criteria 6 to 9 share the trained Auto-MPG models.

struct Mpg {
    cfg: RunConfig,
    dir: tempfile::TempDir,
    baseline_mse: Vec<f64>,
}

impl Mpg {
    fn model(&self, k: usize) -> PathBuf {
        self.dir.path().join("train").join(format!("model_fold{k}.json"))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn auto_mpg_quality(mpg: &Mpg) -> Verdict {
    let data = mpg.cfg.load_data().unwrap();
    let spec = mpg.cfg.monotone_spec(Some(&data)).unwrap();
    let scorer = Scorer {
        metric: Metric::Mse,
        target: &data.loaded.params.target,
        solver: &mpg.cfg.solver,
    };
    let mut env_mse = Vec::new();
    let mut sampled = 0;
    for (k, fold) in data.folds.iter().enumerate() {
        let net = Network::load(mpg.model(k)).unwrap();
        let train = data.loaded.data.subset(&fold.train);
        let test = data.loaded.data.subset(&fold.test);
        let (_, score) = scorer.best_envelope(&net, &spec, &train, &test).unwrap();
        env_mse.push(score);
        let env = Envelope::new(&net, &spec, &mpg.cfg.solver).unwrap();
        for mode in [EnvelopeMode::Upper, EnvelopeMode::Lower] {
            sampled += env.sampled_violations(test.inputs(), mode, 50, 2.0 * EPS).unwrap();
        }
    }
    let (b, e) = (mean(&mpg.baseline_mse), mean(&env_mse));
    let rel = (e - b).abs() / b;
    verdict(
        (6.0..=14.0).contains(&b) && rel <= 0.15 && sampled == 0,
        format!(
            "baseline test MSE {b:.3} (folds {:.3?}), envelope {e:.3} ({:.1}% off), {sampled} test points with envelope violations",
            mpg.baseline_mse,
            100.0 * rel
        ),
    )
}

fn cgl_direction(mpg: &Mpg) -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for k in 0..3 {
        let run = cmd_cgl(&mpg.cfg, &mpg.model(k), None, k, &mpg.dir.path().join("cgl")).unwrap();
        let before = run.history[0].test_ce_count;
        let after = run.history[run.selected_iteration].test_ce_count;
        if before > 0 && after >= before {
            pass = false;
        }
        lines.push(format!("fold {k}: {before} -> {after} (round {})", run.selected_iteration));
    }
    verdict(pass, format!("test counterexamples {}", lines.join(", ")))
}

fn timing_ordering(mpg: &Mpg) -> Verdict {
    let data = mpg.cfg.load_data().unwrap();
    let spec = mpg.cfg.monotone_spec(Some(&data)).unwrap();
    let feature = spec.entries()[0].index;
    let pair_cfg = SolverConfig {
        max_nodes: 200_000,
        ..mpg.cfg.solver
    };
    let (mut env_times, mut pair_times) = (Vec::new(), Vec::new());
    let mut finished = 0;
    for (k, fold) in data.folds.iter().enumerate() {
        let net = Network::load(mpg.model(k)).unwrap();
        let env = Envelope::new(&net, &spec, &mpg.cfg.solver).unwrap();
        for x in data.points(&fold.test) {
            let start = Instant::now();
            env.predict(&x, EnvelopeMode::Upper).unwrap();
            env_times.push(start.elapsed().as_secs_f64());
        }
        let (canonical, _) = canonicalize(&net, &spec);
        let start = Instant::now();
        let s = find_pair_counterexample(&canonical, feature, &pair_cfg, PairMode::Maximal).unwrap();
        pair_times.push(start.elapsed().as_secs_f64());
        finished += !matches!(s.outcome, monoenv_core::solver::PairOutcome::Inconclusive { .. }) as usize;
    }
    let (e, p) = (mean(&env_times), mean(&pair_times));
    verdict(
        p >= 10.0 * e,
        format!(
            "envelope query {:.3} ms, maximal pair search {:.3} s ({finished} of 3 finished within the node budget), ratio {:.0}x",
            e * 1e3,
            p,
            p / e
        ),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism(mpg: &Mpg) -> Verdict {
    let root = mpg.dir.path();
    cmd_train(&mpg.cfg, &root.join("train_again")).unwrap();
    let train_same = files(&root.join("train")) == files(&root.join("train_again"));
    for name in ["cgl_a", "cgl_b"] {
        cmd_cgl(&mpg.cfg, &mpg.model(0), None, 0, &root.join(name)).unwrap();
    }
    let cgl_same = files(&root.join("cgl_a")) == files(&root.join("cgl_b"));
    verdict(
        train_same && cgl_same,
        format!("train outputs identical: {train_same}, cgl outputs identical: {cgl_same}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, limit: Option<Duration>, run: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let in_time = limit.map_or(true, |l| took <= l);
        let pass = v.pass && in_time;
        failed += !pass as usize;
        let limit_note = limit.map_or(String::new(), |l| format!(", limit {} s", l.as_secs()));
        println!(
            "criterion {n} ({name}): {} in {:.1} s{limit_note}: {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            v.detail
        );
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    report(1, "envelope monotonicity", min(10), &mut envelope_monotonicity);
    report(2, "solver oracles", min(10), &mut solver_oracles);
    report(3, "house envelopes", None, &mut house_envelopes);
    report(4, "joint search", None, &mut joint_search_beats_per_axis_maxima);
    report(5, "gradient check", min(1), &mut gradient_checks);

    let cfg = RunConfig::load(&config_path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let reports = cmd_train(&cfg, &dir.path().join("train")).unwrap();
    let train_time = start.elapsed();
    let mpg = Mpg {
        cfg,
        dir,
        baseline_mse: reports.iter().map(|r| r.test_score).collect(),
    };
    let mut quality = || {
        let mut v = auto_mpg_quality(&mpg);
        v.detail = format!("{} (training {:.1} s)", v.detail, train_time.as_secs_f64());
        v
    };
    report(6, "auto-mpg quality", min(30).map(|l| l - train_time), &mut quality);
    report(7, "cgl direction", min(30), &mut || cgl_direction(&mpg));
    report(8, "timing ordering", min(15), &mut || timing_ordering(&mpg));
    report(9, "determinism", None, &mut || determinism(&mpg));

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
