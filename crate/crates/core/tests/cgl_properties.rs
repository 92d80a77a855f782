use monoenv_core::cgl::{cgl_train, dominated_by, generate_augmentation, CglConfig, Labeling, Origin, Selection};
use monoenv_core::envelope::Envelope;
use monoenv_core::nn::{Direction, InputBox, MonotoneFeature, MonotoneSpec, OutputKind};
use monoenv_core::reference::random_network;
use monoenv_core::solver::SolverConfig;
use monoenv_core::trainer::{init_network, train, Architecture, LabeledDataset, Loss, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case() -> impl Strategy<Value = (u64, usize, Vec<usize>, Vec<(bool, bool)>)> {
    (any::<u64>(), 1usize..=3, prop::collection::vec(2usize..=8, 1..=2), prop::collection::vec((any::<bool>(), any::<bool>()), 3))
}

fn spec_from(d: usize, mask: &[(bool, bool)]) -> MonotoneSpec {
    let mut entries: Vec<MonotoneFeature> = (0..d)
        .filter(|&i| mask[i].0)
        .map(|i| MonotoneFeature {
            index: i,
            direction: if mask[i].1 { Direction::Decreasing } else { Direction::Increasing },
        })
        .collect();
    if entries.is_empty() {
        entries.push(MonotoneFeature {
            index: 0,
            direction: Direction::Increasing,
        });
    }
    MonotoneSpec::new(entries).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn augmentation_invariants((seed, d, widths, mask) in case()) {
        let net = random_network(seed, d, &widths);
        let spec = spec_from(d, &mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let ys = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = LabeledDataset::new(xs, ys).unwrap();
        let cfg = SolverConfig::default();
        let aug = generate_augmentation(&net, &spec, &data, Labeling::RegressionAverage, &cfg).unwrap();
        let n_ce = aug.points.iter().filter(|p| p.origin != Origin::Original).count();
        prop_assert_eq!(aug.points.len(), data.len() + n_ce);
        prop_assert_eq!(aug.points[..data.len()].iter().map(|p| p.parent_index).collect::<Vec<_>>(), (0..data.len()).collect::<Vec<_>>());
        let flags = Envelope::new(&net, &spec, &cfg).unwrap().count_counterexamples(data.inputs()).unwrap();
        prop_assert_eq!(aug.flagged, flags.count);
        for p in &aug.points {
            prop_assert!(net.input_box().contains(&p.input, 1e-9));
            let parent = &data.inputs()[p.parent_index];
            match p.origin {
                Origin::Original => prop_assert_eq!(&p.input, parent),
                Origin::UpperCe => prop_assert!(dominated_by(&p.input, parent, &spec, 1e-12)),
                Origin::LowerCe => prop_assert!(dominated_by(parent, &p.input, &spec, 1e-12)),
            }
        }
        for (i, x) in data.inputs().iter().enumerate() {
            let members: Vec<f64> = aug.points.iter().filter(|p| p.parent_index == i && p.origin != Origin::Original).map(|p| net.eval(&p.input)).chain([net.eval(x)]).collect();
            if members.len() > 1 {
                let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                for p in aug.points.iter().filter(|p| p.parent_index == i) {
                    prop_assert!(p.label >= lo - 1e-12 && p.label <= hi + 1e-12);
                }
            } else {
                prop_assert_eq!(aug.points[i].label, data.targets()[i]);
            }
        }
    }

    #[test]
    fn min_counterexample_selection_is_minimal((seed, d, widths, mask) in case()) {
        let net = random_network(seed, d, &widths);
        let spec = spec_from(d, &mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let ys = xs.iter().map(|x| x.iter().sum()).collect();
        let data = LabeledDataset::new(xs, ys).unwrap();
        let mut cfg = CglConfig::new(2, TrainConfig::new(5, 3, 0.01, Loss::Mse));
        cfg.selection = Selection::MinCounterexamples;
        let out = cgl_train(&net, &spec, &data, &[], &cfg).unwrap();
        prop_assert_eq!(out.history.len(), 3);
        let best = out.history[out.selected_iteration].train_ce_count;
        prop_assert!(out.selected_iteration >= 1);
        prop_assert!(out.history[1..].iter().all(|r| best <= r.train_ce_count));
    }
}

#[test]
fn noisy_monotone_data_loses_counterexamples() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let xs: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x[0] + rng.gen_range(-0.15..0.15)).collect();
    let data = LabeledDataset::new(xs, ys).unwrap();
    let init = init_network(&Architecture::uniform(2, 16), InputBox::unit(1), OutputKind::Regression, 3).unwrap();
    let baseline = train(&init, &data, &TrainConfig::new(8, 600, 0.01, Loss::Mse).with_seed(3)).unwrap();
    let spec = MonotoneSpec::increasing(&[0]).unwrap();
    let test: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 + 0.5) / 40.0]).collect();
    let mut cfg = CglConfig::new(6, TrainConfig::new(8, 20, 0.005, Loss::Mse).with_seed(5));
    cfg.selection = Selection::MinCounterexamples;
    let out = cgl_train(&baseline, &spec, &data, &test, &cfg).unwrap();
    let before = out.history[0].test_ce_count;
    let after = out.history[out.selected_iteration].test_ce_count;
    assert!(before > 0, "baseline should overfit the noise into non-monotone bumps");
    assert!(after <= before, "{:?}", out.history);
}
