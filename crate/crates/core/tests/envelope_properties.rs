use monoenv_core::envelope::{Envelope, EnvelopeMode};
use monoenv_core::nn::{Activation, Direction, InputBox, Layer, MonotoneFeature, MonotoneSpec, Network, OutputKind};
use monoenv_core::reference::{random_network, three_peaks};
use monoenv_core::solver::{find_pair_counterexample, line_extremum_exact, BoxQuery, PairMode, Sense, SolverConfig};
use proptest::prelude::*;

const EPS: f64 = 1e-6;

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

/// `x'` dominating `x` along the spec: moved toward the declared direction on
/// monotone features, equal elsewhere.
fn dominating(x: &[f64], spec: &MonotoneSpec, steps: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for f in spec.entries() {
        let i = f.index;
        y[i] = match f.direction {
            Direction::Increasing => x[i] + (1.0 - x[i]) * steps[i],
            Direction::Decreasing => x[i] * (1.0 - steps[i]),
        };
    }
    y
}

fn random_case() -> impl Strategy<Value = (Network, MonotoneSpec)> {
    (1usize..=3, 2usize..=16, any::<u64>(), any::<bool>(), prop::collection::vec((any::<bool>(), any::<bool>()), 3))
        .prop_map(|(d, h, seed, deep, mask)| {
            let widths = if deep { vec![h / 2, h - h / 2] } else { vec![h] };
            (random_network(seed, d, &widths), spec_from(d, &mask))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn envelopes_are_monotone((net, spec) in random_case(),
                              pairs in prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 3), prop::collection::vec(0.0f64..=1.0, 3)), 20)) {
        let env = Envelope::new(&net, &spec, &SolverConfig::default()).unwrap();
        let d = net.input_dim();
        for (x, steps) in &pairs {
            let x = &x[..d];
            let y = dominating(x, &spec, steps);
            let ux = env.predict(x, EnvelopeMode::Upper).unwrap().value;
            let uy = env.predict(&y, EnvelopeMode::Upper).unwrap().value;
            prop_assert!(ux <= uy + 2.0 * EPS, "upper {ux} at {x:?} > {uy} at {y:?}");
            let lx = env.predict(x, EnvelopeMode::Lower).unwrap().value;
            let ly = env.predict(&y, EnvelopeMode::Lower).unwrap().value;
            prop_assert!(lx <= ly + 2.0 * EPS, "lower {lx} at {x:?} > {ly} at {y:?}");
        }
    }

    #[test]
    fn envelopes_sandwich_the_network((net, spec) in random_case(), xs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 20)) {
        let env = Envelope::new(&net, &spec, &SolverConfig::default()).unwrap();
        for x in &xs {
            let x = &x[..net.input_dim()];
            let f = net.forward(x).unwrap();
            let up = env.predict(x, EnvelopeMode::Upper).unwrap();
            let lo = env.predict(x, EnvelopeMode::Lower).unwrap();
            prop_assert!(lo.value <= f && f <= up.value + 1e-9);
            for p in [&up, &lo] {
                if let Some(w) = &p.witness {
                    if !p.incomplete {
                        prop_assert!((net.forward(w).unwrap() - p.value).abs() <= 1e-7);
                    }
                } else {
                    prop_assert_eq!(p.value, f);
                }
            }
        }
    }

    #[test]
    fn monotone_networks_are_their_own_envelope(seed in any::<u64>(), d in 1usize..=3,
                                                xs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 10)) {
        // nonnegative weights below the first layer, nonnegative first-layer columns on S
        let base = random_network(seed, d, &[5, 4]);
        let layers: Vec<Layer> = base
            .layers()
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let w: Vec<f64> = l
                    .weights()
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| if k > 0 || j % d == 0 { w.abs() } else { w })
                    .collect();
                Layer::from_flat(l.in_dim(), l.out_dim(), w, l.biases().to_vec(), l.activation()).unwrap()
            })
            .collect();
        let net = Network::new(layers, InputBox::unit(d), OutputKind::Regression).unwrap();
        let cfg = SolverConfig::default();
        let spec = MonotoneSpec::increasing(&[0]).unwrap();
        prop_assert!(find_pair_counterexample(&net, 0, &cfg, PairMode::Any).unwrap().is_monotone());
        let env = Envelope::new(&net, &spec, &cfg).unwrap();
        for x in &xs {
            let x = &x[..d];
            for mode in [EnvelopeMode::Upper, EnvelopeMode::Lower] {
                prop_assert_eq!(env.predict(x, mode).unwrap().value, net.forward(x).unwrap());
            }
        }
    }

    #[test]
    fn envelope_of_envelope_has_no_sampled_violations((net, spec) in random_case(),
                                                      xs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 4)) {
        let env = Envelope::new(&net, &spec, &SolverConfig::default()).unwrap();
        let pts: Vec<Vec<f64>> = xs.iter().map(|x| x[..net.input_dim()].to_vec()).collect();
        for mode in [EnvelopeMode::Upper, EnvelopeMode::Lower] {
            prop_assert_eq!(env.sampled_violations(&pts, mode, 25, 2.0 * EPS).unwrap(), 0);
        }
    }
}

/// Max over single-axis envelope counterexamples, each axis searched alone.
fn per_axis_upper(net: &Network, x: &[f64]) -> f64 {
    let b = net.input_box();
    (0..x.len())
        .map(|i| {
            let q = BoxQuery::at_point(x).with_free(i, b.lower[i], x[i]);
            line_extremum_exact(net, &q, Sense::Max).unwrap().witness_value
        })
        .fold(net.forward(x).unwrap(), f64::max)
}

#[test]
fn per_axis_maxima_break_monotonicity_but_joint_search_does_not() {
    let net = three_peaks();
    let f = |a: f64, b: f64| net.forward(&[a, b]).unwrap();
    assert!(f(3.0, 3.0) > f(1.0, 5.0) && f(1.0, 5.0) > f(7.0, 2.0));

    let (a, b) = ([3.0, 5.0], [7.0, 5.0]);
    let pa = per_axis_upper(&net, &a);
    let pb = per_axis_upper(&net, &b);
    assert_eq!((pa, pb), (3.0, 2.0));
    assert!(pa > pb, "per-axis construction should violate monotonicity here");

    let spec = MonotoneSpec::increasing(&[0, 1]).unwrap();
    let env = Envelope::new(&net, &spec, &SolverConfig::default()).unwrap();
    let ja = env.predict(&a, EnvelopeMode::Upper).unwrap().value;
    let jb = env.predict(&b, EnvelopeMode::Upper).unwrap().value;
    assert!((ja - 3.0).abs() < 1e-6 && (jb - 3.0).abs() < 1e-6);
    assert!(ja <= jb + 2.0 * EPS);
}

#[test]
fn linear_hidden_layers_are_not_accepted() {
    let l1 = Layer::from_rows(vec![vec![1.0]], vec![0.0], Activation::Linear).unwrap();
    let l2 = Layer::from_rows(vec![vec![1.0]], vec![0.0], Activation::Linear).unwrap();
    assert!(Network::new(vec![l1, l2], InputBox::unit(1), OutputKind::Regression).is_err());
}
