//! Small hand-built networks with known extrema, plus a seeded random
//! network generator. Used by tests, examples and the command-line tools.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Activation, InputBox, Layer, Network, OutputKind};

/// One-input, one-hidden-layer network: `sum_k out_w[k] * relu(w_k x + b_k) + out_b` on `[lo, hi]`.
pub fn one_input(hidden: &[(f64, f64)], out_w: &[f64], out_b: f64, lo: f64, hi: f64) -> Network {
    let l1 = Layer::from_rows(
        hidden.iter().map(|&(w, _)| vec![w]).collect(),
        hidden.iter().map(|&(_, b)| b).collect(),
        Activation::Relu,
    )
    .expect("valid hidden layer");
    let l2 = Layer::from_rows(vec![out_w.to_vec()], vec![out_b], Activation::Linear).expect("valid output layer");
    Network::new(
        vec![l1, l2],
        InputBox::new(vec![lo], vec![hi]).expect("valid box"),
        OutputKind::Regression,
    )
    .expect("valid network")
}

/// `relu(x)` on `[-3, 3]`.
pub fn ramp() -> Network {
    one_input(&[(1.0, 0.0)], &[1.0], 0.0, -3.0, 3.0)
}

/// `relu(x) - 2 relu(x - 1)` on `[0, 2]`: rises to 1 at `x = 1`, falls back to 0.
pub fn tent1d() -> Network {
    one_input(&[(1.0, 0.0), (1.0, -1.0)], &[1.0, -2.0], 0.0, 0.0, 2.0)
}

/// `tent(x0) + tent(x1)` on `[0, 2]^2`.
pub fn tent2d() -> Network {
    let l1 = Layer::from_rows(
        vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
        vec![0.0, -1.0, 0.0, -1.0],
        Activation::Relu,
    )
    .expect("valid hidden layer");
    let l2 = Layer::from_rows(vec![vec![1.0, -2.0, 1.0, -2.0]], vec![0.0], Activation::Linear)
        .expect("valid output layer");
    Network::new(
        vec![l1, l2],
        InputBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).expect("valid box"),
        OutputKind::Regression,
    )
    .expect("valid network")
}

/// Piecewise-linear interpolant of
/// `(1,7), (2,13), (3,11), (4,9), (5,10), (6,18), (7,20)` on `[1, 7]`,
/// with one hidden neuron `relu(x - k)` per kink `k = 1..6`.
pub fn house1d() -> Network {
    one_input(
        &[(1.0, -1.0), (1.0, -2.0), (1.0, -3.0), (1.0, -4.0), (1.0, -5.0), (1.0, -6.0)],
        &[6.0, -8.0, 0.0, 3.0, 7.0, -6.0],
        7.0,
        1.0,
        7.0,
    )
}

/// `relu(1 - x)` on `[0, 2]`: nonincreasing.
pub fn falling() -> Network {
    one_input(&[(-1.0, 1.0)], &[1.0], 0.0, 0.0, 2.0)
}

/// Sum of L1 pyramids `h * relu(1 - |x0 - c0| - |x1 - c1|)` over `[0, 8]^2`
/// with peaks 3 at (3,3), 2 at (1,5) and 1 at (7,2).
///
/// At (3,5) the best dominated points along each single axis are (1,5) and
/// (3,3); at (7,5) they are (1,5) and (7,2). Taking the max of those per-axis
/// maxima gives 3 at (3,5) but only 2 at (7,5), although (3,5) ⪯ (7,5).
pub fn three_peaks() -> Network {
    let peaks = [((3.0, 3.0), 3.0), ((1.0, 5.0), 2.0), ((7.0, 2.0), 1.0)];
    let mut rows1 = Vec::new();
    let mut b1 = Vec::new();
    for &((c0, c1), _) in &peaks {
        // relu(x0 - c0), relu(c0 - x0), relu(x1 - c1), relu(c1 - x1)
        rows1.extend([vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
        b1.extend([-c0, c0, -c1, c1]);
    }
    let n = rows1.len();
    let mut rows2 = Vec::new();
    for k in 0..peaks.len() {
        let mut row = vec![0.0; n];
        row[4 * k..4 * k + 4].fill(-1.0);
        rows2.push(row);
    }
    let l1 = Layer::from_rows(rows1, b1, Activation::Relu).expect("valid layer");
    let l2 = Layer::from_rows(rows2, vec![1.0; peaks.len()], Activation::Relu).expect("valid layer");
    let l3 = Layer::from_rows(vec![peaks.iter().map(|p| p.1).collect()], vec![0.0], Activation::Linear)
        .expect("valid layer");
    Network::new(
        vec![l1, l2, l3],
        InputBox::new(vec![0.0, 0.0], vec![8.0, 8.0]).expect("valid box"),
        OutputKind::Regression,
    )
    .expect("valid network")
}

/// Random network on `[0, 1]^d` with weights uniform in `[-1, 1]` and biases
/// uniform in `[-0.5, 0.5]`.
pub fn random_network(seed: u64, d: usize, widths: &[usize]) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(widths.len() + 1);
    let mut prev = d;
    for (i, &w) in widths.iter().chain(std::iter::once(&1)).enumerate() {
        let act = if i == widths.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        let ws = (0..w * prev).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let bs = (0..w).map(|_| rng.gen_range(-0.5..=0.5)).collect();
        layers.push(Layer::from_flat(prev, w, ws, bs, act).expect("valid layer"));
        prev = w;
    }
    Network::new(layers, InputBox::unit(d), OutputKind::Regression).expect("valid network")
}
