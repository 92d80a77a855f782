//! ReLU multilayer perceptrons with a declared input box.
//!
//! A [`Network`] is a stack of dense layers: every hidden layer applies ReLU,
//! the final layer is linear with a single output neuron. The network is
//! immutable once built; training produces new networks.
//!
//! Monotonicity directions are described by a [`MonotoneSpec`]. Decreasing
//! features are turned into increasing ones by [`canonicalize`], which negates
//! the feature's first-layer column and reflects its input interval, so every
//! downstream algorithm only deals with increasing monotonicity.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a point lies inside the input box.
pub const BOX_TOLERANCE: f64 = 1e-9;

/// Axis-aligned input domain `[lower_i, upper_i]` per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = InputBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// The unit cube `[0,1]^d`.
    pub fn unit(d: usize) -> Self {
        InputBox {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Validation(format!(
                "input box has {} lower bounds but {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Validation(format!(
                    "input box interval {i} is not finite: [{l}, {u}]"
                )));
            }
            if l > u {
                return Err(Error::Validation(format!(
                    "input box interval {i} is empty: [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Linear => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    #[serde(rename = "regression")]
    Regression,
    /// Single pre-sigmoid logit for binary classification.
    #[serde(rename = "binary-logit")]
    BinaryLogit,
}

/// Dense layer. Weights are stored row-major with shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl Layer {
    /// Builds a layer from nested rows (`rows[o][i]`).
    pub fn from_rows(rows: Vec<Vec<f64>>, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != in_dim) {
            return Err(Error::Validation("weight rows have unequal lengths".into()));
        }
        Layer::from_flat(in_dim, out_dim, rows.into_iter().flatten().collect(), biases, activation)
    }

    pub fn from_flat(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::Validation("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Validation(format!(
                "expected {} weights for a {out_dim}x{in_dim} layer, got {}",
                in_dim * out_dim,
                weights.len()
            )));
        }
        if biases.len() != out_dim {
            return Err(Error::Validation(format!(
                "expected {out_dim} biases, got {}",
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::Validation("layer parameters must be finite".into()));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Flat row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights[out * self.in_dim + input]
    }

    #[inline]
    pub fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.in_dim..(out + 1) * self.in_dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.in_dim).map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.biases)
    }

    /// `out = W·input + b` (pre-activation).
    #[inline]
    pub(crate) fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate().take(self.out_dim) {
            let row = self.row(o);
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            *slot = acc;
        }
    }
}

/// Result of [`Network::forward_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub output: f64,
    /// Pre-activations of every hidden neuron, layer by layer.
    pub preactivations: Vec<f64>,
}

/// A ReLU MLP with one linear output neuron, defined on a declared input box.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_box: InputBox,
    output_kind: OutputKind,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_box: InputBox, output_kind: OutputKind) -> Result<Self> {
        input_box.validate()?;
        let Some(last) = layers.last() else {
            return Err(Error::Validation("network has no layers".into()));
        };
        if last.out_dim != 1 {
            return Err(Error::Validation(format!(
                "output layer must have a single neuron, has {}",
                last.out_dim
            )));
        }
        if last.activation != Activation::Linear {
            return Err(Error::Validation("output layer activation must be linear".into()));
        }
        for (i, layer) in layers[..layers.len() - 1].iter().enumerate() {
            if layer.activation != Activation::Relu {
                return Err(Error::Validation(format!(
                    "hidden layer {i} has activation {:?}; hidden layers must be relu",
                    layer.activation
                )));
            }
        }
        let mut expected = input_box.dim();
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim != expected {
                return Err(Error::Validation(format!(
                    "layer {i} expects {} inputs but receives {expected}",
                    layer.in_dim
                )));
            }
            expected = layer.out_dim;
        }
        Ok(Network {
            layers,
            input_box,
            output_kind,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output_kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    /// Total number of hidden (ReLU) neurons.
    pub fn hidden_count(&self) -> usize {
        self.hidden_layers().iter().map(Layer::out_dim).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature vector contains non-finite values".into()));
        }
        if !self.input_box.contains(x, BOX_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "point {x:?} lies outside the input box"
            )));
        }
        Ok(())
    }

    /// Evaluates `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let y = self.eval(x);
        if !y.is_finite() {
            return Err(Error::Numeric(format!("non-finite network output at {x:?}")));
        }
        Ok(y)
    }

    /// Evaluates `f(x)` and records every hidden pre-activation.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.hidden_count());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            next.resize(layer.out_dim, 0.0);
            layer.affine_into(&cur, &mut next);
            if li + 1 < self.layers.len() {
                pre.extend_from_slice(&next);
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let output = cur[0];
        if !output.is_finite() || pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite intermediate value at {x:?}")));
        }
        Ok(Trace {
            output,
            preactivations: pre,
        })
    }

    /// Unchecked evaluation used on hot paths. `x` must have the right length.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut a = Vec::with_capacity(self.max_width());
        let mut b = Vec::with_capacity(self.max_width());
        self.eval_with(x, &mut a, &mut b)
    }

    pub(crate) fn eval_with(&self, x: &[f64], cur: &mut Vec<f64>, next: &mut Vec<f64>) -> f64 {
        cur.clear();
        cur.extend_from_slice(x);
        for layer in &self.layers {
            next.resize(layer.out_dim, 0.0);
            layer.affine_into(cur, next);
            if layer.activation == Activation::Relu {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(cur, next);
        }
        cur[0]
    }

    /// Probability for classification networks, raw output for regression.
    pub fn predict_value(&self, logit_or_value: f64) -> f64 {
        match self.output_kind {
            OutputKind::Regression => logit_or_value,
            OutputKind::BinaryLogit => sigmoid(logit_or_value),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Network::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            input_dim: self.input_dim(),
            input_box: self.input_box.clone(),
            output_kind: self.output_kind,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: l.rows(),
                    biases: l.biases.clone(),
                    activation: l.activation,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = parse_document(text)?;
        if doc.input_dim != doc.input_box.dim() {
            return Err(Error::Validation(format!(
                "input_dim {} does not match input box dimension {}",
                doc.input_dim,
                doc.input_box.dim()
            )));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Layer::from_rows(l.weights, l.biases, l.activation))
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers, doc.input_box, doc.output_kind)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parses a JSON document, reporting schema violations with their JSON path.
pub(crate) fn parse_document<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path,
            message: inner.to_string(),
        }
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input_dim: usize,
    input_box: InputBox,
    output_kind: OutputKind,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotoneFeature {
    pub index: usize,
    pub direction: Direction,
}

/// Monotone features with their directions, sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MonotoneSpec {
    #[serde(rename = "features")]
    entries: Vec<MonotoneFeature>,
}

impl MonotoneSpec {
    pub fn new(mut entries: Vec<MonotoneFeature>) -> Result<Self> {
        entries.sort_by_key(|e| e.index);
        let distinct: BTreeSet<usize> = entries.iter().map(|e| e.index).collect();
        if distinct.len() != entries.len() {
            return Err(Error::Validation("monotone feature indices must be distinct".into()));
        }
        Ok(MonotoneSpec { entries })
    }

    /// All listed features increasing.
    pub fn increasing(indices: &[usize]) -> Result<Self> {
        MonotoneSpec::new(
            indices
                .iter()
                .map(|&index| MonotoneFeature {
                    index,
                    direction: Direction::Increasing,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[MonotoneFeature] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.iter().any(|e| e.index == index)
    }

    pub fn direction(&self, index: usize) -> Option<Direction> {
        self.entries
            .iter()
            .find(|e| e.index == index)
            .map(|e| e.direction)
    }

    pub fn is_canonical(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.direction == Direction::Increasing)
    }

    /// Checks indices against the input dimension.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if let Some(bad) = self.entries.iter().find(|e| e.index >= input_dim) {
            return Err(Error::Validation(format!(
                "monotone feature {} out of range for {input_dim} inputs",
                bad.index
            )));
        }
        Ok(())
    }

    /// Same features with every direction flipped.
    pub fn reflected(&self) -> Self {
        MonotoneSpec {
            entries: self
                .entries
                .iter()
                .map(|e| MonotoneFeature {
                    index: e.index,
                    direction: match e.direction {
                        Direction::Increasing => Direction::Decreasing,
                        Direction::Decreasing => Direction::Increasing,
                    },
                })
                .collect(),
        }
    }

    pub fn decreasing_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.direction == Direction::Decreasing)
            .map(|e| e.index)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MonotoneSpec = parse_document(text)?;
        MonotoneSpec::new(raw.entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MonotoneSpec::from_json(&fs::read_to_string(path)?)
    }
}

/// Rewrites `net` so that every decreasing feature of `spec` becomes increasing.
///
/// For each decreasing feature `i` the first-layer column `i` is negated and the
/// box interval `[L, U]` becomes `[-U, -L]`. The transformed network evaluated at
/// a point with coordinate `i` negated equals the original network.
pub fn canonicalize(net: &Network, spec: &MonotoneSpec) -> (Network, MonotoneSpec) {
    let flip = spec.decreasing_indices();
    if flip.is_empty() {
        return (net.clone(), spec.clone());
    }
    let mut out = net.clone();
    for &i in &flip {
        let first = &mut out.layers[0];
        let in_dim = first.in_dim;
        for o in 0..first.out_dim {
            first.weights[o * in_dim + i] = -first.weights[o * in_dim + i];
        }
        let (l, u) = (out.input_box.lower[i], out.input_box.upper[i]);
        out.input_box.lower[i] = -u;
        out.input_box.upper[i] = -l;
    }
    let canonical = MonotoneSpec {
        entries: spec
            .entries
            .iter()
            .map(|e| MonotoneFeature {
                index: e.index,
                direction: Direction::Increasing,
            })
            .collect(),
    };
    (out, canonical)
}

/// Maps a point from the original feature space into the canonical space
/// produced by [`canonicalize`] (and back: the map is an involution).
pub fn reflect_point(x: &[f64], spec: &MonotoneSpec) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in spec.decreasing_indices() {
        out[i] = -out[i];
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        assert_eq!(ramp().forward(&[2.0]).unwrap(), 2.0);
        assert_eq!(tent1d().forward(&[0.5]).unwrap(), 0.5);
        assert_eq!(tent1d().forward(&[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_trace_examples() {
        let t = tent1d().forward_trace(&[0.5]).unwrap();
        assert_eq!(t.output, 0.5);
        assert_eq!(t.preactivations, vec![0.5, -0.5]);
        let t = tent1d().forward_trace(&[2.0]).unwrap();
        assert_eq!(t.output, 0.0);
        assert_eq!(t.preactivations, vec![2.0, 1.0]);
        let t = ramp().forward_trace(&[-1.0]).unwrap();
        assert_eq!(t.output, 0.0);
        assert_eq!(t.preactivations, vec![-1.0]);
    }

    #[test]
    fn house_interpolates_the_seven_points() {
        let net = house1d();
        let ys = [7.0, 13.0, 11.0, 9.0, 10.0, 18.0, 20.0];
        for (k, y) in ys.iter().enumerate() {
            assert!((net.forward(&[(k + 1) as f64]).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        assert!(matches!(ramp().forward(&[1.0, 2.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(ramp().forward(&[3.5]), Err(Error::InvalidInput(_))));
        // within tolerance
        assert!(ramp().forward(&[3.0 + 1e-10]).is_ok());
    }

    #[test]
    fn hidden_layers_must_be_relu() {
        let l1 = Layer::from_rows(vec![vec![1.0]], vec![0.0], Activation::Linear).unwrap();
        let l2 = Layer::from_rows(vec![vec![1.0]], vec![0.0], Activation::Linear).unwrap();
        let err = Network::new(vec![l1, l2], InputBox::unit(1), OutputKind::Regression).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn canonicalize_negates_decreasing_features() {
        let spec = MonotoneSpec::new(vec![MonotoneFeature {
            index: 0,
            direction: Direction::Decreasing,
        }])
        .unwrap();
        let f = neg();
        let (g, cspec) = canonicalize(&f, &spec);
        assert!(cspec.is_canonical());
        assert_eq!(g.input_box().lower, vec![-2.0]);
        assert_eq!(g.input_box().upper, vec![0.0]);
        // g(t) = ReLU(1 + t)
        assert_eq!(g.layers()[0].weight(0, 0), 1.0);
        for k in 0..=20 {
            let x = k as f64 * 0.1;
            assert_eq!(g.forward(&[-x]).unwrap(), f.forward(&[x]).unwrap());
        }
    }

    #[test]
    fn canonicalize_identity_for_increasing_spec() {
        let spec = MonotoneSpec::increasing(&[0]).unwrap();
        let (g, s) = canonicalize(&house1d(), &spec);
        assert_eq!(g, house1d());
        assert_eq!(s, spec);
    }

    #[test]
    fn canonicalize_twice_recovers_original() {
        let spec = MonotoneSpec::new(vec![MonotoneFeature {
            index: 0,
            direction: Direction::Decreasing,
        }])
        .unwrap();
        let (g, cspec) = canonicalize(&house1d(), &spec);
        let (h, back) = canonicalize(&g, &cspec.reflected());
        assert_eq!(h, house1d());
        assert!(back.is_canonical());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.json");
        ramp().save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), ramp());
    }

    #[test]
    fn load_reports_missing_layers() {
        let doc = r#"{"input_dim": 1, "input_box": {"lower": [0], "upper": [1]}, "output_kind": "regression"}"#;
        match Network::from_json(doc) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("layers"), "{message}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_path_of_bad_field() {
        let doc = r#"{"input_dim": 1, "input_box": {"lower": [0], "upper": [1]}, "output_kind": "regression",
            "layers": [{"weights": [[1]], "biases": [0], "activation": "tanh"}]}"#;
        match Network::from_json(doc) {
            Err(Error::Parse { path, .. }) => assert!(path.contains("layers[0].activation"), "{path}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_linear_hidden_layer() {
        let doc = r#"{"input_dim": 1, "input_box": {"lower": [0], "upper": [1]}, "output_kind": "regression",
            "layers": [{"weights": [[1]], "biases": [0], "activation": "linear"},
                       {"weights": [[1]], "biases": [0], "activation": "linear"}]}"#;
        assert!(matches!(Network::from_json(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn monotone_spec_document() {
        let spec = MonotoneSpec::from_json(
            r#"{"features": [{"index": 3, "direction": "decreasing"}, {"index": 1, "direction": "increasing"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.indices(), vec![1, 3]);
        assert_eq!(spec.direction(3), Some(Direction::Decreasing));
        assert!(MonotoneSpec::increasing(&[1, 1]).is_err());
        assert!(spec.validate(3).is_err());
    }

    use crate::reference::random_network as random_net;

    proptest! {
        #[test]
        fn affine_within_one_activation_pattern(seed in 0u64..500, a in prop::collection::vec(0.0f64..1.0, 3),
                                               off in prop::collection::vec(-0.05f64..0.05, 3), t in 0.0f64..1.0) {
            let net = random_net(seed, 3, &[6, 5]);
            let b: Vec<f64> = a.iter().zip(&off).map(|(p, o)| (p + o).clamp(0.0, 1.0)).collect();
            let pattern = |x: &[f64]| -> Vec<bool> {
                net.forward_trace(x).unwrap().preactivations.iter().map(|&v| v > 0.0).collect()
            };
            let m: Vec<f64> = a.iter().zip(&b).map(|(p, q)| t * p + (1.0 - t) * q).collect();
            prop_assume!(pattern(&a) == pattern(&b) && pattern(&m) == pattern(&a));
            let fa = net.forward(&a).unwrap();
            let fb = net.forward(&b).unwrap();
            let fm = net.forward(&m).unwrap();
            let expect = t * fa + (1.0 - t) * fb;
            prop_assert!((fm - expect).abs() <= 1e-7 * expect.abs().max(1.0));
        }

        #[test]
        fn trace_output_equals_forward(seed in 0u64..500, x in prop::collection::vec(0.0f64..1.0, 3)) {
            let net = random_net(seed, 3, &[4, 4]);
            prop_assert_eq!(net.forward_trace(&x).unwrap().output, net.forward(&x).unwrap());
        }

        #[test]
        fn json_round_trip_is_exact(seed in 0u64..200) {
            let net = random_net(seed, 2, &[3]);
            prop_assert_eq!(Network::from_json(&net.to_json().unwrap()).unwrap(), net);
        }

        #[test]
        fn canonicalize_preserves_function(seed in 0u64..300, x in prop::collection::vec(0.0f64..1.0, 3), mask in 0u8..8) {
            let net = random_net(seed, 3, &[5]);
            let entries = (0..3).map(|i| MonotoneFeature {
                index: i,
                direction: if mask & (1 << i) != 0 { Direction::Decreasing } else { Direction::Increasing },
            }).collect();
            let spec = MonotoneSpec::new(entries).unwrap();
            let (g, _) = canonicalize(&net, &spec);
            let y = reflect_point(&x, &spec);
            prop_assert_eq!(g.forward(&y).unwrap(), net.forward(&x).unwrap());
        }
    }
}
