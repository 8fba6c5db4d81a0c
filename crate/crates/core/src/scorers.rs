//! Scoring functions: linear and multi-layer perceptron.
//!
//! Parameters live in one flat vector so that bandit learners can perturb
//! them as a single point in parameter space. Layer `l` stores its weight
//! matrix row-major (one row per output unit) followed by its biases.
//!
//! Inputs are standardized before the first layer (see [`Norm`]). The
//! normalization has no parameters, so gradients stop at the network input.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[serde(alias = "Linear")]
    Linear,
    #[serde(alias = "DNN", alias = "mlp")]
    Dnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Input standardization scope.
///
/// `Layer` standardizes each feature over the documents of one ranked list;
/// `Batch` does the same over every document of the batch, computed on the
/// fly with no running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[serde(alias = "layer_norm", alias = "LayerNorm")]
    Layer,
    #[serde(alias = "batch_norm", alias = "BatchNorm")]
    Batch,
    #[serde(alias = "null")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    #[serde(default)]
    pub hidden_layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub norm: Norm,
}

impl ScorerSpec {
    pub fn linear(norm: Norm) -> Self {
        Self {
            kind: ScorerKind::Linear,
            hidden_layer_sizes: Vec::new(),
            activation: Activation::Elu,
            norm,
        }
    }

    pub fn dnn(hidden_layer_sizes: Vec<usize>, activation: Activation, norm: Norm) -> Self {
        Self {
            kind: ScorerKind::Dnn,
            hidden_layer_sizes,
            activation,
            norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScorerKind::Linear if !self.hidden_layer_sizes.is_empty() => Err(Error::InvalidValue(
                "linear scorer takes no hidden layers".into(),
            )),
            ScorerKind::Dnn if self.hidden_layer_sizes.is_empty() => {
                Err(Error::InvalidValue("dnn scorer needs at least one hidden layer".into()))
            }
            _ if self.hidden_layer_sizes.contains(&0) => {
                Err(Error::InvalidValue("hidden layer sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// `[feature_size, hidden..., 1]`.
    pub fn layer_sizes(&self, feature_size: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layer_sizes.len() + 2);
        sizes.push(feature_size);
        sizes.extend_from_slice(&self.hidden_layer_sizes);
        sizes.push(1);
        sizes
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    values: Vec<f64>,
    layer_sizes: Vec<usize>,
}

impl ScorerParams {
    pub fn from_values(values: Vec<f64>, layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes[0] == 0 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidValue(format!("bad layer sizes {layer_sizes:?}")));
        }
        let expected = param_count(&layer_sizes);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(Self { values, layer_sizes })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn feature_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offsets of each layer's (weights, biases) in the flat vector.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layer_sizes.len() - 1);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            out.push((offset, offset + inputs * outputs));
            offset += inputs * outputs + outputs;
        }
        out
    }
}

/// Fan-in scaled uniform weights (variance `1/fan_in`) and zero biases.
pub fn init(spec: &ScorerSpec, feature_size: usize, rng: &mut Rng) -> Result<ScorerParams> {
    if feature_size == 0 {
        return Err(Error::InvalidValue("feature size must be positive".into()));
    }
    spec.validate()?;
    let layer_sizes = spec.layer_sizes(feature_size);
    let mut values = Vec::with_capacity(param_count(&layer_sizes));
    for w in layer_sizes.windows(2) {
        let (fan_in, outputs) = (w[0], w[1]);
        let bound = (3.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * outputs {
            values.push(rng.random_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, outputs));
    }
    ScorerParams::from_values(values, layer_sizes)
}

fn check_features(features: &[Vec<f64>], feature_size: usize) -> Result<()> {
    for f in features {
        if f.len() != feature_size {
            return Err(Error::DimensionMismatch {
                expected: feature_size,
                actual: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
    }
    Ok(())
}

fn standardize(rows: &mut [Vec<f64>]) {
    let n = rows.len();
    if n == 0 {
        return;
    }
    let dim = rows[0].len();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(STD_FLOOR);
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / std;
        }
    }
}

/// Applies the input normalization to a batch of ranked lists.
pub fn normalize(norm: Norm, lists: &[&[Vec<f64>]]) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = lists.iter().map(|l| l.to_vec()).collect();
    match norm {
        Norm::None => {}
        Norm::Layer => out.iter_mut().for_each(|l| standardize(l)),
        Norm::Batch => {
            let mut flat: Vec<Vec<f64>> = out.iter().flatten().cloned().collect();
            standardize(&mut flat);
            let mut it = flat.into_iter();
            for list in out.iter_mut() {
                for row in list.iter_mut() {
                    *row = it.next().unwrap();
                }
            }
        }
    }
    out
}

struct DocTrace {
    /// Per layer input activations (layer 0 = normalized features).
    activations: Vec<Vec<f64>>,
    /// Per hidden layer pre-activations.
    pre: Vec<Vec<f64>>,
}

fn run_network(params: &ScorerParams, activation: Activation, x: &[f64], trace: bool) -> (f64, Option<DocTrace>) {
    let offsets = params.layer_offsets();
    let sizes = params.layer_sizes();
    let values = params.values();
    let last = offsets.len() - 1;
    let mut activations = Vec::new();
    let mut pres = Vec::new();
    let mut current = x.to_vec();
    for (l, &(w_off, b_off)) in offsets.iter().enumerate() {
        let (inputs, outputs) = (sizes[l], sizes[l + 1]);
        let mut z = values[b_off..b_off + outputs].to_vec();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &values[w_off + o * inputs..w_off + (o + 1) * inputs];
            *zo += row.iter().zip(&current).map(|(w, a)| w * a).sum::<f64>();
        }
        if l == last {
            if trace {
                activations.push(current);
            }
            return (
                z[0],
                trace.then_some(DocTrace {
                    activations,
                    pre: pres,
                }),
            );
        }
        let a: Vec<f64> = z.iter().map(|&v| activation.apply(v)).collect();
        if trace {
            activations.push(std::mem::replace(&mut current, a));
            pres.push(z);
        } else {
            current = a;
        }
    }
    unreachable!("network has an output layer")
}

fn prepare(params: &ScorerParams, spec: &ScorerSpec, lists: &[&[Vec<f64>]]) -> Result<Vec<Vec<Vec<f64>>>> {
    spec.validate()?;
    let expected = spec.layer_sizes(params.feature_size());
    if expected != params.layer_sizes() {
        return Err(Error::Contract(format!(
            "parameters shaped {:?} do not match scorer layers {expected:?}",
            params.layer_sizes()
        )));
    }
    for list in lists {
        check_features(list, params.feature_size())?;
    }
    Ok(normalize(spec.norm, lists))
}

/// Scores one ranked list.
pub fn forward(params: &ScorerParams, spec: &ScorerSpec, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(forward_batch(params, spec, &[features])?.pop().unwrap())
}

/// Scores several lists; with `Norm::Batch` statistics span all of them.
pub fn forward_batch(params: &ScorerParams, spec: &ScorerSpec, lists: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
    let normalized = prepare(params, spec, lists)?;
    Ok(normalized
        .iter()
        .map(|list| list.iter().map(|x| run_network(params, spec.activation, x, false).0).collect())
        .collect())
}

/// Scores of one list plus the cached state needed for backpropagation.
pub struct ScoreGrad<'a> {
    pub scores: Vec<f64>,
    params: &'a ScorerParams,
    activation: Activation,
    traces: Vec<DocTrace>,
}

impl ScoreGrad<'_> {
    /// `d(upstream . scores) / d theta`.
    pub fn pullback(&self, upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.pullback_into(upstream, &mut grad);
        grad
    }

    /// Accumulates the pullback of `upstream` into `grad`.
    pub fn pullback_into(&self, upstream: &[f64], grad: &mut [f64]) {
        assert_eq!(upstream.len(), self.scores.len(), "upstream length");
        assert_eq!(grad.len(), self.params.len(), "gradient length");
        let offsets = self.params.layer_offsets();
        let sizes = self.params.layer_sizes();
        let values = self.params.values();
        for (trace, &u) in self.traces.iter().zip(upstream) {
            if u == 0.0 {
                continue;
            }
            // delta holds dL/dz for the current layer's outputs.
            let mut delta = vec![u];
            for l in (0..offsets.len()).rev() {
                let (w_off, b_off) = offsets[l];
                let (inputs, outputs) = (sizes[l], sizes[l + 1]);
                let input = &trace.activations[l];
                for o in 0..outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += d;
                    let row = &mut grad[w_off + o * inputs..w_off + (o + 1) * inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let pre = &trace.pre[l - 1];
                let mut next = vec![0.0; inputs];
                for o in 0..outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &values[w_off + o * inputs..w_off + (o + 1) * inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (i, n) in next.iter_mut().enumerate() {
                    *n *= self.activation.derivative(pre[i], input[i]);
                }
                delta = next;
            }
        }
    }
}

pub fn forward_with_grad<'a>(
    params: &'a ScorerParams,
    spec: &ScorerSpec,
    features: &[Vec<f64>],
) -> Result<ScoreGrad<'a>> {
    Ok(forward_with_grad_batch(params, spec, &[features])?.pop().unwrap())
}

pub fn forward_with_grad_batch<'a>(
    params: &'a ScorerParams,
    spec: &ScorerSpec,
    lists: &[&[Vec<f64>]],
) -> Result<Vec<ScoreGrad<'a>>> {
    let normalized = prepare(params, spec, lists)?;
    Ok(normalized
        .iter()
        .map(|list| {
            let (scores, traces) = list
                .iter()
                .map(|x| {
                    let (s, t) = run_network(params, spec.activation, x, true);
                    (s, t.unwrap())
                })
                .unzip();
            ScoreGrad {
                scores,
                params,
                activation: spec.activation,
                traces,
            }
        })
        .collect())
}

/// A direction drawn uniformly from the unit sphere in `dim` dimensions.
pub fn sample_unit_direction(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `params + delta * u` for a uniformly random unit vector `u`.
pub fn perturb(params: &ScorerParams, delta: f64, rng: &mut Rng) -> (ScorerParams, Vec<f64>) {
    let direction = sample_unit_direction(params.len(), rng);
    (shift(params, &direction, delta), direction)
}

pub(crate) fn shift(params: &ScorerParams, direction: &[f64], step: f64) -> ScorerParams {
    let mut out = params.clone();
    for (v, d) in out.values.iter_mut().zip(direction) {
        *v += step * d;
    }
    out
}

/// `params + alpha * direction` for a unit `direction`.
pub fn update_toward(params: &ScorerParams, direction: &[f64], alpha: f64) -> Result<ScorerParams> {
    if direction.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: direction.len(),
        });
    }
    let norm = l2_norm(direction);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("direction has norm {norm}, expected 1")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidValue(format!("step size must be non-negative, got {alpha}")));
    }
    Ok(shift(params, direction, alpha))
}

/// A scorer specification together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingModel {
    pub spec: ScorerSpec,
    pub params: ScorerParams,
}

impl RankingModel {
    pub fn init(spec: ScorerSpec, feature_size: usize, rng: &mut Rng) -> Result<Self> {
        let params = init(&spec, feature_size, rng)?;
        Ok(Self { spec, params })
    }

    pub fn score(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        forward(&self.params, &self.spec, features)
    }

    pub fn score_batch(&self, lists: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
        forward_batch(&self.params, &self.spec, lists)
    }

    pub fn with_params(&self, params: ScorerParams) -> Self {
        Self {
            spec: self.spec.clone(),
            params,
        }
    }
}
