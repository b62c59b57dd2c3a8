//! The per-point feature extractor, its segmentation head, and their exact
//! reverse-mode gradients.
//!
//! The extractor is a small leaky-rectifier perceptron whose output rows are
//! L2-normalized; the head is a linear map to primitive logits followed by a
//! row softmax. Gradients are written by hand and checked against central
//! differences in the tests.

mod inputs;
mod optim;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inputs::{build_inputs, InputSpec, NeighborIndex};
pub use optim::{Sgd, SgdSettings};

/// Rows whose norm falls below this pass through the normalization untouched.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// in × out.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform He-style initialization with zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..bound));
        Linear {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub layers: Vec<Linear>,
    pub leaky_slope: f64,
}

impl ExtractorParams {
    pub fn new(input_dim: usize, hidden: &[usize], feature_dim: usize, leaky_slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let layers = dims
            .windows(2)
            .map(|w| Linear::random(w[0], w[1], &mut rng))
            .collect();
        ExtractorParams { layers, leaky_slope }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("extractor has no layers"));
        }
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::config("extractor layer shapes do not chain"));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::config("bias length does not match layer width"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub linear: Linear,
}

impl HeadParams {
    pub fn new(feature_dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_4EAD);
        HeadParams {
            linear: Linear::random(feature_dim, classes, &mut rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.linear.output_dim()
    }
}

/// Extractor plus head. Gradients use the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub extractor: ExtractorParams,
    pub head: HeadParams,
}

impl Model {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        classes: usize,
        leaky_slope: f64,
        seed: u64,
    ) -> Self {
        Model {
            extractor: ExtractorParams::new(input_dim, hidden, feature_dim, leaky_slope, seed),
            head: HeadParams::new(feature_dim, classes, seed),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |l: &Linear| Linear::zeros(l.input_dim(), l.output_dim());
        Model {
            extractor: ExtractorParams {
                layers: self.extractor.layers.iter().map(zero).collect(),
                leaky_slope: self.extractor.leaky_slope,
            },
            head: HeadParams {
                linear: zero(&self.head.linear),
            },
        }
    }

    fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.extractor.layers.iter().chain(std::iter::once(&self.head.linear))
    }

    fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.extractor
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head.linear))
    }

    /// Every parameter tensor, flattened, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.linears()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.linears_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (the first is the network input).
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre_activations: Vec<Array2<f64>>,
    /// Row norms of the last layer output, before normalization.
    norms: Array1<f64>,
    /// Normalized output rows.
    features: Array2<f64>,
}

impl ForwardCache {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

fn leaky_grad(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Runs the extractor. Output rows are unit-norm, except exact-zero rows.
pub fn extractor_forward(params: &ExtractorParams, inputs: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    params.validate()?;
    if inputs.ncols() != params.input_dim() {
        return Err(Error::config(format!(
            "extractor expects {} input channels, got {}",
            params.input_dim(),
            inputs.ncols()
        )));
    }
    let last = params.layers.len() - 1;
    let mut layer_inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut x = inputs.clone();
    let mut raw = None;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = layer.apply(&x);
        layer_inputs.push(x);
        if l == last {
            raw = Some(z);
            break;
        }
        x = z.mapv(|v| leaky(v, params.leaky_slope));
        pre_activations.push(z);
    }
    let mut features = raw.expect("at least one layer");
    let mut norms = Array1::zeros(features.nrows());
    for (mut row, norm) in features.rows_mut().into_iter().zip(norms.iter_mut()) {
        let n = row.dot(&row).sqrt();
        *norm = n;
        if n >= NORM_GUARD {
            row /= n;
        }
    }
    let cache = ForwardCache {
        layer_inputs,
        pre_activations,
        norms,
        features: features.clone(),
    };
    Ok((features, cache))
}

pub fn head_logits(head: &HeadParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != head.linear.input_dim() {
        return Err(Error::config(format!(
            "head expects {} feature channels, got {}",
            head.linear.input_dim(),
            features.ncols()
        )));
    }
    Ok(head.linear.apply(features))
}

/// Numerically stable row softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Row-softmax probabilities over primitives.
pub fn head_forward(head: &HeadParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(softmax_rows(&head_logits(head, features)?))
}

/// Reverse pass through head and extractor.
///
/// `grad_logits` is the upstream gradient on the head logits and
/// `grad_features` the gradient reaching the normalized features from the
/// prototype losses; both streams are summed at the feature layer.
pub fn backward(
    model: &Model,
    cache: &ForwardCache,
    grad_logits: &Array2<f64>,
    grad_features: &Array2<f64>,
) -> Model {
    let mut grads = model.zeros_like();
    let head = &model.head.linear;
    grads.head.linear.weight = cache.features.t().dot(grad_logits);
    grads.head.linear.bias = grad_logits.sum_axis(Axis(0));

    let mut g = grad_features + &grad_logits.dot(&head.weight.t());
    for ((mut grow, frow), &norm) in g
        .rows_mut()
        .into_iter()
        .zip(cache.features.rows())
        .zip(cache.norms.iter())
    {
        if norm >= NORM_GUARD {
            let proj = grow.dot(&frow);
            grow.zip_mut_with(&frow, |gv, &fv| *gv = (*gv - fv * proj) / norm);
        }
    }

    let slope = model.extractor.leaky_slope;
    for l in (0..model.extractor.layers.len()).rev() {
        let x = &cache.layer_inputs[l];
        grads.extractor.layers[l].weight = x.t().dot(&g);
        grads.extractor.layers[l].bias = g.sum_axis(Axis(0));
        if l > 0 {
            let mut ga = g.dot(&model.extractor.layers[l].weight.t());
            ga.zip_mut_with(&cache.pre_activations[l - 1], |gv, &z| *gv *= leaky_grad(z, slope));
            g = ga;
        }
    }
    grads
}

/// Mean feature of every superpoint; ids must be contiguous `0..S`.
pub fn pool_superpoints(features: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    let s = ids.iter().max().map_or(0, |m| m + 1);
    let mut pooled = Array2::zeros((s, features.ncols()));
    let mut counts = vec![0usize; s];
    for (row, &id) in features.rows().into_iter().zip(ids) {
        let mut dst = pooled.row_mut(id);
        dst += &row;
        counts[id] += 1;
    }
    for (mut row, &c) in pooled.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    pooled
}

/// Copies each superpoint row back onto its member points.
pub fn broadcast_superpoints(pooled: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((ids.len(), pooled.ncols()), |(i, d)| pooled[[ids[i], d]])
}
