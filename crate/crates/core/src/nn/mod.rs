//! Dense feed-forward network engine.
//!
//! Networks are ReLU MLPs with a single sigmoid output unit. The forward pass
//! keeps every intermediate activation so that the hidden representation of
//! any layer can be read back (the mapping-based leakage surface) and so that
//! [`Mlp::backward`] can compute exact gradients of the mean batch loss.

mod serialize;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use serialize::{fmt_f64, parse_floats, read_mlp, write_mlp};

/// Lower/upper clamp applied to output probabilities.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    #[default]
    SigmoidScalar,
}

/// Architecture of a network: input width, hidden widths, dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    activation: Activation,
    output: OutputHead,
    dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: impl Into<Vec<usize>>) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims: hidden_dims.into(),
            activation: Activation::Relu,
            output: OutputHead::SigmoidScalar,
            dropout_rate: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        self.dropout_rate = rate;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "hidden_dims must be non-empty and positive, got {:?}",
                self.hidden_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output(&self) -> OutputHead {
        self.output
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// `(out, in)` shape of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((1, fan_in));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// One affine layer: `weights` is `out × in`, `bias` has length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// A flat, ordered view over a list of layers: every weight row-major, then
/// the bias, layer by layer. Used for flattening, optimizer loops and the
/// text serializer.
pub trait ParamLayers {
    fn layers(&self) -> &[Layer];
    fn layers_mut(&mut self) -> &mut [Layer];

    fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.layers() {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in self.layers_mut() {
            layer.weights.iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
    }

    fn congruent_with(&self, other: &[Layer]) -> bool {
        self.layers().len() == other.len()
            && self.layers().iter().zip(other).all(|(a, b)| a.same_shape(b))
    }

    fn all_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Feed-forward network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl ParamLayers for Mlp {
    fn layers(&self) -> &[Layer] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Forward-pass mode. `Train` draws inverted-dropout masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Everything the forward pass computed for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    input: Array2<f64>,
    /// Pre-activation of every layer, output layer last (`batch × 1`).
    pre: Vec<Array2<f64>>,
    /// Hidden outputs after ReLU and dropout, one per hidden layer.
    hidden: Vec<Array2<f64>>,
    /// Scaled keep-masks (`0` or `1/(1-p)`), present only in train mode with p > 0.
    masks: Vec<Option<Array2<f64>>>,
    probs: Vec<f64>,
}

impl Activations {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Output of hidden layer `layer` (after ReLU and any dropout).
    pub fn hidden(&self, layer: usize) -> Option<&Array2<f64>> {
        self.hidden.get(layer)
    }

    pub fn pre_activation(&self, layer: usize) -> Option<&Array2<f64>> {
        self.pre.get(layer)
    }

    pub fn mask(&self, layer: usize) -> Option<&Array2<f64>> {
        self.masks.get(layer).and_then(Option::as_ref)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_hidden(mut self, layer: usize) -> Option<Array2<f64>> {
        if layer < self.hidden.len() {
            Some(self.hidden.swap_remove(layer))
        } else {
            None
        }
    }

    /// The activations of a single batch row, as if it had been forwarded alone.
    pub fn row(&self, i: usize) -> Activations {
        let pick = |m: &Array2<f64>| m.slice(s![i..i + 1, ..]).to_owned();
        Activations {
            input: pick(&self.input),
            pre: self.pre.iter().map(pick).collect(),
            hidden: self.hidden.iter().map(pick).collect(),
            masks: self.masks.iter().map(|m| m.as_ref().map(pick)).collect(),
            probs: vec![self.probs[i]],
        }
    }
}

/// Partial derivatives of a scalar loss, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

impl ParamLayers for Gradients {
    fn layers(&self) -> &[Layer] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

impl Gradients {
    pub fn zeros_like(layers: &[Layer]) -> Self {
        Gradients {
            layers: layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Gradients { layers }
    }

    /// Rebuilds gradients with the layout of `like` from a flat vector.
    pub fn from_flat(like: &[Layer], flat: &[f64]) -> Result<Self> {
        let mut g = Gradients::zeros_like(like);
        if flat.len() != g.param_count() {
            return Err(Error::shape("flat gradient", g.param_count(), flat.len()));
        }
        let mut it = flat.iter();
        g.for_each_param_mut(|v| *v = *it.next().unwrap());
        Ok(g)
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_param_mut(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if !self.congruent_with(other.layers()) {
            return Err(Error::shape(
                "gradient accumulation",
                self.param_count(),
                other.param_count(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
        Ok(())
    }

    /// In-order sum divided by the count. This is the reference mean that
    /// DP-SGD reduces to when neither clipping nor noise is active.
    pub fn mean(grads: &[Gradients]) -> Result<Gradients> {
        let first = grads
            .first()
            .ok_or_else(|| Error::Data("mean of an empty gradient list".into()))?;
        let mut acc = first.clone();
        for g in &grads[1..] {
            acc.add_assign(g)?;
        }
        let n = grads.len() as f64;
        acc.for_each_param_mut(|v| *v /= n);
        Ok(acc)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic in `(spec, seed)`.
    pub fn init(spec: &MlpSpec, seed: u64) -> Mlp {
        let mut rng = seed::rng_for(seed, "mlp-init", 0);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(out_dim, in_dim)| {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Layer {
                    weights: Array2::from_shape_simple_fn((out_dim, in_dim), || {
                        dist.sample(&mut rng)
                    }),
                    bias: Array1::zeros(out_dim),
                }
            })
            .collect();
        Mlp {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Mlp {
        Mlp {
            spec: spec.clone(),
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(o, i)| Layer::zeros(o, i))
                .collect(),
        }
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Mlp> {
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::shape("layer count", shapes.len(), layers.len()));
        }
        for ((o, i), layer) in shapes.iter().zip(&layers) {
            if layer.weights.dim() != (*o, *i) {
                return Err(Error::shape("layer weights", o * i, layer.weights.len()));
            }
            if layer.bias.len() != *o {
                return Err(Error::shape("layer bias", *o, layer.bias.len()));
            }
        }
        let mlp = Mlp { spec, layers };
        if !mlp.all_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(mlp)
    }

    /// Same parameters with a different spec dropout rate.
    pub fn with_dropout(&self, rate: f64) -> Result<Mlp> {
        Ok(Mlp {
            spec: self.spec.clone().with_dropout(rate)?,
            layers: self.layers.clone(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Overwrites the parameters from a flat vector in [`ParamLayers::flatten`] order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("flat parameters", self.param_count(), flat.len()));
        }
        let mut it = flat.iter();
        self.for_each_param_mut(|v| *v = *it.next().unwrap());
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>, mode: Mode) -> Result<Activations> {
        if batch.ncols() != self.spec.input_dim {
            return Err(Error::shape(
                "forward input columns",
                self.spec.input_dim,
                batch.ncols(),
            ));
        }
        let n_hidden = self.spec.hidden_dims.len();
        let rate = self.spec.dropout_rate;
        let mut pre = Vec::with_capacity(n_hidden + 1);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(n_hidden);
        let mut masks = Vec::with_capacity(n_hidden);
        for (idx, layer) in self.layers[..n_hidden].iter().enumerate() {
            let input = if idx == 0 {
                batch
            } else {
                hidden[idx - 1_usize].view()
            };
            let z = affine(input, layer);
            let mut h = z.mapv(relu);
            let mask = match mode {
                Mode::Train { seed } if rate > 0.0 => {
                    let mut rng = seed::rng_for(seed, "dropout", idx as u64);
                    let keep = 1.0 / (1.0 - rate);
                    let m = Array2::from_shape_simple_fn(h.dim(), || {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            hidden.push(h);
            masks.push(mask);
        }
        let last_input = match hidden.last() {
            Some(h) => h.view(),
            None => batch,
        };
        let logits = affine(last_input, &self.layers[n_hidden]);
        let probs = logits
            .column(0)
            .iter()
            .map(|&z| sigmoid(z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect();
        pre.push(logits);
        Ok(Activations {
            input: batch.to_owned(),
            pre,
            hidden,
            masks,
            probs,
        })
    }

    /// Eval-mode output probabilities.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward(batch, Mode::Eval)?.probs)
    }

    /// Eval-mode output of hidden layer `layer`.
    pub fn hidden_features(&self, batch: ArrayView2<f64>, layer: usize) -> Result<Array2<f64>> {
        let n = self.spec.hidden_dims.len();
        if layer >= n {
            return Err(Error::shape("hidden layer index", n, layer));
        }
        Ok(self
            .forward(batch, Mode::Eval)?
            .into_hidden(layer)
            .expect("checked layer index"))
    }

    /// Gradients of the loss whose derivative w.r.t. the output
    /// probabilities is `d_probs`.
    pub fn backward(&self, acts: &Activations, d_probs: &[f64]) -> Result<Gradients> {
        self.backward_with(acts, d_probs, None)
    }

    /// Like [`Mlp::backward`], with an additional upstream gradient
    /// `d_hidden` w.r.t. the (post-dropout) output of hidden layer `layer`.
    /// This is how auxiliary losses on a hidden representation enter.
    pub fn backward_with(
        &self,
        acts: &Activations,
        d_probs: &[f64],
        injected: Option<(usize, ArrayView2<f64>)>,
    ) -> Result<Gradients> {
        let n = acts.batch_size();
        let n_hidden = self.spec.hidden_dims.len();
        if acts.input.ncols() != self.spec.input_dim
            || acts.hidden.len() != n_hidden
            || acts
                .hidden
                .iter()
                .zip(&self.spec.hidden_dims)
                .any(|(h, &w)| h.ncols() != w)
        {
            return Err(Error::shape(
                "activations vs model",
                self.spec.param_count(),
                acts.input.ncols(),
            ));
        }
        if d_probs.len() != n {
            return Err(Error::shape("dLoss/dProbs length", n, d_probs.len()));
        }
        if let Some((layer, g)) = &injected {
            if *layer >= n_hidden {
                return Err(Error::shape("injected hidden layer", n_hidden, *layer));
            }
            if g.dim() != acts.hidden[*layer].dim() {
                return Err(Error::shape(
                    "injected hidden gradient",
                    acts.hidden[*layer].len(),
                    g.len(),
                ));
            }
        }

        let mut grads = Vec::with_capacity(n_hidden + 1);
        // dL/dz at the output; the clamp is treated as identity so that a
        // saturated unit still receives a learning signal.
        let mut delta = Array2::from_shape_fn((n, 1), |(i, _)| {
            let s = sigmoid(acts.pre[n_hidden][[i, 0]]);
            d_probs[i] * s * (1.0 - s)
        });
        for idx in (0..=n_hidden).rev() {
            let input = if idx == 0 {
                acts.input.view()
            } else {
                acts.hidden[idx - 1].view()
            };
            grads.push(Layer {
                weights: delta.t().dot(&input),
                bias: delta.sum_axis(Axis(0)),
            });
            if idx == 0 {
                break;
            }
            let below = idx - 1;
            let mut d_hidden = delta.dot(&self.layers[idx].weights);
            if let Some((layer, g)) = &injected {
                if *layer == below {
                    d_hidden += g;
                }
            }
            if let Some(mask) = &acts.masks[below] {
                d_hidden *= mask;
            }
            Zip::from(&mut d_hidden)
                .and(&acts.pre[below])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = d_hidden;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Mean BCE loss and its gradient on a labeled batch.
    pub fn loss_and_grad(
        &self,
        batch: ArrayView2<f64>,
        labels: &[u8],
        mode: Mode,
    ) -> Result<(f64, Gradients)> {
        let acts = self.forward(batch, mode)?;
        let (loss, d_probs) = bce_loss(&acts.probs, labels)?;
        Ok((loss, self.backward(&acts, &d_probs)?))
    }
}

fn affine(input: ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t());
    z += &layer.bias.view().insert_axis(Axis(0));
    z
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
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

/// Mean binary cross-entropy and its derivative w.r.t. each probability.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(Error::shape("bce labels", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::shape("bce batch", 1, 0));
    }
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if y == 1 {
                loss -= p.ln();
                -1.0 / p / n
            } else {
                loss -= (1.0 - p).ln();
                1.0 / (1.0 - p) / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Max relative error between analytic gradients and central differences.
pub fn grad_check(mlp: &Mlp, batch: ArrayView2<f64>, labels: &[u8], eps: f64) -> Result<f64> {
    let (_, analytic) = mlp.loss_and_grad(batch, labels, Mode::Eval)?;
    grad_check_against(mlp, batch, labels, eps, &analytic)
}

/// [`grad_check`] against a caller-supplied analytic gradient.
pub fn grad_check_against(
    mlp: &Mlp,
    batch: ArrayView2<f64>,
    labels: &[u8],
    eps: f64,
    analytic: &Gradients,
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Config(format!("grad_check eps must be in (0, 1e-3], got {eps}")));
    }
    if !analytic.congruent_with(mlp.layers()) {
        return Err(Error::shape(
            "grad_check gradient",
            mlp.param_count(),
            analytic.param_count(),
        ));
    }
    let analytic = analytic.flatten();
    let base = mlp.flatten();
    let loss_at = |params: &[f64]| -> Result<f64> {
        let mut probe = mlp.clone();
        probe.set_flat(params)?;
        let probs = probe.predict(batch)?;
        Ok(bce_loss(&probs, labels)?.0)
    };
    let mut worst = 0.0_f64;
    let mut params = base.clone();
    for (i, &a) in analytic.iter().enumerate() {
        params[i] = base[i] + eps;
        let up = loss_at(&params)?;
        params[i] = base[i] - eps;
        let down = loss_at(&params)?;
        params[i] = base[i];
        let fd = (up - down) / (2.0 * eps);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Row-wise squared L2 norm helper used by kernels and tests.
pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
