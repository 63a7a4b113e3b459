//! Minimal dense neural-network engine.
//!
//! Weights are stored as `f32`; every forward/backward pass widens to `f64`
//! internally so that losses, metrics, and gradients are accumulated in
//! 64-bit precision. The output layer is always followed by a
//! max-subtracted softmax, so `forward` yields probability rows.

mod laplace;
pub mod serialize;

pub use laplace::{perturb_weights, sample_laplace};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::par;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Element-wise activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`.
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Dense layer: `h_out = act(W h_in + b)`, weights row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Mat,
    pub biases: Vec<f32>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Architecture description used to build fresh models.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub hidden_activation: Activation,
    pub arch_id: String,
}

impl ArchSpec {
    pub fn dense(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        let arch_id = format!(
            "dense-{input_dim}-{}-{num_classes}",
            hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join("-")
        );
        Self {
            input_dim,
            hidden,
            num_classes,
            hidden_activation: Activation::Relu,
            arch_id,
        }
    }
}

/// Feed-forward classifier with a softmax output head.
///
/// Models are immutable once built or trained; operations that change
/// weights return a new model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_dim: usize,
    num_classes: usize,
    arch_id: String,
}

impl Model {
    /// Builds a randomly initialized model (Xavier-uniform, zero biases).
    pub fn new(arch: &ArchSpec, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes == 0 {
            return Err(Error::Validation(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![arch.input_dim];
        dims.extend_from_slice(&arch.hidden);
        dims.push(arch.num_classes);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Mat::zeros(fan_out, fan_in);
            for v in weights.as_mut_slice() {
                *v = (rng.random::<f64>() * 2.0 * limit - limit) as f32;
            }
            let is_output = layers.len() == dims.len() - 2;
            layers.push(Layer {
                weights,
                biases: vec![0.0; fan_out],
                activation: if is_output {
                    Activation::Linear
                } else {
                    arch.hidden_activation
                },
            });
        }
        Self::from_layers(layers, arch.arch_id.clone())
    }

    /// Assembles a model from explicit layers, checking the dimension chain.
    pub fn from_layers(layers: Vec<Layer>, arch_id: String) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer chain broken: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let input_dim = layers[0].in_dim();
        let num_classes = layers[layers.len() - 1].out_dim();
        Ok(Self {
            layers,
            input_dim,
            num_classes,
            arch_id,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    /// Total number of weight and bias parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, inputs: &Mat) -> Result<()> {
        if inputs.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::Validation("non-finite input feature".into()));
        }
        Ok(())
    }

    /// Probability rows for a batch of inputs.
    pub fn forward(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.check_input(inputs)?;
        Ok(par::map_indexed(inputs.rows(), |i| {
            softmax(&self.logits_one(inputs.row(i)))
        }))
    }

    /// Probability vector for a single example.
    pub fn forward_one(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match model input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite input feature".into()));
        }
        Ok(softmax(&self.logits_one(x)))
    }

    /// Pre-softmax output rows (used by margin-based attacks).
    pub fn logits(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.check_input(inputs)?;
        Ok(par::map_indexed(inputs.rows(), |i| {
            self.logits_one(inputs.row(i))
        }))
    }

    fn logits_one(&self, x: &[f32]) -> Vec<f64> {
        let mut h: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for layer in &self.layers {
            h = layer_forward(layer, &h);
        }
        h
    }

    /// Forward pass that keeps pre- and post-activation values per layer.
    fn forward_cached(&self, x: &[f32]) -> ForwardCache {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(x.iter().map(|&v| v as f64).collect());
        for layer in &self.layers {
            let h = acts.last().unwrap();
            let mut z = vec![0.0f64; layer.out_dim()];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = layer.weights.row(o);
                let mut sum = layer.biases[o] as f64;
                for (i, hi) in h.iter().enumerate() {
                    sum += row[i] as f64 * hi;
                }
                *zo = sum;
            }
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        ForwardCache { acts, pre }
    }

    /// Backpropagates a gradient w.r.t. the output probabilities down to the
    /// input features, chaining through the softmax Jacobian.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn input_grad_from_prob_grad(&self, x: &[f32], dprobs: &[f64]) -> Vec<f64> {
        let probs = softmax(&self.logits_one(x));
        let dot: f64 = dprobs.iter().zip(&probs).map(|(d, p)| d * p).sum();
        let dlogits: Vec<f64> = probs
            .iter()
            .zip(dprobs)
            .map(|(&p, &d)| p * (d - dot))
            .collect();
        self.input_grad_from_logit_grad(x, &dlogits)
    }

    /// Backpropagates an output-side gradient (w.r.t. the logits) down to the
    /// input features of a single example. Weight gradients are skipped.
    pub(crate) fn input_grad_from_logit_grad(&self, x: &[f32], dlogits: &[f64]) -> Vec<f64> {
        let cache = self.forward_cached(x);
        let mut d = dlogits.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = d
                .iter()
                .zip(&cache.pre[l])
                .map(|(&dh, &z)| dh * layer.activation.grad(z))
                .collect();
            let mut dprev = vec![0.0f64; layer.in_dim()];
            for (o, &dzo) in dz.iter().enumerate() {
                let row = layer.weights.row(o);
                for (i, dp) in dprev.iter_mut().enumerate() {
                    *dp += row[i] as f64 * dzo;
                }
            }
            d = dprev;
        }
        d
    }
}

struct ForwardCache {
    /// Post-activation values per layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn layer_forward(layer: &Layer, h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0f64; layer.out_dim()];
    for (o, v) in out.iter_mut().enumerate() {
        let row = layer.weights.row(o);
        let mut sum = layer.biases[o] as f64;
        for (i, hi) in h.iter().enumerate() {
            sum += row[i] as f64 * hi;
        }
        *v = layer.activation.apply(sum);
    }
    out
}

/// Labeled mini-batch with declared feature bounds.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub bounds: (f32, f32),
}

impl Batch {
    pub fn new(inputs: Mat, labels: Vec<usize>, bounds: (f32, f32), num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        let (lb, ub) = bounds;
        if inputs
            .as_slice()
            .iter()
            .any(|&v| !v.is_finite() || v < lb || v > ub)
        {
            return Err(Error::Validation(format!(
                "features must lie within [{lb}, {ub}]"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            bounds,
        })
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        Self {
            inputs: data.inputs.clone(),
            labels: data.labels.clone(),
            bounds: data.bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-layer weight and bias gradients.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Mat,
    pub biases: Vec<f32>,
}

/// Gradients of the mean cross-entropy: per-layer parameter gradients plus
/// the gradient with respect to every input feature.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weight_grads: Vec<LayerGrads>,
    pub input_grads: Mat,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.input_grads.is_finite()
            && self.weight_grads.iter().all(|g| {
                g.weights.is_finite() && g.biases.iter().all(|v| v.is_finite())
            })
    }
}

/// Mean cross-entropy of the model's predictions over a batch.
pub fn loss(model: &Model, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("loss over an empty batch".into()));
    }
    check_labels(model, &batch.labels)?;
    model.check_input(&batch.inputs)?;
    let chunks = par::map_chunks(batch.len(), |range| {
        let mut sum = 0.0f64;
        for i in range {
            let probs = softmax(&model.logits_one(batch.inputs.row(i)));
            sum += -(probs[batch.labels[i]].max(f64::MIN_POSITIVE)).ln();
        }
        sum
    });
    Ok(chunks.iter().sum::<f64>() / batch.len() as f64)
}

/// Gradients of the mean cross-entropy w.r.t. all parameters and inputs.
pub fn backward(model: &Model, batch: &Batch) -> Result<GradientSet> {
    if batch.is_empty() {
        return Err(Error::Validation("backward over an empty batch".into()));
    }
    check_labels(model, &batch.labels)?;
    model.check_input(&batch.inputs)?;

    let m = batch.len() as f64;
    let chunk_grads = par::map_chunks(batch.len(), |range| {
        let mut acc = ParamGradsF64::zeros_like(model);
        let mut input_rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(range.len());
        for i in range {
            let cache = model.forward_cached(batch.inputs.row(i));
            let probs = softmax(cache.acts.last().unwrap());
            let mut d: Vec<f64> = probs;
            d[batch.labels[i]] -= 1.0;
            // Backprop through layers, accumulating parameter gradients.
            for (l, layer) in model.layers.iter().enumerate().rev() {
                let dz: Vec<f64> = d
                    .iter()
                    .zip(&cache.pre[l])
                    .map(|(&dh, &z)| dh * layer.activation.grad(z))
                    .collect();
                let h_prev = &cache.acts[l];
                let lw = &mut acc.layers[l];
                for (o, &dzo) in dz.iter().enumerate() {
                    lw.biases[o] += dzo;
                    let wrow = &mut lw.weights[o * layer.in_dim()..(o + 1) * layer.in_dim()];
                    for (w, &hp) in wrow.iter_mut().zip(h_prev.iter()) {
                        *w += dzo * hp;
                    }
                }
                let mut dprev = vec![0.0f64; layer.in_dim()];
                for (o, &dzo) in dz.iter().enumerate() {
                    let row = layer.weights.row(o);
                    for (idx, dp) in dprev.iter_mut().enumerate() {
                        *dp += row[idx] as f64 * dzo;
                    }
                }
                d = dprev;
            }
            input_rows.push((i, d));
        }
        (acc, input_rows)
    });

    // Sequential combine in chunk order keeps accumulation deterministic.
    let mut total = ParamGradsF64::zeros_like(model);
    let mut input_grads = Mat::zeros(batch.len(), model.input_dim());
    for (acc, rows) in chunk_grads {
        total.add(&acc);
        for (i, row) in rows {
            for (c, v) in row.iter().enumerate() {
                input_grads.set(i, c, (v / m) as f32);
            }
        }
    }

    let weight_grads = total
        .layers
        .into_iter()
        .zip(&model.layers)
        .map(|(lg, layer)| LayerGrads {
            weights: Mat::from_vec(
                layer.out_dim(),
                layer.in_dim(),
                lg.weights.iter().map(|&v| (v / m) as f32).collect(),
            )
            .expect("gradient shape mirrors layer shape"),
            biases: lg.biases.iter().map(|&v| (v / m) as f32).collect(),
        })
        .collect();

    Ok(GradientSet {
        weight_grads,
        input_grads,
    })
}

/// f64 parameter-gradient accumulator, one flat buffer per layer.
struct ParamGradsF64 {
    layers: Vec<LayerGradsF64>,
}

struct LayerGradsF64 {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ParamGradsF64 {
    fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradsF64 {
                    weights: vec![0.0; l.weights.as_slice().len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }
}

/// One SGD update: every parameter moves to `theta - lr * grad`.
pub fn sgd_step(model: &Model, grads: &GradientSet, lr: f64) -> Result<Model> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::Validation("learning rate must be finite and >= 0".into()));
    }
    if grads.weight_grads.len() != model.layers.len() {
        return Err(Error::Shape(format!(
            "{} gradient layers vs {} model layers",
            grads.weight_grads.len(),
            model.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    for (layer, lg) in model.layers.iter().zip(&grads.weight_grads) {
        if lg.weights.rows() != layer.out_dim()
            || lg.weights.cols() != layer.in_dim()
            || lg.biases.len() != layer.biases.len()
        {
            return Err(Error::Shape("gradient shape does not match layer".into()));
        }
        let mut weights = layer.weights.clone();
        for (w, &g) in weights.as_mut_slice().iter_mut().zip(lg.weights.as_slice()) {
            *w = (*w as f64 - lr * g as f64) as f32;
        }
        let biases = layer
            .biases
            .iter()
            .zip(&lg.biases)
            .map(|(&b, &g)| (b as f64 - lr * g as f64) as f32)
            .collect();
        layers.push(Layer {
            weights,
            biases,
            activation: layer.activation,
        });
    }
    Model::from_layers(layers, model.arch_id.clone())
}

/// Mini-batch SGD training configuration.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }
}

/// Trains with mini-batch SGD; deterministic for a fixed seed.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::Validation("training data is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Validation("epochs must be >= 1".into()));
    }
    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        current = train_epoch(&current, data, cfg.lr, cfg.batch_size, &mut rng)?;
    }
    Ok(current)
}

/// One shuffled pass over the data; used by both `train` and pool retraining.
pub(crate) fn train_epoch(
    model: &Model,
    data: &Dataset,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    // Fisher-Yates via the seeded stream.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let bs = batch_size.max(1);
    let mut current = model.clone();
    for chunk in order.chunks(bs) {
        let rows: Vec<Vec<f32>> = chunk.iter().map(|&i| data.inputs.row(i).to_vec()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let batch = Batch {
            inputs: Mat::from_rows(&rows)?,
            labels,
            bounds: data.bounds,
        };
        let grads = backward(&current, &batch)?;
        current = sgd_step(&current, &grads, lr)?;
    }
    Ok(current)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("accuracy over an empty dataset".into()));
    }
    check_labels(model, &data.labels)?;
    let preds = model.forward(&data.inputs)?;
    let correct = preds
        .iter()
        .zip(&data.labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn check_labels(model: &Model, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {} classes",
            model.num_classes
        )));
    }
    Ok(())
}
