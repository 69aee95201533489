//! Feed-forward softmax classifier with inverted dropout.
//!
//! Hidden layers are `dense -> activation -> dropout`; the output layer is a
//! dense layer followed by softmax. Dropout is only active during training and
//! Monte-Carlo inference, and kept units are scaled by `1 / (1 - p)` so the
//! deterministic path needs no rescaling.

use std::borrow::Borrow;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::pool::Example;
use crate::seed::{self, Rng};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "CARTAL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl ClassifierConfig {
    /// The default architecture: two hidden layers of 32 ReLU units, dropout 0.3.
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ClassifierConfig {
            input_dim,
            hidden_dims: vec![32, 32],
            num_classes,
            dropout_rate: 0.3,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "hidden_dims must be a non-empty list of positive widths".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.num_classes < 1 || self.input_dim < 1 {
            return Err(Error::Config(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Fraction of an epoch between training-dynamics snapshots.
    pub eval_interval: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            eval_interval: 0.5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.eval_interval > 0.0 && self.eval_interval <= 1.0) {
            return Err(Error::Config(format!(
                "eval_interval {} outside (0, 1]",
                self.eval_interval
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        TrainConfig {
            rng_seed,
            ..self.clone()
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Argument("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }
}

/// One probability distribution over classes per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Matrix);

impl ProbMatrix {
    /// Validates that every row is a distribution (sums to 1 within 1e-9).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        for (i, r) in m.rows().enumerate() {
            let s: f64 = r.iter().sum();
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!(
                    "row {i} is not a probability distribution"
                )));
            }
        }
        Ok(ProbMatrix(m))
    }

    pub fn num_rows(&self) -> usize {
        self.0.rows
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.0.rows()
    }

    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Per-sample forward state kept for backpropagation.
struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` is hidden layer `l` after dropout.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Dropout multiplier per hidden unit: 0 or `1 / (1 - p)`; empty when off.
    masks: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Trace {
    fn new(config: &ClassifierConfig) -> Self {
        let mut acts = vec![vec![0.0; config.input_dim]];
        acts.extend(config.hidden_dims.iter().map(|&h| vec![0.0; h]));
        Trace {
            acts,
            pre: config.hidden_dims.iter().map(|&h| vec![0.0; h]).collect(),
            masks: config.hidden_dims.iter().map(|_| Vec::new()).collect(),
            logits: vec![0.0; config.num_classes],
        }
    }
}

/// Values handed to a dynamics sink during [`fit_with_dynamics`].
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Number of optimizer steps taken so far.
    pub step: usize,
    /// Softmax probability of the gold label, per probe example.
    pub gold_probs: Vec<f64>,
    /// Argmax prediction, per probe example.
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    layers: Vec<Layer>,
}

impl Classifier {
    /// He-style uniform initialisation, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn init(config: &ClassifierConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Self::zeros(config)?.layers;
        for layer in &mut layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Classifier {
            config: config.clone(),
            layers,
        })
    }

    /// All weights and biases zero: predicts the uniform distribution.
    pub fn zeros(config: &ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden_dims);
        dims.push(config.num_classes);
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Classifier {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters: for each layer its weights then its biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn check_dims<E: Borrow<Example>>(&self, xs: &[E]) -> Result<()> {
        match xs
            .iter()
            .find(|e| Borrow::<Example>::borrow(*e).features.len() != self.config.input_dim)
        {
            Some(e) => Err(Error::Argument(format!(
                "example id {} has {} features, model expects {}",
                e.borrow().id,
                e.borrow().features.len(),
                self.config.input_dim
            ))),
            None => Ok(()),
        }
    }

    fn forward(&self, x: &[f64], trace: &mut Trace, mut dropout: Option<&mut Rng>) {
        trace.acts[0].copy_from_slice(x);
        let p = self.config.dropout_rate;
        let hidden = self.layers.len() - 1;
        for l in 0..hidden {
            let (lower, upper) = trace.acts.split_at_mut(l + 1);
            let input = &lower[l];
            let out = &mut upper[0];
            self.layers[l].forward(input, &mut trace.pre[l]);
            for (h, z) in out.iter_mut().zip(&trace.pre[l]) {
                *h = self.config.activation.apply(*z);
            }
            let mask = &mut trace.masks[l];
            mask.clear();
            if let Some(rng) = dropout.as_deref_mut() {
                if p > 0.0 {
                    let scale = 1.0 / (1.0 - p);
                    for h in out.iter_mut() {
                        let m = if rng.random::<f64>() < p { 0.0 } else { scale };
                        mask.push(m);
                        *h *= m;
                    }
                }
            }
        }
        self.layers[hidden].forward(&trace.acts[hidden], &mut trace.logits);
    }

    /// Accumulates the cross-entropy gradient of one forward pass into `grads`
    /// and returns the sample loss.
    fn backward(
        &self,
        trace: &Trace,
        label: usize,
        grads: &mut [Layer],
        delta: &mut [Vec<f64>],
    ) -> f64 {
        let mut probs = trace.logits.clone();
        softmax_in_place(&mut probs);
        let m = trace
            .logits
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + trace.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        let loss = lse - trace.logits[label];

        let top = self.layers.len() - 1;
        delta[top].clear();
        delta[top].extend(
            probs
                .iter()
                .enumerate()
                .map(|(c, p)| p - if c == label { 1.0 } else { 0.0 }),
        );

        for l in (0..=top).rev() {
            let layer = &self.layers[l];
            let input = &trace.acts[l];
            let g = &mut grads[l];
            for (o, d) in delta[l].iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate into hidden layer l - 1.
            let (below, above) = delta.split_at_mut(l);
            let back = &mut below[l - 1];
            back.clear();
            back.resize(layer.inputs, 0.0);
            for (o, d) in above[0].iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            let mask = &trace.masks[l - 1];
            for (j, b) in back.iter_mut().enumerate() {
                let h_raw = self.config.activation.apply(trace.pre[l - 1][j]);
                let m = if mask.is_empty() { 1.0 } else { mask[j] };
                *b *= m * self
                    .config
                    .activation
                    .derivative(trace.pre[l - 1][j], h_raw);
            }
        }
        loss
    }

    fn batch_gradient<E: Borrow<Example>>(
        &self,
        batch: &[E],
        mut dropout: Option<&mut Rng>,
        trace: &mut Trace,
        grads: &mut [Layer],
    ) -> f64 {
        for g in grads.iter_mut() {
            g.weights.iter_mut().for_each(|w| *w = 0.0);
            g.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut delta: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| Vec::with_capacity(l.outputs))
            .collect();
        let mut total = 0.0;
        for e in batch {
            let e = e.borrow();
            self.forward(&e.features, trace, dropout.as_deref_mut());
            total += self.backward(trace, e.label, grads, &mut delta);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grads.iter_mut() {
            g.weights.iter_mut().for_each(|w| *w *= inv);
            g.bias.iter_mut().for_each(|b| *b *= inv);
        }
        total * inv
    }

    /// Mean cross-entropy and its gradient (flattened like [`Classifier::params`])
    /// over `batch`, with dropout disabled.
    pub fn loss_and_gradient<E: Borrow<Example>>(&self, batch: &[E]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        self.check_dims(batch)?;
        let mut trace = Trace::new(&self.config);
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect();
        let loss = self.batch_gradient(batch, None, &mut trace, &mut grads);
        let flat = Classifier {
            config: self.config.clone(),
            layers: grads,
        }
        .params();
        Ok((loss, flat))
    }

    /// Mean cross-entropy with dropout disabled.
    pub fn loss<E: Borrow<Example>>(&self, batch: &[E]) -> Result<f64> {
        let probs = self.predict_proba(batch)?;
        let n = batch.len().max(1) as f64;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, e)| -probs.row(i)[e.borrow().label].ln())
            .sum::<f64>()
            / n)
    }

    /// Raw output-layer values with dropout disabled.
    pub fn logits<E: Borrow<Example>>(&self, xs: &[E]) -> Result<Matrix> {
        self.check_dims(xs)?;
        let mut trace = Trace::new(&self.config);
        let mut out = Matrix::zeros(xs.len(), self.config.num_classes);
        for (i, e) in xs.iter().enumerate() {
            self.forward(&e.borrow().features, &mut trace, None);
            out.row_mut(i).copy_from_slice(&trace.logits);
        }
        Ok(out)
    }

    /// Output-layer values of `samples` stochastic passes with dropout active.
    pub fn mc_logits<E: Borrow<Example>>(
        &self,
        xs: &[E],
        samples: usize,
        rng_seed: u64,
    ) -> Result<Vec<Matrix>> {
        if samples == 0 {
            return Err(Error::Argument(
                "number of Monte-Carlo samples must be at least 1".into(),
            ));
        }
        self.check_dims(xs)?;
        let mut rng = seed::rng(rng_seed);
        let mut trace = Trace::new(&self.config);
        let mut out = Vec::with_capacity(samples);
        for _ in 0..samples {
            let mut m = Matrix::zeros(xs.len(), self.config.num_classes);
            for (i, e) in xs.iter().enumerate() {
                self.forward(&e.borrow().features, &mut trace, Some(&mut rng));
                m.row_mut(i).copy_from_slice(&trace.logits);
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Deterministic class probabilities.
    pub fn predict_proba<E: Borrow<Example>>(&self, xs: &[E]) -> Result<ProbMatrix> {
        let mut m = self.logits(xs)?;
        for i in 0..m.rows {
            softmax_in_place(m.row_mut(i));
        }
        Ok(ProbMatrix(m))
    }

    /// `samples` stochastic forward passes, each with fresh dropout masks.
    pub fn mc_predict_proba<E: Borrow<Example>>(
        &self,
        xs: &[E],
        samples: usize,
        rng_seed: u64,
    ) -> Result<Vec<ProbMatrix>> {
        Ok(self
            .mc_logits(xs, samples, rng_seed)?
            .into_iter()
            .map(|mut m| {
                for i in 0..m.rows {
                    softmax_in_place(m.row_mut(i));
                }
                ProbMatrix(m)
            })
            .collect())
    }

    pub fn predict<E: Borrow<Example>>(&self, xs: &[E]) -> Result<Vec<usize>> {
        let p = self.predict_proba(xs)?;
        Ok((0..p.num_rows()).map(|i| p.argmax(i)).collect())
    }

    /// Fraction of `xs` whose argmax prediction equals the gold label.
    pub fn accuracy<E: Borrow<Example>>(&self, xs: &[E]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::Argument("accuracy of an empty set".into()));
        }
        let pred = self.predict(xs)?;
        let hits = pred
            .iter()
            .zip(xs)
            .filter(|(p, e)| **p == Borrow::<Example>::borrow(*e).label)
            .count();
        Ok(hits as f64 / xs.len() as f64)
    }

    /// Penultimate-layer activations (last hidden layer), dropout disabled.
    pub fn embed<E: Borrow<Example>>(&self, xs: &[E]) -> Result<Matrix> {
        self.check_dims(xs)?;
        let width = *self.config.hidden_dims.last().expect("validated non-empty");
        let mut trace = Trace::new(&self.config);
        let mut out = Matrix::zeros(xs.len(), width);
        for (i, e) in xs.iter().enumerate() {
            self.forward(&e.borrow().features, &mut trace, None);
            out.row_mut(i)
                .copy_from_slice(&trace.acts[self.layers.len() - 1]);
        }
        Ok(out)
    }

    fn snapshot<E: Borrow<Example>>(&self, probe: &[E], step: usize) -> Snapshot {
        let probs = self
            .predict_proba(probe)
            .expect("probe dimensions checked before training");
        Snapshot {
            step,
            gold_probs: probe
                .iter()
                .enumerate()
                .map(|(i, e)| probs.row(i)[e.borrow().label])
                .collect(),
            predictions: (0..probs.num_rows()).map(|i| probs.argmax(i)).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            magic: CHECKPOINT_MAGIC.to_string(),
            config: self.config.clone(),
            layers: self.layers.clone(),
        };
        let text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Schema(format!(
                "bad checkpoint magic {:?}",
                ckpt.magic
            )));
        }
        let mut model = Classifier::zeros(&ckpt.config)?;
        if ckpt.layers.len() != model.layers.len() {
            return Err(Error::Schema(
                "checkpoint layer count does not match its config".into(),
            ));
        }
        for (have, want) in ckpt.layers.iter().zip(&model.layers) {
            if have.inputs != want.inputs
                || have.outputs != want.outputs
                || have.weights.len() != want.weights.len()
                || have.bias.len() != want.bias.len()
            {
                return Err(Error::Schema(
                    "checkpoint layer shape does not match its config".into(),
                ));
            }
        }
        model.layers = ckpt.layers;
        Ok(model)
    }
}

/// On-disk model: JSON object `{"magic": "CARTAL1", "config": {...}, "layers":
/// [{"inputs", "outputs", "weights" (row-major, outputs x inputs), "bias"}]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    magic: String,
    config: ClassifierConfig,
    layers: Vec<Layer>,
}

/// Trains a freshly initialised model with mini-batch SGD on mean
/// cross-entropy. When `val` is non-empty, training stops after `patience`
/// epochs without a validation-accuracy improvement and the best epoch's
/// weights are returned.
pub fn fit<E: Borrow<Example>>(
    config: &ClassifierConfig,
    train: &[E],
    val: &[E],
    tcfg: &TrainConfig,
) -> Result<Classifier> {
    train_inner::<E, E>(config, train, val, tcfg, None)
}

/// Like [`fit`], additionally reporting the model's gold-label probabilities
/// and predictions on `probe` every `eval_interval` of an epoch.
pub fn fit_with_dynamics<E: Borrow<Example>, P: Borrow<Example>>(
    config: &ClassifierConfig,
    train: &[E],
    val: &[E],
    tcfg: &TrainConfig,
    probe: &[P],
    sink: &mut dyn FnMut(Snapshot),
) -> Result<Classifier> {
    train_inner(config, train, val, tcfg, Some((probe, sink)))
}

/// Batch indices (1-based counts) after which snapshots fire within one epoch.
fn snapshot_points(steps_per_epoch: usize, eval_interval: f64) -> Vec<usize> {
    let per_epoch = ((1.0 / eval_interval).round() as usize).max(1);
    (1..=per_epoch)
        .map(|j| (j * steps_per_epoch).div_ceil(per_epoch).max(1))
        .collect()
}

fn train_inner<E: Borrow<Example>, P: Borrow<Example>>(
    config: &ClassifierConfig,
    train: &[E],
    val: &[E],
    tcfg: &TrainConfig,
    mut probe: Option<(&[P], &mut dyn FnMut(Snapshot))>,
) -> Result<Classifier> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut rng = seed::rng(tcfg.rng_seed);
    let mut model = Classifier::init(config, &mut rng)?;
    model.check_dims(train)?;
    model.check_dims(val)?;
    if let Some((p, _)) = &probe {
        model.check_dims(p)?;
    }

    let n = train.len();
    let steps_per_epoch = n.div_ceil(tcfg.batch_size);
    let points = snapshot_points(steps_per_epoch, tcfg.eval_interval);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Trace::new(config);
    let mut grads: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer::zeros(l.inputs, l.outputs))
        .collect();
    let mut batch: Vec<&Example> = Vec::with_capacity(tcfg.batch_size);
    let mut step = 0usize;
    let mut best: Option<(f64, Classifier)> = None;
    let mut stale = 0usize;

    for _epoch in 0..tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut next_point = 0;
        for (b, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].borrow()));
            let loss = model.batch_gradient(&batch, Some(&mut rng), &mut trace, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= tcfg.learning_rate * d;
                }
                for (w, d) in layer.bias.iter_mut().zip(&g.bias) {
                    *w -= tcfg.learning_rate * d;
                }
            }
            step += 1;
            if let Some((p, sink)) = probe.as_mut() {
                while next_point < points.len() && points[next_point] == b + 1 {
                    sink(model.snapshot(p, step));
                    next_point += 1;
                }
            }
        }
        if model.params().iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { step });
        }

        if !val.is_empty() {
            let acc = model.accuracy(val)?;
            match &best {
                Some((b, _)) if acc < *b => stale += 1,
                Some((b, _)) if acc == *b => {
                    // Ties keep the later weights but do not reset patience.
                    best = Some((acc, model.clone()));
                    stale += 1;
                }
                _ => {
                    best = Some((acc, model.clone()));
                    stale = 0;
                }
            }
            if stale >= tcfg.patience {
                break;
            }
        }
    }
    Ok(best.map_or(model, |(_, m)| m))
}
