//! Feed-forward ReLU regressor (`d → 128 → 128 → 1` by default) trained with
//! minibatch Adam on mean squared error.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::features::{fit_scaler, FeatureMatrix, ScalerParams};
use crate::par::{self, Execution};
use crate::split::{stream_rng, train_test_split};

pub const MODEL_FORMAT: &str = "netlat-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Samples per gradient chunk. Chunks may run concurrently; their sums are
/// always combined in chunk order so results do not depend on threading.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub seed: u64,
    /// Standardize inputs with statistics from the training split.
    pub standardize: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![128, 128],
            epochs: 1000,
            batch_size: 32,
            learning_rate: 0.001,
            train_fraction: 0.7,
            seed: 0,
            standardize: true,
            exec: Execution::default(),
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(Error::domain("hidden layer sizes must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::domain("train fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Dense layer; `weights` is `n_in × n_out`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer { shape: [n_in, n_out], weights: vec![0.0; n_in * n_out], biases: vec![0.0; n_out] }
    }

    pub fn n_in(&self) -> usize {
        self.shape[0]
    }

    pub fn n_out(&self) -> usize {
        self.shape[1]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        let n_out = self.n_out();
        out.clear();
        out.extend_from_slice(&self.biases);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[i * n_out..(i + 1) * n_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub scaler: Option<ScalerParams>,
    pub layers: Vec<Layer>,
    /// How the training rows were chosen, so evaluation can recover the test split.
    pub split: Option<SplitInfo>,
}

/// He-initialized network: weights ~ N(0, 2 / fan_in), zero biases.
pub fn init(input_dim: usize, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    if input_dim == 0 {
        return Err(Error::domain("input dimension must be at least 1"));
    }
    config.validate()?;
    let mut rng = stream_rng(seed, 0);
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden_sizes);
    sizes.push(1);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            let mut layer = Layer::zeros(w[0], w[1]);
            layer.weights.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            layer
        })
        .collect();
    Ok(MlpModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        columns: (0..input_dim).map(|i| format!("x{i}")).collect(),
        scaler: None,
        layers,
        split: None,
    })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        match &self.scaler {
            Some(s) => s.transform_row(x),
            None => x.to_vec(),
        }
    }

    /// Activations of every layer for an already-scaled input; `acts[0]` is the input.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out());
            layer.apply(&acts[l], &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    fn forward_scaled(&self, x: &[f64]) -> f64 {
        self.activations(x).last().expect("at least one layer")[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MlpModel = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Schema(format!("unsupported model format {} v{}", m.format, m.version)));
        }
        m.validate_shapes()?;
        Ok(m)
    }

    fn validate_shapes(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(msg));
        if self.layers.is_empty() {
            return bad("model has no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.n_in() * l.n_out() || l.biases.len() != l.n_out() {
                return bad(format!("layer {i} arrays do not match shape {:?}", l.shape));
            }
            if i > 0 && self.layers[i - 1].n_out() != l.n_in() {
                return bad(format!("layer {i} input {} does not chain", l.n_in()));
            }
        }
        if self.layers.last().map(Layer::n_out) != Some(1) {
            return bad("output layer must have one unit".into());
        }
        if self.columns.len() != self.input_dim() {
            return bad("column list does not match input dimension".into());
        }
        if let Some(s) = &self.scaler {
            if s.dim() != self.input_dim() || s.std.len() != s.dim() {
                return bad("scaler does not match input dimension".into());
            }
        }
        Ok(())
    }
}

/// Predicted RTT (ms) for one raw feature row.
pub fn forward(model: &MlpModel, x: &[f64]) -> Result<f64> {
    model.check_input(x)?;
    Ok(model.forward_scaled(&model.scaled(x)))
}

/// Per-parameter gradients, laid out like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients { layers: model.layers.iter().map(|l| Layer::zeros(l.n_in(), l.n_out())).collect() }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= k);
            l.biases.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sum over samples of d(pred - y)² plus the summed squared error.
fn backprop_sum(model: &MlpModel, xs: &[&[f64]], ys: &[f64]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    let mut sse = 0.0;
    let n_layers = model.layers.len();
    let mut delta = Vec::new();
    let mut prev_delta = Vec::new();
    for (x, &y) in xs.iter().zip(ys) {
        let acts = model.activations(x);
        let err = acts[n_layers][0] - y;
        sse += err * err;
        delta.clear();
        delta.push(2.0 * err);
        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let g = &mut grads.layers[l];
            let n_out = layer.n_out();
            let input = &acts[l];
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &mut g.weights[i * n_out..(i + 1) * n_out];
                for (w, d) in row.iter_mut().zip(&delta) {
                    *w += a * d;
                }
            }
            g.biases.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            if l > 0 {
                prev_delta.clear();
                // acts[l] is post-ReLU; zero activation means zero derivative
                for (i, &a) in input.iter().enumerate() {
                    if a > 0.0 {
                        let row = &layer.weights[i * n_out..(i + 1) * n_out];
                        prev_delta.push(row.iter().zip(&delta).map(|(w, d)| w * d).sum());
                    } else {
                        prev_delta.push(0.0);
                    }
                }
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }
    }
    (sse, grads)
}

/// Mean squared error and its gradient over already-scaled rows.
fn batch_gradients(model: &MlpModel, xs: &[&[f64]], ys: &[f64], exec: Execution) -> (f64, Gradients) {
    let n_chunks = xs.len().div_ceil(GRAD_CHUNK);
    let parts = par::map_range(exec, n_chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(xs.len());
        backprop_sum(model, &xs[lo..hi], &ys[lo..hi])
    });
    let mut grads = Gradients::zeros_like(model);
    let mut sse = 0.0;
    for (s, g) in &parts {
        sse += s;
        grads.add_assign(g);
    }
    let n = xs.len() as f64;
    grads.scale(1.0 / n);
    (sse / n, grads)
}

/// Exact gradient of `mean((pred - y)^2)` over a batch of raw rows.
/// Returns the loss alongside.
pub fn gradients(model: &MlpModel, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, Gradients)> {
    if xs.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    for x in xs {
        model.check_input(x)?;
    }
    let scaled: Vec<Vec<f64>> = xs.iter().map(|x| model.scaled(x)).collect();
    let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
    Ok(batch_gradients(model, &refs, ys, Execution::Sequential))
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &MlpModel, lr: f64) -> Self {
        Adam { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), t: 0, lr }
    }

    fn step(&mut self, model: &mut MlpModel, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        };
        for (((layer, gl), ml), vl) in model.layers.iter_mut().zip(&g.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            update(&mut layer.weights, &gl.weights, &mut ml.weights, &mut vl.weights);
            update(&mut layer.biases, &gl.biases, &mut ml.biases, &mut vl.biases);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training MSE per epoch.
    pub history: Vec<f64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Train on a matrix with an RTT target. Rows are split by a seeded shuffle;
/// the scaler is fit on the training split only.
pub fn train(data: &FeatureMatrix, config: &MlpConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let ys = data.rtt_target().ok_or_else(|| Error::domain("matrix has no RTT target"))?;
    let (train_rows, test_rows) = train_test_split(data.n_rows(), config.train_fraction, config.seed)?;
    let train_m = data.select_rows(&train_rows);
    let mut model = init(data.n_cols(), config, config.seed)?;
    model.columns = data.columns().to_vec();
    model.split = Some(SplitInfo { train_fraction: config.train_fraction, seed: config.seed });
    if config.standardize {
        model.scaler = Some(fit_scaler(&train_m)?);
    }
    let xs: Vec<Vec<f64>> = train_m.rows().map(|r| model.scaled(r)).collect();
    let ty: Vec<f64> = train_rows.iter().map(|&i| ys[i]).collect();

    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = stream_rng(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    let mut bx: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut by: Vec<f64> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.push(&xs[i]);
                by.push(ty[i]);
            }
            let (loss, g) = batch_gradients(&model, &bx, &by, config.exec);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sse += loss * batch.len() as f64;
            adam.step(&mut model, &g);
        }
        let loss = sse / xs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }
    Ok(TrainOutcome { model, history, train_rows, test_rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpEvaluation {
    pub mae_ms: f64,
    /// `(true, predicted)` per row.
    pub pairs: Vec<(f64, f64)>,
}

impl MlpEvaluation {
    /// `true_ms,predicted_ms` CSV for a predicted-vs-true scatter plot.
    pub fn write_pairs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["true_ms", "predicted_ms"])?;
        for (t, p) in &self.pairs {
            w.write_record([format!("{t:.6}"), format!("{p:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn evaluate(model: &MlpModel, test: &FeatureMatrix) -> Result<MlpEvaluation> {
    let ys = test.rtt_target().ok_or_else(|| Error::domain("matrix has no RTT target"))?;
    if test.n_cols() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), got: test.n_cols() });
    }
    let preds: Vec<f64> = test.rows().map(|r| model.forward_scaled(&model.scaled(r))).collect();
    let mae_ms = eval::mae(&preds, ys)?;
    Ok(MlpEvaluation { mae_ms, pairs: ys.iter().copied().zip(preds).collect() })
}
