//! Surrogate regressors from nodal loads to device setpoints.
//!
//! Inputs are standardized and targets min-max scaled with training-split
//! statistics; both models are fitted in scaled space and report predictions
//! in raw units.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, LabeledSample, ScenarioConfig};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::powerflow::{ControlVector, LoadScenario, SweepSolver};
use crate::rpo::check_feasibility;

/// A pure, concurrently callable model from a feature vector to raw outputs.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Vec<f64>;

    fn predict_output(&self, x: &[f64], output: usize) -> f64 {
        self.predict(x)[output]
    }
}

/// Wraps a closure as a single-output predictor.
pub struct FnPredictor<F> {
    name: String,
    input_dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(name: impl Into<String>, input_dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            input_dim,
            f,
        }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn name(&self) -> &str {
        &self.name
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        vec![(self.f)(x)]
    }
    fn predict_output(&self, x: &[f64], _output: usize) -> f64 {
        (self.f)(x)
    }
}

/// Per-feature standardization. A constant feature gets unit spread so the
/// transform stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Per-output scaling to [0, 1]. A constant output gets unit range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for k in 0..d {
                min[k] = min[k].min(r[k]);
                max[k] = max[k].max(r[k]);
            }
        }
        for k in 0..d {
            if max[k] - min[k] <= 1e-12 {
                max[k] = min[k] + 1.0;
            }
        }
        Self { min, max }
    }

    pub fn transform(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.min)
            .zip(&self.max)
            .map(|((v, lo), hi)| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.min)
            .zip(&self.max)
            .map(|((v, lo), hi)| lo + v * (hi - lo))
            .collect()
    }

    pub fn range(&self, k: usize) -> f64 {
        self.max[k] - self.min[k]
    }
}

/// Dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive sd");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Validation MAE per output in raw target units.
    pub val_mae: Vec<f64>,
    /// Validation MAE per output in scaled [0, 1] units.
    pub val_mae_scaled: Vec<f64>,
    pub best_val_mse: f64,
    pub epochs_run: usize,
    /// Set when the normal equations needed ridge regularization.
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
    /// Weight-decay strength the MLP was trained with.
    #[serde(default)]
    pub l2: f64,
    /// `(l2, best validation MSE)` per candidate when the strength was
    /// chosen from a grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l2_search: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRegressor {
    pub kind: ModelKind,
    /// Layer widths from input to output.
    pub architecture: Vec<usize>,
    pub layers: Vec<Layer>,
    pub x_scaler: StandardScaler,
    pub y_scaler: MinMaxScaler,
    pub train_seed: u64,
    pub train_metrics: TrainMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
    /// Weight decay: the loss gains `l2 / n_train · Σw²` over all weights
    /// (biases excluded).
    pub l2: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr: 1e-3,
            epochs: 200,
            batch: 32,
            patience: 20,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidInput {
                what: "MLP parameters",
                reason,
            })
        };
        if self.hidden.contains(&0) {
            return bad("hidden layer width must be positive".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!(
                "l2 must be finite and non-negative, got {}",
                self.l2
            ));
        }
        if !(self.lr > 0.0) || self.batch == 0 || self.epochs == 0 {
            return bad(format!(
                "need lr > 0, batch > 0, epochs > 0 (lr = {}, batch = {}, epochs = {})",
                self.lr, self.batch, self.epochs
            ));
        }
        Ok(())
    }
}

/// Scaled copies of a split's inputs and targets.
struct Scaled {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn fit_scalers(train: &[LabeledSample]) -> Result<(StandardScaler, MinMaxScaler)> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (dx, dy) = (train[0].x.len(), train[0].y.len());
    for s in train {
        if s.x.len() != dx || s.y.len() != dy {
            return Err(Error::Dimension {
                what: "training sample",
                expected: dx,
                found: s.x.len(),
            });
        }
        if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput {
                what: "training sample",
                reason: "non-finite value".into(),
            });
        }
    }
    let xs: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
    let ys: Vec<&[f64]> = train.iter().map(|s| s.y.as_slice()).collect();
    Ok((StandardScaler::fit(&xs), MinMaxScaler::fit(&ys)))
}

fn scale(samples: &[LabeledSample], xs: &StandardScaler, ys: &MinMaxScaler) -> Scaled {
    Scaled {
        x: samples.iter().map(|s| xs.transform(&s.x)).collect(),
        y: samples.iter().map(|s| ys.transform(&s.y)).collect(),
    }
}

/// Gradient buffers shaped like the layers.
#[derive(Debug, Clone)]
struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(layers: &[Layer]) -> Self {
        Self {
            w: layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            b: layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.w
            .iter_mut()
            .chain(self.b.iter_mut())
            .for_each(|g| g.fill(0.0));
    }
}

/// Forward pass in scaled space with ReLU on hidden layers; returns every
/// layer's post-activation output (the last one is linear).
fn forward_all(layers: &[Layer], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len());
    let mut input = x;
    let last = layers.len() - 1;
    for (k, layer) in layers.iter().enumerate() {
        let mut out = vec![0.0; layer.outputs];
        layer.forward(input, &mut out);
        if k < last {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(out);
        input = acts.last().expect("just pushed");
    }
    acts
}

/// Adds the gradient of `0.5·scale·Σ(pred − y)²` for one sample into `g` and
/// returns the sample's squared error sum.
fn backprop(layers: &[Layer], x: &[f64], y: &[f64], scale: f64, g: &mut Grads) -> f64 {
    let acts = forward_all(layers, x);
    let out = acts.last().expect("at least one layer");
    let mut delta: Vec<f64> = out.iter().zip(y).map(|(p, t)| p - t).collect();
    let sq = delta.iter().map(|d| d * d).sum();
    delta.iter_mut().for_each(|d| *d *= scale);
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let input = if k == 0 { x } else { &acts[k - 1] };
        for (o, &d) in delta.iter().enumerate() {
            g.b[k][o] += d;
            let row = &mut g.w[k][o * layer.inputs..(o + 1) * layer.inputs];
            for (gw, &v) in row.iter_mut().zip(input) {
                *gw += d * v;
            }
        }
        if k > 0 {
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(&acts[k - 1]) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    sq
}

fn mse(layers: &[Layer], data: &Scaled) -> f64 {
    let d = data.y.first().map_or(1, Vec::len);
    let total: f64 = data
        .x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| {
            let acts = forward_all(layers, x);
            acts.last()
                .expect("layer")
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
        })
        .sum();
    total / (data.x.len() * d) as f64
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, layers: &mut [Layer], g: &Grads) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, layer) in layers.iter_mut().enumerate() {
            for (params, grads, m, v) in [
                (
                    &mut layer.weights,
                    &g.w[k],
                    &mut self.m.w[k],
                    &mut self.v.w[k],
                ),
                (&mut layer.bias, &g.b[k], &mut self.m.b[k], &mut self.v.b[k]),
            ] {
                for i in 0..params.len() {
                    m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * grads[i];
                    v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
                    params[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Minibatch Adam on scaled MSE with early stopping on validation MSE. The
/// training split doubles as the monitor when the validation split is empty.
pub fn train_mlp(split: &DatasetSplit, params: &MlpParams) -> Result<TrainedRegressor> {
    params.validate()?;
    let (x_scaler, y_scaler) = fit_scalers(&split.train)?;
    let train = scale(&split.train, &x_scaler, &y_scaler);
    let val = if split.val.is_empty() {
        None
    } else {
        Some(scale(&split.val, &x_scaler, &y_scaler))
    };
    let (dx, dy) = (split.train[0].x.len(), split.train[0].y.len());
    let mut architecture = vec![dx];
    architecture.extend(&params.hidden);
    architecture.push(dy);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut layers: Vec<Layer> = architecture
        .windows(2)
        .map(|w| Layer::he(w[0], w[1], &mut rng))
        .collect();
    let mut adam = Adam {
        m: Grads::zeros(&layers),
        v: Grads::zeros(&layers),
        t: 0,
        lr: params.lr,
    };
    let mut grads = Grads::zeros(&layers);
    let decay = 2.0 * params.l2 / train.x.len() as f64;
    let mut order: Vec<usize> = (0..train.x.len()).collect();
    let mut best = (f64::INFINITY, layers.clone());
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=params.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        for batch in order.chunks(params.batch) {
            grads.clear();
            let scale = 2.0 / (batch.len() * dy) as f64;
            for &i in batch {
                epoch_sq += backprop(&layers, &train.x[i], &train.y[i], scale, &mut grads);
            }
            if decay > 0.0 {
                for (g, layer) in grads.w.iter_mut().zip(&layers) {
                    for (gw, w) in g.iter_mut().zip(&layer.weights) {
                        *gw += decay * w;
                    }
                }
            }
            adam.step(&mut layers, &grads);
        }
        let monitor = match &val {
            Some(v) => mse(&layers, v),
            None => epoch_sq / (train.x.len() * dy) as f64,
        };
        if !epoch_sq.is_finite() || !monitor.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if monitor < best.0 {
            best = (monitor, layers.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                break;
            }
        }
    }

    let mut model = TrainedRegressor {
        kind: ModelKind::Mlp,
        architecture,
        layers: best.1,
        x_scaler,
        y_scaler,
        train_seed: params.seed,
        train_metrics: TrainMetrics {
            val_mae: Vec::new(),
            val_mae_scaled: Vec::new(),
            best_val_mse: best.0,
            epochs_run,
            ridge_lambda: None,
            l2: params.l2,
            l2_search: Vec::new(),
        },
    };
    model.record_validation(split);
    Ok(model)
}

/// Trains one MLP per weight-decay candidate and keeps the one with the
/// lowest validation MSE (first wins ties). An empty grid trains `params` as is.
pub fn train_mlp_l2_grid(
    split: &DatasetSplit,
    params: &MlpParams,
    grid: &[f64],
) -> Result<TrainedRegressor> {
    if grid.is_empty() {
        return train_mlp(split, params);
    }
    let mut best: Option<TrainedRegressor> = None;
    let mut search = Vec::with_capacity(grid.len());
    for &l2 in grid {
        let model = train_mlp(
            split,
            &MlpParams {
                l2,
                ..params.clone()
            },
        )?;
        search.push((l2, model.train_metrics.best_val_mse));
        if best
            .as_ref()
            .is_none_or(|b| model.train_metrics.best_val_mse < b.train_metrics.best_val_mse)
        {
            best = Some(model);
        }
    }
    let mut model = best.expect("non-empty grid");
    model.train_metrics.l2_search = search;
    Ok(model)
}

pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Ordinary least squares per output in scaled space via the normal
/// equations. A rank-deficient design falls back to ridge with
/// [`RIDGE_LAMBDA`], recorded in the metrics.
pub fn train_linear(split: &DatasetSplit) -> Result<TrainedRegressor> {
    let (x_scaler, y_scaler) = fit_scalers(&split.train)?;
    let train = scale(&split.train, &x_scaler, &y_scaler);
    let (n, dx, dy) = (train.x.len(), train.x[0].len(), train.y[0].len());
    let a = DMatrix::from_fn(n, dx + 1, |r, c| if c < dx { train.x[r][c] } else { 1.0 });
    let b = DMatrix::from_fn(n, dy, |r, c| train.y[r][c]);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * &b;

    let well_conditioned = |m: &DMatrix<f64>| {
        m.clone().cholesky().filter(|ch| {
            let l = ch.l_dirty();
            let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let top = diag.iter().cloned().fold(0.0, f64::max);
            diag.iter().all(|&d| d > top * 1e-12)
        })
    };
    let (chol, ridge) = match well_conditioned(&ata) {
        Some(c) => (c, None),
        None => {
            let reg = &ata + DMatrix::identity(dx + 1, dx + 1) * RIDGE_LAMBDA;
            let c = reg.cholesky().ok_or_else(|| Error::InvalidInput {
                what: "linear regression",
                reason: "normal equations singular even with ridge".into(),
            })?;
            (c, Some(RIDGE_LAMBDA))
        }
    };
    let beta = chol.solve(&atb);
    let layer = Layer {
        inputs: dx,
        outputs: dy,
        weights: (0..dy)
            .flat_map(|o| (0..dx).map(move |i| (o, i)))
            .map(|(o, i)| beta[(i, o)])
            .collect(),
        bias: (0..dy).map(|o| beta[(dx, o)]).collect(),
    };
    let mut model = TrainedRegressor {
        kind: ModelKind::Linear,
        architecture: vec![dx, dy],
        layers: vec![layer],
        x_scaler,
        y_scaler,
        train_seed: 0,
        train_metrics: TrainMetrics {
            val_mae: Vec::new(),
            val_mae_scaled: Vec::new(),
            best_val_mse: f64::NAN,
            epochs_run: 0,
            ridge_lambda: ridge,
            l2: 0.0,
            l2_search: Vec::new(),
        },
    };
    let monitor = if split.val.is_empty() {
        &split.train
    } else {
        &split.val
    };
    model.train_metrics.best_val_mse = mse(
        &model.layers,
        &scale(monitor, &model.x_scaler, &model.y_scaler),
    );
    model.record_validation(split);
    Ok(model)
}

impl TrainedRegressor {
    fn record_validation(&mut self, split: &DatasetSplit) {
        let monitor = if split.val.is_empty() {
            &split.train
        } else {
            &split.val
        };
        let raw = self.mae(monitor);
        self.train_metrics.val_mae_scaled = raw
            .iter()
            .enumerate()
            .map(|(k, m)| m / self.y_scaler.range(k))
            .collect();
        self.train_metrics.val_mae = raw;
    }

    /// Prediction in scaled target space.
    pub fn predict_scaled(&self, x: &[f64]) -> Vec<f64> {
        let xs = self.x_scaler.transform(x);
        forward_all(&self.layers, &xs).pop().expect("layer")
    }

    /// Mean absolute error per output in raw units.
    pub fn mae(&self, samples: &[LabeledSample]) -> Vec<f64> {
        let dy = self.output_dim();
        let mut acc = vec![0.0; dy];
        for s in samples {
            for (a, (p, t)) in acc.iter_mut().zip(self.predict(&s.x).iter().zip(&s.y)) {
                *a += (p - t).abs();
            }
        }
        acc.iter()
            .map(|a| a / samples.len().max(1) as f64)
            .collect()
    }

    /// Linear model coefficients mapped back to raw units: `(weights[out][in],
    /// intercepts[out])`. `None` for an MLP.
    pub fn coefficients_raw(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        if self.kind != ModelKind::Linear {
            return None;
        }
        let layer = &self.layers[0];
        let mut weights = Vec::with_capacity(layer.outputs);
        let mut intercepts = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let range = self.y_scaler.range(o);
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let w: Vec<f64> = row
                .iter()
                .zip(&self.x_scaler.std)
                .map(|(w, s)| range * w / s)
                .collect();
            let shift: f64 = row
                .iter()
                .zip(&self.x_scaler.mean)
                .zip(&self.x_scaler.std)
                .map(|((w, m), s)| w * m / s)
                .sum();
            intercepts.push(self.y_scaler.min[o] + range * (layer.bias[o] - shift));
            weights.push(w);
        }
        Some((weights, intercepts))
    }

    /// Raw prediction decoded into a device-feasible setting. DG limits use
    /// `dg_p_kw` when given, otherwise the expected DG output under the
    /// default scenario distributions.
    pub fn predict_decoded(
        &self,
        net: &NetworkModel,
        x: &[f64],
        dg_p_kw: Option<&[f64]>,
    ) -> Result<ControlVector> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "regressor input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput {
                what: "regressor input",
                reason: "non-finite feature".into(),
            });
        }
        let expected;
        let dg = match dg_p_kw {
            Some(p) => p,
            None => {
                expected = ScenarioConfig::default().expected_dg_p_kw(net);
                &expected
            }
        };
        decode_controls(net, &self.predict(x), dg)
    }

    pub fn validate(&self) -> Result<()> {
        let chain_ok = self.architecture.len() == self.layers.len() + 1
            && self.layers.iter().enumerate().all(|(k, l)| {
                l.inputs == self.architecture[k]
                    && l.outputs == self.architecture[k + 1]
                    && l.weights.len() == l.inputs * l.outputs
                    && l.bias.len() == l.outputs
            });
        let scalers_ok = self.x_scaler.mean.len() == self.input_dim()
            && self.x_scaler.std.len() == self.input_dim()
            && self.x_scaler.std.iter().all(|&s| s > 0.0)
            && self.y_scaler.min.len() == self.output_dim()
            && self.y_scaler.max.len() == self.output_dim()
            && self
                .y_scaler
                .min
                .iter()
                .zip(&self.y_scaler.max)
                .all(|(a, b)| b > a);
        if chain_ok && scalers_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput {
                what: "model file",
                reason: "layer dimensions or scalers are inconsistent".into(),
            })
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::parse("model file", e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }
}

impl Predictor for TrainedRegressor {
    fn name(&self) -> &str {
        match self.kind {
            ModelKind::Mlp => "mlp",
            ModelKind::Linear => "linear",
        }
    }
    fn input_dim(&self) -> usize {
        self.architecture[0]
    }
    fn output_dim(&self) -> usize {
        *self.architecture.last().expect("non-empty architecture")
    }
    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.y_scaler.inverse(&self.predict_scaled(x))
    }
}

/// Rounds and clamps raw outputs onto the device bounds of `net`.
pub fn decode_controls(net: &NetworkModel, raw: &[f64], dg_p_kw: &[f64]) -> Result<ControlVector> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput {
            what: "raw control output",
            reason: "non-finite value".into(),
        });
    }
    if dg_p_kw.len() != net.dg_units.len() {
        return Err(Error::Dimension {
            what: "DG active outputs",
            expected: net.dg_units.len(),
            found: dg_p_kw.len(),
        });
    }
    let mut c = ControlVector::from_slice(net, raw)?;
    let nt = net.n_transformers();
    if let Some(tx) = &net.transformer {
        c.tap = (raw[0]
            .round()
            .clamp(f64::from(tx.tap_min), f64::from(tx.tap_max))) as i32;
    }
    for (k, cb) in net.capacitor_banks.iter().enumerate() {
        c.cb_steps[k] = raw[nt + k].round().clamp(0.0, f64::from(cb.n_steps)) as i32;
    }
    for ((q, dg), &p) in c.dg_q_kvar.iter_mut().zip(&net.dg_units).zip(dg_p_kw) {
        let cap = dg.q_capability_kvar(p);
        *q = q.clamp(-cap, cap);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: Vec<f64>,
    /// Fraction of samples whose decoded setting yields a violation-free
    /// power flow under the sample's own scenario.
    pub feasibility_rate: f64,
    pub samples: usize,
}

pub fn evaluate(
    model: &TrainedRegressor,
    net: &NetworkModel,
    samples: &[LabeledSample],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let solver = SweepSolver::new(net)?;
    let mut feasible = 0usize;
    for s in samples {
        let c = model.predict_decoded(net, &s.x, Some(&s.scenario.dg_p_kw))?;
        let pf = solver.solve(&s.scenario, &c)?;
        if check_feasibility(net, &pf, &c, &s.scenario).is_empty() {
            feasible += 1;
        }
    }
    Ok(EvalReport {
        mae: model.mae(samples),
        feasibility_rate: feasible as f64 / samples.len() as f64,
        samples: samples.len(),
    })
}

/// A bare sample with no scenario attached, for synthetic fixtures.
pub fn synthetic_sample(x: Vec<f64>, y: Vec<f64>) -> LabeledSample {
    LabeledSample {
        x,
        y,
        scenario: LoadScenario {
            p_kw: Vec::new(),
            q_kvar: Vec::new(),
            dg_p_kw: Vec::new(),
            seed: 0,
        },
        objective_f: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_dataset, DEFAULT_FRACTIONS};
    use rand::Rng;

    fn split_from(samples: Vec<LabeledSample>) -> DatasetSplit {
        split_dataset(samples, DEFAULT_FRACTIONS, 3).unwrap()
    }

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn linear_recovers_exact_coefficient() {
        let rows = gaussian_rows(200, 3, 1);
        let samples = rows
            .into_iter()
            .map(|x| synthetic_sample(x.clone(), vec![3.0 * x[0]]))
            .collect();
        let model = train_linear(&split_from(samples)).unwrap();
        let (w, b) = model.coefficients_raw().unwrap();
        assert!((w[0][0] - 3.0).abs() < 1e-8, "{}", w[0][0]);
        assert!(w[0][1].abs() < 1e-8 && w[0][2].abs() < 1e-8 && b[0].abs() < 1e-8);
        assert_eq!(model.train_metrics.ridge_lambda, None);
    }

    #[test]
    fn linear_residuals_orthogonal_to_features() {
        let rows = gaussian_rows(300, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<LabeledSample> = rows
            .into_iter()
            .map(|x| {
                let y = x[0] - 2.0 * x[3] + rng.random::<f64>();
                synthetic_sample(x, vec![y])
            })
            .collect();
        let split = split_from(samples);
        let model = train_linear(&split).unwrap();
        let train = scale(&split.train, &model.x_scaler, &model.y_scaler);
        for j in 0..4 {
            let dot: f64 = train
                .x
                .iter()
                .zip(&train.y)
                .map(|(x, y)| x[j] * (forward_all(&model.layers, x)[0][0] - y[0]))
                .sum();
            assert!(dot.abs() < 1e-8, "feature {j}: {dot}");
        }
    }

    #[test]
    fn linear_duplicate_column_uses_ridge() {
        let rows = gaussian_rows(100, 1, 3);
        let samples = rows
            .into_iter()
            .map(|x| synthetic_sample(vec![x[0], x[0]], vec![x[0]]))
            .collect();
        let model = train_linear(&split_from(samples)).unwrap();
        assert_eq!(model.train_metrics.ridge_lambda, Some(RIDGE_LAMBDA));
        assert!(model.train_metrics.val_mae[0] < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layers = vec![Layer::he(3, 3, &mut rng), Layer::he(3, 2, &mut rng)];
        let mut layers = layers;
        layers[0].bias = vec![0.1, -0.2, 0.3];
        layers[1].bias = vec![0.05, -0.05];
        let xs = gaussian_rows(4, 3, 12);
        let ys = gaussian_rows(4, 2, 13);
        let loss = |ls: &[Layer]| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| {
                    forward_all(ls, x)
                        .last()
                        .unwrap()
                        .iter()
                        .zip(y)
                        .map(|(p, t)| 0.5 * (p - t) * (p - t))
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        let mut g = Grads::zeros(&layers);
        for (x, y) in xs.iter().zip(&ys) {
            backprop(&layers, x, y, 1.0, &mut g);
        }
        let eps = 1e-5;
        for k in 0..layers.len() {
            for i in 0..layers[k].weights.len() + layers[k].bias.len() {
                let mut plus = layers.clone();
                let mut minus = layers.clone();
                let nw = layers[k].weights.len();
                let (analytic, pp, mm) = if i < nw {
                    (g.w[k][i], &mut plus[k].weights[i], &mut minus[k].weights[i])
                } else {
                    (
                        g.b[k][i - nw],
                        &mut plus[k].bias[i - nw],
                        &mut minus[k].bias[i - nw],
                    )
                };
                *pp += eps;
                *mm -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {k} param {i}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn mlp_fits_linear_map() {
        let rows = gaussian_rows(1000, 4, 4);
        let samples = rows
            .into_iter()
            .map(|x| synthetic_sample(x.clone(), vec![x[0] + 0.5 * x[1], x[2] - x[3]]))
            .collect();
        let params = MlpParams {
            hidden: vec![32],
            epochs: 600,
            patience: 600,
            seed: 5,
            ..MlpParams::default()
        };
        let model = train_mlp(&split_from(samples), &params).unwrap();
        assert!(
            model.train_metrics.val_mae_scaled.iter().all(|&m| m < 1e-2),
            "{:?}",
            model.train_metrics
        );
    }

    #[test]
    fn mlp_fits_constant_target() {
        let rows = gaussian_rows(100, 3, 6);
        let samples = rows
            .into_iter()
            .map(|x| synthetic_sample(x, vec![4.2]))
            .collect();
        let params = MlpParams {
            hidden: vec![8],
            batch: 4,
            epochs: 2000,
            patience: 2000,
            seed: 1,
            ..MlpParams::default()
        };
        let model = train_mlp(&split_from(samples), &params).unwrap();
        for x in gaussian_rows(20, 3, 7) {
            let p = model.predict(&x)[0];
            assert!((p - 4.2).abs() < 1e-3, "{p} {:?}", model.train_metrics);
        }
    }

    #[test]
    fn mlp_training_is_seeded() {
        let rows = gaussian_rows(60, 2, 8);
        let samples: Vec<_> = rows
            .into_iter()
            .map(|x| synthetic_sample(x.clone(), vec![x[0] * x[1]]))
            .collect();
        let params = MlpParams {
            hidden: vec![6],
            epochs: 10,
            ..MlpParams::default()
        };
        let split = split_from(samples);
        assert_eq!(
            train_mlp(&split, &params).unwrap(),
            train_mlp(&split, &params).unwrap()
        );
    }

    fn weight_norm(m: &TrainedRegressor) -> f64 {
        m.layers
            .iter()
            .flat_map(|l| &l.weights)
            .map(|w| w * w)
            .sum()
    }

    #[test]
    fn weight_decay_shrinks_weights_and_grid_keeps_best() {
        let rows = gaussian_rows(120, 4, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples = rows
            .into_iter()
            .map(|x| {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                synthetic_sample(x.clone(), vec![x[0] + 0.5 * noise])
            })
            .collect();
        let split = split_from(samples);
        let params = MlpParams {
            hidden: vec![16],
            epochs: 60,
            patience: 60,
            seed: 2,
            ..MlpParams::default()
        };
        let plain = train_mlp(&split, &params).unwrap();
        let decayed = train_mlp(
            &split,
            &MlpParams {
                l2: 50.0,
                ..params.clone()
            },
        )
        .unwrap();
        assert!(weight_norm(&decayed) < weight_norm(&plain));
        assert_eq!(decayed.train_metrics.l2, 50.0);

        let grid = [0.0, 1.0, 50.0];
        let chosen = train_mlp_l2_grid(&split, &params, &grid).unwrap();
        let search = &chosen.train_metrics.l2_search;
        assert_eq!(search.iter().map(|s| s.0).collect::<Vec<_>>(), grid);
        let best = search.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        assert_eq!(chosen.train_metrics.best_val_mse, best);
        assert!(MlpParams { l2: -1.0, ..params }.validate().is_err());
    }

    #[test]
    fn empty_split_is_an_error() {
        let split = DatasetSplit {
            train: vec![],
            val: vec![],
            test: vec![],
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
        };
        assert!(matches!(
            train_mlp(&split, &MlpParams::default()),
            Err(Error::Empty(_))
        ));
        assert!(matches!(train_linear(&split), Err(Error::Empty(_))));
    }

    #[test]
    fn save_load_is_bit_identical() {
        let rows = gaussian_rows(80, 3, 9);
        let samples = rows
            .into_iter()
            .map(|x| synthetic_sample(x.clone(), vec![x[0].sin(), x[1]]))
            .collect();
        let params = MlpParams {
            hidden: vec![7, 5],
            epochs: 5,
            ..MlpParams::default()
        };
        let model = train_mlp(&split_from(samples), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        let back = TrainedRegressor::load(&path).unwrap();
        assert_eq!(back, model);
        for x in gaussian_rows(100, 3, 10) {
            let (a, b) = (model.predict(&x), back.predict(&x));
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn corrupt_model_is_rejected() {
        assert!(matches!(
            TrainedRegressor::from_json_str("{"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn decoding_rounds_and_clamps() {
        let net = NetworkModel::ieee33();
        let dg = vec![300.0, 0.0, 500.0];
        let c = decode_controls(&net, &[0.4, -2.0, 7.6, 900.0, -900.0, 50.0], &dg).unwrap();
        assert_eq!(c.tap, 0);
        assert_eq!(c.cb_steps, vec![0, 7]);
        assert_eq!(c.dg_q_kvar, vec![400.0, -500.0, 0.0]);
        let c = decode_controls(&net, &[9.3, 8.0, 8.0, 0.0, 0.0, 0.0], &dg).unwrap();
        assert_eq!(c.tap, 8);
        assert_eq!(c.cb_steps, vec![8, 7]);
        assert!(decode_controls(&net, &[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0], &dg).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn decoded_controls_always_valid(
                raw in proptest::collection::vec(-2000.0f64..2000.0, 6),
                dg in proptest::collection::vec(0.0f64..=500.0, 3),
            ) {
                let net = NetworkModel::ieee33();
                let c = decode_controls(&net, &raw, &dg).unwrap();
                prop_assert!(net.validate_controls(&c, &dg).unwrap().is_empty());
            }
        }
    }
}
