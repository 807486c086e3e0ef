//! Dense ReLU network regressor trained with Adam on mean squared error.
//!
//! Layer `l` stores its weights as an `in_dim × out_dim` matrix so a batch
//! forward step is `X · W + b`. Hidden layers use ReLU; the output layer is
//! linear with a single unit.

use std::cell::Cell;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Rows per block when running inference on large matrices.
const FORWARD_BLOCK: usize = 4096;

thread_local! {
    static FORWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of batch forward passes run on the calling thread so far.
pub fn forward_passes_on_this_thread() -> u64 {
    FORWARD_PASSES.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for MlpConfig {
    /// Desk-scale profile: two hidden layers of 64 units, 100 epochs.
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            init_seed: 0,
            shuffle_seed: 1,
        }
    }
}

impl MlpConfig {
    /// Full-size profile: two hidden layers of 2048 units.
    pub fn full_scale() -> Self {
        Self {
            hidden_widths: vec![2048, 2048],
            ..Self::default()
        }
    }

    pub fn with_hidden(mut self, widths: &[usize]) -> Self {
        self.hidden_widths = widths.to_vec();
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    /// Copy with init and shuffle seeds taken from the substream `(base, keys)`.
    pub fn reseeded(&self, base: u64, keys: &[u64]) -> Self {
        let mut init_keys = keys.to_vec();
        init_keys.push(0);
        let mut shuffle_keys = keys.to_vec();
        shuffle_keys.push(1);
        Self {
            init_seed: rng::derive_seed(base, &init_keys),
            shuffle_seed: rng::derive_seed(base, &shuffle_keys),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.adam_beta1) || !in_unit(self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::invalid("Adam betas must lie in (0,1) and epsilon be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub config: MlpConfig,
    pub input_dim: usize,
    pub trained: bool,
}

/// Parameter-shaped gradient collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean training MSE over each epoch's mini-batches.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// He-uniform weights (bound √(6/fan_in)) and zero biases.
pub fn init_mlp(input_dim: usize, config: &MlpConfig) -> Result<MlpModel> {
    if input_dim == 0 {
        return Err(Error::invalid("input_dim must be >= 1"));
    }
    config.validate()?;
    let mut rng = rng::stream(config.init_seed, &[0x494e4954]);
    let mut dims = vec![input_dim];
    dims.extend(&config.hidden_widths);
    dims.push(1);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        weights,
        biases,
        config: config.clone(),
        input_dim,
        trained: false,
    })
}

impl MlpModel {
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Multiply–accumulate operations per input row in one forward pass.
    pub fn macs_per_row(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Check layer shapes chain from `input_dim` to a single output.
    pub fn validate_shapes(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::invalid("network needs matching weight and bias layers"));
        }
        let mut dim = self.input_dim;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            check_dim(dim, w.nrows(), "layer input width")?;
            check_dim(w.ncols(), b.len(), "layer bias width")?;
            dim = w.ncols();
        }
        check_dim(1, dim, "network output width")
    }

    /// One prediction per row of `x`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_dim(self.input_dim, x.ncols(), "network input columns")?;
        FORWARD_PASSES.with(|c| c.set(c.get() + 1));
        let mut out = Array1::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + FORWARD_BLOCK).min(x.nrows());
            let block = self.forward_block(x.slice(s![start..end, ..]));
            out.slice_mut(s![start..end]).assign(&block);
            start = end;
        }
        Ok(out)
    }

    fn forward_block(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let last = self.n_layers() - 1;
        let mut a = affine(x, &self.weights[0], &self.biases[0]);
        for l in 1..=last {
            a.mapv_inplace(relu);
            a = affine(a.view(), &self.weights[l], &self.biases[l]);
        }
        a.index_axis_move(Axis(1), 0)
    }

    /// Mean squared error on `(x, y)` and its exact gradient.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Gradients)> {
        check_dim(self.input_dim, x.ncols(), "network input columns")?;
        check_dim(x.nrows(), y.len(), "targets vs rows")?;
        if x.nrows() == 0 {
            return Err(Error::invalid("loss over zero rows"));
        }
        Ok(self.backprop(x, y))
    }

    fn backprop(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let last = self.n_layers() - 1;
        // pre-activations of every layer
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        pre.push(affine(x, &self.weights[0], &self.biases[0]));
        for l in 1..=last {
            let act = pre[l - 1].mapv(relu);
            pre.push(affine(act.view(), &self.weights[l], &self.biases[l]));
        }
        let out = pre[last].column(0);
        let mut delta = Array2::zeros((x.nrows(), 1));
        let mut loss = 0.0;
        for ((d, &p), &t) in delta.column_mut(0).iter_mut().zip(out.iter()).zip(y.iter()) {
            let r = p - t;
            loss += r * r;
            *d = 2.0 * r / n;
        }
        loss /= n;

        let mut gw = vec![Array2::zeros((0, 0)); self.n_layers()];
        let mut gb = vec![Array1::zeros(0); self.n_layers()];
        for l in (0..=last).rev() {
            gb[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                gw[0] = x.t().dot(&delta);
            } else {
                let act = pre[l - 1].mapv(relu);
                gw[l] = act.t().dot(&delta);
                let mut back = delta.dot(&self.weights[l].t());
                Zip::from(&mut back)
                    .and(&pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
        }
        (loss, Gradients { weights: gw, biases: gb })
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = x.dot(w);
    z += b;
    z
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        let zw = || model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let zb = || model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
        Self {
            m_w: zw(),
            v_w: zw(),
            m_b: zb(),
            v_b: zb(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        let cfg = &model.config;
        self.step += 1;
        let (b1, b2, eps, lr) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..model.weights.len() {
            Zip::from(&mut model.weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut model.biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}

/// Train a fresh network for `config.epochs` shuffled mini-batch passes.
pub fn train_mlp(x: ArrayView2<f64>, y: ArrayView1<f64>, config: &MlpConfig) -> Result<(MlpModel, TrainReport)> {
    check_dim(x.nrows(), y.len(), "targets vs rows")?;
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot train on zero rows"));
    }
    let mut model = init_mlp(x.ncols(), config)?;
    let mut adam = Adam::new(&model);
    let mut shuffle = rng::stream(config.shuffle_seed, &[0x53485546]);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (loss, grads) = model.backprop(xb.view(), yb.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += loss * batch.len() as f64;
            adam.update(&mut model, &grads);
        }
        epoch_losses.push(total / n as f64);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs - 1,
        });
    }
    model.trained = true;
    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok((model, TrainReport { epoch_losses, final_loss }))
}
