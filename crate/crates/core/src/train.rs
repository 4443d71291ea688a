//! Losses, optimizers, and the training loop.
//!
//! Training minimizes softmax cross-entropy plus an L2 penalty; the margin
//! loss is non-differentiable and used for evaluation only. The loop is
//! deterministic given the seed: per-sample gradients inside a batch may be
//! computed concurrently, but they are reduced in sample order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypergraph::Arch;
use crate::linalg::Matrix;
use crate::models::{backward, forward, ModelWeights, SampleCtx};
use crate::parallel::map_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Optimizer> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::usage(format!("unknown optimizer '{s}' (expected sgd|adam)"))),
        }
    }

    /// Paper protocol: SGD for AllDeepSets, Adam for everything else.
    pub fn default_for(arch: Arch) -> Optimizer {
        if arch == Arch::AllDeepSets {
            Optimizer::Sgd
        } else {
            Optimizer::Adam
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub gamma: f64,
    pub seed: u64,
    /// (train, test, valid) fractions, must sum to 1.
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            lr: 0.01,
            epochs: 100,
            batch_size: 20,
            l2: 1e-4,
            gamma: 0.25,
            seed: 0,
            split: (0.5, 0.3, 0.2),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::data("split ratios must be positive".to_string()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::data("split ratios must sum to 1".to_string()));
        }
        if self.gamma < 0.0 {
            return Err(Error::data("margin gamma must be non-negative".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::data("batch size must be positive".to_string()));
        }
        Ok(())
    }
}

/// Adam moment accumulators (beta1=0.9, beta2=0.999, eps=1e-8) or nothing
/// for plain SGD.
pub struct OptimizerState {
    optimizer: Optimizer,
    step: usize,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(optimizer: Optimizer, weights: &ModelWeights) -> OptimizerState {
        let (m, v) = match optimizer {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam => (weights.zero_like(), weights.zero_like()),
        };
        OptimizerState { optimizer, step: 0, m, v }
    }

    /// Apply one update from the already-averaged batch gradients, including
    /// the L2 term 2*l2*W.
    pub fn apply(&mut self, weights: &mut ModelWeights, grads: &[Matrix], lr: f64, l2: f64) -> Result<()> {
        self.step += 1;
        for (idx, g) in grads.iter().enumerate() {
            let w = &mut weights.layers[idx].mat;
            let (rows, cols) = (w.rows(), w.cols());
            let mut data = w.data().to_vec();
            match self.optimizer {
                Optimizer::Sgd => {
                    // w <- w - lr * (g + 2*l2*w)
                    for (wi, gi) in data.iter_mut().zip(g.data()) {
                        *wi -= lr * (gi + 2.0 * l2 * *wi);
                    }
                }
                Optimizer::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                    let mut mdata = self.m[idx].data().to_vec();
                    let mut vdata = self.v[idx].data().to_vec();
                    for i in 0..data.len() {
                        let full = g.data()[i] + 2.0 * l2 * data[i];
                        mdata[i] = ADAM_BETA1 * mdata[i] + (1.0 - ADAM_BETA1) * full;
                        vdata[i] = ADAM_BETA2 * vdata[i] + (1.0 - ADAM_BETA2) * full * full;
                        let mhat = mdata[i] / bc1;
                        let vhat = vdata[i] / bc2;
                        data[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                    self.m[idx] = Matrix::new(rows, cols, mdata)
                        .map_err(|_| Error::numeric("non-finite adam moment".to_string()))?;
                    self.v[idx] = Matrix::new(rows, cols, vdata)
                        .map_err(|_| Error::numeric("non-finite adam moment".to_string()))?;
                }
            }
            *w = Matrix::new(rows, cols, data)
                .map_err(|_| Error::numeric("non-finite weight after optimizer step".to_string()))?;
        }
        Ok(())
    }
}

/// Multiclass margin loss of one sample: 1 if the true-class logit fails to
/// beat the best other logit by more than gamma (ties fail).
pub fn margin_loss(logits: &Matrix, label: usize, gamma: f64) -> Result<f64> {
    let row = logits.row(0);
    if label >= row.len() {
        return Err(Error::data(format!("label {label} out of range for {} classes", row.len())));
    }
    if row.len() == 1 {
        // degenerate single-class case: the max over an empty set is -inf
        return Ok(0.0);
    }
    let best_other = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if row[label] <= gamma + best_other { 1.0 } else { 0.0 })
}

/// Mean margin loss of a model over labelled samples.
pub fn dataset_margin_loss(
    weights: &ModelWeights,
    samples: &[(SampleCtx, usize)],
    gamma: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::data("dataset_margin_loss over empty sample set".to_string()));
    }
    let losses = map_indexed(samples, |(ctx, label)| {
        let trace = forward(weights, ctx)?;
        margin_loss(&trace.logits, *label, gamma)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// Softmax cross-entropy of 1xC logits: (loss, dlogits).
pub fn cross_entropy(logits: &Matrix, label: usize) -> Result<(f64, Matrix)> {
    let row = logits.row(0);
    if label >= row.len() {
        return Err(Error::data(format!("label {label} out of range")));
    }
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - maxv).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // log-sum-exp form: stays finite even when the true-class probability
    // underflows to zero
    let loss = maxv + sum.ln() - row[label];
    let mut grad = Matrix::zeros(1, row.len());
    for (i, e) in exps.iter().enumerate() {
        let p = e / sum;
        grad.set(0, i, if i == label { p - 1.0 } else { p });
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_loss: f64,
    pub train_margin_loss: f64,
    pub valid_margin_loss: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,ce_loss,train_margin_loss,valid_margin_loss\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.ce_loss, e.train_margin_loss, e.valid_margin_loss
        ));
    }
    out
}

/// Mean cross-entropy gradients over one batch; per-sample work may run in
/// parallel, reduction is in sample order.
fn batch_gradients(
    weights: &ModelWeights,
    batch: &[&(SampleCtx, usize)],
) -> Result<(f64, Vec<Matrix>)> {
    let per_sample = map_indexed(batch, |(ctx, label)| {
        let trace = forward(weights, ctx)?;
        let (loss, dlogits) = cross_entropy(&trace.logits, *label)?;
        let grads = backward(weights, ctx, &trace, &dlogits)?;
        Ok::<_, Error>((loss, grads))
    });
    let mut total_loss = 0.0;
    let mut acc = weights.zero_like();
    let count = batch.len() as f64;
    for item in per_sample {
        let (loss, grads) = item?;
        total_loss += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_scaled(g, 1.0 / count)?;
        }
    }
    Ok((total_loss / count, acc))
}

/// Public handle on the batch step (parallel when the feature is enabled).
pub fn batch_gradients_par(
    weights: &ModelWeights,
    batch: &[&(SampleCtx, usize)],
) -> Result<(f64, Vec<Matrix>)> {
    batch_gradients(weights, batch)
}

/// Sequential twin of the training batch step, kept available regardless of
/// the `parallel` feature so benchmarks can compare both paths.
pub fn batch_gradients_seq(
    weights: &ModelWeights,
    batch: &[&(SampleCtx, usize)],
) -> Result<(f64, Vec<Matrix>)> {
    let mut total_loss = 0.0;
    let mut acc = weights.zero_like();
    let count = batch.len() as f64;
    for (ctx, label) in batch {
        let trace = forward(weights, ctx)?;
        let (loss, dlogits) = cross_entropy(&trace.logits, *label)?;
        let grads = backward(weights, ctx, &trace, &dlogits)?;
        total_loss += loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_scaled(g, 1.0 / count)?;
        }
    }
    Ok((total_loss / count, acc))
}

/// Largest global gradient norm allowed into the optimizer; deep expansive
/// stacks can otherwise produce steps that overflow the weights.
const MAX_GRAD_NORM: f64 = 1.0e3;

/// Clip the batch gradients to a global L2 norm of `max_norm`. The norm is
/// computed with max-abs prescaling so the sum of squares cannot overflow.
fn clip_gradients(grads: &mut [Matrix], max_norm: f64) {
    let amax = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if amax == 0.0 {
        return;
    }
    let sumsq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| (v / amax) * (v / amax))
        .sum();
    let norm = amax * sumsq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
}

/// Train a model; fully deterministic given config.seed. `valid` may be
/// empty (validation margin loss reported as 0).
pub fn train_model(
    arch: Arch,
    train: &[(SampleCtx, usize)],
    valid: &[(SampleCtx, usize)],
    input_dim: usize,
    hidden: usize,
    classes: usize,
    order_m: usize,
    l_steps: usize,
    config: &TrainConfig,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::data("training set is empty".to_string()));
    }
    let mut weights =
        ModelWeights::init_glorot(arch, l_steps, input_dim, hidden, classes, order_m, config.seed)?;
    let mut opt = OptimizerState::new(config.optimizer, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_CAFE);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&(SampleCtx, usize)> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(&weights, &batch)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("training diverged at epoch {epoch}")));
            }
            clip_gradients(&mut grads, MAX_GRAD_NORM);
            opt.apply(&mut weights, &grads, config.lr, config.l2)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_ml = dataset_margin_loss(&weights, train, config.gamma)?;
        let valid_ml = if valid.is_empty() {
            0.0
        } else {
            dataset_margin_loss(&weights, valid, config.gamma)?
        };
        log.push(EpochLog {
            epoch,
            ce_loss: epoch_loss / batches as f64,
            train_margin_loss: train_ml,
            valid_margin_loss: valid_ml,
        });
    }
    Ok((weights, log))
}

/// Deterministic (train, test, valid) index split by seeded shuffle.
pub fn split_indices(n: usize, split: (f64, f64, f64), seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5711_7000);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * split.0).round() as usize;
    let n_test = ((n as f64) * split.1).round() as usize;
    let n_train = n_train.clamp(1, n.saturating_sub(2).max(1));
    let n_test = n_test.min(n - n_train);
    let train = idx[..n_train].to_vec();
    let test = idx[n_train..n_train + n_test].to_vec();
    let valid = idx[n_train + n_test..].to_vec();
    (train, test, valid)
}
