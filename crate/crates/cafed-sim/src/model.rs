//! Ridge-regularized linear classifiers: cross-entropy loss and gradient,
//! minibatch local SGD, Euclidean-ball projection, and the deterministic
//! full-batch minimization oracles used to evaluate `F*`, `F_k*`, `F_B*`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, FederationData};
use crate::error::{Error, Result};

/// Hypothesis-class parameters. The admissible set `W` is the Euclidean ball
/// of the given radius; `ridge > 0` makes the loss strongly convex with
/// modulus `mu = ridge`. When `bias` is set a constant feature is appended
/// and included in the ridge term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub ridge: f64,
    pub radius: f64,
    pub bias: bool,
}

impl ModelConfig {
    pub fn new(dim: usize, n_classes: usize, ridge: f64, radius: f64) -> Self {
        Self { dim, n_classes, ridge, radius, bias: true }
    }

    fn n_rows(&self) -> usize {
        self.dim + self.bias as usize
    }

    /// Binary heads use a single score column; multiclass heads one per class.
    fn n_cols(&self) -> usize {
        if self.n_classes == 2 {
            1
        } else {
            self.n_classes
        }
    }
}

/// Linear classifier parameters: binary logistic for two classes, multinomial
/// softmax otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    config: ModelConfig,
    weights: Array2<f64>,
}

impl LinearModel {
    /// Zero-initialized model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.dim == 0 || config.n_classes < 2 {
            return Err(Error::Parameter("dim >= 1 and n_classes >= 2 required".into()));
        }
        if config.ridge <= 0.0 || config.radius <= 0.0 {
            return Err(Error::Parameter("ridge and radius must be positive".into()));
        }
        let weights = Array2::zeros((config.n_rows(), config.n_cols()));
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::Shape(format!(
                "expected weights of shape {:?}, got {:?}",
                self.weights.dim(),
                weights.dim()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Euclidean projection onto the ball `W`; identity when already inside.
    pub fn project(&mut self) {
        let norm = self.weight_norm();
        if norm > self.config.radius {
            self.weights *= self.config.radius / norm;
        }
    }

    /// Raw scores for a batch; rows follow `idx` when given.
    fn scores(&self, data: &ClientDataset, idx: Option<&[usize]>) -> Array2<f64> {
        let (rows, cols) = (idx.map_or(data.n_samples(), |i| i.len()), self.config.n_cols());
        let mut scores = Array2::zeros((rows, cols));
        let x = data.features();
        let d = self.config.dim;
        for (r, sample) in batch_indices(data, idx).enumerate() {
            for c in 0..cols {
                let mut s = 0.0;
                for j in 0..d {
                    s += x[(sample, j)] * self.weights[(j, c)];
                }
                if self.config.bias {
                    s += self.weights[(d, c)];
                }
                scores[(r, c)] = s;
            }
        }
        scores
    }

    fn check_batch(&self, data: &ClientDataset, idx: Option<&[usize]>) -> Result<()> {
        if data.dim() != self.config.dim {
            return Err(Error::Shape(format!(
                "model dim {} vs data dim {}",
                self.config.dim,
                data.dim()
            )));
        }
        if idx.map_or(data.n_samples(), |i| i.len()) == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some(bad) = data.labels().iter().find(|&&y| y >= self.config.n_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside 0..{}",
                self.config.n_classes
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch plus `ridge/2 * ||weights||^2`.
    pub fn loss(&self, data: &ClientDataset, idx: Option<&[usize]>) -> Result<f64> {
        self.check_batch(data, idx)?;
        let scores = self.scores(data, idx);
        let labels = data.labels();
        let n = scores.nrows();
        let mut total = 0.0;
        for (r, sample) in batch_indices(data, idx).enumerate() {
            let y = labels[sample];
            if self.config.n_classes == 2 {
                let s = scores[(r, 0)];
                // softplus(s) - y*s, numerically stable
                total += s.max(0.0) - y as f64 * s + (-s.abs()).exp().ln_1p();
            } else {
                let row = scores.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_z = max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
                total += log_z - row[y];
            }
        }
        let sq_norm: f64 = self.weights.iter().map(|w| w * w).sum();
        Ok(total / n as f64 + 0.5 * self.config.ridge * sq_norm)
    }

    /// Exact gradient of [`Self::loss`] (including the ridge term).
    pub fn gradient(&self, data: &ClientDataset, idx: Option<&[usize]>) -> Result<Array2<f64>> {
        self.check_batch(data, idx)?;
        let scores = self.scores(data, idx);
        let labels = data.labels();
        let x = data.features();
        let d = self.config.dim;
        let n = scores.nrows() as f64;
        let mut grad = &self.weights * self.config.ridge;
        for (r, sample) in batch_indices(data, idx).enumerate() {
            let y = labels[sample];
            if self.config.n_classes == 2 {
                let resid = (sigmoid(scores[(r, 0)]) - y as f64) / n;
                for j in 0..d {
                    grad[(j, 0)] += resid * x[(sample, j)];
                }
                if self.config.bias {
                    grad[(d, 0)] += resid;
                }
            } else {
                let row = scores.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&s| (s - max).exp()).sum();
                for c in 0..row.len() {
                    let p = (row[c] - max).exp() / z;
                    let resid = (p - (c == y) as usize as f64) / n;
                    for j in 0..d {
                        grad[(j, c)] += resid * x[(sample, j)];
                    }
                    if self.config.bias {
                        grad[(d, c)] += resid;
                    }
                }
            }
        }
        Ok(grad)
    }

    /// `E` sequential minibatch SGD steps on freshly sampled batches.
    /// Returns the local update `delta = w_end - w_start`.
    pub fn local_sgd(
        &self,
        data: &ClientDataset,
        e_steps: usize,
        lr: f64,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Array2<f64>> {
        if e_steps == 0 {
            return Err(Error::Parameter("e_steps must be >= 1".into()));
        }
        if data.n_samples() == 0 {
            return Err(Error::Data("client has no training data".into()));
        }
        let mut local = self.clone();
        for _ in 0..e_steps {
            let grad = if batch_size >= data.n_samples() {
                local.gradient(data, None)?
            } else {
                let idx = rand::seq::index::sample(rng, data.n_samples(), batch_size).into_vec();
                local.gradient(data, Some(&idx))?
            };
            local.weights.scaled_add(-lr, &grad);
        }
        Ok(&local.weights - &self.weights)
    }

    /// Loss on one freshly sampled minibatch (full batch when `batch_size`
    /// covers the dataset).
    pub fn batch_loss(
        &self,
        data: &ClientDataset,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if batch_size >= data.n_samples() {
            self.loss(data, None)
        } else {
            let idx = rand::seq::index::sample(rng, data.n_samples(), batch_size).into_vec();
            self.loss(data, Some(&idx))
        }
    }

    /// Server step `w <- proj(w + lr * update)`.
    pub fn apply_update(&mut self, update: &Array2<f64>, lr: f64) -> Result<()> {
        if update.dim() != self.weights.dim() {
            return Err(Error::Shape("update shape mismatch".into()));
        }
        self.weights.scaled_add(lr, update);
        self.project();
        Ok(())
    }

    /// Fraction of argmax-correct predictions; ties go to the lowest class.
    pub fn accuracy(&self, data: &ClientDataset) -> Result<f64> {
        self.check_batch(data, None)?;
        let scores = self.scores(data, None);
        let labels = data.labels();
        let mut correct = 0usize;
        for r in 0..scores.nrows() {
            let pred = if self.config.n_classes == 2 {
                (scores[(r, 0)] > 0.0) as usize
            } else {
                let row = scores.row(r);
                let mut best = 0usize;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            };
            correct += (pred == labels[r]) as usize;
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

fn batch_indices<'a>(
    data: &ClientDataset,
    idx: Option<&'a [usize]>,
) -> Box<dyn Iterator<Item = usize> + 'a> {
    match idx {
        Some(indices) => Box::new(indices.iter().copied()),
        None => Box::new(0..data.n_samples()),
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Objective value of the weight-`p` mixture of client training losses.
pub fn weighted_loss(model: &LinearModel, fed: &FederationData, weights: &[f64]) -> Result<f64> {
    let w = normalized(weights, fed.n_clients())?;
    let mut total = 0.0;
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 {
            total += wk * model.loss(&fed.clients[k].train, None)?;
        }
    }
    Ok(total)
}

fn weighted_gradient(
    model: &LinearModel,
    fed: &FederationData,
    weights: &[f64],
) -> Result<Array2<f64>> {
    let w = normalized(weights, fed.n_clients())?;
    let mut grad: Array2<f64> = Array2::zeros(model.weights().dim());
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 {
            grad.scaled_add(wk, &model.gradient(&fed.clients[k].train, None)?);
        }
    }
    Ok(grad)
}

fn normalized(weights: &[f64], n: usize) -> Result<Array1<f64>> {
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} clients", weights.len())));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Parameter("weights must be non-negative and finite".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Parameter("weights must have non-empty support".into()));
    }
    Ok(Array1::from_iter(weights.iter().map(|&w| w / sum)))
}

const MINIMIZE_ITER_CAP: usize = 100_000;

/// Full-batch projected gradient descent with backtracking line search on the
/// weighted objective `sum_k weights_k F_k`, run to gradient norm `<= tol`.
/// One-hot weights recover `(w_k*, F_k*)`; the target weights `alpha` recover
/// `(w*, F*)`; the biased importance `p` recovers `(w_B*, F_B*)`.
pub fn minimize_weighted(
    fed: &FederationData,
    weights: &[f64],
    config: ModelConfig,
    tol: f64,
    warm_start: Option<&LinearModel>,
) -> Result<(LinearModel, f64)> {
    let mut model = match warm_start {
        Some(m) => m.clone(),
        None => LinearModel::new(config)?,
    };
    let l_upper = smoothness_constant(fed, &config);
    let mut step = 1.0 / l_upper;
    let mut value = weighted_loss(&model, fed, weights)?;
    for _ in 0..MINIMIZE_ITER_CAP {
        let grad = weighted_gradient(&model, fed, weights)?;
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let grad_norm = grad_sq.sqrt();
        if grad_norm <= tol {
            return Ok((model, value));
        }
        if grad_norm <= 1e-6 {
            // close to the minimizer the Armijo decrease falls below the
            // floating-point resolution of the loss; plain 1/L steps still
            // contract linearly without comparing function values
            model.weights.scaled_add(-1.0 / l_upper, &grad);
            model.project();
            value = weighted_loss(&model, fed, weights)?;
            continue;
        }
        // Armijo backtracking; the smoothness bound makes the initial step
        // acceptable almost always, so the inner loop rarely runs.
        let mut trial_step = step * 1.5;
        loop {
            let mut trial = model.clone();
            trial.weights.scaled_add(-trial_step, &grad);
            trial.project();
            let trial_value = weighted_loss(&trial, fed, weights)?;
            if trial_value <= value - 1e-4 * trial_step * grad_sq || trial_step < 1e-18 {
                model = trial;
                value = trial_value;
                step = trial_step;
                break;
            }
            trial_step *= 0.5;
        }
    }
    let grad_norm = weighted_gradient(&model, fed, weights)?
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    Err(Error::Convergence(format!(
        "gradient norm {grad_norm:.3e} > tol {tol:.3e} after {MINIMIZE_ITER_CAP} iterations"
    )))
}

/// Upper bound on the gradient Lipschitz constant of the (weighted) objective:
/// `c * max_k trace((1/|D_k|) X^T X) + ridge`, with `c = 1/4` for the binary
/// head and `1/2` for the multinomial head. The trace includes the appended
/// bias feature when the model uses one.
pub fn smoothness_constant(fed: &FederationData, config: &ModelConfig) -> f64 {
    let c = if config.n_classes == 2 { 0.25 } else { 0.5 };
    let mut max_trace = 0.0f64;
    for client in &fed.clients {
        let x = client.train.features();
        let n = x.nrows();
        if n == 0 {
            continue;
        }
        let sq_sum: f64 = x.iter().map(|v| v * v).sum();
        let trace = sq_sum / n as f64 + if config.bias { 1.0 } else { 0.0 };
        max_trace = max_trace.max(trace);
    }
    c * max_trace + config.ridge
}
