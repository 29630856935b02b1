//! Synthetic l2-regularized logistic regression task.
//!
//! Features are drawn from a two-component Gaussian mixture with means
//! `+-separation * u` for a random unit direction `u`; clients see skewed
//! label proportions. The model has one weight per feature plus a bias.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::perturb::{RngHandle, Stage};

/// Labelled samples, features stored row-major with a trailing 1 for the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^-x)` without overflow.
fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Dataset {
    /// `rows` holds feature vectors of length `dim` including the bias entry.
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: dim * labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("label", f64::NAN, "labels must be +1 or -1"));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// `(1/n) sum ln(1 + exp(-y w.x)) + reg/2 ||w||^2`.
    pub fn loss(&self, w: &[f64], reg: f64) -> f64 {
        let data: f64 = (0..self.len())
            .map(|i| softplus_neg(self.labels[i] * dot(w, self.row(i))))
            .sum::<f64>()
            / self.len() as f64;
        data + 0.5 * reg * dot(w, w)
    }

    /// Gradient of one sample's loss `ln(1 + exp(-y w.x)) + reg/2 ||w||^2`.
    pub fn sample_gradient(&self, w: &[f64], reg: f64, i: usize, out: &mut [f64]) {
        let x = self.row(i);
        let y = self.labels[i];
        let c = -y * sigmoid(-y * dot(w, x));
        for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
            *o = c * xi + reg * wi;
        }
    }

    /// Full-batch gradient, no clipping.
    pub fn gradient(&self, w: &[f64], reg: f64) -> Vec<f64> {
        self.clipped_gradient(w, reg, f64::INFINITY)
    }

    /// Mean of per-sample gradients, each first rescaled to norm at most `clip`.
    pub fn clipped_gradient(&self, w: &[f64], reg: f64, clip: f64) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for i in 0..self.len() {
            self.sample_gradient(w, reg, i, &mut g);
            let norm = dot(&g, &g).sqrt();
            let scale = if norm > clip { clip / norm } else { 1.0 };
            total.iter_mut().zip(&g).for_each(|(t, v)| *t += scale * v);
        }
        let n = self.len() as f64;
        total.iter_mut().for_each(|t| *t /= n);
        total
    }

    /// Unclipped per-sample gradient norms.
    pub fn gradient_norms(&self, w: &[f64], reg: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (0..self.len())
            .map(|i| {
                self.sample_gradient(w, reg, i, &mut g);
                dot(&g, &g).sqrt()
            })
            .collect()
    }

    /// Fraction of samples classified correctly by `sign(w.x)`; a score that
    /// is not positive (including NaN) predicts -1.
    pub fn accuracy(&self, w: &[f64]) -> f64 {
        let correct = (0..self.len())
            .filter(|&i| {
                let pred = if dot(w, self.row(i)) > 0.0 { 1.0 } else { -1.0 };
                pred == self.labels[i]
            })
            .count();
        correct as f64 / self.len() as f64
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.features)
    }

    /// Largest eigenvalue of `X^T X / n`.
    pub fn max_covariance_eigenvalue(&self) -> f64 {
        let x = self.matrix();
        let c = x.transpose() * &x / self.len() as f64;
        SymmetricEigen::new(c).eigenvalues.max()
    }

    /// Concatenation of several datasets.
    pub fn pooled(parts: &[Dataset]) -> Result<Self> {
        let dim = parts.first().map(|d| d.dim).unwrap_or(0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Self::new(dim, features, labels)
    }
}

/// Minimizes the regularized logistic loss by damped Newton iterations.
pub fn solve_optimum(data: &Dataset, reg: f64) -> Result<Vec<f64>> {
    if !(reg > 0.0) {
        return Err(invalid("regularization", reg, "must be positive"));
    }
    let x = data.matrix();
    let n = data.len() as f64;
    let mut w = DVector::<f64>::zeros(data.dim);
    for _ in 0..100 {
        let ws = w.as_slice();
        let grad = DVector::from_vec(data.gradient(ws, reg));
        if grad.norm() < 1e-13 {
            break;
        }
        let margins = &x * &w;
        let mut h = DMatrix::<f64>::identity(data.dim, data.dim) * reg;
        let weights: Vec<f64> = margins
            .iter()
            .map(|&m| {
                let s = sigmoid(m);
                s * (1.0 - s) / n
            })
            .collect();
        let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * weights[i]);
        h += x.transpose() * xw;
        let step = h
            .cholesky()
            .ok_or_else(|| invalid("hessian", f64::NAN, "not positive definite"))?
            .solve(&grad);
        let f0 = data.loss(ws, reg);
        let mut t = 1.0;
        loop {
            let cand = &w - &step * t;
            if data.loss(cand.as_slice(), reg) <= f0 - 0.25 * t * grad.dot(&step) || t < 1e-10 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(w.as_slice().to_vec())
}

/// Parameters of the synthetic federated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Feature count; the model dimension is `features + 1`.
    pub features: usize,
    pub clients: usize,
    pub samples_per_client: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// 0 gives balanced clients; 1 gives single-class clients at the extremes.
    #[serde(default = "default_label_skew")]
    pub label_skew: f64,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
}

fn default_separation() -> f64 {
    1.0
}
fn default_label_skew() -> f64 {
    0.6
}
fn default_regularization() -> f64 {
    0.01
}
fn default_test_samples() -> usize {
    4000
}

impl TaskConfig {
    pub fn model_dim(&self) -> usize {
        self.features + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.clients == 0 || self.samples_per_client == 0 || self.test_samples == 0 {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_skew) {
            return Err(Error::Config(format!("label_skew {} outside [0, 1]", self.label_skew)));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::Config("regularization must be positive".into()));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::Config("separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Client datasets plus a balanced test set.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

impl FederatedData {
    /// `q_n = |D_n| / sum |D|`.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.clients.iter().map(|c| c.len()).sum();
        self.clients.iter().map(|c| c.len() as f64 / total as f64).collect()
    }
}

fn draw_samples<R: Rng + ?Sized>(
    rng: &mut R,
    direction: &[f64],
    separation: f64,
    positive_rate: f64,
    count: usize,
) -> Result<Dataset> {
    let features_len = direction.len();
    let dim = features_len + 1;
    let mut features = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let y = if rng.random_bool(positive_rate) { 1.0 } else { -1.0 };
        for &u in direction {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(y * separation * u + noise);
        }
        features.push(1.0);
        labels.push(y);
    }
    Dataset::new(dim, features, labels)
}

/// Generates the federated dataset for one replicate.
pub fn generate(cfg: &TaskConfig, replicate: u64) -> Result<FederatedData> {
    cfg.validate()?;
    let mut rng = RngHandle::new(cfg.data_seed, replicate, 0, Stage::Data).rng();
    let mut direction: Vec<f64> = (0..cfg.features).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dot(&direction, &direction).sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let clients = (0..cfg.clients)
        .map(|n| {
            let position = if cfg.clients == 1 {
                0.0
            } else {
                n as f64 / (cfg.clients - 1) as f64 - 0.5
            };
            let rate = (0.5 + cfg.label_skew * position).clamp(0.0, 1.0);
            draw_samples(&mut rng, &direction, cfg.separation, rate, cfg.samples_per_client)
        })
        .collect::<Result<Vec<_>>>()?;
    let test = draw_samples(&mut rng, &direction, cfg.separation, 0.5, cfg.test_samples)?;
    Ok(FederatedData { clients, test })
}

/// Constants of the task that enter the convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConstants {
    pub w_star: Vec<f64>,
    /// `F(w*)` of the weighted global objective.
    pub f_star: f64,
    pub mu: f64,
    pub alpha: f64,
    /// `F* - sum q_n F_n*`.
    pub gamma_het: f64,
}

/// Global optimum, strong convexity `mu = reg`, smoothness
/// `alpha = reg + max_n lambda_max(X_n^T X_n / n) / 4` and heterogeneity.
pub fn task_constants(data: &FederatedData, reg: f64) -> Result<TaskConstants> {
    let pooled = Dataset::pooled(&data.clients)?;
    let w_star = solve_optimum(&pooled, reg)?;
    let weights = data.weights();
    let f_star = global_loss(data, &w_star, reg);
    let mut local = 0.0;
    let mut lmax: f64 = 0.0;
    for (q, client) in weights.iter().zip(&data.clients) {
        let wn = solve_optimum(client, reg)?;
        local += q * client.loss(&wn, reg);
        lmax = lmax.max(client.max_covariance_eigenvalue());
    }
    Ok(TaskConstants {
        w_star,
        f_star,
        mu: reg,
        alpha: reg + lmax / 4.0,
        gamma_het: (f_star - local).max(0.0),
    })
}

/// `sum q_n F_n(w)`.
pub fn global_loss(data: &FederatedData, w: &[f64], reg: f64) -> f64 {
    data.weights()
        .iter()
        .zip(&data.clients)
        .map(|(q, c)| q * c.loss(w, reg))
        .sum()
}
