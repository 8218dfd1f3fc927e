//! Continuous score predictors over document vectors: linear regression
//! (squared loss) and linear SVR (epsilon-insensitive loss), both fit by
//! seeded SGD on the L2-regularized empirical risk.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;

/// Which data loss the regressor minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Squared,
    EpsilonInsensitive,
}

/// Per-dimension (mean, population std) computed on training features.
/// Dimensions with zero variance pass through with std = 1 and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant_dims: Vec<bool>,
}

impl Standardizer {
    /// Identity transform for `dim` dimensions.
    pub fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            constant_dims: vec![false; dim],
        }
    }

    /// Fit on a K×D feature matrix, K >= 2.
    pub fn fit(x: &Matrix<f64>) -> Standardizer {
        let (k, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for r in 0..k {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= k as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..k {
            for j in 0..d {
                let diff = x.row(r)[j] - mean[j];
                var[j] += diff * diff;
            }
        }
        let mut std = vec![0.0; d];
        let mut constant_dims = vec![false; d];
        for j in 0..d {
            let sigma = libm::sqrt(var[j] / k as f64);
            if sigma > 0.0 {
                std[j] = sigma;
            } else {
                std[j] = 1.0;
                constant_dims[j] = true;
            }
        }
        Standardizer {
            mean,
            std,
            constant_dims,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn transform(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Vec::with_capacity(x.rows() * x.cols());
        for r in 0..x.rows() {
            out.extend(self.transform_vec(x.row(r)));
        }
        Matrix::from_vec(x.rows(), x.cols(), out)
    }
}

/// SGD settings for [`fit_regressor`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgdParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            epochs: 50,
            learning_rate: 0.01,
            l2_lambda: 1e-4,
            epsilon: 0.1,
            seed: 42,
        }
    }
}

/// Fitted linear model `f(x) = β·standardize(x) + c` with the loss it was
/// trained under and the feature statistics baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_kind: LossKind,
    pub epsilon: f64,
    pub l2_lambda: f64,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressionError {
    /// Fewer than two training rows.
    TooFewSamples(usize),
    /// Non-finite loss; carries the epoch where it was detected.
    Diverged { epoch: usize },
    /// Input vector dimension differs from the model dimension.
    DimensionMismatch { expected: usize, got: usize },
}

impl core::fmt::Display for RegressionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RegressionError::TooFewSamples(n) => {
                write!(f, "need at least 2 training samples, got {n}")
            }
            RegressionError::Diverged { epoch } => {
                write!(f, "training loss became non-finite in epoch {epoch}")
            }
            RegressionError::DimensionMismatch { expected, got } => {
                write!(f, "feature dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

/// Per-sample data loss at prediction `f` for target `y`.
pub fn sample_loss(kind: LossKind, f: f64, y: f64, epsilon: f64) -> f64 {
    let r = f - y;
    match kind {
        LossKind::Squared => 0.5 * r * r,
        LossKind::EpsilonInsensitive => {
            let e = libm::fabs(r) - epsilon;
            if e > 0.0 {
                e
            } else {
                0.0
            }
        }
    }
}

/// dL/df for the same loss. At the epsilon-insensitive kink the subgradient
/// 0 is used.
pub fn sample_grad_scale(kind: LossKind, f: f64, y: f64, epsilon: f64) -> f64 {
    let r = f - y;
    match kind {
        LossKind::Squared => r,
        LossKind::EpsilonInsensitive => {
            if libm::fabs(r) <= epsilon {
                0.0
            } else if r > 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Fit on already-standardized features (`x` must have been produced by
/// `standardizer`, which is embedded into the returned model so prediction
/// can accept raw vectors). Weights start at zero and the bias at mean(y),
/// so SGD only has to learn deviations from the target mean. Deterministic
/// for a fixed seed.
pub fn fit_regressor(
    x: &Matrix<f64>,
    y: &[f64],
    kind: LossKind,
    params: &SgdParams,
    standardizer: Standardizer,
) -> Result<RegressionModel, RegressionError> {
    let k = x.rows();
    if k < 2 {
        return Err(RegressionError::TooFewSamples(k));
    }
    debug_assert_eq!(k, y.len());
    let d = x.cols();
    let mut weights = vec![0.0f64; d];
    let mut bias = y.iter().sum::<f64>() / k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..k).collect();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let lr = params.learning_rate / libm::sqrt(1.0 + epoch as f64);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let row = x.row(i);
            let f = dot(&weights, row) + bias;
            epoch_loss += sample_loss(kind, f, y[i], params.epsilon);
            let g = sample_grad_scale(kind, f, y[i], params.epsilon);
            for (w, &xj) in weights.iter_mut().zip(row) {
                *w -= lr * (g * xj + params.l2_lambda * *w);
            }
            bias -= lr * g;
        }
        if !epoch_loss.is_finite() {
            return Err(RegressionError::Diverged { epoch });
        }
    }

    Ok(RegressionModel {
        weights,
        bias,
        loss_kind: kind,
        epsilon: params.epsilon,
        l2_lambda: params.l2_lambda,
        standardizer,
    })
}

impl RegressionModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Predict from a raw (unstandardized) vector. `clip` bounds the output
    /// to the configured score range; serving enables it, evaluation does
    /// not.
    pub fn predict(&self, raw: &[f64], clip: Option<(f64, f64)>) -> Result<f64, RegressionError> {
        if raw.len() != self.weights.len() {
            return Err(RegressionError::DimensionMismatch {
                expected: self.weights.len(),
                got: raw.len(),
            });
        }
        let z = self.standardizer.transform_vec(raw);
        let mut f = dot(&self.weights, &z) + self.bias;
        if let Some((lo, hi)) = clip {
            f = f.clamp(lo, hi);
        }
        Ok(f)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
