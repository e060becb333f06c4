//! Multinomial softmax regression over fixed embeddings, fit by full-batch
//! gradient descent. Serves as the query model for the uncertainty
//! strategies and as the successor model in simulations.
//!
//! Objective: mean cross-entropy plus `l2 / 2 * ||W||^2` (the bias is not
//! penalized). Parameters are laid out row-major as `[W (C x d), b (C)]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, ProbabilityMatrix, StrategyError};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProxyParams {
    fn default() -> Self {
        Self { l2: 1e-4, epochs: 500, lr: 0.1, seed: 0 }
    }
}

impl ProxyParams {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(StrategyError::Validation(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(StrategyError::Validation(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(StrategyError::Validation("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    classes: Vec<String>,
    dim: usize,
    params: Vec<f64>,
    /// Set when the training labels held a single class; every prediction
    /// is then one-hot on that class.
    collapsed_to: Option<usize>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl SoftmaxRegression {
    pub fn zeros(classes: Vec<String>, dim: usize) -> Self {
        let len = classes.len() * dim + classes.len();
        Self { classes, dim, params: vec![0.0; len], collapsed_to: None }
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self, StrategyError> {
        if params.len() != self.params.len() {
            return Err(StrategyError::Validation(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(self)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed_to.is_some()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.classes.len();
        let bias = &self.params[c * self.dim..];
        (0..c)
            .map(|k| {
                let w = &self.params[k * self.dim..(k + 1) * self.dim];
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[k]
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        if let Some(class) = self.collapsed_to {
            let mut p = vec![0.0; self.classes.len()];
            p[class] = 1.0;
            return p;
        }
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// Most probable class position; ties go to the earlier class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.predict_proba(x);
        let mut best = 0;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        best
    }

    pub fn predict_label(&self, x: &[f64]) -> &str {
        &self.classes[self.predict(x)]
    }

    pub fn predict_matrix(&self, embeddings: &EmbeddingMatrix) -> Result<ProbabilityMatrix, StrategyError> {
        self.check_dim(embeddings.dim())?;
        let rows = embeddings.vectors().iter().map(|x| self.predict_proba(x)).collect();
        ProbabilityMatrix::new(rows, embeddings.row_index_map().to_vec())
    }

    fn check_dim(&self, dim: usize) -> Result<(), StrategyError> {
        if dim != self.dim {
            return Err(StrategyError::Validation(format!("model expects dimension {}, got {dim}", self.dim)));
        }
        Ok(())
    }

    /// Regularized mean cross-entropy; `y` holds class positions.
    pub fn loss(&self, x: &[Vec<f64>], y: &[usize], l2: f64) -> f64 {
        let n = x.len() as f64;
        let data: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, &yi)| {
                let z = self.logits(xi);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[yi]
            })
            .sum::<f64>()
            / n;
        let weights = &self.params[..self.classes.len() * self.dim];
        data + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient of [`Self::loss`] in the parameter layout.
    pub fn gradient(&self, x: &[Vec<f64>], y: &[usize], l2: f64) -> Vec<f64> {
        let c = self.classes.len();
        let d = self.dim;
        let n = x.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        for (xi, &yi) in x.iter().zip(y) {
            let mut p = self.logits(xi);
            softmax_in_place(&mut p);
            p[yi] -= 1.0;
            for k in 0..c {
                let r = p[k] / n;
                for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(xi) {
                    *g += r * v;
                }
                grad[c * d + k] += r;
            }
        }
        for (g, w) in grad[..c * d].iter_mut().zip(&self.params[..c * d]) {
            *g += l2 * w;
        }
        grad
    }
}

fn class_positions(labels: &[String], classes: &[String]) -> Result<Vec<usize>, StrategyError> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| StrategyError::Validation(format!("label `{l}` is not in the label space")))
        })
        .collect()
}

fn check_inputs(x: &[Vec<f64>], labels: &[String], label_space: &[String]) -> Result<usize, StrategyError> {
    if x.is_empty() {
        return Err(StrategyError::Size { requested: 1, available: 0 });
    }
    if x.len() != labels.len() {
        return Err(StrategyError::Validation(format!("{} vectors but {} labels", x.len(), labels.len())));
    }
    if label_space.is_empty() {
        return Err(StrategyError::Validation("label space is empty".into()));
    }
    Ok(x[0].len())
}

fn fit_rows(x: &[Vec<f64>], y: &[usize], classes: &[String], dim: usize, params: &ProxyParams) -> SoftmaxRegression {
    let mut model = SoftmaxRegression::zeros(classes.to_vec(), dim);
    let first = y[0];
    if y.iter().all(|&k| k == first) {
        tracing::warn!(class = %classes[first], "proxy fit on a single class; predictions collapse to it");
        model.collapsed_to = Some(first);
        return model;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights = classes.len() * dim;
    for w in &mut model.params[..weights] {
        *w = rng.random_range(-0.01..0.01);
    }
    for _ in 0..params.epochs {
        let grad = model.gradient(x, y, params.l2);
        for (w, g) in model.params.iter_mut().zip(&grad) {
            *w -= params.lr * g;
        }
    }
    model
}

/// Fits one model on `labels` (values from `label_space`) over the rows of
/// `embeddings`. The model's classes are the whole label space.
pub fn fit_proxy_classifier(
    embeddings: &EmbeddingMatrix,
    labels: &[String],
    label_space: &[String],
    params: &ProxyParams,
) -> Result<SoftmaxRegression, StrategyError> {
    params.validate()?;
    let x = embeddings.vectors();
    let dim = check_inputs(x, labels, label_space)?;
    let y = class_positions(labels, label_space)?;
    Ok(fit_rows(x, &y, label_space, dim, params))
}

/// `size` models, each on a class-stratified bootstrap resample with its
/// own seed. Fits run in parallel; the output order is fixed.
pub fn fit_ensemble(
    embeddings: &EmbeddingMatrix,
    labels: &[String],
    label_space: &[String],
    params: &ProxyParams,
    size: usize,
) -> Result<Vec<SoftmaxRegression>, StrategyError> {
    params.validate()?;
    if size == 0 {
        return Err(StrategyError::Validation("ensemble size must be at least 1".into()));
    }
    let x = embeddings.vectors();
    let dim = check_inputs(x, labels, label_space)?;
    let y = class_positions(labels, label_space)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); label_space.len()];
    for (row, &k) in y.iter().enumerate() {
        by_class[k].push(row);
    }

    let models = (0..size)
        .into_par_iter()
        .map(|member| {
            let member = member as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "bootstrap", member));
            let mut bx = Vec::with_capacity(x.len());
            let mut by = Vec::with_capacity(x.len());
            for rows in by_class.iter().filter(|r| !r.is_empty()) {
                for _ in 0..rows.len() {
                    let row = rows[rng.random_range(0..rows.len())];
                    bx.push(x[row].clone());
                    by.push(y[row]);
                }
            }
            let member_params = ProxyParams { seed: derive_seed(params.seed, "init", member), ..params.clone() };
            fit_rows(&bx, &by, label_space, dim, &member_params)
        })
        .collect();
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        vec!["neg".into(), "pos".into()]
    }

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let n = rows.len();
        EmbeddingMatrix::new(rows, (0..n).collect(), "test").unwrap()
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let x = matrix(vec![vec![-2.0, 0.1], vec![-1.0, -0.3], vec![1.0, 0.2], vec![2.5, -0.1]]);
        let labels: Vec<String> = ["neg", "neg", "pos", "pos"].iter().map(|s| s.to_string()).collect();
        let model = fit_proxy_classifier(&x, &labels, &classes(), &ProxyParams::default()).unwrap();
        for (row, label) in x.vectors().iter().zip(&labels) {
            assert_eq!(model.predict_label(row), label);
        }
    }

    #[test]
    fn identical_embeddings_give_class_frequencies() {
        let x = matrix(vec![vec![0.3, -0.4]; 8]);
        let labels: Vec<String> =
            ["pos", "neg", "neg", "neg", "pos", "neg", "neg", "neg"].iter().map(|s| s.to_string()).collect();
        let params = ProxyParams { epochs: 2000, lr: 0.5, ..ProxyParams::default() };
        let model = fit_proxy_classifier(&x, &labels, &classes(), &params).unwrap();
        let p = model.predict_proba(&[0.3, -0.4]);
        assert!((p[0] - 0.75).abs() < 1e-3, "{p:?}");
        assert!((p[1] - 0.25).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn single_class_collapses() {
        let x = matrix(vec![vec![1.0], vec![2.0]]);
        let labels = vec!["pos".to_string(), "pos".to_string()];
        let model = fit_proxy_classifier(&x, &labels, &classes(), &ProxyParams::default()).unwrap();
        assert!(model.is_collapsed());
        assert_eq!(model.predict_proba(&[-100.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn ensemble_is_reproducible() {
        let x = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.2, 0.9], vec![0.8, 0.1]]);
        let labels: Vec<String> = ["neg", "pos", "neg", "pos"].iter().map(|s| s.to_string()).collect();
        let params = ProxyParams { epochs: 50, ..ProxyParams::default() };
        let a = fit_ensemble(&x, &labels, &classes(), &params, 3).unwrap();
        let b = fit_ensemble(&x, &labels, &classes(), &params, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn rejects_unknown_label() {
        let x = matrix(vec![vec![1.0]]);
        let err = fit_proxy_classifier(&x, &["maybe".to_string()], &classes(), &ProxyParams::default());
        assert!(matches!(err, Err(StrategyError::Validation(_))));
    }
}
