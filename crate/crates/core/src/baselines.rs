//! Comparison scorers: a softmax classifier (max-probability confidence) and
//! a shared-covariance Mahalanobis score over its latent embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gditd::{argmax, softmax, PROB_FLOOR};
use crate::linalg::DenseMatrix;
use crate::nn::{DenseLayer, MlpNetwork};
use crate::optim::Adam;
use crate::trainer::{epoch_batches, gather, TrainConfig};

/// Ridge added to the shared covariance before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Largest ridge tried before giving up.
pub const MAX_RIDGE: f64 = 1e-2;

/// An embedding network with a linear `d × k` classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub net: MlpNetwork,
    pub head: DenseLayer,
}

impl SoftmaxModel {
    pub fn k(&self) -> usize {
        self.head.out_dim()
    }

    pub fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.head.affine(&self.net.forward(x)?)
    }

    /// Class probabilities, one row per input.
    pub fn probabilities(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let logits = self.logits(x)?;
        let mut probs = DenseMatrix::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            probs.row_mut(r).copy_from_slice(&softmax(logits.row(r)));
        }
        Ok(probs)
    }
}

/// Predicted class and max softmax probability for a logit vector.
pub fn softmax_confidence(logits: &[f64]) -> (usize, f64) {
    argmax(&softmax(logits))
}

#[derive(Debug, Clone)]
pub struct SoftmaxFit {
    pub model: SoftmaxModel,
    /// Mean cross-entropy per epoch.
    pub history: Vec<f64>,
}

/// Mean cross-entropy of a batch and its gradient with respect to the logits.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> (f64, DenseMatrix) {
    let n = labels.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let p = softmax(logits.row(r));
        loss -= p[y].max(PROB_FLOOR).ln() / n;
        let g = grad.row_mut(r);
        for (c, pc) in p.iter().enumerate() {
            g[c] = (pc - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss, grad)
}

/// Cross-entropy training of network and head jointly with Adam.
pub fn softmax_fit(features: &DenseMatrix, labels: &[usize], k: usize, config: &TrainConfig) -> Result<SoftmaxFit> {
    config.validate()?;
    if labels.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if features.rows() != labels.len() {
        return Err(Error::contract(format!("{} rows for {} labels", features.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::contract(format!("label {bad} outside 0..{k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = MlpNetwork::new(config.layer_dims(features.cols()), &mut rng)?;
    let head = DenseLayer::glorot(config.latent_dim, k, &mut rng);
    let mut model = SoftmaxModel { net, head };
    let mut sizes: Vec<usize> = model.net.param_groups().iter().map(|g| g.len()).collect();
    sizes.extend([model.head.weights.as_slice().len(), k]);
    let mut opt = Adam::new(&sizes, config.learning_rate);

    let mut history = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let mut total = 0.0;
        let batches = epoch_batches(labels.len(), config.batch_size, &mut rng);
        let n_batches = batches.len();
        for rows in batches {
            let (x, y) = gather(features, labels, &rows);
            let cache = model.net.forward_cached(&x)?;
            let emb = cache.output();
            let (loss, g_logits) = cross_entropy(&model.head.affine(emb)?, &y);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    term: "cross-entropy".into(),
                    detail: format!("epoch {epoch}"),
                });
            }
            total += loss;
            let g_head_w = emb.t_matmul(&g_logits)?;
            let mut g_head_b = vec![0.0; k];
            for r in 0..g_logits.rows() {
                for (b, g) in g_head_b.iter_mut().zip(g_logits.row(r)) {
                    *b += g;
                }
            }
            let g_emb = g_logits.matmul_t(&model.head.weights)?;
            let bundle = model.net.backward_cached(&cache, &g_emb)?;
            if !bundle.is_finite() || !g_head_w.is_finite() {
                return Err(Error::NonFinite {
                    term: "network gradient".into(),
                    detail: format!("softmax training, epoch {epoch}"),
                });
            }
            let mut grads = bundle.groups();
            grads.extend([g_head_w.as_slice(), g_head_b.as_slice()]);
            let mut params = model.net.param_groups_mut();
            params.extend([model.head.weights.as_mut_slice(), model.head.bias.as_mut_slice()]);
            opt.update(params, &grads);
        }
        history.push(total / n_batches as f64);
    }
    Ok(SoftmaxFit { model, history })
}

/// Class means and a shared, ridge-regularized covariance over embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisModel {
    /// `k × d`.
    pub means: DenseMatrix,
    /// Population covariance before regularization, `d × d`.
    pub covariance: DenseMatrix,
    /// Inverse of `covariance + ridge·I`.
    pub precision: DenseMatrix,
    pub ridge: f64,
}

impl MahalanobisModel {
    /// Fits on embeddings of the training rows. The ridge starts at
    /// [`DEFAULT_RIDGE`] and grows ×10 until the covariance inverts.
    pub fn fit(emb: &DenseMatrix, labels: &[usize], k: usize) -> Result<Self> {
        if emb.rows() != labels.len() || labels.is_empty() {
            return Err(Error::contract(format!("{} embeddings for {} labels", emb.rows(), labels.len())));
        }
        let means = crate::trainer::class_means(emb, labels, k)?;
        let d = emb.cols();
        let n = labels.len() as f64;
        let mut cov = DenseMatrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for (r, &y) in labels.iter().enumerate() {
            for ((c, z), m) in centered.iter_mut().zip(emb.row(r)).zip(means.row(y)) {
                *c = z - m;
            }
            for i in 0..d {
                let ci = centered[i];
                let row = cov.row_mut(i);
                for j in 0..d {
                    row[j] += ci * centered[j];
                }
            }
        }
        cov.as_mut_slice().iter_mut().for_each(|v| *v /= n);

        let mut ridge = DEFAULT_RIDGE;
        loop {
            let mut reg = cov.clone();
            for i in 0..d {
                reg.set(i, i, reg.get(i, i) + ridge);
            }
            if let Some(precision) = reg.spd_inverse() {
                return Ok(Self {
                    means,
                    covariance: cov,
                    precision,
                    ridge,
                });
            }
            ridge *= 10.0;
            if ridge > MAX_RIDGE * (1.0 + 1e-9) {
                return Err(Error::Singular { ridge: ridge / 10.0 });
            }
        }
    }

    pub fn k(&self) -> usize {
        self.means.rows()
    }

    /// Squared Mahalanobis distance of `z` to every class mean.
    pub fn sq_distances(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        let mut diff = vec![0.0; d];
        (0..self.k())
            .map(|c| {
                for ((o, a), b) in diff.iter_mut().zip(z).zip(self.means.row(c)) {
                    *o = a - b;
                }
                let mut q = 0.0;
                for i in 0..d {
                    q += diff[i] * crate::linalg::dot(self.precision.row(i), &diff);
                }
                q.max(0.0)
            })
            .collect()
    }

    /// Nearest class and confidence `−min_i M²_i`.
    pub fn confidence(&self, z: &[f64]) -> (usize, f64) {
        let neg: Vec<f64> = self.sq_distances(z).into_iter().map(|q| -q).collect();
        argmax(&neg)
    }
}
