//! Mini-batch training with alternating network / descriptor updates.
//!
//! Every mini-batch takes two Adam steps: first on the network weights with
//! the descriptors frozen, then (after a fresh forward pass) on `(μ, s)` with
//! the network frozen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gditd::{loss_gradients, GaussianDescriptorSet, LossBreakdown, LossGradients, LossParams, LossTerm, LossTerms};
use crate::linalg::DenseMatrix;
use crate::nn::MlpNetwork;
use crate::optim::Adam;

/// How the class-balance β is derived from the mini-batch size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    /// `β = 1 − 1/|B|`.
    #[default]
    Effective,
    /// `β = 1/|B|`.
    Literal,
}

impl BetaMode {
    pub fn beta(self, batch_len: usize) -> f64 {
        let b = batch_len as f64;
        match self {
            BetaMode::Effective => 1.0 - 1.0 / b,
            BetaMode::Literal => 1.0 / b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BetaMode::Effective => "effective",
            BetaMode::Literal => "literal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub beta_mode: BetaMode,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden_dims: [usize; 2],
    /// Loss components that contribute to the optimized total.
    pub terms: LossTerms,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            max_epochs: 100,
            learning_rate: 1e-3,
            gamma: 1.0,
            beta_mode: BetaMode::Effective,
            seed: 0,
            latent_dim: 128,
            hidden_dims: [128, 128],
            terms: LossTerms::ALL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::InvalidConfig("at least one loss term must be enabled".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> [usize; 4] {
        [input_dim, self.hidden_dims[0], self.hidden_dims[1], self.latent_dim]
    }

    pub fn loss_params(&self, batch_len: usize) -> LossParams {
        LossParams {
            beta: self.beta_mode.beta(batch_len),
            gamma: self.gamma,
            terms: self.terms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: MlpNetwork,
    pub desc: GaussianDescriptorSet,
    pub net_opt: Adam,
    pub desc_opt: Adam,
    pub epoch: usize,
    /// Mean per-batch loss for each completed epoch.
    pub history: Vec<LossBreakdown>,
}

impl TrainState {
    /// Fresh network with descriptors at the class-mean embeddings and `σ = 1`.
    pub fn init(
        features: &DenseMatrix,
        labels: &[usize],
        k: usize,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_training_set(features, labels, k)?;
        let net = MlpNetwork::new(config.layer_dims(features.cols()), rng)?;
        let emb = net.forward(features)?;
        let desc = GaussianDescriptorSet::from_means(class_means(&emb, labels, k)?)?;
        let net_opt = Adam::new(&group_sizes(&net.param_groups()), config.learning_rate);
        let desc_opt = Adam::new(&[desc.mu().as_slice().len(), k], config.learning_rate);
        Ok(Self {
            net,
            desc,
            net_opt,
            desc_opt,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Replaces both optimizers' learning rate.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.net_opt.learning_rate = lr;
        self.desc_opt.learning_rate = lr;
    }
}

fn group_sizes(groups: &[&[f64]]) -> Vec<usize> {
    groups.iter().map(|g| g.len()).collect()
}

fn check_training_set(features: &DenseMatrix, labels: &[usize], k: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if features.rows() != labels.len() {
        return Err(Error::contract(format!("{} rows for {} labels", features.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::contract(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Row means of `emb` grouped by label. Every class must be present.
pub fn class_means(emb: &DenseMatrix, labels: &[usize], k: usize) -> Result<DenseMatrix> {
    let mut sums = DenseMatrix::zeros(k, emb.cols());
    let mut counts = vec![0usize; k];
    for (r, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(emb.row(r)) {
            *s += v;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!("class {missing} has no training rows")));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

fn non_finite_term(loss: &LossBreakdown) -> &'static str {
    LossTerm::ALL
        .iter()
        .find(|t| !loss.get(**t).is_finite())
        .map(|t| t.name())
        .unwrap_or("net")
}

fn checked_gradients(
    state: &TrainState,
    emb: &DenseMatrix,
    labels: &[usize],
    params: &LossParams,
    phase: &str,
) -> Result<LossGradients> {
    let grads = loss_gradients(&state.desc, emb, labels, params)?;
    if !grads.loss.is_finite() {
        return Err(Error::NonFinite {
            term: non_finite_term(&grads.loss).to_string(),
            detail: format!("{phase} update, epoch {}: loss {:?}", state.epoch, grads.loss),
        });
    }
    if let Some(block) = grads.non_finite_block() {
        return Err(Error::NonFinite {
            term: block.to_string(),
            detail: format!("{phase} update, epoch {}", state.epoch),
        });
    }
    Ok(grads)
}

/// One block-coordinate step on a mini-batch. Returns the loss measured
/// before the step.
pub fn bcd_step(state: &mut TrainState, batch: &DenseMatrix, labels: &[usize], config: &TrainConfig) -> Result<LossBreakdown> {
    check_training_set(batch, labels, state.desc.k())?;
    let params = config.loss_params(labels.len());

    // (a) network weights, descriptors frozen.
    let cache = state.net.forward_cached(batch)?;
    let grads = checked_gradients(state, cache.output(), labels, &params, "network")?;
    let before = grads.loss;
    let bundle = state.net.backward_cached(&cache, &grads.embeddings)?;
    if !bundle.is_finite() {
        return Err(Error::NonFinite {
            term: "network gradient".into(),
            detail: format!("network update, epoch {}", state.epoch),
        });
    }
    state.net_opt.update(state.net.param_groups_mut(), &bundle.groups());

    // (b) descriptors, network frozen.
    let emb = state.net.forward(batch)?;
    let grads = checked_gradients(state, &emb, labels, &params, "descriptor")?;
    let (mu, log_sigma) = state.desc.params_mut();
    state
        .desc_opt
        .update(vec![mu.as_mut_slice(), log_sigma], &[grads.mu.as_slice(), &grads.log_sigma]);
    Ok(before)
}

/// Row indices of each mini-batch in one epoch: a seeded permutation cut
/// into chunks, the last one possibly short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Gathers rows of `features` and `labels`.
pub fn gather(features: &DenseMatrix, labels: &[usize], rows: &[usize]) -> (DenseMatrix, Vec<usize>) {
    (features.select_rows(rows), rows.iter().map(|&r| labels[r]).collect())
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len() as f64;
    let mut out = LossBreakdown::default();
    for l in items {
        out.pull += l.pull / n;
        out.score += l.score / n;
        out.efl1 += l.efl1 / n;
        out.efl2 += l.efl2 / n;
        out.net += l.net / n;
    }
    out
}

/// Trains on ID rows (`labels` in `0..k`). `max_epochs = 0` returns the
/// initialized state.
pub fn fit(features: &DenseMatrix, labels: &[usize], k: usize, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState::init(features, labels, k, config, &mut rng)?;
    for _ in 0..config.max_epochs {
        run_epoch(&mut state, features, labels, config, &mut rng)?;
    }
    Ok(state)
}

/// One pass over the shuffled training rows; appends the epoch mean to the history.
pub fn run_epoch(
    state: &mut TrainState,
    features: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut losses = Vec::new();
    for rows in epoch_batches(labels.len(), config.batch_size, rng) {
        let (x, y) = gather(features, labels, &rows);
        losses.push(bcd_step(state, &x, &y, config)?);
    }
    state.epoch += 1;
    state.history.push(mean_breakdown(&losses));
    Ok(())
}
