//! Gaussian-descriptor head: per-class isotropic clusters in latent space,
//! the four training losses with their analytic gradients, and the ID/OOD
//! prediction rule.
//!
//! For class `i` with centre `μ_i` and spread `σ_i = exp(s_i)`:
//!
//! - distance `D_i(z) = ‖z − μ_i‖² / (2σ_i²) + d·log σ_i`
//! - score `ζ_i(z) = σ_i − D_i(z)`
//!
//! A sample is out-of-distribution when every score is negative, otherwise it
//! takes the class with the largest score. Class ids are zero-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, DenseMatrix};

/// Lower bound on `D_i` before taking the reciprocal in the distance focal loss.
pub const DISTANCE_FLOOR: f64 = 1e-8;
/// Lower bound on a softmax probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class `(μ_i, s_i)` with `σ_i = exp(s_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDescriptorSet {
    /// `k × d` cluster centres.
    mu: DenseMatrix,
    /// Unconstrained log-spreads `s_i`.
    log_sigma: Vec<f64>,
}

impl GaussianDescriptorSet {
    pub fn new(mu: DenseMatrix, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.rows() == 0 || mu.cols() == 0 {
            return Err(Error::contract("descriptor set needs k ≥ 1 and d ≥ 1"));
        }
        if log_sigma.len() != mu.rows() {
            return Err(Error::contract(format!(
                "{} centres but {} spreads",
                mu.rows(),
                log_sigma.len()
            )));
        }
        if !mu.is_finite() || log_sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::contract("descriptor parameters must be finite"));
        }
        Ok(Self { mu, log_sigma })
    }

    /// Centres at the given means with `σ_i = 1`.
    pub fn from_means(mu: DenseMatrix) -> Result<Self> {
        let k = mu.rows();
        Self::new(mu, vec![0.0; k])
    }

    pub fn k(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn mu(&self) -> &DenseMatrix {
        &self.mu
    }

    pub fn mu_mut(&mut self) -> &mut DenseMatrix {
        &mut self.mu
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.log_sigma
    }

    pub fn log_sigma_mut(&mut self) -> &mut [f64] {
        &mut self.log_sigma
    }

    /// Both descriptor blocks at once, for optimizer updates.
    pub fn params_mut(&mut self) -> (&mut DenseMatrix, &mut [f64]) {
        (&mut self.mu, &mut self.log_sigma)
    }

    pub fn sigma(&self, class: usize) -> f64 {
        self.log_sigma[class].exp()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    fn check_embedding(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::contract(format!(
                "embedding has dim {}, descriptors have dim {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `D_i(z)` for every class.
    pub fn distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_embedding(z)?;
        Ok(self.geometry(z).distance)
    }

    /// `ζ_i(z) = σ_i − D_i(z)` for every class.
    pub fn scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_embedding(z)?;
        Ok(self.geometry(z).score)
    }

    pub fn predict(&self, z: &[f64]) -> Result<Prediction> {
        Ok(predict_from_scores(&self.scores(z)?))
    }

    fn geometry(&self, z: &[f64]) -> SampleGeometry {
        let d = self.dim() as f64;
        let k = self.k();
        let mut g = SampleGeometry {
            sq_dist: Vec::with_capacity(k),
            sigma: Vec::with_capacity(k),
            distance: Vec::with_capacity(k),
            score: Vec::with_capacity(k),
        };
        for i in 0..k {
            let s = self.log_sigma[i];
            let sigma = s.exp();
            let q = squared_distance(z, self.mu.row(i));
            let dist = q / (2.0 * sigma * sigma) + d * s;
            g.sq_dist.push(q);
            g.sigma.push(sigma);
            g.distance.push(dist);
            g.score.push(sigma - dist);
        }
        g
    }
}

struct SampleGeometry {
    sq_dist: Vec<f64>,
    sigma: Vec<f64>,
    distance: Vec<f64>,
    score: Vec<f64>,
}

/// Predicted label: a known class or out-of-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Ood,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Ood => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// `max_i ζ_i`.
    pub confidence: f64,
}

/// OOD when every score is negative, otherwise the first maximal score.
pub fn predict_from_scores(scores: &[f64]) -> Prediction {
    let (best, confidence) = argmax(scores);
    let label = if confidence < 0.0 {
        Label::Ood
    } else {
        Label::Class(best)
    };
    Prediction { label, confidence }
}

/// Index and value of the maximum; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut value = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > value {
            best = i;
            value = v;
        }
    }
    (best, value)
}

/// The four loss components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Pull,
    Score,
    Efl1,
    Efl2,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Pull, LossTerm::Score, LossTerm::Efl1, LossTerm::Efl2];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Pull => "pull",
            LossTerm::Score => "score",
            LossTerm::Efl1 => "efl1",
            LossTerm::Efl2 => "efl2",
        }
    }
}

/// Which loss terms contribute to the optimised objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pull: bool,
    pub score: bool,
    pub efl1: bool,
    pub efl2: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::ALL
    }
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        pull: true,
        score: true,
        efl1: true,
        efl2: true,
    };

    const NONE: LossTerms = LossTerms {
        pull: false,
        score: false,
        efl1: false,
        efl2: false,
    };

    pub fn only(term: LossTerm) -> Self {
        let mut t = Self::NONE;
        t.set(term, true);
        t
    }

    pub fn without(term: LossTerm) -> Self {
        let mut t = Self::ALL;
        t.set(term, false);
        t
    }

    pub fn contains(&self, term: LossTerm) -> bool {
        match term {
            LossTerm::Pull => self.pull,
            LossTerm::Score => self.score,
            LossTerm::Efl1 => self.efl1,
            LossTerm::Efl2 => self.efl2,
        }
    }

    fn set(&mut self, term: LossTerm, on: bool) {
        match term {
            LossTerm::Pull => self.pull = on,
            LossTerm::Score => self.score = on,
            LossTerm::Efl1 => self.efl1 = on,
            LossTerm::Efl2 => self.efl2 = on,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.pull || self.score || self.efl1 || self.efl2)
    }
}

/// Per-batch loss parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Effective-number β in the class-balance weight.
    pub beta: f64,
    /// Focal exponent γ.
    pub gamma: f64,
    pub terms: LossTerms,
}

impl LossParams {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            terms: LossTerms::ALL,
        }
    }
}

/// Values of the four components and the optimised total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pull: f64,
    pub score: f64,
    pub efl1: f64,
    pub efl2: f64,
    /// Sum of the enabled components.
    pub net: f64,
}

impl LossBreakdown {
    fn assemble(pull: f64, score: f64, efl1: f64, efl2: f64, terms: &LossTerms) -> Self {
        let pick = |on: bool, v: f64| if on { v } else { 0.0 };
        let net = pick(terms.pull, pull)
            + pick(terms.score, score)
            + pick(terms.efl1, efl1)
            + pick(terms.efl2, efl2);
        Self {
            pull,
            score,
            efl1,
            efl2,
            net,
        }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Pull => self.pull,
            LossTerm::Score => self.score,
            LossTerm::Efl1 => self.efl1,
            LossTerm::Efl2 => self.efl2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pull, self.score, self.efl1, self.efl2, self.net]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Class-balance weight `(1 − β) / (1 − βⁿ)`; its `β → 1` limit is `1/n`.
pub fn effective_weight(beta: f64, n: usize) -> f64 {
    debug_assert!(n >= 1);
    if beta >= 1.0 {
        return 1.0 / n as f64;
    }
    (1.0 - beta) / (1.0 - beta.powi(n as i32))
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class-balanced focal loss on a logit vector:
/// `−(1−β)/(1−β^{n_y}) · (1 − p_y)^γ · log p_y` with `p = softmax(logits)`.
pub fn effective_focal_loss(label: usize, logits: &[f64], beta: f64, gamma: f64, n_y: usize) -> f64 {
    focal_with_grad(label, logits, beta, gamma, n_y, false).0
}

/// Loss and (optionally) its gradient with respect to the logits.
fn focal_with_grad(
    label: usize,
    logits: &[f64],
    beta: f64,
    gamma: f64,
    n_y: usize,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let p_y = exps[label] / total;
    // 1 − p_y from the other classes' mass avoids cancellation near p_y = 1.
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, e)| e)
        .sum::<f64>()
        / total;
    let w = effective_weight(beta, n_y);
    let clamped = p_y < PROB_FLOOR;
    let p = p_y.max(PROB_FLOOR);
    let modulation = if gamma == 0.0 { 1.0 } else { rest.powf(gamma) };
    let loss = -w * modulation * p.ln();
    if !want_grad {
        return (loss, Vec::new());
    }
    let mut grad = vec![0.0; logits.len()];
    if clamped {
        return (loss, grad);
    }
    let focal_slope = if gamma == 0.0 || rest <= 0.0 {
        0.0
    } else {
        gamma * rest.powf(gamma - 1.0) * p.ln()
    };
    let dl_dp = -w * (modulation / p - focal_slope);
    for (j, g) in grad.iter_mut().enumerate() {
        let p_j = exps[j] / total;
        let dp = if j == label { p_y * rest } else { -p_y * p_j };
        *g = dl_dp * dp;
    }
    (loss, grad)
}

/// Number of samples of each class in a batch.
pub fn class_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

fn check_batch(desc: &GaussianDescriptorSet, emb: &DenseMatrix, labels: &[usize]) -> Result<()> {
    if emb.rows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if emb.cols() != desc.dim() {
        return Err(Error::contract(format!(
            "embeddings have dim {}, descriptors have dim {}",
            emb.cols(),
            desc.dim()
        )));
    }
    if labels.len() != emb.rows() {
        return Err(Error::contract(format!(
            "{} labels for {} embeddings",
            labels.len(),
            emb.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= desc.k()) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {} classes",
            desc.k()
        )));
    }
    Ok(())
}

/// Sum over the batch of the own-class distance `D_y(x)`.
pub fn pull_loss(desc: &GaussianDescriptorSet, emb: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    check_batch(desc, emb, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| desc.geometry(emb.row(r)).distance[y])
        .sum())
}

/// Score loss: `Σ_x Σ_{i≠y} exp(ζ_i)/|B|  +  Σ_x [ReLU(−ζ_y) + log(1 + ζ_y²)]`.
pub fn score_loss(desc: &GaussianDescriptorSet, emb: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    check_batch(desc, emb, labels)?;
    let batch = emb.rows() as f64;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| score_term(&desc.geometry(emb.row(r)).score, y, batch))
        .sum())
}

fn score_term(score: &[f64], y: usize, batch: f64) -> f64 {
    let mut others = 0.0;
    for (i, &z) in score.iter().enumerate() {
        if i != y {
            others += z.exp() / batch;
        }
    }
    let own = score[y];
    others + (-own).max(0.0) + (1.0 + own * own).ln()
}

fn reciprocal_logits(distance: &[f64]) -> Vec<f64> {
    distance.iter().map(|&d| 1.0 / d.max(DISTANCE_FLOOR)).collect()
}

/// Focal loss with logits `1/D_i(x)`.
pub fn efl1(
    desc: &GaussianDescriptorSet,
    emb: &DenseMatrix,
    labels: &[usize],
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    check_batch(desc, emb, labels)?;
    let counts = class_counts(labels, desc.k());
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let logits = reciprocal_logits(&desc.geometry(emb.row(r)).distance);
            effective_focal_loss(y, &logits, beta, gamma, counts[y])
        })
        .sum())
}

/// Focal loss with logits `ζ_i(x)`.
pub fn efl2(
    desc: &GaussianDescriptorSet,
    emb: &DenseMatrix,
    labels: &[usize],
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    check_batch(desc, emb, labels)?;
    let counts = class_counts(labels, desc.k());
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            effective_focal_loss(y, &desc.geometry(emb.row(r)).score, beta, gamma, counts[y])
        })
        .sum())
}

/// All four components and the total over the enabled ones.
pub fn net_loss(
    desc: &GaussianDescriptorSet,
    emb: &DenseMatrix,
    labels: &[usize],
    params: &LossParams,
) -> Result<LossBreakdown> {
    Ok(evaluate(desc, emb, labels, params, false)?.loss)
}

/// Gradients of the enabled total with respect to the embeddings and the
/// descriptor parameters, together with the loss they were taken at.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: LossBreakdown,
    /// `n × d`.
    pub embeddings: DenseMatrix,
    /// `k × d`.
    pub mu: DenseMatrix,
    /// With respect to the raw log-spreads `s_i`.
    pub log_sigma: Vec<f64>,
}

impl LossGradients {
    /// Name of the first gradient block holding a non-finite value.
    pub fn non_finite_block(&self) -> Option<&'static str> {
        if !self.embeddings.is_finite() {
            Some("embedding gradient")
        } else if !self.mu.is_finite() {
            Some("mu gradient")
        } else if self.log_sigma.iter().any(|v| !v.is_finite()) {
            Some("sigma gradient")
        } else {
            None
        }
    }
}

pub fn loss_gradients(
    desc: &GaussianDescriptorSet,
    emb: &DenseMatrix,
    labels: &[usize],
    params: &LossParams,
) -> Result<LossGradients> {
    evaluate(desc, emb, labels, params, true)
}

fn evaluate(
    desc: &GaussianDescriptorSet,
    emb: &DenseMatrix,
    labels: &[usize],
    params: &LossParams,
    want_grad: bool,
) -> Result<LossGradients> {
    check_batch(desc, emb, labels)?;
    let (n, k, dim) = (emb.rows(), desc.k(), desc.dim());
    let batch = n as f64;
    let counts = class_counts(labels, k);
    let terms = params.terms;

    let (mut pull, mut score, mut e1, mut e2) = (0.0, 0.0, 0.0, 0.0);
    let mut g_emb = DenseMatrix::zeros(if want_grad { n } else { 0 }, dim);
    let mut g_mu = DenseMatrix::zeros(if want_grad { k } else { 0 }, dim);
    let mut g_s = vec![0.0; if want_grad { k } else { 0 }];
    let mut g_dist = vec![0.0; k];
    let mut g_sigma = vec![0.0; k];

    for (r, &y) in labels.iter().enumerate() {
        let z = emb.row(r);
        let geo = desc.geometry(z);
        let inv_logits = reciprocal_logits(&geo.distance);

        pull += geo.distance[y];
        score += score_term(&geo.score, y, batch);
        let (l1, gl1) = focal_with_grad(y, &inv_logits, params.beta, params.gamma, counts[y], want_grad && terms.efl1);
        let (l2, gl2) = focal_with_grad(y, &geo.score, params.beta, params.gamma, counts[y], want_grad && terms.efl2);
        e1 += l1;
        e2 += l2;

        if !want_grad {
            continue;
        }
        g_dist.iter_mut().for_each(|g| *g = 0.0);
        g_sigma.iter_mut().for_each(|g| *g = 0.0);
        // Accumulate dL/dζ_i into (dL/dD_i, dL/dσ_i) since ζ = σ − D.
        let push_score = |i: usize, g: f64, gd: &mut [f64], gs: &mut [f64]| {
            gd[i] -= g;
            gs[i] += g;
        };
        if terms.pull {
            g_dist[y] += 1.0;
        }
        if terms.score {
            for i in 0..k {
                let zeta = geo.score[i];
                let g = if i == y {
                    let relu = if zeta < 0.0 { -1.0 } else { 0.0 };
                    relu + 2.0 * zeta / (1.0 + zeta * zeta)
                } else {
                    zeta.exp() / batch
                };
                push_score(i, g, &mut g_dist, &mut g_sigma);
            }
        }
        if terms.efl1 {
            for i in 0..k {
                let dist = geo.distance[i];
                if dist >= DISTANCE_FLOOR {
                    g_dist[i] -= gl1[i] / (dist * dist);
                }
            }
        }
        if terms.efl2 {
            for (i, &g) in gl2.iter().enumerate() {
                push_score(i, g, &mut g_dist, &mut g_sigma);
            }
        }
        let gz = g_emb.row_mut(r);
        for i in 0..k {
            let sigma = geo.sigma[i];
            let coef = g_dist[i] / (sigma * sigma);
            let mu_row = desc.mu.row(i);
            let gm = g_mu.row_mut(i);
            for c in 0..dim {
                let diff = coef * (z[c] - mu_row[c]);
                gz[c] += diff;
                gm[c] -= diff;
            }
            // ∂D/∂s = −q/σ² + d ; ∂σ/∂s = σ.
            g_s[i] += g_dist[i] * (dim as f64 - geo.sq_dist[i] / (sigma * sigma)) + g_sigma[i] * sigma;
        }
    }

    Ok(LossGradients {
        loss: LossBreakdown::assemble(pull, score, e1, e2, &terms),
        embeddings: g_emb,
        mu: g_mu,
        log_sigma: g_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(mu: &[&[f64]], s: &[f64]) -> GaussianDescriptorSet {
        let rows: Vec<Vec<f64>> = mu.iter().map(|r| r.to_vec()).collect();
        GaussianDescriptorSet::new(DenseMatrix::from_rows(&rows).unwrap(), s.to_vec()).unwrap()
    }

    fn batch(rows: &[&[f64]]) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        DenseMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn distance_at_centre_is_zero() {
        let d = desc(&[&[1.0, -2.0], &[5.0, 5.0]], &[0.0, 0.0]);
        assert_eq!(d.distances(&[1.0, -2.0]).unwrap()[0], 0.0);
        assert_eq!(d.scores(&[1.0, -2.0]).unwrap()[0], 1.0);
    }

    #[test]
    fn three_four_five_distance() {
        let d = desc(&[&[3.0, 4.0]], &[0.0]);
        assert_eq!(d.distances(&[0.0, 0.0]).unwrap(), vec![12.5]);
        assert_eq!(d.scores(&[0.0, 0.0]).unwrap(), vec![-11.5]);
        assert_eq!(pull_loss(&d, &batch(&[&[0.0, 0.0]]), &[0]).unwrap(), 12.5);
    }

    #[test]
    fn sample_inside_one_cluster_only() {
        let d = desc(&[&[-10.0, 0.0], &[0.0, 0.0], &[10.0, 0.0]], &[0.0, 0.0, 0.0]);
        let z = d.scores(&[0.3, -0.2]).unwrap();
        assert!(z[1] > 0.0 && z[0] < 0.0 && z[2] < 0.0);
        assert_eq!(d.predict(&[0.3, -0.2]).unwrap().label, Label::Class(1));
        assert_eq!(d.predict(&[0.0, 30.0]).unwrap().label, Label::Ood);
    }

    #[test]
    fn prediction_rule_examples() {
        assert_eq!(predict_from_scores(&[-2.0, 0.5, -1.0]).label, Label::Class(1));
        let ood = predict_from_scores(&[-2.0, -0.5, -1.0]);
        assert_eq!(ood.label, Label::Ood);
        assert_eq!(ood.confidence, -0.5);
        assert_eq!(predict_from_scores(&[0.0, 0.0]).label, Label::Class(0));
    }

    #[test]
    fn dimension_and_label_contracts() {
        let d = desc(&[&[0.0, 0.0]], &[0.0]);
        assert!(matches!(d.distances(&[1.0]), Err(Error::Contract(_))));
        assert!(pull_loss(&d, &batch(&[&[0.0, 0.0]]), &[1]).is_err());
        assert!(GaussianDescriptorSet::new(DenseMatrix::zeros(2, 2), vec![0.0]).is_err());
    }

    #[test]
    fn score_loss_boundary_values() {
        // k = 1, ζ_y = 0: σ = 1 and D = 1.
        let one = desc(&[&[0.0]], &[0.0]);
        let at_zero = batch(&[&[2f64.sqrt()]]);
        assert!(score_loss(&one, &at_zero, &[0]).unwrap().abs() < 1e-15);
        // k = 2, both scores zero: exp(0)/1 + 0.
        let two = desc(&[&[0.0], &[2.0 * 2f64.sqrt()]], &[0.0, 0.0]);
        let v = score_loss(&two, &at_zero, &[0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn focal_loss_reduces_to_cross_entropy() {
        let logits = [0.3, -1.2, 2.0];
        let p = softmax(&logits);
        let v = effective_focal_loss(1, &logits, 0.9, 0.0, 1);
        assert!((v + p[1].ln()).abs() < 1e-14);
        assert_eq!(effective_weight(0.9, 1), 1.0);
    }

    #[test]
    fn focal_loss_vanishes_for_certain_prediction() {
        assert_eq!(effective_focal_loss(0, &[1000.0, 0.0, 0.0], 0.5, 1.0, 3), 0.0);
        assert_eq!(effective_focal_loss(0, &[1000.0, 0.0], 0.5, 0.0, 3), 0.0);
    }

    #[test]
    fn focal_loss_hand_evaluated() {
        // logits (2, 1, 0), true class index 0, γ = 1, β = 0.995, n_y = 4.
        let e = [1.0, (-1.0f64).exp(), (-2.0f64).exp()];
        let total: f64 = e.iter().sum();
        let p = e[0] / total;
        let w = (1.0 - 0.995) / (1.0 - 0.995f64 * 0.995 * 0.995 * 0.995);
        let want = -w * (1.0 - p) * p.ln();
        let got = effective_focal_loss(0, &[2.0, 1.0, 0.0], 0.995, 1.0, 4);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn effective_weight_limits() {
        assert!((effective_weight(1.0, 4) - 0.25).abs() < 1e-15);
        assert!((effective_weight(1.0 - 1e-12, 4) - 0.25).abs() < 1e-6);
        assert_eq!(effective_weight(0.0, 7), 1.0);
    }

    #[test]
    fn equidistant_sample_gives_uniform_focal_loss() {
        let d = desc(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]], &[0.0; 4]);
        let b = batch(&[&[0.0, 0.0]]);
        let (beta, gamma) = (0.9, 1.0);
        let want = -(1.0 - 0.25f64) * 0.25f64.ln();
        assert!((efl1(&d, &b, &[2], beta, gamma).unwrap() - want).abs() < 1e-12);
        assert!((efl2(&d, &b, &[2], beta, gamma).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn net_is_exact_sum() {
        let d = desc(&[&[0.5, 0.1], &[-0.4, 1.0]], &[0.2, -0.3]);
        let b = batch(&[&[0.0, 0.3], &[1.0, -1.0], &[-0.2, 0.8]]);
        let l = net_loss(&d, &b, &[0, 1, 1], &LossParams::new(0.7, 1.0)).unwrap();
        assert_eq!(l.net, l.pull + l.score + l.efl1 + l.efl2);
    }

    #[test]
    fn ablated_terms_drop_out_of_net() {
        let d = desc(&[&[0.5, 0.1], &[-0.4, 1.0]], &[0.2, -0.3]);
        let b = batch(&[&[0.0, 0.3], &[1.0, -1.0]]);
        let mut p = LossParams::new(0.7, 1.0);
        p.terms = LossTerms::only(LossTerm::Score);
        let l = net_loss(&d, &b, &[0, 1], &p).unwrap();
        assert_eq!(l.net, l.score);
        p.terms = LossTerms::without(LossTerm::Score);
        let l = net_loss(&d, &b, &[0, 1], &p).unwrap();
        assert_eq!(l.net, l.pull + l.efl1 + l.efl2);
    }

    #[test]
    fn pull_gradient_vanishes_at_own_centre() {
        let d = desc(&[&[1.0, 2.0, 3.0]], &[0.0]);
        let b = batch(&[&[1.0, 2.0, 3.0]]);
        let mut p = LossParams::new(0.5, 1.0);
        p.terms = LossTerms::only(LossTerm::Pull);
        let g = loss_gradients(&d, &b, &[0], &p).unwrap();
        assert!(g.embeddings.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.mu.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_configuration_has_antisymmetric_mu_gradients() {
        // Two mirrored clusters, two mirrored samples.
        let d = desc(&[&[1.0, 0.0], &[-1.0, 0.0]], &[0.1, 0.1]);
        let b = batch(&[&[0.7, 0.2], &[-0.7, 0.2]]);
        let g = loss_gradients(&d, &b, &[0, 1], &LossParams::new(0.5, 1.0)).unwrap();
        let (a, c) = (g.mu.row(0), g.mu.row(1));
        assert!((a[0] + c[0]).abs() < 1e-12);
        assert!((a[1] - c[1]).abs() < 1e-12);
        assert!((g.log_sigma[0] - g.log_sigma[1]).abs() < 1e-12);
    }

    #[test]
    fn negative_distance_is_floored_in_reciprocal() {
        // Tiny σ makes the own-class distance negative: logit 1e8 dominates.
        let d = desc(&[&[0.0, 0.0], &[3.0, 0.0]], &[-2.0, 0.0]);
        let b = batch(&[&[0.0, 0.0]]);
        assert!(d.distances(&[0.0, 0.0]).unwrap()[0] < 0.0);
        let v = efl1(&d, &b, &[0], 0.5, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
        let g = loss_gradients(&d, &b, &[0], &LossParams::new(0.5, 1.0)).unwrap();
        assert!(g.non_finite_block().is_none());
    }
}
