//! Independent oracles and random-instance builders shared by the
//! integration tests. Everything here is written from the definitions,
//! without calling the library code it checks.
#![allow(dead_code)]

use gditd::gditd::{GaussianDescriptorSet, LossParams, LossTerms};
use gditd::linalg::DenseMatrix;
use gditd::nn::MlpNetwork;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KINK: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let values = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseMatrix::from_vec(rows, cols, values).unwrap()
}

pub fn random_descriptors(rng: &mut ChaCha8Rng, k: usize, d: usize, spread: f64) -> GaussianDescriptorSet {
    let mu = random_matrix(rng, k, d, spread);
    let s = (0..k).map(|_| rng.random_range(-0.3..0.3)).collect();
    GaussianDescriptorSet::new(mu, s).unwrap()
}

/// `‖z − μ‖² / (2σ²) + d·ln σ` written out term by term.
pub fn scalar_distance(z: &[f64], mu: &[f64], log_sigma: f64) -> f64 {
    let mut q = 0.0;
    for j in 0..z.len() {
        q += (z[j] - mu[j]).powi(2);
    }
    let sigma = log_sigma.exp();
    q / (2.0 * sigma * sigma) + z.len() as f64 * log_sigma
}

pub fn scalar_score(z: &[f64], mu: &[f64], log_sigma: f64) -> f64 {
    log_sigma.exp() - scalar_distance(z, mu, log_sigma)
}

/// Direct reading of the decision rule: OOD iff every score is negative,
/// otherwise the first index holding the maximum.
pub fn rule_transcription(scores: &[f64]) -> Option<usize> {
    if scores.iter().all(|&s| s < 0.0) {
        return None;
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Some(best)
}

/// Fraction of positive–negative pairs ordered correctly, ties ½.
pub fn brute_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

/// Average precision by recounting the confusion matrix at every distinct
/// threshold (`score ≥ t` is predicted positive).
pub fn brute_aupr(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in distinct_desc(scores) {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for i in 0..scores.len() {
            if scores[i] >= t {
                if positive[i] {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

/// Scans every candidate threshold, keeps the largest whose positive rate
/// reaches the target, and reports the rate of negatives below it.
pub fn brute_tnr_at_tpr(scores: &[f64], positive: &[bool], target: f64) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut best: Option<f64> = None;
    for t in distinct_desc(scores) {
        let tp = (0..scores.len()).filter(|&i| positive[i] && scores[i] >= t).count() as f64;
        if tp / n_pos >= target && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.unwrap();
    (0..scores.len()).filter(|&i| !positive[i] && scores[i] < t).count() as f64 / n_neg
}

/// Random binary problem with both classes present and frequent ties.
pub fn random_binary(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..6) as f64 / 2.0
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// Scalar softmax with max subtraction.
pub fn scalar_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// True when some hidden unit sits within `margin` of its ReLU kink.
pub fn near_relu_kink(net: &MlpNetwork, x: &DenseMatrix, margin: f64) -> bool {
    let cache = net.forward_cached(x).unwrap();
    cache
        .hidden_pre_activations()
        .iter()
        .any(|z| z.as_slice().iter().any(|v| v.abs() < margin))
}

pub struct GradInstance {
    pub x: DenseMatrix,
    pub net: MlpNetwork,
    pub desc: GaussianDescriptorSet,
    pub labels: Vec<usize>,
    pub params: LossParams,
}

/// Random network, descriptors and batch at least `KINK` away from every
/// non-differentiable point of the loss.
pub fn draw_gradient_instance(rng: &mut ChaCha8Rng, terms: LossTerms) -> GradInstance {
    loop {
        let d = rng.random_range(2..=8);
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=16);
        let p = rng.random_range(2..=6);
        let x = random_matrix(rng, n, p, 1.5);
        let net = MlpNetwork::new([p, rng.random_range(3..=8), rng.random_range(3..=8), d], rng).unwrap();
        let desc = random_descriptors(rng, k, d, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let gamma = [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)];
        let params = LossParams {
            beta: 1.0 - 1.0 / n as f64,
            gamma,
            terms,
        };
        // Stay away from every non-differentiable point.
        if near_relu_kink(&net, &x, KINK) {
            continue;
        }
        let emb = net.forward(&x).unwrap();
        let smooth = (0..n).all(|r| {
            let z = emb.row(r);
            let dist = desc.distances(z).unwrap();
            let score = desc.scores(z).unwrap();
            score[labels[r]].abs() > KINK && dist.iter().all(|v| (v - 1e-8).abs() > KINK)
        });
        if smooth {
            return GradInstance {
                x,
                net,
                desc,
                labels,
                params,
            };
        }
    }
}
