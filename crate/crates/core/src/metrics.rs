//! Evaluation metrics computed by exact threshold sweeps.
//!
//! Conventions:
//! - Every model emits a confidence where higher means "more in-distribution".
//! - OOD AUROC/AUPR treat OOD as the positive class with score `−confidence`
//!   (see [`ood_score`]).
//! - TNR@TPR measures TPR over ID rows and TNR over OOD rows, accepting a row
//!   as ID when `confidence ≥ threshold`.
//! - AUPR is step-wise average precision: `Σ (R_j − R_{j−1}) · P_j` over
//!   distinct thresholds, with no interpolation between operating points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default TPR operating point for the TNR metric.
pub const TARGET_TPR: f64 = 0.85;

/// Score with OOD as the positive class.
#[inline]
pub fn ood_score(confidence: f64) -> f64 {
    -confidence
}

/// Fraction of rows whose prediction equals the truth; `None` predictions
/// (flagged OOD) count as wrong.
pub fn id_accuracy(predicted: &[Option<usize>], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let correct = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == Some(**t))
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

fn check_binary(scores: &[f64], positive: &[bool], need_negatives: bool) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::Metric("no positive samples".into()));
    }
    if need_negatives && n_neg == 0 {
        return Err(Error::Metric("no negative samples".into()));
    }
    Ok((n_pos, n_neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Cumulative `(tp, fp)` after each block of tied scores, highest first.
fn threshold_sweep(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_binary(scores, positive, true)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks (1-based) of tied blocks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += mid * idx[i..j].iter().filter(|&&r| positive[r]).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise area under the precision-recall curve.
pub fn aupr(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (n_pos, _) = check_binary(scores, positive, false)?;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in threshold_sweep(scores, positive) {
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// TNR on negatives at the largest threshold whose TPR on positives reaches
/// `target_tpr`. Rows with `score ≥ threshold` are accepted as positive.
pub fn tnr_at_tpr(scores: &[f64], positive: &[bool], target_tpr: f64) -> Result<f64> {
    let (n_pos, n_neg) = check_binary(scores, positive, true)?;
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Metric(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    let mut pos: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    let needed = (1..=n_pos)
        .find(|&m| m as f64 / n_pos as f64 >= target_tpr)
        .expect("m = n_pos always reaches the target");
    let threshold = pos[needed - 1];
    let rejected = scores
        .iter()
        .zip(positive)
        .filter(|(&s, &p)| !p && s < threshold)
        .count();
    Ok(rejected as f64 / n_neg as f64)
}

/// ROC operating points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, n_neg) = check_binary(scores, positive, true)?;
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(
        threshold_sweep(scores, positive)
            .into_iter()
            .map(|(tp, fp)| (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64)),
    );
    Ok(pts)
}

/// Precision-recall operating points `(recall, precision)`, one per distinct threshold.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (n_pos, _) = check_binary(scores, positive, false)?;
    Ok(threshold_sweep(scores, positive)
        .into_iter()
        .map(|(tp, fp)| (tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64))
        .collect())
}

/// One scored test row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Higher means more in-distribution.
    pub confidence: f64,
    /// Model class index, `None` for an OOD row.
    pub true_class: Option<usize>,
    /// Model class index, `None` when the model rejected the row as OOD.
    pub predicted_class: Option<usize>,
    /// Per-class confidence used for one-vs-rest curves.
    pub class_scores: Vec<f64>,
}

impl ScoredSample {
    pub fn is_ood(&self) -> bool {
        self.true_class.is_none()
    }
}

/// Run settings echoed into every report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: String,
    pub beta_mode: Option<String>,
    pub mdsr: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub folds: Option<usize>,
    pub fold: Option<usize>,
    pub loss_terms: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    /// One-vs-rest AUPR over ID rows; absent when the class has no test rows.
    pub aupr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub n_id: usize,
    pub n_ood: usize,
    pub id_accuracy: f64,
    pub minority_aupr: Option<f64>,
    pub ood_tnr_at_85tpr: Option<f64>,
    pub ood_auroc: Option<f64>,
    pub ood_aupr: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub warnings: Vec<String>,
}

/// Assembles every metric for one scored test split.
///
/// `class_names` lists the ID classes in model-index order.
pub fn evaluate(
    samples: &[ScoredSample],
    class_names: &[String],
    minority: Option<usize>,
    config: ConfigEcho,
) -> Result<EvalReport> {
    let id: Vec<&ScoredSample> = samples.iter().filter(|s| !s.is_ood()).collect();
    let n_ood = samples.len() - id.len();
    let k = class_names.len();
    let mut warnings = Vec::new();

    let truth: Vec<usize> = id.iter().map(|s| s.true_class.unwrap()).collect();
    let predicted: Vec<Option<usize>> = id.iter().map(|s| s.predicted_class).collect();
    let id_acc = id_accuracy(&predicted, &truth)?;

    let mut per_class = Vec::with_capacity(k);
    for (c, name) in class_names.iter().enumerate() {
        let support = truth.iter().filter(|&&t| t == c).count();
        let tp = id
            .iter()
            .filter(|s| s.true_class == Some(c) && s.predicted_class == Some(c))
            .count();
        let predicted_c = samples.iter().filter(|s| s.predicted_class == Some(c)).count();
        let aupr_c = if support == 0 {
            warnings.push(format!("class `{name}` absent from the test split"));
            None
        } else {
            let scores: Vec<f64> = id.iter().map(|s| s.class_scores[c]).collect();
            let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            Some(aupr(&scores, &labels)?)
        };
        per_class.push(ClassMetrics {
            class: name.clone(),
            support,
            precision: if predicted_c == 0 { 0.0 } else { tp as f64 / predicted_c as f64 },
            recall: if support == 0 { 0.0 } else { tp as f64 / support as f64 },
            aupr: aupr_c,
        });
    }
    let minority_aupr = minority.and_then(|m| per_class.get(m).and_then(|c| c.aupr));

    let (tnr, auc, ap) = if n_ood == 0 {
        warnings.push("no OOD rows in the test split; OOD metrics omitted".into());
        (None, None, None)
    } else {
        let conf: Vec<f64> = samples.iter().map(|s| s.confidence).collect();
        let is_id: Vec<bool> = samples.iter().map(|s| !s.is_ood()).collect();
        let ood_scores: Vec<f64> = conf.iter().map(|&c| ood_score(c)).collect();
        let is_ood: Vec<bool> = is_id.iter().map(|&b| !b).collect();
        (
            Some(tnr_at_tpr(&conf, &is_id, TARGET_TPR)?),
            Some(auroc(&ood_scores, &is_ood)?),
            Some(aupr(&ood_scores, &is_ood)?),
        )
    };

    Ok(EvalReport {
        config,
        n_id: id.len(),
        n_ood,
        id_accuracy: id_acc,
        minority_aupr,
        ood_tnr_at_85tpr: tnr,
        ood_auroc: auc,
        ood_aupr: ap,
        per_class,
        warnings,
    })
}

/// Fold-mean report. Optional metrics average over the folds that have them.
pub fn mean_report(reports: &[EvalReport], config: ConfigEcho) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Metric("mean of zero reports".into()))?;
    let n = reports.len() as f64;
    let mean_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let per_class = (0..first.per_class.len())
        .map(|c| ClassMetrics {
            class: first.per_class[c].class.clone(),
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
            precision: reports.iter().map(|r| r.per_class[c].precision).sum::<f64>() / n,
            recall: reports.iter().map(|r| r.per_class[c].recall).sum::<f64>() / n,
            aupr: mean_opt(&|r| r.per_class[c].aupr),
        })
        .collect();
    let warnings = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.warnings.iter().map(move |w| format!("fold {i}: {w}")))
        .collect();
    Ok(EvalReport {
        config,
        n_id: reports.iter().map(|r| r.n_id).sum(),
        n_ood: reports.iter().map(|r| r.n_ood).sum(),
        id_accuracy: reports.iter().map(|r| r.id_accuracy).sum::<f64>() / n,
        minority_aupr: mean_opt(&|r| r.minority_aupr),
        ood_tnr_at_85tpr: mean_opt(&|r| r.ood_tnr_at_85tpr),
        ood_auroc: mean_opt(&|r| r.ood_auroc),
        ood_aupr: mean_opt(&|r| r.ood_aupr),
        per_class,
        warnings,
    })
}
