//! End-to-end experiments: MDSR down-sampling, stratified folds, per-fold
//! normalization, training, scoring and evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_mdsr, stratified_folds, NormStats, SplitPlan, TabularDataset};
use crate::error::{Error, Result};
use crate::gditd::{LossTerm, LossTerms};
use crate::metrics::{evaluate, mean_report, ConfigEcho, EvalReport, ScoredSample};
use crate::model::{Checkpoint, LossHistory, Method, TrainedModel, CHECKPOINT_VERSION};
use crate::seed::derive_seed;
use crate::trainer::TrainConfig;

/// Tag under which data-level randomness (MDSR sampling, folds) is derived.
const DATA_STREAM: &str = "data";

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub method: Method,
    /// `seed` here is the master seed; cells derive their own.
    pub config: TrainConfig,
    pub mdsr: Option<f64>,
    pub folds: usize,
}

impl Experiment {
    pub fn new(method: Method, config: TrainConfig, mdsr: Option<f64>, folds: usize) -> Self {
        Self {
            method,
            config,
            mdsr,
            folds,
        }
    }

    pub fn echo(&self, fold: Option<usize>) -> ConfigEcho {
        let gditd = self.method == Method::Gditd;
        ConfigEcho {
            method: self.method.name().to_string(),
            beta_mode: gditd.then(|| self.config.beta_mode.name().to_string()),
            mdsr: self.mdsr,
            seed: self.config.seed,
            epochs: self.config.max_epochs,
            folds: Some(self.folds),
            fold,
            loss_terms: gditd.then(|| terms_label(&self.config.terms)),
        }
    }

    pub fn cell_seed(&self, fold: usize) -> u64 {
        derive_seed(self.config.seed, self.method.name(), self.mdsr, Some(fold))
    }
}

/// `pull+score+efl1+efl2` style name of a term set.
pub fn terms_label(terms: &LossTerms) -> String {
    LossTerm::ALL
        .iter()
        .filter(|t| terms.contains(**t))
        .map(|t| t.name())
        .collect::<Vec<_>>()
        .join("+")
}

/// The nine loss-term variants: full, each term alone, each term omitted.
pub fn ablation_variants() -> Vec<(String, LossTerms)> {
    let mut out = vec![("full".to_string(), LossTerms::ALL)];
    for t in LossTerm::ALL {
        out.push((format!("only-{}", t.name()), LossTerms::only(t)));
    }
    for t in LossTerm::ALL {
        out.push((format!("without-{}", t.name()), LossTerms::without(t)));
    }
    out
}

/// Applies MDSR and builds the fold plan. Both depend only on the master
/// seed and MDSR, so every method sees the same rows and splits.
pub fn prepare(ds: &TabularDataset, mdsr: Option<f64>, folds: usize, master_seed: u64) -> Result<(TabularDataset, SplitPlan)> {
    let seed = derive_seed(master_seed, DATA_STREAM, mdsr, None);
    let ds = match mdsr {
        Some(m) => apply_mdsr(ds, m, seed)?,
        None => ds.clone(),
    };
    let mut plan = stratified_folds(&ds, folds, seed)?;
    plan.mdsr = mdsr;
    Ok((ds, plan))
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub seed: u64,
    pub report: EvalReport,
    pub samples: Vec<ScoredSample>,
    pub history: LossHistory,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub mean: EvalReport,
    pub folds: Vec<FoldOutcome>,
}

/// Serializable view of a cross-validated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mean: EvalReport,
    pub folds: Vec<EvalReport>,
}

impl CvOutcome {
    pub fn run_report(&self) -> RunReport {
        RunReport {
            mean: self.mean.clone(),
            folds: self.folds.iter().map(|f| f.report.clone()).collect(),
        }
    }
}

/// Model labels `0..k` for dataset rows; every row must be ID.
fn model_labels(ds: &TabularDataset, rows: &[usize]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|&r| {
            ds.id_index(ds.labels[r])
                .ok_or_else(|| Error::contract(format!("OOD row {r} in a training split")))
        })
        .collect()
}

/// Trains on every fold but `fold` and evaluates on `fold` plus all OOD rows.
pub fn run_fold(ds: &TabularDataset, plan: &SplitPlan, fold: usize, exp: &Experiment) -> Result<FoldOutcome> {
    let train_rows = plan.training_rows(fold);
    let mut test_rows = plan.validation_rows(fold);
    test_rows.extend(&plan.ood_rows);

    let norm = NormStats::fit(&ds.features, &train_rows)?;
    let features = norm.apply(&ds.features)?;
    let x_train = features.select_rows(&train_rows);
    let y_train = model_labels(ds, &train_rows)?;
    let class_names = ds.id_class_names();
    let k = class_names.len();

    let seed = exp.cell_seed(fold);
    let config = TrainConfig {
        seed,
        ..exp.config.clone()
    };
    let (model, history) = TrainedModel::train(exp.method, &x_train, &y_train, k, &config)?;

    let outputs = model.score(&features.select_rows(&test_rows))?;
    let samples: Vec<ScoredSample> = test_rows
        .iter()
        .zip(outputs)
        .map(|(&r, o)| ScoredSample {
            confidence: o.confidence,
            true_class: ds.id_index(ds.labels[r]),
            predicted_class: o.predicted,
            class_scores: o.class_scores,
        })
        .collect();
    let minority = ds.minority_class.and_then(|m| ds.id_index(m));
    let report = evaluate(&samples, &class_names, minority, exp.echo(Some(fold)))?;

    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config,
        feature_names: ds.feature_names.clone(),
        class_names,
        ood_class: ds.ood_class.map(|c| ds.class_names[c].clone()),
        minority_class: ds.minority_class.map(|c| ds.class_names[c].clone()),
        norm,
        model,
    };
    Ok(FoldOutcome {
        fold,
        seed,
        report,
        samples,
        history,
        checkpoint,
    })
}

/// Full k-fold run. Folds execute in parallel on the current rayon pool;
/// results do not depend on scheduling.
pub fn cross_validate(ds: &TabularDataset, exp: &Experiment) -> Result<CvOutcome> {
    exp.config.validate()?;
    let (ds, plan) = prepare(ds, exp.mdsr, exp.folds, exp.config.seed)?;
    let folds = (0..exp.folds)
        .into_par_iter()
        .map(|f| run_fold(&ds, &plan, f, exp))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report.clone()).collect();
    let mean = mean_report(&reports, exp.echo(None))?;
    Ok(CvOutcome { mean, folds })
}

/// Scores every row of `ds` with a saved model. Rows whose class the model
/// never saw count as OOD.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, ds: &TabularDataset, echo: ConfigEcho) -> Result<(EvalReport, Vec<ScoredSample>)> {
    if ds.n_features() != ckpt.norm.mean.len() {
        return Err(Error::Data(format!(
            "dataset has {} features, checkpoint expects {}",
            ds.n_features(),
            ckpt.norm.mean.len()
        )));
    }
    let mut unseen = Vec::new();
    let truth: Vec<Option<usize>> = ds
        .labels
        .iter()
        .map(|&y| {
            let name = &ds.class_names[y];
            let idx = ckpt.class_names.iter().position(|c| c == name);
            if idx.is_none() && Some(name) != ckpt.ood_class.as_ref() && !unseen.contains(name) {
                unseen.push(name.clone());
            }
            idx
        })
        .collect();
    let outputs = ckpt.score_raw(&ds.features)?;
    let samples: Vec<ScoredSample> = truth
        .into_iter()
        .zip(outputs)
        .map(|(t, o)| ScoredSample {
            confidence: o.confidence,
            true_class: t,
            predicted_class: o.predicted,
            class_scores: o.class_scores,
        })
        .collect();
    let mut report = evaluate(&samples, &ckpt.class_names, ckpt.minority_index(), echo)?;
    for name in unseen {
        report.warnings.push(format!("class `{name}` unknown to the model, scored as OOD"));
    }
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_distinct_variants() {
        let v = ablation_variants();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0].1, LossTerms::ALL);
        for i in 0..9 {
            for j in i + 1..9 {
                assert_ne!(v[i].1, v[j].1);
            }
        }
    }

    #[test]
    fn label_lists_enabled_terms() {
        assert_eq!(terms_label(&LossTerms::ALL), "pull+score+efl1+efl2");
        assert_eq!(terms_label(&LossTerms::only(LossTerm::Efl2)), "efl2");
    }
}
