//! Output files: atomic writes, CSV tables and the run manifest.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use gditd::metrics::{ood_score, pr_curve, roc_curve, EvalReport, ScoredSample};
use gditd::model::LossHistory;
use serde::Serialize;

use crate::commands::CliError;

/// Collects files for one output directory and records their names for the manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| CliError::io(&path, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(&path, e))?;
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(gditd::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = self.written.clone();
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub data: Option<PathBuf>,
    pub dataset_manifest: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, out: &Path) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            data: None,
            dataset_manifest: None,
            seed: None,
            out: out.to_path_buf(),
            outputs: Vec::new(),
        }
    }
}

/// Empty cell for a missing value; otherwise the shortest round-trip decimal.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRIC_COLUMNS: [&str; 5] = ["id_accuracy", "minority_aupr", "ood_tnr_at_85tpr", "ood_auroc", "ood_aupr"];

pub fn metric_cells(r: &EvalReport) -> [String; 5] {
    [
        cell(Some(r.id_accuracy)),
        cell(r.minority_aupr),
        cell(r.ood_tnr_at_85tpr),
        cell(r.ood_auroc),
        cell(r.ood_aupr),
    ]
}

pub fn losses_csv(histories: &[(usize, &LossHistory)]) -> String {
    let mut out = String::from("fold,epoch,term,value\n");
    for (fold, history) in histories {
        for (epoch, terms) in history.iter().enumerate() {
            for (name, value) in terms {
                let _ = writeln!(out, "{fold},{},{name},{value}", epoch + 1);
            }
        }
    }
    out
}

/// ROC and PR points with OOD as the positive class. `None` when the
/// samples lack either ID or OOD rows.
pub fn curves_csv(samples: &[ScoredSample]) -> Option<(String, String)> {
    let scores: Vec<f64> = samples.iter().map(|s| ood_score(s.confidence)).collect();
    let is_ood: Vec<bool> = samples.iter().map(|s| s.is_ood()).collect();
    let roc = roc_curve(&scores, &is_ood).ok()?;
    let pr = pr_curve(&scores, &is_ood).ok()?;
    let mut roc_text = String::from("fpr,tpr\n");
    for (x, y) in roc {
        let _ = writeln!(roc_text, "{x},{y}");
    }
    let mut pr_text = String::from("recall,precision\n");
    for (x, y) in pr {
        let _ = writeln!(pr_text, "{x},{y}");
    }
    Some((roc_text, pr_text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_round_trip() {
        for v in [0.1, 1.0 / 3.0, 0.9999999999999999, 1.0, 0.0] {
            assert_eq!(cell(Some(v)).parse::<f64>().unwrap(), v);
        }
        assert_eq!(cell(None), "");
    }

    #[test]
    fn curves_need_both_populations() {
        let s = |c: f64, t: Option<usize>| ScoredSample {
            confidence: c,
            true_class: t,
            predicted_class: t,
            class_scores: vec![c],
        };
        assert!(curves_csv(&[s(1.0, Some(0))]).is_none());
        let (roc, pr) = curves_csv(&[s(1.0, Some(0)), s(-1.0, None)]).unwrap();
        assert_eq!(roc, "fpr,tpr\n0,0\n0,1\n1,1\n");
        assert_eq!(pr, "recall,precision\n1,1\n1,0.5\n");
    }
}
