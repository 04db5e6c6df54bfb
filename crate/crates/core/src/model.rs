//! Method-agnostic trained models, scoring, and checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{softmax_confidence, softmax_fit, MahalanobisModel, SoftmaxModel};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::gditd::{predict_from_scores, GaussianDescriptorSet, Label, LossTerm};
use crate::linalg::DenseMatrix;
use crate::nn::MlpNetwork;
use crate::trainer::{fit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gditd,
    Softmax,
    Mahalanobis,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gditd, Method::Softmax, Method::Mahalanobis];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gditd => "gditd",
            Method::Softmax => "softmax",
            Method::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected gditd, softmax or mahalanobis)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Gditd { net: MlpNetwork, desc: GaussianDescriptorSet },
    Softmax { model: SoftmaxModel },
    /// Mahalanobis scoring over the latent space of a softmax-trained network.
    Mahalanobis { model: SoftmaxModel, maha: MahalanobisModel },
}

/// Per-row output of any model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `None` when the model itself rejects the row as OOD.
    pub predicted: Option<usize>,
    /// Higher means more in-distribution.
    pub confidence: f64,
    pub class_scores: Vec<f64>,
}

/// Per-epoch loss values keyed by term name.
pub type LossHistory = Vec<Vec<(&'static str, f64)>>;

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Gditd { .. } => Method::Gditd,
            TrainedModel::Softmax { .. } => Method::Softmax,
            TrainedModel::Mahalanobis { .. } => Method::Mahalanobis,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Gditd { net, .. } => net.input_dim(),
            TrainedModel::Softmax { model } | TrainedModel::Mahalanobis { model, .. } => model.net.input_dim(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            TrainedModel::Gditd { desc, .. } => desc.k(),
            TrainedModel::Softmax { model } => model.k(),
            TrainedModel::Mahalanobis { maha, .. } => maha.k(),
        }
    }

    /// Trains `method` on ID rows labelled `0..k`.
    pub fn train(
        method: Method,
        features: &DenseMatrix,
        labels: &[usize],
        k: usize,
        config: &TrainConfig,
    ) -> Result<(Self, LossHistory)> {
        match method {
            Method::Gditd => {
                let state = fit(features, labels, k, config)?;
                let history = state
                    .history
                    .iter()
                    .map(|l| {
                        let mut row: Vec<(&'static str, f64)> = LossTerm::ALL.iter().map(|t| (t.name(), l.get(*t))).collect();
                        row.push(("net", l.net));
                        row
                    })
                    .collect();
                Ok((
                    TrainedModel::Gditd {
                        net: state.net,
                        desc: state.desc,
                    },
                    history,
                ))
            }
            Method::Softmax | Method::Mahalanobis => {
                let fitted = softmax_fit(features, labels, k, config)?;
                let history = fitted.history.iter().map(|&l| vec![("cross_entropy", l)]).collect();
                let model = fitted.model;
                if method == Method::Softmax {
                    return Ok((TrainedModel::Softmax { model }, history));
                }
                let emb = model.net.forward(features)?;
                let maha = MahalanobisModel::fit(&emb, labels, k)?;
                Ok((TrainedModel::Mahalanobis { model, maha }, history))
            }
        }
    }

    /// Scores already-normalized rows.
    pub fn score(&self, x: &DenseMatrix) -> Result<Vec<ModelOutput>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        let out = match self {
            TrainedModel::Gditd { net, desc } => {
                let emb = net.forward(x)?;
                (0..emb.rows())
                    .map(|r| {
                        let scores = desc.scores(emb.row(r))?;
                        let p = predict_from_scores(&scores);
                        Ok(ModelOutput {
                            predicted: match p.label {
                                Label::Class(c) => Some(c),
                                Label::Ood => None,
                            },
                            confidence: p.confidence,
                            class_scores: scores,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            TrainedModel::Softmax { model } => {
                let logits = model.logits(x)?;
                (0..logits.rows())
                    .map(|r| {
                        let (c, conf) = softmax_confidence(logits.row(r));
                        ModelOutput {
                            predicted: Some(c),
                            confidence: conf,
                            class_scores: crate::gditd::softmax(logits.row(r)),
                        }
                    })
                    .collect()
            }
            TrainedModel::Mahalanobis { model, maha } => {
                let emb = model.net.forward(x)?;
                (0..emb.rows())
                    .map(|r| {
                        let (c, conf) = maha.confidence(emb.row(r));
                        ModelOutput {
                            predicted: Some(c),
                            confidence: conf,
                            class_scores: maha.sq_distances(emb.row(r)).into_iter().map(|q| -q).collect(),
                        }
                    })
                    .collect()
            }
        };
        if let Some(bad) = out.iter().find(|o| !o.confidence.is_finite()) {
            return Err(Error::NonFinite {
                term: "confidence".into(),
                detail: format!("{} produced {}", self.method(), bad.confidence),
            });
        }
        Ok(out)
    }
}

/// Everything needed to score raw CSV rows again later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    /// ID class names in model-index order.
    pub class_names: Vec<String>,
    pub ood_class: Option<String>,
    pub minority_class: Option<String>,
    pub norm: NormStats,
    pub model: TrainedModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ckpt.format_version)));
        }
        if ckpt.class_names.len() != ckpt.model.k() || ckpt.norm.mean.len() != ckpt.model.input_dim() {
            return Err(Error::Data("checkpoint dimensions are inconsistent".into()));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Normalizes raw feature rows with the stored statistics, then scores them.
    pub fn score_raw(&self, raw: &DenseMatrix) -> Result<Vec<ModelOutput>> {
        self.model.score(&self.norm.apply(raw)?)
    }

    pub fn minority_index(&self) -> Option<usize> {
        let m = self.minority_class.as_ref()?;
        self.class_names.iter().position(|c| c == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("odin".parse::<Method>().is_err());
    }
}
