//! Detection metrics over anomaly scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gan::{anomaly_score, GanError, GanModel};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("evaluation set `{0}` is empty")]
    EmptySet(String),
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error(transparent)]
    Gan(#[from] GanError),
}

/// Area under the ROC curve of `positive` (malicious) scores against
/// `negative` (genuine) scores via the Mann-Whitney rank statistic, ties
/// counting one half.
pub fn auc(negative: &[f64], positive: &[f64]) -> Result<f64, EvalError> {
    if negative.is_empty() {
        return Err(EvalError::EmptySet("negative".into()));
    }
    if positive.is_empty() {
        return Err(EvalError::EmptySet("positive".into()));
    }
    if let Some(&bad) = negative.iter().chain(positive).find(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(bad));
    }
    let mut all: Vec<(f64, bool)> = negative
        .iter()
        .map(|&s| (s, false))
        .chain(positive.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // sum of 1-based midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Held-out vectors: one genuine set and one malicious set per attack type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSets {
    pub genuine: Vec<Vec<f64>>,
    pub attacks: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    /// Fraction of genuine plus this attack's samples classified correctly.
    pub accuracy: f64,
    pub auc: f64,
    pub detection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub false_positive_rate: f64,
    pub per_attack: BTreeMap<String, AttackMetrics>,
}

fn scores(model: &GanModel, xs: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    xs.iter()
        .map(|x| anomaly_score(model, x).map_err(EvalError::from))
        .collect()
}

pub fn evaluate_model(
    model: &GanModel,
    sets: &EvalSets,
    threshold: f64,
) -> Result<Evaluation, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    if sets.genuine.is_empty() {
        return Err(EvalError::EmptySet("genuine".into()));
    }
    let genuine = scores(model, &sets.genuine)?;
    let false_alarms = genuine.iter().filter(|&&s| s >= threshold).count();
    let fpr = false_alarms as f64 / genuine.len() as f64;

    let mut per_attack = BTreeMap::new();
    for (name, xs) in &sets.attacks {
        if xs.is_empty() {
            return Err(EvalError::EmptySet(name.clone()));
        }
        let malicious = scores(model, xs)?;
        let detected = malicious.iter().filter(|&&s| s >= threshold).count();
        let correct = detected + genuine.len() - false_alarms;
        per_attack.insert(
            name.clone(),
            AttackMetrics {
                accuracy: correct as f64 / (genuine.len() + malicious.len()) as f64,
                auc: auc(&genuine, &malicious)?,
                detection_rate: detected as f64 / malicious.len() as f64,
            },
        );
    }
    Ok(Evaluation {
        false_positive_rate: fpr,
        per_attack,
    })
}
