//! Sample-count and impact weighted averaging of model parameters.
//!
//! Both aggregates are convex combinations applied coordinate-wise to the
//! generator and discriminator vectors with the same weights. Inputs are
//! combined in `source_id` order, so the result does not depend on the order
//! updates arrive in.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gan::{fake_term, real_term, Batch, GanError, GanModel, Label, ModelParams};
use crate::mlp::ParamVector;

/// Identifier of a node or cluster submitting updates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub String);

impl SourceId {
    pub fn new(id: impl Into<String>) -> Self {
        SourceId(id.into())
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SourceId {
    fn from(s: &str) -> Self {
        SourceId(s.to_owned())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("update {index} has {got} parameters in its {network}, expected {expected}")]
    LengthMismatch {
        index: usize,
        network: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{impacts} impacts supplied for {updates} updates")]
    ImpactCount { updates: usize, impacts: usize },
    #[error("impact {index} is {value}; impacts must be positive and finite")]
    NonPositiveImpact { index: usize, value: f64 },
    #[error("update {index} reports zero samples")]
    ZeroSamples { index: usize },
    #[error("all aggregation weights are zero")]
    ZeroWeight,
    #[error(transparent)]
    Gan(#[from] GanError),
}

/// One submitted model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeUpdate {
    pub source_id: SourceId,
    pub params: ModelParams,
    /// Number of local samples the update was trained on.
    pub sample_count: u64,
    /// Reported mean local loss.
    pub local_loss: f64,
    pub reported_attack_index: u64,
}

/// Per-update impact parameters; all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactVector(Vec<f64>);

impl ImpactVector {
    pub fn new(impacts: Vec<f64>) -> Result<Self, AggregateError> {
        if let Some((index, &value)) = impacts
            .iter()
            .enumerate()
            .find(|(_, &h)| !(h > 0.0 && h.is_finite()))
        {
            return Err(AggregateError::NonPositiveImpact { index, value });
        }
        Ok(ImpactVector(impacts))
    }

    pub fn uniform(len: usize) -> Self {
        ImpactVector(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-sample discriminator cross-entropy: `-ln D(x)` for genuine samples
/// and, when `semi_supervised`, `-ln(1 - D(x))` for malicious ones.
/// Malicious samples are skipped otherwise.
pub fn sample_loss(
    model: &GanModel,
    x: &[f64],
    label: Label,
    semi_supervised: bool,
) -> Result<Option<f64>, AggregateError> {
    let single = Batch::new(vec![x.to_vec()])?;
    Ok(match (label, semi_supervised) {
        (Label::Genuine, _) => Some(-real_term(model, &single)?),
        (Label::Malicious, true) => Some(-fake_term(model, &single)?),
        (Label::Malicious, false) => None,
    })
}

/// Mean per-sample loss of `model` over a node's dataset.
pub fn local_loss(
    model: &GanModel,
    dataset: &Batch,
    semi_supervised: bool,
) -> Result<f64, AggregateError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, x) in dataset.samples().iter().enumerate() {
        if let Some(l) = sample_loss(model, x, dataset.label(i), semi_supervised)? {
            sum += l;
            n += 1;
        }
    }
    if n == 0 {
        return Err(AggregateError::Gan(GanError::EmptyBatch));
    }
    Ok(sum / n as f64)
}

fn validate(updates: &[NodeUpdate]) -> Result<(), AggregateError> {
    let first = updates.first().ok_or(AggregateError::Empty)?;
    let (g_len, d_len) = (
        first.params.generator.len(),
        first.params.discriminator.len(),
    );
    for (index, u) in updates.iter().enumerate() {
        if u.sample_count == 0 {
            return Err(AggregateError::ZeroSamples { index });
        }
        if u.params.generator.len() != g_len {
            return Err(AggregateError::LengthMismatch {
                index,
                network: "generator",
                expected: g_len,
                got: u.params.generator.len(),
            });
        }
        if u.params.discriminator.len() != d_len {
            return Err(AggregateError::LengthMismatch {
                index,
                network: "discriminator",
                expected: d_len,
                got: u.params.discriminator.len(),
            });
        }
    }
    Ok(())
}

/// Normalised weights `n_k h_k / sum(n_j h_j)`, indexed like `updates`.
///
/// Impacts are first divided by their maximum so that any uniform impact
/// vector yields exactly the plain sample-count weights.
pub fn aggregation_weights(
    updates: &[NodeUpdate],
    impacts: &[f64],
) -> Result<Vec<f64>, AggregateError> {
    if updates.len() != impacts.len() {
        return Err(AggregateError::ImpactCount {
            updates: updates.len(),
            impacts: impacts.len(),
        });
    }
    let h_max = impacts.iter().copied().fold(0.0f64, f64::max);
    if !(h_max > 0.0) {
        return Err(AggregateError::ZeroWeight);
    }
    let order = canonical_order(updates);
    let raw: Vec<f64> = updates
        .iter()
        .zip(impacts)
        .map(|(u, &h)| u.sample_count as f64 * (h / h_max))
        .collect();
    let total: f64 = order.iter().map(|&i| raw[i]).sum();
    Ok(raw.iter().map(|r| r / total).collect())
}

fn canonical_order(updates: &[NodeUpdate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| updates[a].source_id.cmp(&updates[b].source_id));
    order
}

fn combine_vectors(vectors: &[&ParamVector], weights: &[f64], order: &[usize]) -> ParamVector {
    let len = vectors[0].len();
    let mut out = Vec::with_capacity(len);
    for c in 0..len {
        let mut acc = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in order {
            let v = vectors[i].0[c];
            acc += weights[i] * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // rounding can push a convex combination one ulp outside the hull
        out.push(acc.clamp(lo, hi));
    }
    ParamVector(out)
}

/// Weighted combination with non-negative impacts whose sum is positive.
/// Zero-impact updates contribute nothing.
pub(crate) fn combine(
    updates: &[NodeUpdate],
    impacts: &[f64],
) -> Result<ModelParams, AggregateError> {
    validate(updates)?;
    if let Some((index, &value)) = impacts
        .iter()
        .enumerate()
        .find(|(_, &h)| !(h >= 0.0 && h.is_finite()))
    {
        return Err(AggregateError::NonPositiveImpact { index, value });
    }
    let weights = aggregation_weights(updates, impacts)?;
    let order = canonical_order(updates);
    let generators: Vec<&ParamVector> = updates.iter().map(|u| &u.params.generator).collect();
    let discriminators: Vec<&ParamVector> =
        updates.iter().map(|u| &u.params.discriminator).collect();
    Ok(ModelParams {
        generator: combine_vectors(&generators, &weights, &order),
        discriminator: combine_vectors(&discriminators, &weights, &order),
    })
}

/// Federated averaging: weights `n_k / n`.
pub fn aggregate_fedavg(updates: &[NodeUpdate]) -> Result<ModelParams, AggregateError> {
    combine(updates, &vec![1.0; updates.len()])
}

/// Impact-weighted averaging: weights `(n_k / n) h_k`, renormalised to sum to one.
pub fn aggregate_fgan(
    updates: &[NodeUpdate],
    impacts: &ImpactVector,
) -> Result<ModelParams, AggregateError> {
    if updates.len() != impacts.len() {
        return Err(AggregateError::ImpactCount {
            updates: updates.len(),
            impacts: impacts.len(),
        });
    }
    combine(updates, impacts.as_slice())
}

/// Loss-valued aggregate `sum (n_k / n) F_k` over the reported local losses.
pub fn fedavg_loss(updates: &[NodeUpdate]) -> Result<f64, AggregateError> {
    fgan_loss(updates, &vec![1.0; updates.len()])
}

/// Loss-valued impact aggregate `sum (n_k / n) h_k F_k`, not renormalised.
pub fn fgan_loss(updates: &[NodeUpdate], impacts: &[f64]) -> Result<f64, AggregateError> {
    validate(updates)?;
    if updates.len() != impacts.len() {
        return Err(AggregateError::ImpactCount {
            updates: updates.len(),
            impacts: impacts.len(),
        });
    }
    let n: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    Ok(canonical_order(updates)
        .into_iter()
        .map(|i| updates[i].sample_count as f64 / n * impacts[i] * updates[i].local_loss)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(id: &str, value: f64, n: u64) -> NodeUpdate {
        NodeUpdate {
            source_id: SourceId::new(id),
            params: ModelParams {
                generator: ParamVector(vec![value]),
                discriminator: ParamVector(vec![-value, value * 2.0]),
            },
            sample_count: n,
            local_loss: value,
            reported_attack_index: 0,
        }
    }

    #[test]
    fn fedavg_weighted_by_samples() {
        let out = aggregate_fedavg(&[scalar("a", 2.0, 1), scalar("b", 4.0, 3)]).unwrap();
        assert_eq!(out.generator.0, vec![3.5]);
        assert_eq!(out.discriminator.0, vec![-3.5, 7.0]);
    }

    #[test]
    fn fgan_impacts_shift_weight() {
        let updates = [scalar("a", 0.0, 5), scalar("b", 1.0, 5)];
        let out = aggregate_fgan(&updates, &ImpactVector::new(vec![1.0, 3.0]).unwrap()).unwrap();
        assert!((out.generator.0[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn identical_updates_are_fixed_point() {
        let updates = [
            scalar("a", 0.1, 3),
            scalar("b", 0.1, 7),
            scalar("c", 0.1, 1),
        ];
        let out = aggregate_fedavg(&updates).unwrap();
        assert_eq!(out, updates[0].params);
    }

    #[test]
    fn errors() {
        assert_eq!(aggregate_fedavg(&[]), Err(AggregateError::Empty));
        assert!(matches!(
            ImpactVector::new(vec![1.0, 0.0]),
            Err(AggregateError::NonPositiveImpact { index: 1, .. })
        ));
        assert!(ImpactVector::new(vec![-1.0]).is_err());
        assert!(ImpactVector::new(vec![f64::NAN]).is_err());
        let updates = [scalar("a", 0.0, 1), scalar("b", 1.0, 1)];
        assert!(matches!(
            aggregate_fgan(&updates, &ImpactVector::uniform(3)),
            Err(AggregateError::ImpactCount { .. })
        ));
        let mut short = scalar("c", 1.0, 1);
        short.params.discriminator.0.pop();
        assert!(matches!(
            aggregate_fedavg(&[scalar("a", 0.0, 1), short]),
            Err(AggregateError::LengthMismatch { index: 1, .. })
        ));
        assert!(matches!(
            aggregate_fedavg(&[scalar("a", 0.0, 0)]),
            Err(AggregateError::ZeroSamples { index: 0 })
        ));
    }

    #[test]
    fn zero_impacts_drop_out_of_internal_combine() {
        let updates = [scalar("a", 0.0, 1), scalar("b", 1.0, 1)];
        let out = combine(&updates, &[0.0, 2.0]).unwrap();
        assert_eq!(out.generator.0, vec![1.0]);
        assert_eq!(
            combine(&updates, &[0.0, 0.0]),
            Err(AggregateError::ZeroWeight)
        );
    }

    #[test]
    fn loss_diagnostics() {
        let updates = [scalar("a", 2.0, 1), scalar("b", 4.0, 3)];
        assert!((fedavg_loss(&updates).unwrap() - 3.5).abs() < 1e-15);
        // h = (2, 2): unnormalised, so the loss doubles
        assert!((fgan_loss(&updates, &[2.0, 2.0]).unwrap() - 7.0).abs() < 1e-15);
    }
}
