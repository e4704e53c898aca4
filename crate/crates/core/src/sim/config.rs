//! Scenario description.
//!
//! Every struct rejects unknown keys. Only `seed`, `duration`,
//! `feature_dim` and `clusters[*].node_count` are required; everything else
//! has a default listed on the field.

use serde::{Deserialize, Serialize};

use crate::coordination::{HighAttackPolicy, PriorityLaw, Tick};

/// Validation failure naming the offending key path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("`{key}`: {message}")]
pub struct ConfigViolation {
    pub key: String,
    pub message: String,
}

fn violation(key: impl Into<String>, message: impl Into<String>) -> ConfigViolation {
    ConfigViolation {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Number of ticks to simulate.
    pub duration: Tick,
    pub feature_dim: usize,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub central: CentralConfig,
    /// Suspended nodes stop receiving external traffic (default true).
    #[serde(default = "yes")]
    pub isolate_suspended: bool,
    /// Attack catalogue shared by all clusters (default empty).
    #[serde(default)]
    pub attack_types: Vec<AttackType>,
    pub clusters: Vec<ClusterConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    /// Default 0.05.
    pub lr: f64,
    /// Default 32.
    pub batch_size: usize,
    /// Alternating steps per local training round. Default 20.
    pub steps: usize,
    /// Append malicious-labelled samples to the discriminator's fake pool. Default true.
    pub semi_supervised: bool,
    /// New local samples needed before a node trains again. Default 50.
    pub train_trigger: usize,
    /// Anomaly-score threshold for classification. Default 0.5.
    pub threshold: f64,
    /// Uniform reference points added to the fake pool, as a fraction of
    /// the batch. Default 0.5.
    pub reference_fraction: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            batch_size: 32,
            steps: 20,
            semi_supervised: true,
            train_trigger: 50,
            threshold: 0.5,
            reference_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out genuine vectors per cluster. Default 200.
    pub genuine: usize,
    /// Held-out vectors per attack type per cluster. Default 200.
    pub per_attack: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            genuine: 200,
            per_attack: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CentralConfig {
    /// Run the central tier at all. Default true.
    pub enabled: bool,
    /// Participation fraction over clusters. Default 1.0.
    #[serde(rename = "C_central")]
    pub participation: f64,
    /// Max ticks the oldest cluster request waits for a round. Default 100.
    pub delta_central: Tick,
    /// A central round also runs once this fraction of clusters has a
    /// request pending. Default 0.5.
    pub min_pending_fraction: f64,
    pub high_attack: HighAttackPolicy,
    /// Default 200.
    #[serde(rename = "T_sus")]
    pub suspension: Tick,
    pub priority_law: PriorityLaw,
}

impl Default for CentralConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            participation: 1.0,
            delta_central: 100,
            min_pending_fraction: 0.5,
            high_attack: HighAttackPolicy::default(),
            suspension: 200,
            priority_law: PriorityLaw::Literal,
        }
    }
}

/// Diagonal Gaussian over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianConfig {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }
}

/// Attack traffic: the cluster's genuine distribution with its mean shifted
/// by `mean_shift` and its spread multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackType {
    pub name: String,
    pub mean_shift: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterAttack {
    /// Name from `attack_types`.
    #[serde(rename = "type")]
    pub attack_type: String,
    /// Expected malicious events per targeted node per tick.
    pub rate: f64,
    /// Node indices within the cluster; all nodes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub node_count: usize,
    /// Cluster creation tick `T_o`. Default 0.
    #[serde(default)]
    pub created_at: Tick,
    /// Join tick per node; every node joins at `created_at` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join_schedule: Option<Vec<Tick>>,
    /// Participation fraction. Default 0.6.
    #[serde(rename = "C", default = "default_participation")]
    pub participation: f64,
    #[serde(default)]
    pub high_attack: HighAttackPolicy,
    /// Default 200.
    #[serde(rename = "T_sus", default = "default_suspension")]
    pub suspension: Tick,
    /// Max ticks a non-empty queue waits for a round. Default 50.
    #[serde(default = "default_delta_round")]
    pub delta_round: Tick,
    #[serde(default)]
    pub priority_law: PriorityLaw,
    /// Probability of flipping each ingested label. Default 0.
    #[serde(default)]
    pub label_noise: f64,
    /// Expected genuine events per node per tick. Default 1.0.
    #[serde(default = "one")]
    pub genuine_rate: f64,
    /// Standard normal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genuine: Option<GaussianConfig>,
    #[serde(default)]
    pub attacks: Vec<ClusterAttack>,
}

fn default_participation() -> f64 {
    0.6
}

fn default_suspension() -> Tick {
    200
}

fn default_delta_round() -> Tick {
    50
}

impl ClusterConfig {
    pub fn with_nodes(node_count: usize) -> Self {
        Self {
            node_count,
            created_at: 0,
            join_schedule: None,
            participation: default_participation(),
            high_attack: HighAttackPolicy::default(),
            suspension: default_suspension(),
            delta_round: default_delta_round(),
            priority_law: PriorityLaw::Literal,
            label_noise: 0.0,
            genuine_rate: 1.0,
            genuine: None,
            attacks: vec![],
        }
    }

    pub fn join_tick(&self, node: usize) -> Tick {
        self.join_schedule
            .as_ref()
            .map_or(self.created_at, |s| s[node])
    }

    pub fn genuine_distribution(&self, dim: usize) -> GaussianConfig {
        self.genuine
            .clone()
            .unwrap_or_else(|| GaussianConfig::standard(dim))
    }
}

impl Default for SimConfig {
    /// Two clusters of five nodes over 2000 ticks; cluster 0 sees only
    /// `alpha` (+4 on feature 0), cluster 1 only `beta` (+4 on feature 1).
    fn default() -> Self {
        let d = 4;
        let shift = |axis: usize| {
            let mut v = vec![0.0; d];
            v[axis] = 4.0;
            v
        };
        let cluster = |name: &str| ClusterConfig {
            attacks: vec![ClusterAttack {
                attack_type: name.into(),
                rate: 0.2,
                targets: None,
            }],
            ..ClusterConfig::with_nodes(5)
        };
        Self {
            seed: 1,
            duration: 2000,
            feature_dim: d,
            gan: GanConfig::default(),
            evaluation: EvalConfig::default(),
            central: CentralConfig::default(),
            isolate_suspended: true,
            attack_types: vec![
                AttackType {
                    name: "alpha".into(),
                    mean_shift: shift(0),
                    scale: 1.0,
                },
                AttackType {
                    name: "beta".into(),
                    mean_shift: shift(1),
                    scale: 1.0,
                },
            ],
            clusters: vec![cluster("alpha"), cluster("beta")],
        }
    }
}

fn fraction(key: String, v: f64) -> Result<(), ConfigViolation> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(violation(key, format!("{v} is outside (0, 1]")))
    }
}

fn rate(key: String, v: f64) -> Result<(), ConfigViolation> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(violation(
            key,
            format!("{v} must be finite and non-negative"),
        ))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigViolation> {
        let d = self.feature_dim;
        if self.duration == 0 {
            return Err(violation("duration", "must be positive"));
        }
        if d == 0 {
            return Err(violation("feature_dim", "must be positive"));
        }
        if self.clusters.is_empty() {
            return Err(violation("clusters", "at least one cluster is required"));
        }
        let g = &self.gan;
        if !(g.lr >= 0.0 && g.lr.is_finite()) {
            return Err(violation("gan.lr", "must be finite and non-negative"));
        }
        for (key, v) in [
            ("gan.batch_size", g.batch_size),
            ("gan.steps", g.steps),
            ("gan.train_trigger", g.train_trigger),
            ("evaluation.genuine", self.evaluation.genuine),
            ("evaluation.per_attack", self.evaluation.per_attack),
        ] {
            if v == 0 {
                return Err(violation(key, "must be positive"));
            }
        }
        if !(g.threshold > 0.0 && g.threshold < 1.0) {
            return Err(violation("gan.threshold", "must lie in (0, 1)"));
        }
        if !(0.0..=4.0).contains(&g.reference_fraction) {
            return Err(violation("gan.reference_fraction", "must lie in [0, 4]"));
        }
        fraction("central.C_central".into(), self.central.participation)?;
        fraction(
            "central.min_pending_fraction".into(),
            self.central.min_pending_fraction,
        )?;
        if self.central.delta_central == 0 {
            return Err(violation("central.delta_central", "must be positive"));
        }
        if self.central.suspension == 0 {
            return Err(violation("central.T_sus", "must be positive"));
        }
        self.central
            .high_attack
            .validate()
            .map_err(|m| violation("central.high_attack", m))?;

        let mut names = std::collections::BTreeSet::new();
        for (i, a) in self.attack_types.iter().enumerate() {
            if !names.insert(a.name.as_str()) {
                return Err(violation(
                    format!("attack_types[{i}].name"),
                    "duplicate name",
                ));
            }
            if a.mean_shift.len() != d {
                return Err(violation(
                    format!("attack_types[{i}].mean_shift"),
                    format!("has {} entries, feature_dim is {d}", a.mean_shift.len()),
                ));
            }
            if !(a.scale > 0.0 && a.scale.is_finite()) {
                return Err(violation(
                    format!("attack_types[{i}].scale"),
                    "must be positive",
                ));
            }
        }

        for (i, c) in self.clusters.iter().enumerate() {
            let key = |k: &str| format!("clusters[{i}].{k}");
            if c.node_count == 0 {
                return Err(violation(key("node_count"), "must be positive"));
            }
            fraction(key("C"), c.participation)?;
            if c.suspension == 0 {
                return Err(violation(key("T_sus"), "must be positive"));
            }
            if c.delta_round == 0 {
                return Err(violation(key("delta_round"), "must be positive"));
            }
            c.high_attack
                .validate()
                .map_err(|m| violation(key("high_attack"), m))?;
            if !(0.0..=1.0).contains(&c.label_noise) {
                return Err(violation(key("label_noise"), "must lie in [0, 1]"));
            }
            rate(key("genuine_rate"), c.genuine_rate)?;
            if let Some(s) = &c.join_schedule {
                if s.len() != c.node_count {
                    return Err(violation(
                        key("join_schedule"),
                        format!("has {} entries for {} nodes", s.len(), c.node_count),
                    ));
                }
                if let Some(j) = s.iter().position(|&t| t < c.created_at) {
                    return Err(violation(
                        format!("clusters[{i}].join_schedule[{j}]"),
                        "precedes the cluster's creation",
                    ));
                }
            }
            if let Some(gen) = &c.genuine {
                if gen.mean.len() != d {
                    return Err(violation(key("genuine.mean"), format!("needs {d} entries")));
                }
                if gen.std.len() != d || gen.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(violation(
                        key("genuine.std"),
                        format!("needs {d} positive entries"),
                    ));
                }
            }
            for (j, a) in c.attacks.iter().enumerate() {
                let akey = |k: &str| format!("clusters[{i}].attacks[{j}].{k}");
                if !names.contains(a.attack_type.as_str()) {
                    return Err(violation(
                        akey("type"),
                        format!("unknown attack type `{}`", a.attack_type),
                    ));
                }
                rate(akey("rate"), a.rate)?;
                if let Some(t) = &a.targets {
                    if let Some(&bad) = t.iter().find(|&&n| n >= c.node_count) {
                        return Err(violation(
                            akey("targets"),
                            format!("node {bad} does not exist"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn violations_name_keys() {
        let mut c = SimConfig::default();
        c.clusters[0].participation = 1.5;
        assert_eq!(c.validate().unwrap_err().key, "clusters[0].C");

        let c = SimConfig {
            duration: 0,
            ..SimConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().key, "duration");

        let mut c = SimConfig::default();
        c.clusters[1].attacks[0].attack_type = "gamma".into();
        assert_eq!(c.validate().unwrap_err().key, "clusters[1].attacks[0].type");

        let mut c = SimConfig::default();
        c.attack_types[0].mean_shift.pop();
        assert_eq!(c.validate().unwrap_err().key, "attack_types[0].mean_shift");

        let mut c = SimConfig::default();
        c.central.participation = 0.0;
        assert_eq!(c.validate().unwrap_err().key, "central.C_central");
    }
}
