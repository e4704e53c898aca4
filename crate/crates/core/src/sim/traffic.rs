//! Synthetic traffic: Gaussian genuine vectors plus mean-shifted attack vectors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{GaussianConfig, SimConfig};
use crate::coordination::Tick;
use crate::eval::EvalSets;
use crate::gan::Label;
use crate::rng::{stream_rng, Stream};

/// First id of the evaluation id space; training events count up from 0.
pub const EVAL_ID_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficEvent {
    pub id: u64,
    pub tick: Tick,
    pub node: usize,
    pub vector: Vec<f64>,
    pub truth: Label,
    pub attack_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileAttack {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub rate: f64,
    pub targets: Option<Vec<usize>>,
}

impl ProfileAttack {
    pub fn targets_node(&self, node: usize) -> bool {
        self.targets.as_ref().is_none_or(|t| t.contains(&node))
    }
}

/// Traffic mix seen by the nodes of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackProfile {
    pub genuine: GaussianConfig,
    pub genuine_rate: f64,
    pub attacks: Vec<ProfileAttack>,
}

fn shifted(base: &GaussianConfig, shift: &[f64], scale: f64) -> (Vec<f64>, Vec<f64>) {
    (
        base.mean.iter().zip(shift).map(|(m, s)| m + s).collect(),
        base.std.iter().map(|s| s * scale).collect(),
    )
}

impl AttackProfile {
    /// Profile of cluster `cluster` in a validated config.
    pub fn for_cluster(config: &SimConfig, cluster: usize) -> Self {
        let c = &config.clusters[cluster];
        let genuine = c.genuine_distribution(config.feature_dim);
        let attacks = c
            .attacks
            .iter()
            .map(|a| {
                let t = config
                    .attack_types
                    .iter()
                    .find(|t| t.name == a.attack_type)
                    .expect("validated attack type");
                let (mean, std) = shifted(&genuine, &t.mean_shift, t.scale);
                ProfileAttack {
                    name: t.name.clone(),
                    mean,
                    std,
                    rate: a.rate,
                    targets: a.targets.clone(),
                }
            })
            .collect();
        Self {
            genuine_rate: c.genuine_rate,
            genuine,
            attacks,
        }
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], std: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect()
}

/// `floor(rate)` events plus one more with probability `frac(rate)`.
fn event_count<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> usize {
    let whole = rate.floor();
    let frac = rate - whole;
    let u: f64 = rng.random();
    whole as usize + usize::from(u < frac)
}

/// Events arriving at `node` during `tick`. Ids are taken from `next_id`.
pub fn generate_traffic<R: Rng + ?Sized>(
    profile: &AttackProfile,
    node: usize,
    tick: Tick,
    rng: &mut R,
    next_id: &mut u64,
) -> Vec<TrafficEvent> {
    let mut events = Vec::new();
    let mut push = |vector, truth, attack_type| {
        events.push(TrafficEvent {
            id: *next_id,
            tick,
            node,
            vector,
            truth,
            attack_type,
        });
        *next_id += 1;
    };
    for _ in 0..event_count(rng, profile.genuine_rate) {
        let v = sample_gaussian(rng, &profile.genuine.mean, &profile.genuine.std);
        push(v, Label::Genuine, None);
    }
    for attack in &profile.attacks {
        if !attack.targets_node(node) {
            continue;
        }
        for _ in 0..event_count(rng, attack.rate) {
            let v = sample_gaussian(rng, &attack.mean, &attack.std);
            push(v, Label::Malicious, Some(attack.name.clone()));
        }
    }
    events
}

/// Held-out vectors for cluster `cluster`, drawn from a dedicated stream.
/// Every attack type in the catalogue is included, whether or not the
/// cluster ever sees it. Returns the sets and the ids assigned to them.
pub fn evaluation_sets(config: &SimConfig, cluster: usize) -> (EvalSets, Vec<u64>) {
    let mut rng = stream_rng(config.seed, Stream::Evaluation, &[cluster as u64]);
    let genuine_dist = config.clusters[cluster].genuine_distribution(config.feature_dim);
    let mut ids = Vec::new();
    let mut next = EVAL_ID_BASE + ((cluster as u64) << 40);
    let mut take_id = || {
        ids.push(next);
        next += 1;
    };
    let genuine = (0..config.evaluation.genuine)
        .map(|_| {
            take_id();
            sample_gaussian(&mut rng, &genuine_dist.mean, &genuine_dist.std)
        })
        .collect();
    let mut attacks = std::collections::BTreeMap::new();
    for t in &config.attack_types {
        let (mean, std) = shifted(&genuine_dist, &t.mean_shift, t.scale);
        let xs = (0..config.evaluation.per_attack)
            .map(|_| {
                take_id();
                sample_gaussian(&mut rng, &mean, &std)
            })
            .collect();
        attacks.insert(t.name.clone(), xs);
    }
    (EvalSets { genuine, attacks }, ids)
}
