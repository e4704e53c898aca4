//! Node lifecycle: log traffic, count attacks, train, submit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::GanConfig;
use super::traffic::TrafficEvent;
use crate::aggregate::{local_loss, NodeUpdate, SourceId};
use crate::coordination::{ClusterState, SubmitOutcome, Tick};
use crate::gan::{train_round, Batch, GanModel, Label, ModelHash, TrainHyper};
use crate::rng::{derive_seed, stream_rng, Stream};

use super::SimError;

#[derive(Debug, Clone)]
pub struct Node {
    pub id: SourceId,
    pub cluster: usize,
    pub index: usize,
    pub joined: bool,
    samples: Vec<Vec<f64>>,
    labels: Vec<Label>,
    event_ids: Vec<u64>,
    attack_index: u64,
    new_since_training: usize,
    trainings: u64,
    model: GanModel,
    traffic_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

/// Result of a node's train-and-submit attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub trained_from: ModelHash,
    pub trained_to: ModelHash,
    /// Local dataset size used for training.
    pub samples: usize,
    pub training_seed: u64,
    pub reported_attack_index: u64,
    pub outcome: SubmitOutcome,
}

/// Seed of a node's `k`-th local training round.
pub fn training_seed(seed: u64, cluster: usize, node: usize, k: u64) -> u64 {
    derive_seed(seed, Stream::Training, &[cluster as u64, node as u64, k])
}

pub fn node_id(cluster: usize, node: usize) -> SourceId {
    SourceId(format!("c{cluster}-n{node}"))
}

impl Node {
    pub fn new(seed: u64, cluster: usize, index: usize, model: GanModel) -> Self {
        let path = [cluster as u64, index as u64];
        Self {
            id: node_id(cluster, index),
            cluster,
            index,
            joined: false,
            samples: Vec::new(),
            labels: Vec::new(),
            event_ids: Vec::new(),
            attack_index: 0,
            new_since_training: 0,
            trainings: 0,
            model,
            traffic_rng: stream_rng(seed, Stream::Traffic, &path),
            noise_rng: stream_rng(seed, Stream::LabelNoise, &path),
        }
    }

    /// Attack index `A`: malicious-labelled events logged so far.
    pub fn attack_index(&self) -> u64 {
        self.attack_index
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    /// Replaces the working model with a distributed one.
    pub fn receive_model(&mut self, model: GanModel) {
        self.model = model;
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn event_ids(&self) -> &[u64] {
        &self.event_ids
    }

    pub fn genuine_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Genuine).count()
    }

    pub fn trainings(&self) -> u64 {
        self.trainings
    }

    pub(crate) fn traffic_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.traffic_rng
    }

    /// First `len` samples of the local log as a labelled batch.
    pub fn dataset_prefix(&self, len: usize) -> Option<Batch> {
        if len == 0 {
            return None;
        }
        Batch::labelled(self.samples[..len].to_vec(), self.labels[..len].to_vec()).ok()
    }
}

/// Logs `events` locally; each label is flipped with probability
/// `label_noise` and `A` grows by the malicious-labelled count.
pub fn node_ingest(node: &mut Node, events: Vec<TrafficEvent>, label_noise: f64) {
    for e in events {
        debug_assert_eq!(e.node, node.index);
        let flip = label_noise > 0.0 && node.noise_rng.random::<f64>() < label_noise;
        let label = if flip { e.truth.flipped() } else { e.truth };
        if label == Label::Malicious {
            node.attack_index += 1;
        }
        node.samples.push(e.vector);
        node.labels.push(label);
        node.event_ids.push(e.id);
        node.new_since_training += 1;
    }
}

/// Trains and submits once enough new samples have arrived and no request
/// is pending. Suspended nodes still train; their submission is rejected.
pub fn node_maybe_train_and_submit(
    node: &mut Node,
    cluster: &mut ClusterState,
    now: Tick,
    gan: &GanConfig,
    seed: u64,
) -> Result<Option<Submission>, SimError> {
    if !node.joined
        || node.new_since_training < gan.train_trigger
        || cluster.has_pending(&node.id)
        || now <= cluster.created_at()
    {
        return Ok(None);
    }
    let genuine = node.genuine_count();
    if genuine == 0 {
        return Ok(None);
    }
    let data = node
        .dataset_prefix(node.samples.len())
        .expect("non-empty log");
    let training_seed = training_seed(seed, node.cluster, node.index, node.trainings);
    let hyper = TrainHyper {
        lr: gan.lr,
        batch_size: gan.batch_size,
        steps: gan.steps,
        seed: training_seed,
        semi_supervised: gan.semi_supervised,
        reference_fraction: gan.reference_fraction,
    };
    let trained_from = node.model.hash();
    let (trained, _) = train_round(&node.model, &data, &hyper)?;
    node.trainings += 1;
    node.new_since_training = 0;
    node.model = trained;

    let update = NodeUpdate {
        source_id: node.id.clone(),
        params: node.model.params().clone(),
        sample_count: genuine as u64,
        local_loss: local_loss(&node.model, &data, gan.semi_supervised)?,
        reported_attack_index: node.attack_index,
    };
    let outcome = cluster.submit_request(&node.id, update, node.attack_index, now)?;
    Ok(Some(Submission {
        trained_from,
        trained_to: node.model.hash(),
        samples: data.len(),
        training_seed,
        reported_attack_index: node.attack_index,
        outcome,
    }))
}
