//! Deterministic tick-driven simulation of the three-tier hierarchy.
//!
//! Each tick runs, in this order: suspension expiry, node joins, traffic
//! generation and ingest, node training and submission, proxy rounds (each
//! followed by distribution to the cluster and a request to the central
//! server), then at most one central round followed by distribution to every
//! cluster and node. Clusters and nodes are always visited in index order,
//! so a config fully determines the output.

pub mod config;
pub mod node;
pub mod traffic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AggregateError, NodeUpdate, SourceId};
use crate::coordination::{
    central_update_round, model_update_round, CentralState, ClusterState, CoordinationError,
    Coordinator, CoordinatorConfig, RoundReport, SubmitOutcome, Tick, Tier,
};
use crate::eval::{evaluate_model, EvalError, EvalSets, Evaluation};
use crate::gan::{GanError, GanModel, ModelHash};
use crate::rng::{derive_seed, Stream};

pub use config::{ConfigViolation, SimConfig};
pub use node::{node_ingest, node_maybe_train_and_submit, training_seed, Node, Submission};
pub use traffic::{evaluation_sets, generate_traffic, AttackProfile, TrafficEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigViolation),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub fn cluster_id(cluster: usize) -> SourceId {
    SourceId(format!("c{cluster}"))
}

/// One suspension or reinstatement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlacklistEvent {
    pub tick: Tick,
    pub tier: Tier,
    pub coordinator: String,
    pub source: SourceId,
    /// Suspension end, or `None` for a reinstatement.
    pub until: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Position in the metrics stream.
    pub seq: u64,
    pub tick: Tick,
    pub tier: Tier,
    /// Proxy rounds only.
    pub cluster: Option<usize>,
    pub report: RoundReport,
    /// Evaluation of the new model, keyed by the cluster whose held-out
    /// traffic was used.
    pub evaluations: BTreeMap<String, Evaluation>,
    /// Proxy queue depth per cluster after the round.
    pub queue_depths: Vec<usize>,
    pub central_queue_depth: usize,
    /// Blacklist changes since the previous record.
    pub blacklist_events: Vec<BlacklistEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub model_hash: ModelHash,
    pub evaluation: Evaluation,
    pub attack_index: u64,
    pub blacklisted: Vec<SourceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub model_hash: ModelHash,
    pub central_rounds: u64,
    /// The central model evaluated on each cluster's held-out traffic.
    pub evaluations: BTreeMap<String, Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub ticks: Tick,
    pub events: u64,
    pub trainings: u64,
    pub submissions_accepted: u64,
    pub submissions_rejected: u64,
    pub proxy_rounds: u64,
    pub central_rounds: u64,
    pub blacklist_events: u64,
    pub clusters: Vec<ClusterSummary>,
    /// Absent when the central tier is disabled.
    pub global: Option<GlobalSummary>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Round(RoundRecord),
    Summary(Summary),
}

/// Round records in stream order followed by one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub records: Vec<MetricsRecord>,
}

impl SimMetrics {
    pub fn rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricsRecord::Round(r) => Some(r),
            MetricsRecord::Summary(_) => None,
        })
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.records.iter().rev().find_map(|r| match r {
            MetricsRecord::Summary(s) => Some(s),
            MetricsRecord::Round(_) => None,
        })
    }
}

/// Provenance trace of everything that changed a model or reputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Joined {
        tick: Tick,
        node: SourceId,
    },
    Trained {
        tick: Tick,
        node: SourceId,
        #[serde(flatten)]
        submission: Submission,
    },
    ProxyRound {
        tick: Tick,
        cluster: usize,
        accepted: Vec<SourceId>,
        model_hash: ModelHash,
    },
    ClusterSubmitted {
        tick: Tick,
        cluster: usize,
        model_hash: ModelHash,
        outcome: SubmitOutcome,
    },
    CentralRound {
        tick: Tick,
        accepted: Vec<SourceId>,
        model_hash: ModelHash,
    },
    /// `cluster` is `None` for central-to-everyone distribution.
    Distributed {
        tick: Tick,
        cluster: Option<usize>,
        model_hash: ModelHash,
    },
    Blacklist(BlacklistEvent),
}

/// Everything a run produced, for callers that need more than metrics.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: SimMetrics,
    pub trace: Vec<TraceEvent>,
    pub initial_model: GanModel,
    pub clusters: Vec<ClusterState>,
    pub central: Option<CentralState>,
    pub nodes: Vec<Vec<Node>>,
    pub eval_sets: Vec<EvalSets>,
    pub eval_ids: Vec<u64>,
    pub events_generated: u64,
}

pub fn run_simulation(config: &SimConfig) -> Result<SimMetrics, SimError> {
    Ok(run_simulation_detailed(config)?.metrics)
}

struct Counters {
    trainings: u64,
    accepted: u64,
    rejected: u64,
    proxy_rounds: u64,
    central_rounds: u64,
    blacklist_events: u64,
}

pub fn run_simulation_detailed(config: &SimConfig) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let d = config.feature_dim;
    let initial_model =
        GanModel::init_default(d, derive_seed(config.seed, Stream::ModelInit, &[]))?;

    let mut clusters: Vec<ClusterState> = Vec::with_capacity(config.clusters.len());
    let mut nodes: Vec<Vec<Node>> = Vec::with_capacity(config.clusters.len());
    let mut profiles = Vec::with_capacity(config.clusters.len());
    let mut eval_sets = Vec::with_capacity(config.clusters.len());
    let mut eval_ids = Vec::new();
    for (ci, c) in config.clusters.iter().enumerate() {
        clusters.push(Coordinator::new(
            cluster_id(ci).0,
            Tier::Proxy,
            c.created_at,
            CoordinatorConfig {
                participation: c.participation,
                high_attack: c.high_attack,
                suspension: c.suspension,
                law: c.priority_law,
            },
            initial_model.clone(),
        )?);
        nodes.push(
            (0..c.node_count)
                .map(|ni| Node::new(config.seed, ci, ni, initial_model.clone()))
                .collect(),
        );
        profiles.push(AttackProfile::for_cluster(config, ci));
        let (sets, ids) = evaluation_sets(config, ci);
        eval_sets.push(sets);
        eval_ids.extend(ids);
    }

    let mut central = if config.central.enabled {
        let mut c = Coordinator::new(
            "central",
            Tier::Central,
            0,
            CoordinatorConfig {
                participation: config.central.participation,
                high_attack: config.central.high_attack,
                suspension: config.central.suspension,
                law: config.central.priority_law,
            },
            initial_model.clone(),
        )?;
        for (ci, cc) in config.clusters.iter().enumerate() {
            c.add_member(cluster_id(ci), cc.created_at)?;
        }
        Some(c)
    } else {
        None
    };

    let mut records = Vec::new();
    let mut trace = Vec::new();
    let mut pending_blacklist: Vec<BlacklistEvent> = Vec::new();
    let mut next_event_id = 0u64;
    let mut counters = Counters {
        trainings: 0,
        accepted: 0,
        rejected: 0,
        proxy_rounds: 0,
        central_rounds: 0,
        blacklist_events: 0,
    };

    let note_blacklist = |ev: BlacklistEvent,
                          trace: &mut Vec<TraceEvent>,
                          pending: &mut Vec<BlacklistEvent>,
                          counters: &mut Counters| {
        counters.blacklist_events += 1;
        trace.push(TraceEvent::Blacklist(ev.clone()));
        pending.push(ev);
    };

    for tick in 0..config.duration {
        // suspensions ending now
        for cluster in clusters.iter_mut() {
            for source in cluster.lift_suspensions(tick) {
                let ev = BlacklistEvent {
                    tick,
                    tier: Tier::Proxy,
                    coordinator: cluster.id().to_owned(),
                    source,
                    until: None,
                };
                note_blacklist(ev, &mut trace, &mut pending_blacklist, &mut counters);
            }
        }
        if let Some(central) = central.as_mut() {
            for source in central.lift_suspensions(tick) {
                let ev = BlacklistEvent {
                    tick,
                    tier: Tier::Central,
                    coordinator: "central".into(),
                    source,
                    until: None,
                };
                note_blacklist(ev, &mut trace, &mut pending_blacklist, &mut counters);
            }
        }

        // joins
        for (ci, c) in config.clusters.iter().enumerate() {
            for node in nodes[ci].iter_mut() {
                if !node.joined && c.join_tick(node.index) == tick {
                    clusters[ci].add_member(node.id.clone(), tick)?;
                    node.joined = true;
                    node.receive_model(clusters[ci].current_model().clone());
                    trace.push(TraceEvent::Joined {
                        tick,
                        node: node.id.clone(),
                    });
                }
            }
        }

        // traffic
        for (ci, c) in config.clusters.iter().enumerate() {
            for node in nodes[ci].iter_mut() {
                if !node.joined
                    || (config.isolate_suspended && clusters[ci].is_blacklisted(&node.id))
                {
                    continue;
                }
                let index = node.index;
                let events = generate_traffic(
                    &profiles[ci],
                    index,
                    tick,
                    node.traffic_rng(),
                    &mut next_event_id,
                );
                node_ingest(node, events, c.label_noise);
            }
        }

        // local training and submission
        for ci in 0..clusters.len() {
            for node in nodes[ci].iter_mut() {
                let Some(sub) = node_maybe_train_and_submit(
                    node,
                    &mut clusters[ci],
                    tick,
                    &config.gan,
                    config.seed,
                )?
                else {
                    continue;
                };
                counters.trainings += 1;
                if sub.outcome.is_accepted() {
                    counters.accepted += 1;
                } else {
                    counters.rejected += 1;
                }
                if let SubmitOutcome::Rejected(crate::coordination::RejectReason::Blacklisted {
                    until,
                }) = sub.outcome
                {
                    if until == tick + clusters[ci].config().suspension {
                        let ev = BlacklistEvent {
                            tick,
                            tier: Tier::Proxy,
                            coordinator: clusters[ci].id().to_owned(),
                            source: node.id.clone(),
                            until: Some(until),
                        };
                        note_blacklist(ev, &mut trace, &mut pending_blacklist, &mut counters);
                    }
                }
                trace.push(TraceEvent::Trained {
                    tick,
                    node: node.id.clone(),
                    submission: sub,
                });
            }
        }

        // proxy rounds
        for ci in 0..clusters.len() {
            if !round_due(&clusters[ci], tick, config.clusters[ci].delta_round, None) {
                continue;
            }
            let report = model_update_round(&mut clusters[ci], tick)?;
            counters.proxy_rounds += 1;
            let model = clusters[ci].current_model().clone();
            trace.push(TraceEvent::ProxyRound {
                tick,
                cluster: ci,
                accepted: report.accepted.clone(),
                model_hash: report.model_hash,
            });
            for node in nodes[ci].iter_mut().filter(|n| n.joined) {
                node.receive_model(model.clone());
            }
            trace.push(TraceEvent::Distributed {
                tick,
                cluster: Some(ci),
                model_hash: report.model_hash,
            });

            let mut evaluations = BTreeMap::new();
            evaluations.insert(
                cluster_id(ci).0,
                evaluate_model(&model, &eval_sets[ci], config.gan.threshold)?,
            );

            if let Some(central) = central.as_mut() {
                let a_c: u64 = nodes[ci].iter().map(Node::attack_index).sum();
                let update = NodeUpdate {
                    source_id: cluster_id(ci),
                    params: model.params().clone(),
                    sample_count: report.sample_count.max(1),
                    local_loss: report.fgan_loss.unwrap_or(0.0),
                    reported_attack_index: a_c,
                };
                let outcome = central.submit_request(&cluster_id(ci), update, a_c, tick)?;
                if let SubmitOutcome::Rejected(crate::coordination::RejectReason::Blacklisted {
                    until,
                }) = outcome
                {
                    if until == tick + central.config().suspension {
                        let ev = BlacklistEvent {
                            tick,
                            tier: Tier::Central,
                            coordinator: "central".into(),
                            source: cluster_id(ci),
                            until: Some(until),
                        };
                        note_blacklist(ev, &mut trace, &mut pending_blacklist, &mut counters);
                    }
                }
                trace.push(TraceEvent::ClusterSubmitted {
                    tick,
                    cluster: ci,
                    model_hash: report.model_hash,
                    outcome,
                });
            }

            records.push(MetricsRecord::Round(RoundRecord {
                seq: records.len() as u64,
                tick,
                tier: Tier::Proxy,
                cluster: Some(ci),
                report,
                evaluations,
                queue_depths: clusters.iter().map(|c| c.queue().len()).collect(),
                central_queue_depth: central.as_ref().map_or(0, |c| c.queue().len()),
                blacklist_events: std::mem::take(&mut pending_blacklist),
            }));
        }

        // central round
        if let Some(central) = central.as_mut() {
            if round_due(
                central,
                tick,
                config.central.delta_central,
                Some(config.central.min_pending_fraction),
            ) {
                let report = central_update_round(central, tick)?;
                counters.central_rounds += 1;
                let model = central.current_model().clone();
                trace.push(TraceEvent::CentralRound {
                    tick,
                    accepted: report.accepted.clone(),
                    model_hash: report.model_hash,
                });
                crate::coordination::distribute_model(central, &mut clusters);
                for node in nodes.iter_mut().flatten().filter(|n| n.joined) {
                    node.receive_model(model.clone());
                }
                trace.push(TraceEvent::Distributed {
                    tick,
                    cluster: None,
                    model_hash: report.model_hash,
                });
                let mut evaluations = BTreeMap::new();
                for (ci, sets) in eval_sets.iter().enumerate() {
                    evaluations.insert(
                        cluster_id(ci).0,
                        evaluate_model(&model, sets, config.gan.threshold)?,
                    );
                }
                records.push(MetricsRecord::Round(RoundRecord {
                    seq: records.len() as u64,
                    tick,
                    tier: Tier::Central,
                    cluster: None,
                    report,
                    evaluations,
                    queue_depths: clusters.iter().map(|c| c.queue().len()).collect(),
                    central_queue_depth: central.queue().len(),
                    blacklist_events: std::mem::take(&mut pending_blacklist),
                }));
            }
        }

        debug_assert!(nodes.iter().flatten().all(|n| n.attack_index()
            == n.labels()
                .iter()
                .filter(|&&l| l == crate::gan::Label::Malicious)
                .count() as u64));
    }

    let mut cluster_summaries = Vec::with_capacity(clusters.len());
    for (ci, c) in clusters.iter().enumerate() {
        cluster_summaries.push(ClusterSummary {
            cluster: ci,
            model_hash: c.current_model().hash(),
            evaluation: evaluate_model(c.current_model(), &eval_sets[ci], config.gan.threshold)?,
            attack_index: nodes[ci].iter().map(Node::attack_index).sum(),
            blacklisted: c.blacklist().keys().cloned().collect(),
        });
    }
    let global = match central.as_ref() {
        Some(c) => {
            let mut evaluations = BTreeMap::new();
            for (ci, sets) in eval_sets.iter().enumerate() {
                evaluations.insert(
                    cluster_id(ci).0,
                    evaluate_model(c.current_model(), sets, config.gan.threshold)?,
                );
            }
            Some(GlobalSummary {
                model_hash: c.current_model().hash(),
                central_rounds: counters.central_rounds,
                evaluations,
            })
        }
        None => None,
    };
    records.push(MetricsRecord::Summary(Summary {
        seed: config.seed,
        ticks: config.duration,
        events: next_event_id,
        trainings: counters.trainings,
        submissions_accepted: counters.accepted,
        submissions_rejected: counters.rejected,
        proxy_rounds: counters.proxy_rounds,
        central_rounds: counters.central_rounds,
        blacklist_events: counters.blacklist_events,
        clusters: cluster_summaries,
        global,
    }));

    Ok(SimOutcome {
        metrics: SimMetrics { records },
        trace,
        initial_model,
        clusters,
        central,
        nodes,
        eval_sets,
        eval_ids,
        events_generated: next_event_id,
    })
}

/// A round runs when requests wait and either enough have accumulated or
/// the oldest has waited `max_wait` ticks. Proxy servers need `ceil(C * N)`
/// requests; the central server needs `ceil(fraction * N_C)`.
fn round_due(
    state: &Coordinator,
    now: Tick,
    max_wait: Tick,
    central_fraction: Option<f64>,
) -> bool {
    let queue = state.queue();
    if queue.is_empty() {
        return false;
    }
    let fraction = central_fraction.unwrap_or(state.config().participation);
    let needed = ((fraction * state.member_count() as f64) - 1e-9)
        .ceil()
        .max(1.0) as usize;
    let oldest = queue.iter().map(|r| r.submitted_at).min().unwrap_or(now);
    queue.len() >= needed || now - oldest >= max_wait
}
