//! Priority scheduling, reputation and round procedure for both aggregation
//! tiers.
//!
//! A [`Coordinator`] is the state machine run by a proxy server (members are
//! nodes) or by the central server (members are clusters). Requests are
//! prioritised once, at enqueue time, by
//!
//! ```text
//! p = A / (N * maturity),   maturity = (T - T_s) / (T - T_o)
//! ```
//!
//! and each round aggregates the top `floor(C * N)` of them with their
//! priorities as impacts, then empties the queue.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{combine, fgan_loss, AggregateError, NodeUpdate, SourceId};
use crate::gan::{GanError, GanModel, ModelHash};

/// Simulation time in integer ticks.
pub type Tick = u64;

/// Smallest maturity ratio used in the priority formula.
pub const MATURITY_FLOOR: f64 = 1e-6;

/// Consecutive over-threshold reports that trigger a suspension.
pub const STRIKES_TO_BLACKLIST: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CoordinationError {
    #[error("query time {now} does not follow creation time {created_at}")]
    NotAfterCreation { now: Tick, created_at: Tick },
    #[error("join time {joined_at} outside [{created_at}, {now}]")]
    JoinTime {
        joined_at: Tick,
        created_at: Tick,
        now: Tick,
    },
    #[error("member count must be positive")]
    NoMembers,
    #[error("attack index {0} must be finite and non-negative")]
    AttackIndex(f64),
    #[error("participation fraction {0} outside (0, 1]")]
    Participation(f64),
    #[error("suspension time must be positive")]
    Suspension,
    #[error("{0} is already a member")]
    DuplicateMember(SourceId),
    #[error("payload of {source_id} does not match the coordinator's model: {reason}")]
    Payload { source_id: SourceId, reason: String },
    #[error("operation needs a {expected:?} coordinator, got {got:?}")]
    WrongTier { expected: Tier, got: Tier },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Gan(#[from] GanError),
}

/// How the maturity ratio enters the priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityLaw {
    /// `A / (N * maturity)`.
    #[default]
    Literal,
    /// `A * maturity / N`: newcomers get lower priority.
    InvertedMaturity,
}

/// `(T - T_s) / (T - T_o)`, floored at [`MATURITY_FLOOR`].
pub fn maturity(now: Tick, joined_at: Tick, created_at: Tick) -> Result<f64, CoordinationError> {
    if now <= created_at {
        return Err(CoordinationError::NotAfterCreation { now, created_at });
    }
    if joined_at < created_at || joined_at > now {
        return Err(CoordinationError::JoinTime {
            joined_at,
            created_at,
            now,
        });
    }
    let ratio = (now - joined_at) as f64 / (now - created_at) as f64;
    Ok(ratio.max(MATURITY_FLOOR))
}

pub fn compute_priority_with(
    law: PriorityLaw,
    attack_index: f64,
    members: usize,
    now: Tick,
    joined_at: Tick,
    created_at: Tick,
) -> Result<f64, CoordinationError> {
    if !(attack_index >= 0.0 && attack_index.is_finite()) {
        return Err(CoordinationError::AttackIndex(attack_index));
    }
    if members == 0 {
        return Err(CoordinationError::NoMembers);
    }
    let m = maturity(now, joined_at, created_at)?;
    let n = members as f64;
    Ok(match law {
        PriorityLaw::Literal => attack_index / (n * m),
        PriorityLaw::InvertedMaturity => attack_index * m / n,
    })
}

/// Node priority `A / (N * (T - T_s) / (T - T_o))`.
pub fn compute_priority(
    attack_index: f64,
    members: usize,
    now: Tick,
    joined_at: Tick,
    created_at: Tick,
) -> Result<f64, CoordinationError> {
    compute_priority_with(
        PriorityLaw::Literal,
        attack_index,
        members,
        now,
        joined_at,
        created_at,
    )
}

/// Cluster priority: same law over the cluster attack index `A_C`, the
/// cluster count `N_C`, the cluster creation time and the network creation time.
pub fn compute_cluster_priority(
    cluster_attack_index: f64,
    clusters: usize,
    now: Tick,
    cluster_created_at: Tick,
    network_created_at: Tick,
) -> Result<f64, CoordinationError> {
    compute_priority(
        cluster_attack_index,
        clusters,
        now,
        cluster_created_at,
        network_created_at,
    )
}

/// `A_C`: sum of the members' attack indices.
pub fn cluster_attack_index(node_indices: impl IntoIterator<Item = u64>) -> u64 {
    node_indices.into_iter().sum()
}

/// Threshold above which a reported attack index counts as a strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HighAttackPolicy {
    Fixed {
        threshold: f64,
    },
    /// `max(floor, multiplier * mean reported A)` over the requests
    /// aggregated by the most recent non-empty round.
    TrailingMean {
        multiplier: f64,
        floor: f64,
    },
    Disabled,
}

impl Default for HighAttackPolicy {
    fn default() -> Self {
        HighAttackPolicy::TrailingMean {
            multiplier: 5.0,
            floor: 10.0,
        }
    }
}

impl HighAttackPolicy {
    fn initial(&self) -> f64 {
        match *self {
            HighAttackPolicy::Fixed { threshold } => threshold,
            HighAttackPolicy::TrailingMean { floor, .. } => floor,
            HighAttackPolicy::Disabled => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            HighAttackPolicy::Fixed { threshold } if !(threshold > 0.0) => {
                Err(format!("threshold {threshold} must be positive"))
            }
            HighAttackPolicy::TrailingMean { multiplier, floor }
                if !(multiplier > 0.0 && floor > 0.0 && multiplier.is_finite()) =>
            {
                Err("multiplier and floor must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Proxy,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    /// Participation fraction `C` in (0, 1].
    pub participation: f64,
    pub high_attack: HighAttackPolicy,
    /// Suspension length `T_sus` in ticks.
    pub suspension: Tick,
    pub law: PriorityLaw,
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(CoordinationError::Participation(self.participation));
        }
        if self.suspension == 0 {
            return Err(CoordinationError::Suspension);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRecord {
    /// `T_s`.
    pub joined_at: Tick,
    pub consecutive_high: u32,
}

#[derive(Debug, Clone)]
pub struct QueuedRequest {
    pub source_id: SourceId,
    pub payload: NodeUpdate,
    pub reported_attack_index: u64,
    pub submitted_at: Tick,
    /// Fixed when the request was enqueued.
    pub priority: f64,
}

impl PartialEq for QueuedRequest {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueuedRequest {}

impl PartialOrd for QueuedRequest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greater means extracted first: higher priority, then earlier
/// submission, then smaller source id.
impl Ord for QueuedRequest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.submitted_at.cmp(&self.submitted_at))
            .then_with(|| other.source_id.cmp(&self.source_id))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RequestQueue {
    heap: BinaryHeap<QueuedRequest>,
}

impl RequestQueue {
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, source: &SourceId) -> bool {
        self.heap.iter().any(|r| &r.source_id == source)
    }

    pub fn push(&mut self, request: QueuedRequest) {
        self.heap.push(request);
    }

    pub fn extract_top(&mut self) -> Option<QueuedRequest> {
        self.heap.pop()
    }

    pub fn remove(&mut self, source: &SourceId) -> bool {
        let before = self.heap.len();
        self.heap.retain(|r| &r.source_id != source);
        before != self.heap.len()
    }

    /// Drains everything in extraction order.
    pub fn drain_ordered(&mut self) -> Vec<QueuedRequest> {
        std::mem::take(&mut self.heap)
            .into_sorted_vec()
            .into_iter()
            .rev()
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedRequest> {
        self.heap.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    UnknownMember,
    Blacklisted { until: Tick },
    AlreadyHasPendingRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted { priority: f64 },
    Rejected(RejectReason),
}

impl SubmitOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, SubmitOutcome::Accepted { .. })
    }
}

/// Outcome of one aggregation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub tier: Tier,
    pub coordinator: String,
    pub round_index: u64,
    pub tick: Tick,
    /// Aggregated sources in extraction order.
    pub accepted: Vec<SourceId>,
    pub discarded: Vec<SourceId>,
    /// Enqueue-time priorities of the aggregated requests.
    pub priorities: Vec<f64>,
    /// Impacts actually used; equal to `priorities` unless `uniform_fallback`.
    pub impacts: Vec<f64>,
    pub reported_attack_indices: Vec<u64>,
    pub sample_count: u64,
    pub intake_limit: usize,
    /// `floor(C * N)` was zero and the intake was raised to one.
    pub intake_clamped: bool,
    /// Every aggregated priority was zero, so uniform impacts were used.
    pub uniform_fallback: bool,
    pub noop: bool,
    /// Strike threshold that was in force while these requests were queued.
    pub high_attack_threshold: f64,
    /// Loss-valued impact aggregate over the reported local losses.
    pub fgan_loss: Option<f64>,
    pub model_hash: ModelHash,
}

/// State of one aggregation server.
#[derive(Debug, Clone)]
pub struct Coordinator {
    id: String,
    tier: Tier,
    created_at: Tick,
    config: CoordinatorConfig,
    members: BTreeMap<SourceId, MemberRecord>,
    queue: RequestQueue,
    blacklist: BTreeMap<SourceId, Tick>,
    current_model: GanModel,
    high_attack_threshold: f64,
    rounds: u64,
}

/// Proxy-server state; members are nodes.
pub type ClusterState = Coordinator;
/// Central-server state; members are clusters.
pub type CentralState = Coordinator;

impl Coordinator {
    pub fn new(
        id: impl Into<String>,
        tier: Tier,
        created_at: Tick,
        config: CoordinatorConfig,
        model: GanModel,
    ) -> Result<Self, CoordinationError> {
        config.validate()?;
        Ok(Self {
            id: id.into(),
            tier,
            created_at,
            config,
            members: BTreeMap::new(),
            queue: RequestQueue::default(),
            blacklist: BTreeMap::new(),
            current_model: model,
            high_attack_threshold: config.high_attack.initial(),
            rounds: 0,
        })
    }

    pub fn add_member(&mut self, id: SourceId, joined_at: Tick) -> Result<(), CoordinationError> {
        if joined_at < self.created_at {
            return Err(CoordinationError::JoinTime {
                joined_at,
                created_at: self.created_at,
                now: joined_at,
            });
        }
        if self.members.contains_key(&id) {
            return Err(CoordinationError::DuplicateMember(id));
        }
        self.members.insert(
            id,
            MemberRecord {
                joined_at,
                consecutive_high: 0,
            },
        );
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn created_at(&self) -> Tick {
        self.created_at
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn member(&self, id: &SourceId) -> Option<&MemberRecord> {
        self.members.get(id)
    }

    pub fn members(&self) -> &BTreeMap<SourceId, MemberRecord> {
        &self.members
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn queue(&self) -> &RequestQueue {
        &self.queue
    }

    pub fn blacklist(&self) -> &BTreeMap<SourceId, Tick> {
        &self.blacklist
    }

    pub fn is_blacklisted(&self, id: &SourceId) -> bool {
        self.blacklist.contains_key(id)
    }

    pub fn has_pending(&self, id: &SourceId) -> bool {
        self.queue.contains(id)
    }

    pub fn high_attack_threshold(&self) -> f64 {
        self.high_attack_threshold
    }

    pub fn current_model(&self) -> &GanModel {
        &self.current_model
    }

    pub fn rounds_run(&self) -> u64 {
        self.rounds
    }

    /// Replaces the shared model. Reputation state is untouched.
    pub fn set_model(&mut self, model: GanModel) {
        self.current_model = model;
    }

    /// Intake bound `floor(C * N)`, raised to 1 when it rounds to zero.
    pub fn intake_limit(&self) -> (usize, bool) {
        let raw = (self.config.participation * self.members.len() as f64 + 1e-9).floor() as usize;
        if raw == 0 {
            (1, true)
        } else {
            (raw, false)
        }
    }

    fn check_payload(
        &self,
        source_id: &SourceId,
        payload: &NodeUpdate,
    ) -> Result<(), CoordinationError> {
        let params = self.current_model.params();
        let bad = |reason: String| CoordinationError::Payload {
            source_id: source_id.clone(),
            reason,
        };
        if payload.params.generator.len() != params.generator.len()
            || payload.params.discriminator.len() != params.discriminator.len()
        {
            return Err(bad("parameter lengths differ".into()));
        }
        if payload.sample_count == 0 {
            return Err(bad("zero sample count".into()));
        }
        if &payload.source_id != source_id {
            return Err(bad(format!("payload is tagged {}", payload.source_id)));
        }
        Ok(())
    }

    /// Admits or rejects one update request.
    ///
    /// Order of checks: membership, active suspension, strike bookkeeping
    /// (which may suspend the sender and drop its pending request), the
    /// one-pending-request rule, then priority computation and enqueue.
    pub fn submit_request(
        &mut self,
        source_id: &SourceId,
        payload: NodeUpdate,
        reported_attack_index: u64,
        now: Tick,
    ) -> Result<SubmitOutcome, CoordinationError> {
        let Some(record) = self.members.get(source_id).copied() else {
            return Ok(SubmitOutcome::Rejected(RejectReason::UnknownMember));
        };
        if let Some(&until) = self.blacklist.get(source_id) {
            return Ok(SubmitOutcome::Rejected(RejectReason::Blacklisted { until }));
        }
        self.check_payload(source_id, &payload)?;
        let priority = compute_priority_with(
            self.config.law,
            reported_attack_index as f64,
            self.members.len(),
            now,
            record.joined_at,
            self.created_at,
        )?;

        let high = reported_attack_index as f64 > self.high_attack_threshold;
        let member = self.members.get_mut(source_id).expect("checked above");
        member.consecutive_high = if high { member.consecutive_high + 1 } else { 0 };
        if member.consecutive_high >= STRIKES_TO_BLACKLIST {
            member.consecutive_high = 0;
            let until = now + self.config.suspension;
            self.blacklist.insert(source_id.clone(), until);
            self.queue.remove(source_id);
            log::info!("{}: {} blacklisted until {}", self.id, source_id, until);
            return Ok(SubmitOutcome::Rejected(RejectReason::Blacklisted { until }));
        }
        if self.queue.contains(source_id) {
            return Ok(SubmitOutcome::Rejected(
                RejectReason::AlreadyHasPendingRequest,
            ));
        }
        self.queue.push(QueuedRequest {
            source_id: source_id.clone(),
            payload,
            reported_attack_index,
            submitted_at: now,
            priority,
        });
        Ok(SubmitOutcome::Accepted { priority })
    }

    /// Reinstates every member whose suspension ended at or before `now`,
    /// resetting its join time to the suspension end.
    pub fn lift_suspensions(&mut self, now: Tick) -> Vec<SourceId> {
        let due: Vec<(SourceId, Tick)> = self
            .blacklist
            .iter()
            .filter(|(_, &until)| until <= now)
            .map(|(id, &until)| (id.clone(), until))
            .collect();
        for (id, until) in &due {
            self.blacklist.remove(id);
            if let Some(m) = self.members.get_mut(id) {
                m.joined_at = *until;
            }
        }
        due.into_iter().map(|(id, _)| id).collect()
    }

    /// One coordinated model update: extract the top `floor(C * N)`
    /// requests, discard the rest, aggregate with priorities as impacts.
    pub fn run_round(&mut self, now: Tick) -> Result<RoundReport, CoordinationError> {
        let round_index = self.rounds;
        self.rounds += 1;
        let threshold = self.high_attack_threshold;
        let (limit, clamped) = self.intake_limit();

        if self.queue.is_empty() {
            return Ok(RoundReport {
                tier: self.tier,
                coordinator: self.id.clone(),
                round_index,
                tick: now,
                accepted: vec![],
                discarded: vec![],
                priorities: vec![],
                impacts: vec![],
                reported_attack_indices: vec![],
                sample_count: 0,
                intake_limit: limit,
                intake_clamped: clamped,
                uniform_fallback: false,
                noop: true,
                high_attack_threshold: threshold,
                fgan_loss: None,
                model_hash: self.current_model.hash(),
            });
        }
        if clamped {
            log::warn!(
                "{}: C * N = {} * {} rounds to zero; taking one request per round",
                self.id,
                self.config.participation,
                self.members.len()
            );
        }

        let mut extracted = Vec::with_capacity(limit);
        while extracted.len() < limit {
            match self.queue.extract_top() {
                Some(r) => extracted.push(r),
                None => break,
            }
        }
        let discarded: Vec<SourceId> = self
            .queue
            .drain_ordered()
            .into_iter()
            .map(|r| r.source_id)
            .collect();

        let priorities: Vec<f64> = extracted.iter().map(|r| r.priority).collect();
        let uniform_fallback = priorities.iter().all(|&p| p == 0.0);
        let impacts = if uniform_fallback {
            vec![1.0; priorities.len()]
        } else {
            priorities.clone()
        };
        let reported: Vec<u64> = extracted.iter().map(|r| r.reported_attack_index).collect();
        let updates: Vec<NodeUpdate> = extracted.into_iter().map(|r| r.payload).collect();

        let params = combine(&updates, &impacts)?;
        let loss = fgan_loss(&updates, &impacts)?;
        self.current_model = self.current_model.with_params(params)?;

        if let HighAttackPolicy::TrailingMean { multiplier, floor } = self.config.high_attack {
            let mean = reported.iter().map(|&a| a as f64).sum::<f64>() / reported.len() as f64;
            self.high_attack_threshold = (multiplier * mean).max(floor);
        }

        Ok(RoundReport {
            tier: self.tier,
            coordinator: self.id.clone(),
            round_index,
            tick: now,
            accepted: updates.iter().map(|u| u.source_id.clone()).collect(),
            discarded,
            priorities,
            impacts,
            reported_attack_indices: reported,
            sample_count: updates.iter().map(|u| u.sample_count).sum(),
            intake_limit: limit,
            intake_clamped: clamped,
            uniform_fallback,
            noop: false,
            high_attack_threshold: threshold,
            fgan_loss: Some(loss),
            model_hash: self.current_model.hash(),
        })
    }
}

/// Proxy-tier round.
pub fn model_update_round(
    state: &mut ClusterState,
    now: Tick,
) -> Result<RoundReport, CoordinationError> {
    if state.tier != Tier::Proxy {
        return Err(CoordinationError::WrongTier {
            expected: Tier::Proxy,
            got: state.tier,
        });
    }
    state.run_round(now)
}

/// Central-tier round over cluster requests.
pub fn central_update_round(
    state: &mut CentralState,
    now: Tick,
) -> Result<RoundReport, CoordinationError> {
    if state.tier != Tier::Central {
        return Err(CoordinationError::WrongTier {
            expected: Tier::Central,
            got: state.tier,
        });
    }
    state.run_round(now)
}

/// Replaces every cluster's model with the central one.
pub fn distribute_model(central: &CentralState, clusters: &mut [ClusterState]) {
    for c in clusters {
        c.set_model(central.current_model().clone());
    }
}
