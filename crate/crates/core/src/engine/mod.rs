//! Synchronous FL rounds end to end.
//!
//! A round starts with the global-model broadcast, runs each client's local
//! training, pushes the updates through the uplink scheduler and ends when
//! the last update has been received and aggregated. Rounds run back to
//! back. Under the BS policy the slice is planned when the cohort forms (or
//! changes) and takes effect `h` rounds later; rounds before that use FCFS.

mod accuracy;

pub use accuracy::{accuracy_lookup, AccuracyError, AccuracyTrace, LevelMatch, BUNDLED_TRACE_CSV};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Fingerprint, TrainingReport};
use crate::planner::{
    plan_slice, validate_round_threshold, ClientProfile, CohortInfo, PlanError, RoundVerdict,
    SliceSpec,
};
use crate::pon::{map_slice_to_cycles, PonConfig, PonError};
use crate::sim::{EventKind, EventQueue, SimError, SimTime};
use crate::traffic::{BackgroundConfig, BackgroundSource, TrafficError};
use crate::uplink::{
    ArrivalSource, FcfsPlan, GrantLog, ItemList, NoArrivals, QueueItem, RegionPlan, SlicePlan,
    UplinkError, UplinkServer,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no clients to select from")]
    NoClients,
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("invalid task config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Pon(#[from] PonError),
    #[error(transparent)]
    Uplink(#[from] UplinkError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "FCFS")]
    Fcfs,
    #[serde(rename = "BS")]
    Bs,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Fcfs => "FCFS",
            Policy::Bs => "BS",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fcfs" => Ok(Policy::Fcfs),
            "bs" => Ok(Policy::Bs),
            other => Err(format!("unknown policy '{other}' (expected fcfs or bs)")),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlTaskConfig {
    /// Total rounds H.
    pub rounds: u32,
    /// Planner threshold T_round, seconds.
    pub round_period: f64,
    /// Size of the global model and of each client's update, bits.
    pub model_bits: f64,
    /// Aggregation time T_a at the parameter server.
    pub aggregation_time: f64,
    pub involvement_percent: f64,
    pub compute_min: f64,
    pub compute_max: f64,
    pub clients_per_onu: u32,
    pub policy: Policy,
    /// Rounds between planning and slice activation (h).
    pub activation_offset: u32,
    /// Fail instead of warn when T_round is below the slowest round path.
    pub strict: bool,
    /// Relative per-round jitter on compute times, 0 disables.
    pub compute_jitter: f64,
}

impl Default for FlTaskConfig {
    fn default() -> Self {
        FlTaskConfig {
            rounds: 11,
            round_period: 6.0,
            model_bits: 26.416e6,
            aggregation_time: 0.0,
            involvement_percent: 100.0,
            compute_min: 1.0,
            compute_max: 5.0,
            clients_per_onu: 1,
            policy: Policy::Bs,
            activation_offset: 1,
            strict: false,
            compute_jitter: 0.0,
        }
    }
}

impl FlTaskConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::InvalidConfig(m));
        if self.rounds < 2 {
            return bad(format!("rounds must be at least 2, got {}", self.rounds));
        }
        if !(self.round_period > 0.0) {
            return bad("round_period must be positive".into());
        }
        if !(self.model_bits > 0.0) {
            return bad("model_bits must be positive".into());
        }
        if !(self.aggregation_time >= 0.0) {
            return bad("aggregation_time must be nonnegative".into());
        }
        if !(self.involvement_percent > 0.0 && self.involvement_percent <= 100.0) {
            return bad(format!(
                "involvement {} outside (0, 100]",
                self.involvement_percent
            ));
        }
        if !(self.compute_min > 0.0 && self.compute_min <= self.compute_max) {
            return bad("compute range needs 0 < min <= max".into());
        }
        if self.clients_per_onu == 0 {
            return bad("clients_per_onu must be at least 1".into());
        }
        if self.activation_offset < 1 || self.activation_offset >= self.rounds {
            return bad(format!(
                "activation offset {} must satisfy 1 <= h < rounds",
                self.activation_offset
            ));
        }
        if !(0.0..1.0).contains(&self.compute_jitter) {
            return bad("compute_jitter must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// Every client on the PON. Compute times are linearly spaced over
/// `[compute_min, compute_max]` in client-id order; client `i` sits behind
/// ONU `i mod num_onus`.
pub fn client_population(task: &FlTaskConfig, pon: &PonConfig) -> Vec<ClientProfile> {
    let n = pon.num_onus * task.clients_per_onu;
    let span = task.compute_max - task.compute_min;
    (0..n)
        .map(|i| {
            let frac = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            ClientProfile::new(
                i,
                i % pon.num_onus,
                task.compute_min + span * frac,
                task.model_bits,
            )
        })
        .collect()
}

/// The `floor(p/100 * N)` fastest clients (at least one).
pub fn select_cohort(
    all: &[ClientProfile],
    involvement_percent: f64,
) -> Result<Vec<ClientProfile>, EngineError> {
    if all.is_empty() {
        return Err(EngineError::NoClients);
    }
    if !(involvement_percent > 0.0 && involvement_percent <= 100.0) {
        return Err(EngineError::InvalidConfig(format!(
            "involvement {involvement_percent} outside (0, 100]"
        )));
    }
    let k = ((involvement_percent * all.len() as f64 / 100.0).floor() as usize).clamp(1, all.len());
    let mut sorted = all.to_vec();
    sorted.sort_by(|a, b| {
        a.compute_time
            .total_cmp(&b.compute_time)
            .then(a.client_id.cmp(&b.client_id))
    });
    sorted.truncate(k);
    Ok(sorted)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientTiming {
    pub client_id: u32,
    pub onu: u32,
    pub download: f64,
    pub compute: f64,
    /// Arrival of the update at the OLT scheduler.
    pub arrival: f64,
    pub upload_wait: f64,
    pub upload: f64,
    pub done: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Policy actually used; BS rounds before activation run FCFS.
    pub policy: Policy,
    pub start: f64,
    pub end: f64,
    pub sync_time: f64,
    pub overrun: f64,
    pub straggler: u32,
    pub clients: Vec<ClientTiming>,
}

impl RoundRecord {
    pub fn sliced(&self) -> bool {
        self.policy == Policy::Bs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MembershipChange {
    Join(ClientProfile),
    Leave(u32),
}

/// One simulation instance: cohort, slice state, uplink queues and the
/// background stream, all advancing together round by round.
pub struct FlSimulation {
    pon: PonConfig,
    task: FlTaskConfig,
    cohort: Vec<ClientProfile>,
    slice: Option<SliceSpec>,
    activation_round: u32,
    server: UplinkServer,
    background: Box<dyn ArrivalSource + Send>,
    jitter_rng: ChaCha8Rng,
    now: f64,
    round: u32,
    next_seq: u64,
    trace: Option<Vec<String>>,
    keep_grants: bool,
    grants: GrantLog,
}

impl FlSimulation {
    pub fn new(
        pon: &PonConfig,
        background: &BackgroundConfig,
        task: &FlTaskConfig,
        cohort: Vec<ClientProfile>,
    ) -> Result<Self, EngineError> {
        pon.validate()?;
        task.validate()?;
        background.validate()?;
        if cohort.is_empty() {
            return Err(EngineError::Plan(PlanError::EmptyCohort));
        }
        let source: Box<dyn ArrivalSource + Send> = if background.load > 0.0 {
            Box::new(BackgroundSource::new(background, pon)?)
        } else {
            Box::new(NoArrivals)
        };
        let mut sim = FlSimulation {
            pon: pon.clone(),
            task: task.clone(),
            cohort,
            slice: None,
            activation_round: 0,
            server: UplinkServer::new(pon.uplink_capacity).without_background_log(),
            background: source,
            jitter_rng: ChaCha8Rng::seed_from_u64(background.seed ^ 0x9e37_79b9_7f4a_7c15),
            now: 0.0,
            round: 0,
            next_seq: 0,
            trace: None,
            keep_grants: false,
            grants: GrantLog::default(),
        };
        if task.policy == Policy::Bs {
            sim.replan()?;
        }
        Ok(sim)
    }

    /// Record a `time,seq,kind` line for every round event.
    pub fn with_event_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Keep training-traffic grants for export.
    pub fn with_grant_log(mut self) -> Self {
        self.keep_grants = true;
        self
    }

    pub fn slice(&self) -> Option<&SliceSpec> {
        self.slice.as_ref()
    }

    pub fn cohort(&self) -> &[ClientProfile] {
        &self.cohort
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn activation_round(&self) -> u32 {
        self.activation_round
    }

    pub fn event_trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn grant_log(&self) -> &GrantLog {
        &self.grants
    }

    pub fn cohort_info(&self) -> CohortInfo {
        CohortInfo {
            clients: self.cohort.clone(),
            global_model_bits: self.task.model_bits,
            t_current: SimTime::new(self.now).expect("clock is nonnegative"),
            round_period: self.task.round_period,
            uplink_capacity: self.pon.uplink_capacity,
            activation_offset: self.task.activation_offset,
            total_rounds: self.task.rounds,
            aggregation_time: self.task.aggregation_time,
        }
    }

    fn replan(&mut self) -> Result<&SliceSpec, EngineError> {
        let slice = plan_slice(&self.cohort_info(), &self.pon)?;
        self.activation_round = self.round + self.task.activation_offset;
        Ok(self.slice.insert(slice))
    }

    /// Feasibility of the current slice against T_round.
    pub fn round_verdict(&self) -> Result<Option<RoundVerdict>, EngineError> {
        match &self.slice {
            Some(s) => Ok(Some(validate_round_threshold(
                &self.cohort_info(),
                s,
                &self.pon,
            )?)),
            None => Ok(None),
        }
    }

    /// Applies a join or leave. Under BS the slice is replanned from the new
    /// cohort with `t_current = now`; it takes effect `h` rounds later.
    pub fn handle_membership_change(
        &mut self,
        change: MembershipChange,
    ) -> Result<Option<&SliceSpec>, EngineError> {
        match change {
            MembershipChange::Join(client) => {
                if client.onu >= self.pon.num_onus {
                    return Err(PonError::UnknownOnu {
                        onu: client.onu,
                        num_onus: self.pon.num_onus,
                    }
                    .into());
                }
                self.cohort.retain(|c| c.client_id != client.client_id);
                self.cohort.push(client);
            }
            MembershipChange::Leave(id) => {
                self.cohort.retain(|c| c.client_id != id);
                if self.cohort.is_empty() {
                    return Err(PlanError::EmptyCohort.into());
                }
            }
        }
        if self.task.policy == Policy::Bs {
            self.replan().map(Some)
        } else {
            Ok(None)
        }
    }

    fn slice_active(&self) -> bool {
        self.slice.is_some() && self.round >= self.activation_round
    }

    fn compute_time(&mut self, c: &ClientProfile) -> f64 {
        if self.task.compute_jitter > 0.0 {
            let j = self.task.compute_jitter;
            c.compute_time * (1.0 + self.jitter_rng.gen_range(-j..=j))
        } else {
            c.compute_time
        }
    }

    /// Runs one round from the current clock.
    pub fn run_round(&mut self) -> Result<RoundRecord, EngineError> {
        let start = self.now;
        let round = self.round;
        let sliced = self.slice_active();
        let mut clients: Vec<ClientTiming> = Vec::with_capacity(self.cohort.len());
        let mut compute = Vec::with_capacity(self.cohort.len());
        let cohort = self.cohort.clone();
        for c in &cohort {
            compute.push(self.compute_time(c));
        }

        // Broadcast, local training and propagation to the OLT.
        let mut q: EventQueue<EventKind> =
            EventQueue::starting_at(SimTime::new(start).expect("nonnegative"));
        if self.trace.is_some() {
            q = q.with_trace();
        }
        let mut index = std::collections::HashMap::with_capacity(cohort.len());
        for (i, c) in cohort.iter().enumerate() {
            index.insert(c.client_id, i);
            let dl = self.pon.downlink_time(self.task.model_bits, c.onu)?;
            clients.push(ClientTiming {
                client_id: c.client_id,
                onu: c.onu,
                download: dl,
                compute: compute[i],
                arrival: 0.0,
                upload_wait: 0.0,
                upload: 0.0,
                done: 0.0,
            });
            q.schedule_at(
                start + dl,
                EventKind::BroadcastDone {
                    client: c.client_id,
                },
            )?;
        }
        let pon = &self.pon;
        let mut arrivals: Vec<(f64, usize)> = Vec::with_capacity(cohort.len());
        q.run(|q, ev| -> Result<(), EngineError> {
            let t = ev.time.secs();
            match ev.kind {
                EventKind::BroadcastDone { client } => {
                    let i = index[&client];
                    q.schedule_at(t + compute[i], EventKind::ComputeDone { client })?;
                }
                EventKind::ComputeDone { client } => {
                    let i = index[&client];
                    q.schedule_at(
                        t + pon.prop_delay(cohort[i].onu)?,
                        EventKind::Arrival { client },
                    )?;
                }
                EventKind::Arrival { client } => arrivals.push((t, index[&client])),
                _ => {}
            }
            Ok(())
        })?;
        let mut trace = q.take_trace();

        // Uplink service.
        let ranks: std::collections::HashMap<u32, u32> = self
            .slice
            .iter()
            .flat_map(|s| s.upload_order.iter().enumerate())
            .map(|(rank, e)| (e.onu, rank as u32))
            .collect();
        let mut items = Vec::with_capacity(arrivals.len());
        for &(t, i) in &arrivals {
            let c = &cohort[i];
            clients[i].arrival = t;
            items.push(QueueItem::training(
                t,
                c.onu,
                c.update_bits,
                self.next_seq,
                ranks.get(&c.onu).copied().unwrap_or(0),
                c.client_id,
            ));
            self.next_seq += 1;
        }
        let shifted = self
            .slice
            .as_ref()
            .filter(|_| sliced)
            .map(|s| s.shifted_to(start));
        let mut plan: Box<dyn RegionPlan> = match &shifted {
            Some(s) => Box::new(SlicePlan::new(&map_slice_to_cycles(&self.pon, s)?)),
            None => Box::new(FcfsPlan),
        };
        let mut training = ItemList::new(items);
        let completions = self.server.serve(
            &mut training,
            self.background.as_mut(),
            plan.as_mut(),
            false,
        )?;
        let log = self.server.take_log();
        if self.keep_grants {
            self.grants.grants.extend(log.grants);
        }

        // Replay service milestones so the round ends through the queue.
        let mut q: EventQueue<EventKind> =
            EventQueue::starting_at(SimTime::new(start).expect("nonnegative"));
        if self.trace.is_some() {
            q = q.with_trace();
        }
        let mut last = start;
        for done in &completions {
            let i = index[&done.tag];
            clients[i].upload_wait = done.first_start - done.arrival;
            clients[i].upload = done.end - done.first_start;
            clients[i].done = done.end;
            q.schedule_at(done.first_start, EventKind::GrantStart { onu: done.onu })?;
            q.schedule_at(done.end, EventKind::GrantEnd { onu: done.onu })?;
            last = last.max(done.end);
        }
        q.schedule_at(
            last + self.task.aggregation_time,
            EventKind::RoundEnd { round },
        )?;
        let mut end = start;
        q.run(|_, ev| -> Result<(), EngineError> {
            if let EventKind::RoundEnd { .. } = ev.kind {
                end = ev.time.secs();
            }
            Ok(())
        })?;
        trace.extend(q.take_trace());
        if let Some(t) = self.trace.as_mut() {
            t.extend(trace);
        }

        let straggler = clients
            .iter()
            .max_by(|a, b| {
                a.done
                    .total_cmp(&b.done)
                    .then(b.client_id.cmp(&a.client_id))
            })
            .map(|c| c.client_id)
            .unwrap_or(0);
        let overrun = shifted.map_or(0.0, |s| (last - s.t_end.secs()).max(0.0));
        self.now = end;
        self.round += 1;
        Ok(RoundRecord {
            round,
            policy: if sliced { Policy::Bs } else { Policy::Fcfs },
            start,
            end,
            sync_time: end - start,
            overrun,
            straggler,
            clients,
        })
    }
}

/// Full training run: builds the population, selects the cohort, plans
/// the slice (BS) and runs `task.rounds` rounds back to back.
pub fn run_training(
    pon: &PonConfig,
    background: &BackgroundConfig,
    task: &FlTaskConfig,
) -> Result<TrainingReport, EngineError> {
    task.validate()?;
    let population = client_population(task, pon);
    let cohort = select_cohort(&population, task.involvement_percent)?;
    let mut sim = FlSimulation::new(pon, background, task, cohort)?;
    if let Some(v) = sim.round_verdict()? {
        if !v.feasible {
            let msg = v.remedy.clone().unwrap_or_default();
            if task.strict {
                return Err(EngineError::InfeasibleConfig(msg));
            }
            log::warn!("{msg}");
        }
    }
    let mut rounds = Vec::with_capacity(task.rounds as usize);
    for _ in 0..task.rounds {
        rounds.push(sim.run_round()?);
    }
    let pre_activation = if task.policy == Policy::Bs {
        task.activation_offset
    } else {
        0
    };
    Ok(TrainingReport::new(
        Fingerprint::of(pon, background, task),
        task.policy,
        background.load,
        task.involvement_percent,
        pre_activation,
        rounds,
    ))
}
