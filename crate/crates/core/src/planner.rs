//! Bandwidth-slice planner.
//!
//! Given the cohort's compute times and update sizes, the planner finds the
//! spread between the earliest and latest moment a client can start
//! uploading and sizes a reserved uplink slice so the whole cohort's training
//! traffic fits in that spread:
//!
//! ```text
//! delta_i = T_DL_i + T_UD_i
//! T_max   = max(delta) + nabla        nabla = M_k / C + prop(k), k = argmax delta
//! T_min   = min(delta)
//! tau     = T_max - T_min
//! B       = min(sum(M_i) / tau, C)
//! t_s     = t_current + T_min + h * T_round
//! t_e     = t_current + T_max + h * T_round
//! ```
//!
//! Everything here is a pure function of its inputs.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pon::{PonConfig, PonError};
use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("upload window is degenerate (tau = {0} s)")]
    DegenerateWindow(f64),
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error(transparent)]
    Pon(#[from] PonError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: u32,
    pub onu: u32,
    /// Local training time T_UD, seconds.
    pub compute_time: f64,
    /// Model update size M_UD, bits.
    pub update_bits: f64,
}

impl ClientProfile {
    pub fn new(client_id: u32, onu: u32, compute_time: f64, update_bits: f64) -> Self {
        ClientProfile {
            client_id,
            onu,
            compute_time,
            update_bits,
        }
    }
}

/// Planner input: the participating clients plus round parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortInfo {
    pub clients: Vec<ClientProfile>,
    /// Size of the broadcast global model.
    pub global_model_bits: f64,
    pub t_current: SimTime,
    pub round_period: f64,
    pub uplink_capacity: f64,
    /// Rounds between planning and activation (h).
    pub activation_offset: u32,
    /// Total rounds of the task (H).
    pub total_rounds: u32,
    /// Aggregation time at the parameter server.
    pub aggregation_time: f64,
}

impl CohortInfo {
    pub fn new(
        clients: Vec<ClientProfile>,
        global_model_bits: f64,
        round_period: f64,
        uplink_capacity: f64,
    ) -> Self {
        CohortInfo {
            clients,
            global_model_bits,
            t_current: SimTime::ZERO,
            round_period,
            uplink_capacity,
            activation_offset: 1,
            total_rounds: 100,
            aggregation_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidCohort(m));
        if self.clients.is_empty() {
            return Err(PlanError::EmptyCohort);
        }
        if !(self.round_period > 0.0) {
            return bad(format!(
                "T_round must be positive, got {}",
                self.round_period
            ));
        }
        if !(self.uplink_capacity > 0.0) {
            return bad("uplink capacity must be positive".into());
        }
        if self.activation_offset < 1 || self.activation_offset >= self.total_rounds {
            return bad(format!(
                "activation offset h = {} must satisfy 1 <= h < H = {}",
                self.activation_offset, self.total_rounds
            ));
        }
        if !(self.global_model_bits >= 0.0) || !(self.aggregation_time >= 0.0) {
            return bad("model size and aggregation time must be nonnegative".into());
        }
        for c in &self.clients {
            if !(c.compute_time > 0.0 && c.update_bits > 0.0) {
                return bad(format!(
                    "client {} needs positive compute time and update size",
                    c.client_id
                ));
            }
        }
        Ok(())
    }

    pub fn total_update_bits(&self) -> f64 {
        let mut bits: Vec<(u32, f64)> = self
            .clients
            .iter()
            .map(|c| (c.client_id, c.update_bits))
            .collect();
        bits.sort_by_key(|(id, _)| *id);
        bits.iter().map(|(_, b)| b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaEntry {
    pub client_id: u32,
    pub onu: u32,
    pub download_time: f64,
    pub compute_time: f64,
    /// `download_time + compute_time`.
    pub delta: f64,
    pub update_bits: f64,
}

/// Per-client readiness, sorted by descending compute time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaTable {
    pub entries: Vec<DeltaEntry>,
    pub nabla: f64,
    pub t_max: f64,
    pub t_min: f64,
    /// Index into `entries` of the latest-ready client.
    pub latest: usize,
}

impl DeltaTable {
    pub fn tau(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn latest_entry(&self) -> &DeltaEntry {
        &self.entries[self.latest]
    }

    /// Entries in ascending readiness, ties by client id.
    pub fn ascending_delta(&self) -> Vec<&DeltaEntry> {
        let mut v: Vec<&DeltaEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            a.delta
                .total_cmp(&b.delta)
                .then(a.client_id.cmp(&b.client_id))
        });
        v
    }

    fn with_nabla(mut self, nabla: f64) -> Self {
        self.nabla = nabla;
        self.t_max = self.entries[self.latest].delta + nabla;
        self
    }
}

/// One ONU's burst in the upload order. Several clients behind one ONU are
/// concatenated into a single burst that is ready when the slowest finishes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadEntry {
    pub onu: u32,
    pub clients: Vec<u32>,
    pub bits: f64,
    /// Readiness relative to the round start.
    pub ready_offset: f64,
    /// `bits / B`.
    pub slot_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSpec {
    pub t_start: SimTime,
    pub t_end: SimTime,
    /// Reserved capacity B, bits/s.
    pub rate_bps: f64,
    /// True when `sum(M) / tau` exceeded C and B was clamped to C.
    pub capped: bool,
    pub uplink_capacity: f64,
    /// `t_start - anchor` (T_min).
    pub window_offset: f64,
    /// Start of the round the window belongs to.
    pub anchor: SimTime,
    pub round_period: f64,
    pub upload_order: Vec<UploadEntry>,
}

impl SliceSpec {
    pub fn tau(&self) -> f64 {
        self.t_end.secs() - self.t_start.secs()
    }

    pub fn round_start(&self) -> f64 {
        self.anchor.secs()
    }

    /// `t_e` relative to the round start (T_max).
    pub fn window_end_offset(&self) -> f64 {
        self.t_end.secs() - self.anchor.secs()
    }

    /// The same slice re-anchored to a round starting at `round_start`.
    pub fn shifted_to(&self, round_start: f64) -> SliceSpec {
        let t_max = self.window_end_offset();
        SliceSpec {
            t_start: SimTime::new(round_start + self.window_offset).expect("nonnegative"),
            t_end: SimTime::new(round_start + t_max).expect("nonnegative"),
            anchor: SimTime::new(round_start).expect("nonnegative"),
            ..self.clone()
        }
    }

    pub fn total_bits(&self) -> f64 {
        self.upload_order.iter().map(|e| e.bits).sum()
    }
}

fn sorted_desc_compute(mut entries: Vec<DeltaEntry>) -> Vec<DeltaEntry> {
    entries.sort_by(|a, b| {
        b.compute_time
            .total_cmp(&a.compute_time)
            .then(a.client_id.cmp(&b.client_id))
    });
    entries
}

/// Download-plus-compute time of every client. `nabla` is left at zero and
/// `t_max` equals the largest delta until [`estimate_nabla`] is applied.
pub fn compute_delta(cohort: &CohortInfo, pon: &PonConfig) -> Result<DeltaTable, PlanError> {
    if cohort.clients.is_empty() {
        return Err(PlanError::EmptyCohort);
    }
    let mut entries = Vec::with_capacity(cohort.clients.len());
    for c in &cohort.clients {
        let download_time = pon.downlink_time(cohort.global_model_bits, c.onu)?;
        entries.push(DeltaEntry {
            client_id: c.client_id,
            onu: c.onu,
            download_time,
            compute_time: c.compute_time,
            delta: download_time + c.compute_time,
            update_bits: c.update_bits,
        });
    }
    let entries = sorted_desc_compute(entries);

    let by_delta_then_id = |a: &&DeltaEntry, b: &&DeltaEntry| -> Ordering {
        a.delta
            .total_cmp(&b.delta)
            .then(b.client_id.cmp(&a.client_id))
    };
    // max_by keeps the last maximum, so reverse the id order to favor the lowest id.
    let latest = entries
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| by_delta_then_id(a, b))
        .map(|(i, _)| i)
        .expect("nonempty");
    let t_min = entries
        .iter()
        .map(|e| e.delta)
        .fold(f64::INFINITY, f64::min);
    let t_max = entries[latest].delta;
    Ok(DeltaTable {
        entries,
        nabla: 0.0,
        t_max,
        t_min,
        latest,
    })
}

/// Time to push the latest-ready client's update through the uplink at line
/// rate plus its propagation to the OLT.
pub fn estimate_nabla(
    table: &DeltaTable,
    cohort: &CohortInfo,
    pon: &PonConfig,
) -> Result<f64, PlanError> {
    let k = table.latest_entry();
    Ok(k.update_bits / cohort.uplink_capacity + pon.prop_delay(k.onu)?)
}

pub fn plan_slice(cohort: &CohortInfo, pon: &PonConfig) -> Result<SliceSpec, PlanError> {
    cohort.validate()?;
    let table = compute_delta(cohort, pon)?;
    let nabla = estimate_nabla(&table, cohort, pon)?;
    let table = table.with_nabla(nabla);
    let tau = table.tau();
    if !(tau > 0.0) {
        return Err(PlanError::DegenerateWindow(tau));
    }

    let c = cohort.uplink_capacity;
    let demand = cohort.total_update_bits() / tau;
    let (rate_bps, capped) = if demand > c {
        (c, true)
    } else {
        (demand, false)
    };

    let anchor = cohort.t_current.secs() + cohort.activation_offset as f64 * cohort.round_period;
    let t_start = cohort.t_current.secs()
        + table.t_min
        + cohort.activation_offset as f64 * cohort.round_period;
    let t_end = cohort.t_current.secs()
        + table.t_max
        + cohort.activation_offset as f64 * cohort.round_period;

    Ok(SliceSpec {
        t_start: SimTime::new(t_start).expect("nonnegative"),
        t_end: SimTime::new(t_end).expect("nonnegative"),
        rate_bps,
        capped,
        uplink_capacity: c,
        window_offset: table.t_min,
        anchor: SimTime::new(anchor).expect("nonnegative"),
        round_period: cohort.round_period,
        upload_order: upload_order(&table, rate_bps),
    })
}

fn upload_order(table: &DeltaTable, rate: f64) -> Vec<UploadEntry> {
    let mut by_onu: BTreeMap<u32, UploadEntry> = BTreeMap::new();
    for e in table.ascending_delta() {
        let entry = by_onu.entry(e.onu).or_insert_with(|| UploadEntry {
            onu: e.onu,
            clients: Vec::new(),
            bits: 0.0,
            ready_offset: 0.0,
            slot_len: 0.0,
        });
        entry.clients.push(e.client_id);
        entry.ready_offset = entry.ready_offset.max(e.delta);
    }
    let mut order: Vec<UploadEntry> = by_onu.into_values().collect();
    for entry in &mut order {
        entry.clients.sort_unstable();
        entry.bits = entry
            .clients
            .iter()
            .map(|id| {
                table
                    .entries
                    .iter()
                    .find(|e| e.client_id == *id)
                    .map(|e| e.update_bits)
                    .unwrap_or(0.0)
            })
            .sum();
        entry.slot_len = entry.bits / rate;
    }
    order.sort_by(|a, b| {
        a.ready_offset
            .total_cmp(&b.ready_offset)
            .then(a.clients[0].cmp(&b.clients[0]))
    });
    order
}

/// Outcome of checking T_round against the slowest client's round path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundVerdict {
    pub feasible: bool,
    /// `T_round - required`; negative when infeasible.
    pub slack: f64,
    /// `max_i(T_DL + T_UD + M_i / B + T_a)`.
    pub required: f64,
    pub critical_client: u32,
    pub remedy: Option<String>,
}

pub fn validate_round_threshold(
    cohort: &CohortInfo,
    slice: &SliceSpec,
    pon: &PonConfig,
) -> Result<RoundVerdict, PlanError> {
    if cohort.clients.is_empty() {
        return Err(PlanError::EmptyCohort);
    }
    let mut required = f64::NEG_INFINITY;
    let mut critical = 0;
    for c in &cohort.clients {
        let path = pon.downlink_time(cohort.global_model_bits, c.onu)?
            + c.compute_time
            + c.update_bits / slice.rate_bps
            + cohort.aggregation_time;
        if path > required || (path == required && c.client_id < critical) {
            required = path;
            critical = c.client_id;
        }
    }
    let slack = cohort.round_period - required;
    let feasible = slack >= 0.0;
    let remedy = (!feasible).then(|| {
        format!(
            "T_round {:.6} s is shorter than client {critical}'s round path {required:.6} s; \
             its local training time has to be reduced by at least {:.6} s",
            cohort.round_period, -slack
        )
    });
    Ok(RoundVerdict {
        feasible,
        slack,
        required,
        critical_client: critical,
        remedy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadSlot {
    pub onu: u32,
    pub clients: Vec<u32>,
    pub ready: f64,
    pub start: f64,
    pub end: f64,
}

/// Back-to-back slots at rate B in upload order. A slot starts at the latest
/// of the previous slot's end, its ONU's readiness and the window start.
pub fn build_upload_schedule(
    slice: &SliceSpec,
    round_start: f64,
) -> Result<Vec<UploadSlot>, PlanError> {
    if !(slice.rate_bps > 0.0) {
        return Err(PlanError::InvalidSlice(format!("B = {}", slice.rate_bps)));
    }
    let window_start = round_start + slice.window_offset;
    let mut prev_end = f64::NEG_INFINITY;
    let mut slots = Vec::with_capacity(slice.upload_order.len());
    for e in &slice.upload_order {
        let ready = round_start + e.ready_offset;
        let start = prev_end.max(ready).max(window_start);
        let end = start + e.bits / slice.rate_bps;
        slots.push(UploadSlot {
            onu: e.onu,
            clients: e.clients.clone(),
            ready,
            start,
            end,
        });
        prev_end = end;
    }
    Ok(slots)
}

/// How far the last slot ends past the window end, zero if it does not.
pub fn schedule_overrun(slots: &[UploadSlot], slice: &SliceSpec, round_start: f64) -> f64 {
    let window_end = round_start + slice.window_end_offset();
    slots
        .last()
        .map(|s| (s.end - window_end).max(0.0))
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: f64 = 26.416e6;

    fn two_clients() -> CohortInfo {
        CohortInfo::new(
            vec![
                ClientProfile::new(0, 0, 1.0, M),
                ClientProfile::new(1, 1, 5.0, M),
            ],
            M,
            8.0,
            1e10,
        )
    }

    #[test]
    fn delta_includes_download() {
        let cohort = CohortInfo::new(vec![ClientProfile::new(7, 3, 3.0, M)], M, 8.0, 1e10);
        let table = compute_delta(&cohort, &PonConfig::default()).unwrap();
        assert!((table.entries[0].delta - 3.0027416).abs() < 1e-12);

        let cohort = CohortInfo::new(vec![ClientProfile::new(0, 0, 1.0, M)], 0.0, 8.0, 1e10);
        let table = compute_delta(&cohort, &PonConfig::uniform(1, 0.0)).unwrap();
        assert_eq!(table.entries[0].delta, 1.0);
    }

    #[test]
    fn delta_table_sorted_by_descending_compute() {
        let cohort = CohortInfo::new(
            vec![
                ClientProfile::new(0, 0, 1.0, M),
                ClientProfile::new(1, 1, 5.0, M),
                ClientProfile::new(2, 2, 3.0, M),
            ],
            M,
            8.0,
            1e10,
        );
        let table = compute_delta(&cohort, &PonConfig::default()).unwrap();
        let order: Vec<f64> = table.entries.iter().map(|e| e.compute_time).collect();
        assert_eq!(order, vec![5.0, 3.0, 1.0]);
        assert_eq!(table.latest_entry().client_id, 1);
    }

    #[test]
    fn empty_cohort_rejected() {
        let cohort = CohortInfo::new(vec![], M, 8.0, 1e10);
        assert_eq!(
            compute_delta(&cohort, &PonConfig::default()),
            Err(PlanError::EmptyCohort)
        );
        assert_eq!(
            plan_slice(&cohort, &PonConfig::default()),
            Err(PlanError::EmptyCohort)
        );
    }

    #[test]
    fn nabla_values() {
        let cohort = two_clients();
        let pon = PonConfig::default();
        let table = compute_delta(&cohort, &pon).unwrap();
        assert!((estimate_nabla(&table, &cohort, &pon).unwrap() - 2.7416e-3).abs() < 1e-15);
        let near = PonConfig::uniform(2, 0.0);
        let table = compute_delta(&cohort, &near).unwrap();
        assert!((estimate_nabla(&table, &cohort, &near).unwrap() - 2.6416e-3).abs() < 1e-15);
    }

    #[test]
    fn nabla_tie_picks_lowest_id() {
        let cohort = CohortInfo::new(
            vec![
                ClientProfile::new(9, 1, 4.0, 2e6),
                ClientProfile::new(4, 0, 4.0, 1e6),
            ],
            M,
            8.0,
            1e10,
        );
        let pon = PonConfig::default();
        let table = compute_delta(&cohort, &pon).unwrap();
        assert_eq!(table.latest_entry().client_id, 4);
        let nabla = estimate_nabla(&table, &cohort, &pon).unwrap();
        assert!((nabla - (1e6 / 1e10 + 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn two_client_worked_example() {
        let slice = plan_slice(&two_clients(), &PonConfig::default()).unwrap();
        assert!((slice.tau() - 4.0027416).abs() < 1e-9);
        assert!((slice.rate_bps - 2.0 * M / 4.0027416).abs() < 1e-3);
        assert!((slice.rate_bps / 13.199e6 - 1.0).abs() < 5e-6);
        assert!(!slice.capped);
        assert!((slice.t_start.secs() - 9.0027416).abs() < 1e-9);
        assert!((slice.t_end.secs() - 13.0054832).abs() < 1e-9);
        let ids: Vec<u32> = slice.upload_order.iter().map(|e| e.clients[0]).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn single_client_forces_full_rate() {
        let cohort = CohortInfo::new(vec![ClientProfile::new(0, 0, 2.0, M)], M, 8.0, 1e10);
        let slice = plan_slice(&cohort, &PonConfig::uniform(1, 0.0)).unwrap();
        assert!((slice.tau() - M / 1e10).abs() < 1e-12);
        assert!((slice.rate_bps - 1e10).abs() < 1.0);
        assert!(slice.rate_bps <= 1e10);
    }

    #[test]
    fn full_pon_cohort_is_capped() {
        // 128 ONUs x 24 clients, T_UD spread so that tau is 4.0027416 s.
        let mut clients = Vec::new();
        for onu in 0..128u32 {
            for k in 0..24u32 {
                let id = onu * 24 + k;
                let t = if id == 0 {
                    1.0
                } else if id == 1 {
                    5.0
                } else {
                    3.0
                };
                clients.push(ClientProfile::new(id, onu, t, M));
            }
        }
        let cohort = CohortInfo::new(clients, M, 8.0, 1e10);
        let slice = plan_slice(&cohort, &PonConfig::default()).unwrap();
        assert!((slice.tau() - 4.0027416).abs() < 1e-9);
        assert!(3072.0 * M / slice.tau() > 2.02e10);
        assert!(slice.capped);
        assert_eq!(slice.rate_bps, 1e10);
        assert_eq!(slice.upload_order.len(), 128);
        assert!((slice.upload_order[0].bits - 24.0 * M).abs() < 1e-3);
    }

    #[test]
    fn degenerate_window() {
        let cohort = CohortInfo::new(vec![ClientProfile::new(0, 0, 2.0, M)], M, 8.0, 1e10);
        let mut pon = PonConfig::uniform(1, 0.0);
        pon.prop_delay_per_km = 0.0;
        // nabla = M / C > 0 even at zero distance, so a window always exists.
        assert!(plan_slice(&cohort, &pon).is_ok());
        let mut huge = cohort.clone();
        huge.uplink_capacity = f64::INFINITY;
        assert!(matches!(
            plan_slice(&huge, &pon),
            Err(PlanError::DegenerateWindow(_))
        ));
    }

    #[test]
    fn invalid_h_rejected() {
        let mut cohort = two_clients();
        cohort.activation_offset = 0;
        assert!(matches!(
            plan_slice(&cohort, &PonConfig::default()),
            Err(PlanError::InvalidCohort(_))
        ));
        cohort.activation_offset = 100;
        assert!(plan_slice(&cohort, &PonConfig::default()).is_err());
    }

    #[test]
    fn round_threshold_verdicts() {
        let pon = PonConfig::default();
        let mut cohort = two_clients();
        let slice = plan_slice(&cohort, &pon).unwrap();
        let v = validate_round_threshold(&cohort, &slice, &pon).unwrap();
        let required = 2.7416e-3 + 5.0 + M / slice.rate_bps;
        assert!((v.required - required).abs() < 1e-12);
        assert!((v.required - 7.0041).abs() < 1e-4);
        assert!(v.feasible);
        assert!((v.slack - 0.9959).abs() < 1e-4);
        assert_eq!(v.critical_client, 1);
        assert!(v.remedy.is_none());

        cohort.round_period = 6.0;
        let v = validate_round_threshold(&cohort, &slice, &pon).unwrap();
        assert!(!v.feasible);
        assert!((v.slack + 1.0041).abs() < 1e-4);
        assert!(v.remedy.unwrap().contains("reduced"));
    }

    #[test]
    fn aggregation_time_adds_to_path() {
        let pon = PonConfig::default();
        let mut cohort = two_clients();
        let slice = plan_slice(&cohort, &pon).unwrap();
        let base = validate_round_threshold(&cohort, &slice, &pon).unwrap();
        cohort.aggregation_time = 0.5;
        let v = validate_round_threshold(&cohort, &slice, &pon).unwrap();
        assert!((v.required - base.required - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_client_schedule_trace() {
        let slice = plan_slice(&two_clients(), &PonConfig::default()).unwrap();
        let slots = build_upload_schedule(&slice, 0.0).unwrap();
        let slot_len = M / slice.rate_bps;
        assert!((slots[0].start - 1.0027416).abs() < 1e-12);
        assert!((slots[0].end - 3.0041).abs() < 1e-4);
        assert!((slots[1].start - 5.0027416).abs() < 1e-12);
        assert!((slots[1].end - 7.0041).abs() < 1e-4);
        let over = schedule_overrun(&slots, &slice, 0.0);
        assert!((over - 1.9986).abs() < 1e-4);
        assert!(over <= slot_len);
    }

    #[test]
    fn single_client_schedule() {
        let cohort = CohortInfo::new(vec![ClientProfile::new(0, 0, 2.0, M)], M, 8.0, 1e10);
        let pon = PonConfig::default();
        let slice = plan_slice(&cohort, &pon).unwrap();
        let slots = build_upload_schedule(&slice, 3.0).unwrap();
        let ready = 3.0 + 2.0 + 2.7416e-3;
        assert!((slots[0].start - ready).abs() < 1e-12);
        assert!((slots[0].end - ready - M / slice.rate_bps).abs() < 1e-12);
    }

    #[test]
    fn shift_moves_window_with_round() {
        let slice = plan_slice(&two_clients(), &PonConfig::default()).unwrap();
        let moved = slice.shifted_to(20.0);
        assert!((moved.t_start.secs() - 21.0027416).abs() < 1e-9);
        assert!((moved.t_end.secs() - 25.0054832).abs() < 1e-9);
        assert_eq!(moved.round_start(), 20.0);
        assert!((moved.tau() - slice.tau()).abs() < 1e-9);
    }
}
