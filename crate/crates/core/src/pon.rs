//! TDM-PON topology and timing: propagation, downstream broadcast, and the
//! per-polling-cycle layout of a reserved slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::SliceSpec;

/// Light in fiber, group index ~1.5.
pub const DEFAULT_PROP_DELAY_PER_KM: f64 = 5e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PonError {
    #[error("unknown ONU {onu} (PON has {num_onus})")]
    UnknownOnu { onu: u32, num_onus: u32 },
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error("invalid PON config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PonConfig {
    pub num_onus: u32,
    /// Upstream line rate C, bits/s.
    pub uplink_capacity: f64,
    pub downlink_capacity: f64,
    /// Fraction of the downstream line rate reserved for the model broadcast.
    pub downlink_share: f64,
    /// One entry per ONU.
    pub distance_km: Vec<f64>,
    pub prop_delay_per_km: f64,
    pub polling_cycle: f64,
    pub guard_time: f64,
}

impl Default for PonConfig {
    fn default() -> Self {
        PonConfig::uniform(128, 20.0)
    }
}

impl PonConfig {
    /// `num_onus` ONUs at the same distance, everything else at defaults.
    pub fn uniform(num_onus: u32, distance_km: f64) -> Self {
        PonConfig {
            num_onus,
            uplink_capacity: 1e10,
            downlink_capacity: 1e10,
            downlink_share: 1.0,
            distance_km: vec![distance_km; num_onus as usize],
            prop_delay_per_km: DEFAULT_PROP_DELAY_PER_KM,
            polling_cycle: 1e-3,
            guard_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PonError> {
        let bad = |m: &str| Err(PonError::InvalidConfig(m.to_string()));
        if self.num_onus == 0 {
            return bad("num_onus must be at least 1");
        }
        if !(self.uplink_capacity > 0.0 && self.downlink_capacity > 0.0) {
            return bad("line rates must be positive");
        }
        if !(self.downlink_share > 0.0 && self.downlink_share <= 1.0) {
            return bad("downlink_share must be in (0, 1]");
        }
        if self.distance_km.len() != self.num_onus as usize {
            return bad("distance_km needs one entry per ONU");
        }
        if self.distance_km.iter().any(|d| !(*d >= 0.0)) {
            return bad("distances must be nonnegative");
        }
        if !(self.prop_delay_per_km >= 0.0) {
            return bad("prop_delay_per_km must be nonnegative");
        }
        if !(self.guard_time >= 0.0 && self.polling_cycle > self.guard_time * self.num_onus as f64)
        {
            return bad("polling_cycle must exceed guard_time * num_onus");
        }
        Ok(())
    }

    /// One-way ONU to OLT propagation delay.
    pub fn prop_delay(&self, onu: u32) -> Result<f64, PonError> {
        self.distance_km
            .get(onu as usize)
            .filter(|_| onu < self.num_onus)
            .map(|d| d * self.prop_delay_per_km)
            .ok_or(PonError::UnknownOnu {
                onu,
                num_onus: self.num_onus,
            })
    }

    pub fn max_prop_delay(&self) -> f64 {
        self.distance_km
            .iter()
            .fold(0.0, |m: f64, d| m.max(d * self.prop_delay_per_km))
    }

    /// Time for the broadcast global model to be fully received at `onu`.
    /// The downstream is a broadcast medium, so one transmission serves all.
    pub fn downlink_time(&self, model_bits: f64, onu: u32) -> Result<f64, PonError> {
        let serialization = model_bits / (self.downlink_capacity * self.downlink_share);
        Ok(serialization + self.prop_delay(onu)?)
    }

    /// Start of the polling cycle containing `t`.
    pub fn cycle_index(&self, t: f64) -> u64 {
        (t / self.polling_cycle).floor().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubSlot {
    pub onu: u32,
    pub start: f64,
    pub len: f64,
}

/// The slice's share of one polling cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleWindow {
    pub cycle: u64,
    pub start: f64,
    pub len: f64,
    /// Past `t_e`, granted only because planned training data is still queued.
    pub extension: bool,
    pub subslots: Vec<SubSlot>,
}

impl CycleWindow {
    pub fn end(&self) -> f64 {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleGrantMap {
    pub polling_cycle: f64,
    /// `B / C`.
    pub share: f64,
    /// Cycle indices overlapping `[t_s, t_e)`.
    pub first_cycle: u64,
    pub last_cycle: u64,
    pub windows: Vec<CycleWindow>,
}

impl CycleGrantMap {
    /// Total slice time granted in cycles overlapping `[t_s, t_e)`.
    pub fn nominal_window_time(&self) -> f64 {
        self.windows
            .iter()
            .filter(|w| !w.extension)
            .map(|w| w.len)
            .sum()
    }

    /// The window of cycle `k` once past the mapped range: a full
    /// `share * polling_cycle` slot at the start of the cycle.
    pub fn extension_window(&self, cycle: u64) -> (f64, f64) {
        let start = cycle as f64 * self.polling_cycle;
        (start, self.share * self.polling_cycle)
    }
}

// Hard stop for the planned extension so a degenerate slice cannot loop forever.
const MAX_EXTENSION_CYCLES: u64 = 10_000_000;

/// Lays the slice out over polling cycles. Each cycle overlapping
/// `[t_s, t_e]` grants the slice `(B / C) * overlap`, starting at the later of
/// the cycle start and `t_s`. Inside each window the ONUs of the upload order
/// get sub-slots in turn, skipping those not yet ready or already drained.
/// Cycles after `t_e` are appended as full-share windows while planned
/// training data remains.
pub fn map_slice_to_cycles(cfg: &PonConfig, slice: &SliceSpec) -> Result<CycleGrantMap, PonError> {
    let c = cfg.uplink_capacity;
    if !(slice.rate_bps > 0.0 && slice.rate_bps <= c * (1.0 + 1e-12)) {
        return Err(PonError::InvalidSlice(format!(
            "B = {} must be in (0, C = {c}]",
            slice.rate_bps
        )));
    }
    let (ts, te) = (slice.t_start.secs(), slice.t_end.secs());
    if !(ts < te) {
        return Err(PonError::InvalidSlice(format!(
            "t_s = {ts} is not before t_e = {te}"
        )));
    }
    let p = cfg.polling_cycle;
    let share = (slice.rate_bps / c).min(1.0);
    let first = cfg.cycle_index(ts);
    let last = ((te / p).ceil() as u64).saturating_sub(1).max(first);

    let round_start = slice.round_start();
    let mut remaining: Vec<f64> = slice.upload_order.iter().map(|e| e.bits).collect();
    let ready: Vec<f64> = slice
        .upload_order
        .iter()
        .map(|e| round_start + e.ready_offset)
        .collect();
    let mut head = 0usize;
    let mut windows = Vec::with_capacity((last - first + 1) as usize);

    for k in first..=last {
        let cs = k as f64 * p;
        let ws = cs.max(ts);
        let overlap = (cs + p).min(te) - ws;
        if overlap <= 0.0 {
            continue;
        }
        let len = share * overlap;
        let subslots = fill_window(cfg, slice, &ready, &mut remaining, &mut head, ws, len);
        windows.push(CycleWindow {
            cycle: k,
            start: ws,
            len,
            extension: false,
            subslots,
        });
    }
    let mut k = last + 1;
    while remaining.iter().any(|r| *r > 0.0) && k - last <= MAX_EXTENSION_CYCLES {
        let start = k as f64 * p;
        let len = share * p;
        let subslots = fill_window(cfg, slice, &ready, &mut remaining, &mut head, start, len);
        windows.push(CycleWindow {
            cycle: k,
            start,
            len,
            extension: true,
            subslots,
        });
        k += 1;
    }

    Ok(CycleGrantMap {
        polling_cycle: p,
        share,
        first_cycle: first,
        last_cycle: last,
        windows,
    })
}

// Offers one window to the upload order, earliest-ready first.
fn fill_window(
    cfg: &PonConfig,
    slice: &SliceSpec,
    ready: &[f64],
    remaining: &mut [f64],
    head: &mut usize,
    start: f64,
    len: f64,
) -> Vec<SubSlot> {
    let c = cfg.uplink_capacity;
    let end = start + len;
    let mut cursor = start;
    let mut subs = Vec::new();
    while *head < remaining.len() && remaining[*head] <= 0.0 {
        *head += 1;
    }
    for (i, entry) in slice.upload_order.iter().enumerate().skip(*head) {
        if cursor >= end || ready[i] >= end {
            break;
        }
        if remaining[i] <= 0.0 {
            continue;
        }
        let s = cursor.max(ready[i]) + cfg.guard_time;
        if s >= end {
            break;
        }
        let need = remaining[i] / c;
        let l = need.min(end - s);
        remaining[i] = if l >= need { 0.0 } else { remaining[i] - l * c };
        subs.push(SubSlot {
            onu: entry.onu,
            start: s,
            len: l,
        });
        cursor = s + l;
    }
    subs
}
