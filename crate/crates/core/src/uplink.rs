//! Upstream arbitration.
//!
//! Two policies share one server model:
//!
//! * FCFS: a single logical FIFO at line rate, blind to traffic class.
//! * Sliced: inside the slice's per-cycle windows only training traffic is
//!   served (earliest in upload order first); the rest of each cycle, and all
//!   time outside the slice, serves background FIFO. Background is preempted
//!   at window boundaries and resumes later without loss. Idle window time is
//!   never lent to background.
//!
//! [`UplinkServer`] keeps its queues across calls so a long run can switch
//! policy round by round while background traffic flows continuously.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::planner::SliceSpec;
use crate::pon::CycleGrantMap;
use crate::traffic::BackgroundSource;

#[derive(Debug, Error, PartialEq)]
pub enum UplinkError {
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error("training traffic can never be served: {0}")]
    Stalled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Background,
    Training,
}

impl TrafficClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Background => "background",
            TrafficClass::Training => "training",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueItem {
    /// Arrival at the OLT scheduler (generation time plus propagation).
    pub arrival: f64,
    pub onu: u32,
    pub bits: f64,
    pub class: TrafficClass,
    pub seq: u64,
    /// Position in the slice's upload order; ignored for background.
    pub rank: u32,
    /// Caller's identifier, e.g. the client id.
    pub tag: u32,
}

impl QueueItem {
    pub fn background(arrival: f64, onu: u32, bits: f64, seq: u64) -> Self {
        QueueItem {
            arrival,
            onu,
            bits,
            class: TrafficClass::Background,
            seq,
            rank: u32::MAX,
            tag: 0,
        }
    }

    pub fn training(arrival: f64, onu: u32, bits: f64, seq: u64, rank: u32, tag: u32) -> Self {
        QueueItem {
            arrival,
            onu,
            bits,
            class: TrafficClass::Training,
            seq,
            rank,
            tag,
        }
    }
}

/// One contiguous service interval. A preempted item has several.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grant {
    pub seq: u64,
    pub class: TrafficClass,
    pub onu: u32,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GrantLog {
    pub grants: Vec<Grant>,
}

impl GrantLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,onu,arrival,start,end,bits\n");
        for g in &self.grants {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{:.9},{:.3}",
                g.class.as_str(),
                g.onu,
                g.arrival,
                g.start,
                g.end,
                g.bits
            );
        }
        out
    }

    /// First service start of every item, keyed by position of first grant.
    pub fn first_starts(&self) -> Vec<(u64, f64, f64)> {
        let mut seen = std::collections::HashMap::new();
        let mut out = Vec::new();
        for g in &self.grants {
            if seen.insert(g.seq, ()).is_none() {
                out.push((g.seq, g.arrival, g.start));
            }
        }
        out
    }

    /// End of the last segment of item `seq`.
    pub fn completion(&self, seq: u64) -> Option<f64> {
        self.grants
            .iter()
            .filter(|g| g.seq == seq)
            .map(|g| g.end)
            .fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e))))
    }

    pub fn mean_wait(&self) -> Option<f64> {
        let firsts = self.first_starts();
        if firsts.is_empty() {
            return None;
        }
        Some(firsts.iter().map(|(_, a, s)| s - a).sum::<f64>() / firsts.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Class-blind FIFO.
    Shared,
    /// Slice window: training only.
    Slice,
    /// Outside slice windows: background only.
    Remainder,
}

/// Which traffic the uplink may serve at a given time.
pub trait RegionPlan {
    /// Region at `t` and the time it ends (`> t`).
    fn region_at(&mut self, t: f64, training_pending: bool) -> (Region, f64);
}

pub struct FcfsPlan;

impl RegionPlan for FcfsPlan {
    fn region_at(&mut self, _t: f64, _training_pending: bool) -> (Region, f64) {
        (Region::Shared, f64::INFINITY)
    }
}

/// Windows of a [`CycleGrantMap`], extended cycle by cycle while training
/// data is still queued past the mapped range.
pub struct SlicePlan {
    windows: Vec<(f64, f64)>,
    next: usize,
    polling_cycle: f64,
    share: f64,
    mapped_until: f64,
}

impl SlicePlan {
    pub fn new(map: &CycleGrantMap) -> Self {
        let windows: Vec<(f64, f64)> = map
            .windows
            .iter()
            .filter(|w| w.len > 0.0)
            .map(|w| (w.start, w.end()))
            .collect();
        let mapped_until = map
            .windows
            .last()
            .map(|w| (w.cycle + 1) as f64 * map.polling_cycle)
            .unwrap_or(0.0);
        SlicePlan {
            windows,
            next: 0,
            polling_cycle: map.polling_cycle,
            share: map.share,
            mapped_until,
        }
    }
}

impl RegionPlan for SlicePlan {
    fn region_at(&mut self, t: f64, training_pending: bool) -> (Region, f64) {
        while self.next < self.windows.len() && self.windows[self.next].1 <= t {
            self.next += 1;
        }
        if let Some(&(start, end)) = self.windows.get(self.next) {
            return if t >= start {
                (Region::Slice, end)
            } else {
                (Region::Remainder, start)
            };
        }
        if !training_pending || self.share <= 0.0 {
            return (Region::Remainder, f64::INFINITY);
        }
        if t < self.mapped_until {
            return (Region::Remainder, self.mapped_until);
        }
        let p = self.polling_cycle;
        let mut k = (t / p).floor();
        loop {
            let cs = k * p;
            let we = cs + self.share * p;
            if t < cs {
                return (Region::Remainder, cs);
            }
            if t < we {
                return (Region::Slice, we);
            }
            if t < cs + p {
                return (Region::Remainder, cs + p);
            }
            k += 1.0;
        }
    }
}

/// Source of arrivals ordered by arrival time.
pub trait ArrivalSource {
    fn peek_arrival(&mut self) -> Option<f64>;
    fn pop(&mut self, seq: u64) -> Option<QueueItem>;
}

/// A fixed list of items, already ordered by `(arrival, seq)`.
pub struct ItemList {
    items: VecDeque<QueueItem>,
}

impl ItemList {
    pub fn new(mut items: Vec<QueueItem>) -> Self {
        items.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.seq.cmp(&b.seq)));
        ItemList {
            items: items.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn has_training(&self) -> bool {
        self.items.iter().any(|i| i.class == TrafficClass::Training)
    }
}

impl ArrivalSource for ItemList {
    fn peek_arrival(&mut self) -> Option<f64> {
        self.items.front().map(|i| i.arrival)
    }

    /// Keeps the item's own seq.
    fn pop(&mut self, _seq: u64) -> Option<QueueItem> {
        self.items.pop_front()
    }
}

impl ArrivalSource for BackgroundSource {
    fn peek_arrival(&mut self) -> Option<f64> {
        BackgroundSource::peek_arrival(self)
    }

    fn pop(&mut self, seq: u64) -> Option<QueueItem> {
        self.next()
            .map(|a| QueueItem::background(a.arrival, a.onu, a.bits, seq))
    }
}

/// No background at all.
pub struct NoArrivals;

impl ArrivalSource for NoArrivals {
    fn peek_arrival(&mut self) -> Option<f64> {
        None
    }

    fn pop(&mut self, _seq: u64) -> Option<QueueItem> {
        None
    }
}

#[derive(Debug, Clone)]
struct Active {
    item: QueueItem,
    remaining: f64,
    started: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completion {
    pub seq: u64,
    pub tag: u32,
    pub onu: u32,
    pub arrival: f64,
    pub first_start: f64,
    pub end: f64,
}

/// Stateful single upstream server at line rate.
pub struct UplinkServer {
    capacity: f64,
    now: f64,
    background: VecDeque<Active>,
    training: Vec<Active>,
    first_starts: std::collections::HashMap<u64, f64>,
    log: GrantLog,
    record_background: bool,
    next_bg_seq: u64,
}

impl UplinkServer {
    pub fn new(capacity: f64) -> Self {
        UplinkServer {
            capacity,
            now: 0.0,
            background: VecDeque::new(),
            training: Vec::new(),
            first_starts: Default::default(),
            log: GrantLog::default(),
            record_background: true,
            next_bg_seq: 1 << 40,
        }
    }

    /// Skip logging background grants; long runs produce millions.
    pub fn without_background_log(mut self) -> Self {
        self.record_background = false;
        self
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn log(&self) -> &GrantLog {
        &self.log
    }

    pub fn take_log(&mut self) -> GrantLog {
        std::mem::take(&mut self.log)
    }

    pub fn queued_background_bits(&self) -> f64 {
        self.background.iter().map(|a| a.remaining).sum()
    }

    fn admit(&mut self, item: QueueItem) {
        let active = Active {
            remaining: item.bits,
            item,
            started: false,
        };
        match active.item.class {
            TrafficClass::Background => self.background.push_back(active),
            TrafficClass::Training => self.training.push(active),
        }
    }

    fn admit_due(&mut self, training: &mut dyn ArrivalSource, background: &mut dyn ArrivalSource) {
        while training.peek_arrival().is_some_and(|a| a <= self.now) {
            let item = training.pop(0).expect("peeked");
            self.admit(item);
        }
        while background.peek_arrival().is_some_and(|a| a <= self.now) {
            let seq = self.next_bg_seq;
            self.next_bg_seq += 1;
            if let Some(item) = background.pop(seq) {
                self.admit(item);
            }
        }
    }

    fn pick_training(&self, region: Region) -> Option<usize> {
        let key = |a: &Active| match region {
            Region::Shared => (0u32, a.item.arrival, a.item.seq),
            _ => (a.item.rank, 0.0, a.item.seq),
        };
        if let Some(i) = self.training.iter().position(|a| a.started) {
            return Some(i);
        }
        self.training
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let (ka, kb) = (key(a), key(b));
                ka.0.cmp(&kb.0)
                    .then(ka.1.total_cmp(&kb.1))
                    .then(ka.2.cmp(&kb.2))
            })
            .map(|(i, _)| i)
    }

    /// Serves until every training item of `training` has completed, or,
    /// with `drain`, until both sources and all queues are empty.
    pub fn serve(
        &mut self,
        training: &mut dyn ArrivalSource,
        background: &mut dyn ArrivalSource,
        plan: &mut dyn RegionPlan,
        drain: bool,
    ) -> Result<Vec<Completion>, UplinkError> {
        let mut done = Vec::new();
        loop {
            self.admit_due(training, background);
            let training_left = !self.training.is_empty() || training.peek_arrival().is_some();
            if !drain && !training_left {
                break;
            }
            let (region, until) = plan.region_at(self.now, training_left);
            debug_assert!(until > self.now, "region must end after now");

            // Which queue may transmit now.
            let choice = match region {
                Region::Shared => {
                    let t = self.pick_training(region);
                    let b = self.background.front();
                    match (t, b) {
                        (Some(i), Some(bg)) => {
                            let tr = &self.training[i];
                            // Serve whichever arrived first; an item in
                            // service is never interrupted in FIFO mode.
                            let tr_first = tr.started
                                || (!bg.started
                                    && (tr.item.arrival, tr.item.seq)
                                        < (bg.item.arrival, bg.item.seq));
                            Some(if tr_first { Err(i) } else { Ok(()) })
                        }
                        (Some(i), None) => Some(Err(i)),
                        (None, Some(_)) => Some(Ok(())),
                        (None, None) => None,
                    }
                }
                Region::Slice => self.pick_training(region).map(Err),
                Region::Remainder => self.background.front().map(|_| Ok(())),
            };

            let Some(choice) = choice else {
                let next_tr = training.peek_arrival();
                let next_bg = background.peek_arrival();
                let next_arrival = match region {
                    Region::Shared => min_opt(next_tr, next_bg),
                    Region::Slice => next_tr,
                    Region::Remainder => next_bg,
                };
                let next = next_arrival.unwrap_or(f64::INFINITY).min(until);
                if next.is_infinite() {
                    if training_left {
                        return Err(UplinkError::Stalled(format!(
                            "{} training items queued at t = {}",
                            self.training.len(),
                            self.now
                        )));
                    }
                    break;
                }
                self.now = next.max(self.now);
                continue;
            };

            let cap = self.capacity;
            let now = self.now;
            let active = match choice {
                Ok(()) => self.background.front_mut().expect("chosen"),
                Err(i) => &mut self.training[i],
            };
            let need = active.remaining / cap;
            // Rounding leftovers from many window-sized pieces count as done.
            let slack_bits = 1e-6 + 1e-9 * active.item.bits;
            let (dt, finished) =
                if need <= until - now || active.remaining - (until - now) * cap <= slack_bits {
                    (need.min(until - now), true)
                } else {
                    (until - now, false)
                };
            let bits = if finished { active.remaining } else { dt * cap };
            active.remaining = if finished {
                0.0
            } else {
                active.remaining - bits
            };
            let first = !active.started;
            active.started = true;
            let item = active.item.clone();
            let end = now + dt;
            if first {
                self.first_starts.insert(item.seq, now);
            }
            if item.class == TrafficClass::Training || self.record_background {
                self.log.grants.push(Grant {
                    seq: item.seq,
                    class: item.class,
                    onu: item.onu,
                    arrival: item.arrival,
                    start: now,
                    end,
                    bits,
                });
            }
            self.now = end;
            if finished {
                let first_start = self.first_starts.remove(&item.seq).unwrap_or(now);
                match choice {
                    Ok(()) => {
                        self.background.pop_front();
                    }
                    Err(i) => {
                        self.training.swap_remove(i);
                        done.push(Completion {
                            seq: item.seq,
                            tag: item.tag,
                            onu: item.onu,
                            arrival: item.arrival,
                            first_start,
                            end,
                        });
                    }
                }
            }
        }
        Ok(done)
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Single shared FIFO at rate `capacity`, class-blind.
pub fn serve_fcfs(items: Vec<QueueItem>, capacity: f64) -> GrantLog {
    let mut server = UplinkServer::new(capacity);
    let mut list = ItemList::new(items);
    server
        .serve(&mut NoArrivals, &mut list, &mut FcfsPlan, true)
        .expect("FCFS never stalls");
    server.take_log()
}

/// Slice-aware service of a mixed item list over the windows of `grants`.
pub fn serve_sliced(
    items: Vec<QueueItem>,
    slice: &SliceSpec,
    grants: &CycleGrantMap,
    capacity: f64,
) -> Result<GrantLog, UplinkError> {
    let expected_share = slice.rate_bps / capacity;
    if (grants.share - expected_share).abs() > 1e-9 {
        return Err(UplinkError::InvalidSlice(format!(
            "grant map share {} does not match B / C = {expected_share}",
            grants.share
        )));
    }
    let (training, background): (Vec<_>, Vec<_>) = items
        .into_iter()
        .partition(|i| i.class == TrafficClass::Training);
    if !training.is_empty() && grants.share <= 0.0 {
        return Err(UplinkError::InvalidSlice(
            "training traffic but no reserved capacity".into(),
        ));
    }
    let mut server = UplinkServer::new(capacity);
    let mut tr = ItemList::new(training);
    let mut bg = ItemList::new(background);
    let mut plan = SlicePlan::new(grants);
    server.serve(&mut tr, &mut bg, &mut plan, true)?;
    Ok(server.take_log())
}
