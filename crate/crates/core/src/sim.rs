//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(time, seq)`. `seq` is handed out in scheduling
//! order, so two events at the same instant pop in the order they were
//! scheduled regardless of their payload.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

/// A point in simulated time, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Returns `None` for negative or NaN values.
    pub fn new(secs: f64) -> Option<Self> {
        if secs >= 0.0 {
            Some(SimTime(secs))
        } else {
            None
        }
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}", self.0)
    }
}

/// Payloads used by the round engine.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Training data from `client` reached the OLT scheduler.
    Arrival {
        client: u32,
    },
    GrantStart {
        onu: u32,
    },
    GrantEnd {
        onu: u32,
    },
    ComputeDone {
        client: u32,
    },
    BroadcastDone {
        client: u32,
    },
    RoundEnd {
        round: u32,
    },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Arrival { client } => write!(f, "arrival:{client}"),
            EventKind::GrantStart { onu } => write!(f, "grant-start:{onu}"),
            EventKind::GrantEnd { onu } => write!(f, "grant-end:{onu}"),
            EventKind::ComputeDone { client } => write!(f, "compute-done:{client}"),
            EventKind::BroadcastDone { client } => write!(f, "broadcast-done:{client}"),
            EventKind::RoundEnd { round } => write!(f, "round-end:{round}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub time: SimTime,
    pub seq: u64,
    pub kind: K,
}

// Heap entry; reversed so the max-heap pops the least (time, seq).
struct Pending<K>(Event<K>);

impl<K> PartialEq for Pending<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<K> Eq for Pending<K> {}

impl<K> PartialOrd for Pending<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Pending<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at {at} s: clock is already at {clock} s")]
    SchedulingInPast { at: f64, clock: f64 },
    #[error("invalid time {0}")]
    InvalidTime(f64),
}

/// Event queue plus simulation clock.
pub struct EventQueue<K> {
    heap: BinaryHeap<Pending<K>>,
    clock: SimTime,
    next_seq: u64,
    trace: Option<Vec<String>>,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            clock: SimTime::ZERO,
            next_seq: 0,
            trace: None,
        }
    }

    /// Starts the clock at `start` instead of zero.
    pub fn starting_at(start: SimTime) -> Self {
        EventQueue {
            clock: start,
            ..Self::new()
        }
    }

    /// Records one `time,seq,kind` line per popped event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn schedule(&mut self, at: SimTime, kind: K) -> Result<u64, SimError> {
        if at < self.clock {
            return Err(SimError::SchedulingInPast {
                at: at.secs(),
                clock: self.clock.secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Pending(Event {
            time: at,
            seq,
            kind,
        }));
        Ok(seq)
    }

    /// Convenience wrapper taking raw seconds.
    pub fn schedule_at(&mut self, secs: f64, kind: K) -> Result<u64, SimError> {
        let at = SimTime::new(secs).ok_or(SimError::InvalidTime(secs))?;
        self.schedule(at, kind)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|p| p.0.time)
    }
}

impl<K: fmt::Display> EventQueue<K> {
    /// Pops the least `(time, seq)` event and advances the clock to it.
    pub fn pop_next(&mut self) -> Option<(SimTime, Event<K>)> {
        let Pending(ev) = self.heap.pop()?;
        self.clock = ev.time;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!("{},{},{}", ev.time, ev.seq, ev.kind));
        }
        Some((ev.time, ev))
    }

    /// Processes every event with `time <= t_stop` and leaves the clock at
    /// `t_stop`. The handler may schedule further events.
    pub fn run_until<E, F>(&mut self, t_stop: SimTime, mut handler: F) -> Result<SimTime, E>
    where
        F: FnMut(&mut Self, Event<K>) -> Result<(), E>,
        E: From<SimError>,
    {
        if t_stop < self.clock {
            return Err(SimError::SchedulingInPast {
                at: t_stop.secs(),
                clock: self.clock.secs(),
            }
            .into());
        }
        while self.peek_time().is_some_and(|t| t <= t_stop) {
            let (_, ev) = self.pop_next().expect("peeked");
            handler(self, ev)?;
        }
        self.clock = t_stop;
        Ok(self.clock)
    }

    /// Drains the queue completely. Returns the time of the last event.
    pub fn run<E, F>(&mut self, mut handler: F) -> Result<SimTime, E>
    where
        F: FnMut(&mut Self, Event<K>) -> Result<(), E>,
    {
        while let Some((_, ev)) = self.pop_next() {
            handler(self, ev)?;
        }
        Ok(self.clock)
    }
}
