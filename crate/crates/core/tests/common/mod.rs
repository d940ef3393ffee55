//! Randomized invariants shared by the `properties` tests and the acceptance
//! gate. Case counts add up to 10,100.

use std::fmt::Debug;

use fedslice::engine::{client_population, select_cohort, FlTaskConfig};
use fedslice::metrics::{compute_savings, SyncSummary};
use fedslice::planner::{build_upload_schedule, plan_slice, ClientProfile, CohortInfo, SliceSpec};
use fedslice::pon::{map_slice_to_cycles, PonConfig};
use fedslice::sim::{EventKind, EventQueue, SimTime};
use fedslice::uplink::{serve_fcfs, serve_sliced, QueueItem, TrafficClass};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const C: f64 = 1e10;

pub struct Property {
    pub name: &'static str,
    pub cases: u32,
    pub run: fn(u32) -> Result<(), String>,
}

pub const PROPERTIES: &[Property] = &[
    Property {
        name: "slice_rate_window_and_volume",
        cases: 2000,
        run: slice_rate_window_and_volume,
    },
    Property {
        name: "plan_ignores_client_order",
        cases: 1000,
        run: plan_ignores_client_order,
    },
    Property {
        name: "activation_offset_shifts_by_one_period",
        cases: 1000,
        run: activation_offset_shifts_by_one_period,
    },
    Property {
        name: "greedy_schedule_is_ordered",
        cases: 1000,
        run: greedy_schedule_is_ordered,
    },
    Property {
        name: "cycle_windows_conserve_capacity",
        cases: 500,
        run: cycle_windows_conserve_capacity,
    },
    Property {
        name: "sliced_service_keeps_training_in_windows",
        cases: 500,
        run: sliced_service_keeps_training_in_windows,
    },
    Property {
        name: "fcfs_is_work_conserving_fifo",
        cases: 1500,
        run: fcfs_is_work_conserving_fifo,
    },
    Property {
        name: "event_queue_pops_in_time_then_seq",
        cases: 1500,
        run: event_queue_pops_in_time_then_seq,
    },
    Property {
        name: "cohort_is_fastest_fraction",
        cases: 550,
        run: cohort_is_fastest_fraction,
    },
    Property {
        name: "summary_ignores_round_order",
        cases: 550,
        run: summary_ignores_round_order,
    },
];

fn check<S>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S: Strategy,
    S::Value: Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn pon() -> PonConfig {
    PonConfig::uniform(128, 20.0)
}

fn clients(max: usize, max_compute: f64) -> impl Strategy<Value = Vec<ClientProfile>> {
    prop::collection::vec((0u32..128, 0.1f64..max_compute, 1e6f64..1e8), 2..=max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (onu, t, m))| ClientProfile::new(i as u32, onu, t, m))
            .collect()
    })
}

fn cohort(clients: Vec<ClientProfile>, round_period: f64) -> CohortInfo {
    let mut c = CohortInfo::new(clients, 26.416e6, round_period, C);
    c.total_rounds = 100;
    c
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn slice_rate_window_and_volume(cases: u32) -> Result<(), String> {
    check(cases, (clients(64, 10.0), 1.0f64..30.0), |(cs, period)| {
        let info = cohort(cs, period);
        let s = plan_slice(&info, &pon()).unwrap();
        prop_assert!(s.rate_bps <= C);
        prop_assert!(s.rate_bps > 0.0);
        prop_assert!((s.t_end.secs() - s.t_start.secs() - s.tau()).abs() < 1e-9);
        prop_assert!(s.t_start < s.t_end);
        let total = info.total_update_bits();
        prop_assert!(rel_close(s.total_bits(), total, 1e-12));
        if !s.capped {
            prop_assert!(rel_close(s.rate_bps * s.tau(), total, 1e-9));
        } else {
            prop_assert_eq!(s.rate_bps, C);
            prop_assert!(total / s.tau() >= C);
        }
        Ok(())
    })
}

fn plan_ignores_client_order(cases: u32) -> Result<(), String> {
    let strategy =
        clients(48, 10.0).prop_flat_map(|cs| (Just(cs.clone()), Just(cs).prop_shuffle()));
    check(cases, strategy, |(cs, shuffled)| {
        let a = plan_slice(&cohort(cs, 8.0), &pon()).unwrap();
        let b = plan_slice(&cohort(shuffled, 8.0), &pon()).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

fn activation_offset_shifts_by_one_period(cases: u32) -> Result<(), String> {
    check(
        cases,
        (clients(32, 10.0), 1.0f64..20.0, 1u32..50),
        |(cs, period, h)| {
            let mut a = cohort(cs.clone(), period);
            a.activation_offset = h;
            let mut b = cohort(cs, period);
            b.activation_offset = h + 1;
            let sa = plan_slice(&a, &pon()).unwrap();
            let sb = plan_slice(&b, &pon()).unwrap();
            prop_assert!((sb.t_start.secs() - sa.t_start.secs() - period).abs() < 1e-9);
            prop_assert!((sb.t_end.secs() - sa.t_end.secs() - period).abs() < 1e-9);
            prop_assert_eq!(sa.rate_bps, sb.rate_bps);
            Ok(())
        },
    )
}

fn greedy_schedule_is_ordered(cases: u32) -> Result<(), String> {
    check(cases, (clients(64, 10.0), 0.0f64..100.0), |(cs, start)| {
        let s = plan_slice(&cohort(cs, 8.0), &pon()).unwrap();
        let slots = build_upload_schedule(&s, start).unwrap();
        prop_assert_eq!(slots.len(), s.upload_order.len());
        let window_start = start + s.window_offset;
        let mut prev_end = f64::NEG_INFINITY;
        for (slot, e) in slots.iter().zip(&s.upload_order) {
            prop_assert!(slot.start >= slot.ready);
            prop_assert!(slot.start >= window_start);
            prop_assert!(slot.start >= prev_end);
            prop_assert!(rel_close(slot.end - slot.start, e.bits / s.rate_bps, 1e-9));
            prev_end = slot.end;
        }
        for w in s.upload_order.windows(2) {
            prop_assert!(w[0].ready_offset <= w[1].ready_offset);
        }
        Ok(())
    })
}

fn small_slice(cs: Vec<ClientProfile>) -> (PonConfig, SliceSpec) {
    let pon = pon();
    let s = plan_slice(&cohort(cs, 8.0), &pon).unwrap();
    (pon, s)
}

// Compute times stay under 2 s so the cycle maps stay small.
fn cycle_windows_conserve_capacity(cases: u32) -> Result<(), String> {
    check(cases, clients(24, 2.0), |cs| {
        let (pon, s) = small_slice(cs);
        let map = map_slice_to_cycles(&pon, &s).unwrap();
        let p = pon.polling_cycle;
        let eps = 1e-12;
        for w in &map.windows {
            let cycle_start = w.cycle as f64 * p;
            prop_assert!(w.start >= cycle_start - eps);
            prop_assert!(w.end() <= cycle_start + p + eps);
            prop_assert!(w.len <= map.share * p + eps);
            let mut cursor = w.start - eps;
            let mut used = 0.0;
            for sub in &w.subslots {
                prop_assert!(sub.start >= cursor);
                prop_assert!(sub.start + sub.len <= w.end() + 1e-9);
                cursor = sub.start + sub.len - eps;
                used += sub.len;
            }
            prop_assert!(used <= w.len + 1e-9);
        }
        prop_assert!(rel_close(
            map.nominal_window_time(),
            map.share * s.tau(),
            1e-9
        ));
        let granted: f64 = map
            .windows
            .iter()
            .flat_map(|w| &w.subslots)
            .map(|x| x.len * C)
            .sum();
        prop_assert!(rel_close(granted, s.total_bits(), 1e-6));
        Ok(())
    })
}

fn sliced_service_keeps_training_in_windows(cases: u32) -> Result<(), String> {
    let bg = prop::collection::vec((0.0f64..20.0, 0u32..128, 1e3f64..1e7), 0..200);
    check(cases, (clients(12, 2.0), bg), |(cs, bg)| {
        let (pon, s) = small_slice(cs);
        let map = map_slice_to_cycles(&pon, &s).unwrap();
        let mut items = Vec::new();
        let mut seq = 0;
        for (rank, e) in s.upload_order.iter().enumerate() {
            let arrival = s.round_start() + e.ready_offset;
            items.push(QueueItem::training(
                arrival,
                e.onu,
                e.bits,
                seq,
                rank as u32,
                e.onu,
            ));
            seq += 1;
        }
        for (t, onu, bits) in bg {
            items.push(QueueItem::background(t, onu, bits, seq));
            seq += 1;
        }
        let want: Vec<f64> = items.iter().map(|i| i.bits).collect();
        let log = serve_sliced(items, &s, &map, C).unwrap();
        let mut grants = log.grants.clone();
        grants.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in grants.windows(2) {
            prop_assert!(w[1].start >= w[0].end - 1e-9);
        }
        let mut served = vec![0.0; want.len()];
        for g in &log.grants {
            prop_assert!(g.start >= g.arrival - 1e-12);
            served[g.seq as usize] += g.bits;
            if g.class == TrafficClass::Training {
                let inside = map
                    .windows
                    .iter()
                    .any(|w| g.start >= w.start - 1e-9 && g.end <= w.end() + 1e-9);
                prop_assert!(inside, "training grant {:?} outside windows", g);
            }
        }
        for (got, want) in served.iter().zip(&want) {
            prop_assert!(rel_close(*got, *want, 1e-6));
        }
        Ok(())
    })
}

fn fcfs_is_work_conserving_fifo(cases: u32) -> Result<(), String> {
    let items = prop::collection::vec((0.0f64..1e-2, 1e3f64..1e6), 1..300);
    check(cases, items, |items| {
        let qs: Vec<QueueItem> = items
            .iter()
            .enumerate()
            .map(|(i, (t, b))| QueueItem::background(*t, (i % 7) as u32, *b, i as u64))
            .collect();
        let log = serve_fcfs(qs, C);
        prop_assert_eq!(log.grants.len(), items.len());
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|a, b| items[*a].0.total_cmp(&items[*b].0).then(a.cmp(b)));
        let mut free = f64::NEG_INFINITY;
        for (g, idx) in log.grants.iter().zip(order) {
            prop_assert_eq!(g.seq, idx as u64);
            let expect = free.max(items[idx].0);
            prop_assert!((g.start - expect).abs() < 1e-12);
            prop_assert!(rel_close(g.end - g.start, items[idx].1 / C, 1e-9));
            free = g.end;
        }
        Ok(())
    })
}

fn event_queue_pops_in_time_then_seq(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::vec(0u32..50, 1..200), |times| {
        let run = || {
            let mut q: EventQueue<EventKind> = EventQueue::new().with_trace();
            for (i, t) in times.iter().enumerate() {
                q.schedule_at(*t as f64 * 0.1, EventKind::Arrival { client: i as u32 })
                    .unwrap();
            }
            let mut popped = Vec::new();
            while let Some((_, ev)) = q.pop_next() {
                popped.push((ev.time, ev.seq));
            }
            (popped, q.take_trace())
        };
        let (popped, trace) = run();
        prop_assert_eq!(popped.len(), times.len());
        for w in popped.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        prop_assert_eq!(run().1, trace);
        prop_assert!(SimTime::new(-1.0).is_none());
        Ok(())
    })
}

fn cohort_is_fastest_fraction(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1u32..64, 1u32..4, 0.5f64..100.0),
        |(onus, per, p)| {
            let pon = PonConfig::uniform(onus, 20.0);
            let task = FlTaskConfig {
                clients_per_onu: per,
                ..Default::default()
            };
            let all = client_population(&task, &pon);
            let chosen = select_cohort(&all, p).unwrap();
            let want = ((p * all.len() as f64 / 100.0).floor() as usize).max(1);
            prop_assert_eq!(chosen.len(), want);
            let slowest = chosen.iter().map(|c| c.compute_time).fold(0.0, f64::max);
            let left_out = all
                .iter()
                .filter(|c| !chosen.iter().any(|x| x.client_id == c.client_id));
            for c in left_out {
                prop_assert!(c.compute_time >= slowest);
            }
            Ok(())
        },
    )
}

fn summary_ignores_round_order(cases: u32) -> Result<(), String> {
    let strategy = prop::collection::vec(0.1f64..20.0, 1..50)
        .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()));
    check(cases, strategy, |(times, shuffled)| {
        let a = SyncSummary::from_times(&times).unwrap();
        let b = SyncSummary::from_times(&shuffled).unwrap();
        prop_assert_eq!(a.min, b.min);
        prop_assert_eq!(a.max, b.max);
        prop_assert_eq!(a.p95, b.p95);
        prop_assert!(rel_close(a.mean, b.mean, 1e-12));
        prop_assert_eq!(compute_savings(&a, &a).unwrap(), 0.0);
        Ok(())
    })
}
