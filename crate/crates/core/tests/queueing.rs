use fedslice::pon::PonConfig;
use fedslice::traffic::{BackgroundConfig, BackgroundSource, COARSE_UNIT_BITS};
use fedslice::uplink::{serve_fcfs, QueueItem};

fn md1_wait(rho: f64, service: f64) -> f64 {
    rho * service / (2.0 * (1.0 - rho))
}

fn measured_wait(cfg: &BackgroundConfig, n: usize) -> f64 {
    let pon = PonConfig::uniform(4, 20.0);
    let items = BackgroundSource::new(cfg, &pon)
        .unwrap()
        .take(n)
        .enumerate()
        .map(|(i, a)| QueueItem::background(a.arrival, a.onu, a.bits, i as u64))
        .collect();
    serve_fcfs(items, pon.uplink_capacity).mean_wait().unwrap()
}

#[test]
fn fcfs_matches_md1_at_half_load() {
    let cfg = BackgroundConfig {
        load: 0.5,
        seed: 3,
        ..Default::default()
    };
    let w = measured_wait(&cfg, 200_000);
    // 1.2 us service: 0.5 * 1.2e-6 / 1.0
    let theory = md1_wait(0.5, 1.2e-6);
    assert!((theory - 6e-7).abs() < 1e-18);
    assert!((w / theory - 1.0).abs() < 0.05, "{w} vs {theory}");
}

#[test]
fn coarse_units_scale_the_wait() {
    let cfg = BackgroundConfig {
        load: 0.7,
        seed: 8,
        coarse_unit_bits: Some(COARSE_UNIT_BITS),
        ..Default::default()
    };
    let w = measured_wait(&cfg, 200_000);
    // 100 us service: 0.7 * 1e-4 / 0.6
    let theory = md1_wait(0.7, 1e-4);
    assert!((w / theory - 1.0).abs() < 0.05, "{w} vs {theory}");
}
