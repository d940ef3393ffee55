//! Seeded Poisson background traffic on the upstream.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pon::PonConfig;

/// 1500-byte packets.
pub const DEFAULT_UNIT_BITS: f64 = 12_000.0;
/// Unit size used by `--coarse` runs.
pub const COARSE_UNIT_BITS: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("background load is zero; no arrivals")]
    ZeroLoad,
    #[error("invalid background config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    /// Offered background load as a fraction of the uplink capacity.
    pub load: f64,
    pub unit_bits: f64,
    /// Overrides `unit_bits` when set.
    pub coarse_unit_bits: Option<f64>,
    pub seed: u64,
    /// Relative share of arrivals per ONU; uniform when `None`.
    pub onu_weights: Option<Vec<f64>>,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            load: 0.0,
            unit_bits: DEFAULT_UNIT_BITS,
            coarse_unit_bits: None,
            seed: 1,
            onu_weights: None,
        }
    }
}

impl BackgroundConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(0.0..1.0).contains(&self.load) {
            return Err(TrafficError::Invalid(format!(
                "background load {} outside [0, 1)",
                self.load
            )));
        }
        if !(self.effective_unit_bits() > 0.0) {
            return Err(TrafficError::Invalid("unit_bits must be positive".into()));
        }
        if let Some(w) = &self.onu_weights {
            if w.iter().any(|x| !(*x >= 0.0)) || !w.iter().any(|x| *x > 0.0) {
                return Err(TrafficError::Invalid(
                    "onu_weights must be nonnegative, not all zero".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn effective_unit_bits(&self) -> f64 {
        self.coarse_unit_bits.unwrap_or(self.unit_bits)
    }

    /// Arrivals per second, `load * C / unit_bits`.
    pub fn arrival_rate(&self, capacity: f64) -> f64 {
        self.load * capacity / self.effective_unit_bits()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// One exponential interarrival gap.
pub fn sample_interarrival<R: Rng + ?Sized>(
    cfg: &BackgroundConfig,
    capacity: f64,
    rng: &mut R,
) -> Result<f64, TrafficError> {
    let rate = cfg.arrival_rate(capacity);
    if !(rate > 0.0) {
        return Err(TrafficError::ZeroLoad);
    }
    let exp = Exp::new(rate).map_err(|e| TrafficError::Invalid(e.to_string()))?;
    Ok(exp.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundArrival {
    /// Generation time at the ONU.
    pub time: f64,
    /// Time the data reaches the OLT scheduler.
    pub arrival: f64,
    pub onu: u32,
    pub bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ByArrival(BackgroundArrival);

impl Eq for ByArrival {}

impl PartialOrd for ByArrival {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ByArrival {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .arrival
            .total_cmp(&other.0.arrival)
            .then(self.0.time.total_cmp(&other.0.time))
    }
}

enum OnuPicker {
    Uniform(u32),
    Weighted(WeightedIndex<f64>),
}

/// Endless, lazily generated background stream ordered by arrival at the OLT.
///
/// ONUs at different distances reorder generation times; arrivals are held
/// back until no later generation can overtake them.
pub struct BackgroundSource {
    rng: ChaCha8Rng,
    exp: Option<Exp<f64>>,
    picker: OnuPicker,
    unit_bits: f64,
    prop: Vec<f64>,
    next_gen: f64,
    held: BinaryHeap<Reverse<ByArrival>>,
}

impl BackgroundSource {
    pub fn new(cfg: &BackgroundConfig, pon: &PonConfig) -> Result<Self, TrafficError> {
        Self::starting_at(cfg, pon, 0.0)
    }

    pub fn starting_at(
        cfg: &BackgroundConfig,
        pon: &PonConfig,
        start: f64,
    ) -> Result<Self, TrafficError> {
        cfg.validate()?;
        let rate = cfg.arrival_rate(pon.uplink_capacity);
        let exp = if rate > 0.0 {
            Some(Exp::new(rate).map_err(|e| TrafficError::Invalid(e.to_string()))?)
        } else {
            None
        };
        let picker = match &cfg.onu_weights {
            Some(w) => {
                if w.len() != pon.num_onus as usize {
                    return Err(TrafficError::Invalid(
                        "onu_weights needs one entry per ONU".into(),
                    ));
                }
                OnuPicker::Weighted(
                    WeightedIndex::new(w).map_err(|e| TrafficError::Invalid(e.to_string()))?,
                )
            }
            None => OnuPicker::Uniform(pon.num_onus),
        };
        let prop = (0..pon.num_onus)
            .map(|o| pon.prop_delay(o).unwrap_or(0.0))
            .collect();
        let mut src = BackgroundSource {
            rng: cfg.rng(),
            exp,
            picker,
            unit_bits: cfg.effective_unit_bits(),
            prop,
            next_gen: start,
            held: BinaryHeap::new(),
        };
        src.advance_gen();
        Ok(src)
    }

    fn advance_gen(&mut self) {
        self.next_gen = match &self.exp {
            Some(exp) => self.next_gen + exp.sample(&mut self.rng),
            None => f64::INFINITY,
        };
    }

    fn pick_onu(&mut self) -> u32 {
        match &self.picker {
            OnuPicker::Uniform(n) => self.rng.gen_range(0..*n),
            OnuPicker::Weighted(w) => w.sample(&mut self.rng) as u32,
        }
    }

    fn fill(&mut self) {
        // Any future generation arrives no earlier than its generation time.
        while self.next_gen.is_finite()
            && self
                .held
                .peek()
                .is_none_or(|Reverse(h)| h.0.arrival > self.next_gen)
        {
            let time = self.next_gen;
            let onu = self.pick_onu();
            self.held.push(Reverse(ByArrival(BackgroundArrival {
                time,
                arrival: time + self.prop[onu as usize],
                onu,
                bits: self.unit_bits,
            })));
            self.advance_gen();
        }
    }

    /// Arrival time at the OLT of the next item, if any.
    pub fn peek_arrival(&mut self) -> Option<f64> {
        self.fill();
        self.held.peek().map(|Reverse(h)| h.0.arrival)
    }
}

impl Iterator for BackgroundSource {
    type Item = BackgroundArrival;

    fn next(&mut self) -> Option<BackgroundArrival> {
        self.fill();
        self.held.pop().map(|Reverse(h)| h.0)
    }
}

/// All background generated in `[0, horizon)`, ordered by generation time.
pub fn generate_background(
    cfg: &BackgroundConfig,
    pon: &PonConfig,
    horizon: f64,
) -> Result<Vec<BackgroundArrival>, TrafficError> {
    if !(horizon > 0.0) {
        return Err(TrafficError::Invalid(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    // Same draw sequence as `BackgroundSource` so both views agree.
    let mut src = BackgroundSource::new(cfg, pon)?;
    let mut out = Vec::new();
    let max_prop = pon.max_prop_delay();
    while let Some(a) = src.peek_arrival() {
        if a >= horizon + max_prop {
            break;
        }
        out.push(src.next().expect("peeked"));
    }
    out.retain(|a| a.time < horizon);
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(load: f64, seed: u64) -> BackgroundConfig {
        BackgroundConfig {
            load,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn interarrival_mean() {
        let c = cfg(0.8, 3);
        assert!((c.arrival_rate(1e10) - 666_666.666_666_7).abs() < 1e-3);
        let mut rng = c.rng();
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| sample_interarrival(&c, 1e10, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean / 1.5e-6 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_load_never_arrives() {
        let c = cfg(0.0, 1);
        assert_eq!(
            sample_interarrival(&c, 1e10, &mut c.rng()),
            Err(TrafficError::ZeroLoad)
        );
        let mut src = BackgroundSource::new(&c, &PonConfig::default()).unwrap();
        assert!(src.next().is_none());
    }

    #[test]
    fn same_seed_same_draws() {
        let c = cfg(0.3, 42);
        let mut a = c.rng();
        let mut b = c.rng();
        for _ in 0..100 {
            assert_eq!(
                sample_interarrival(&c, 1e10, &mut a).unwrap(),
                sample_interarrival(&c, 1e10, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(cfg(1.0, 1).validate().is_err());
        assert!(cfg(-0.1, 1).validate().is_err());
        let mut c = cfg(0.5, 1);
        c.unit_bits = 0.0;
        assert!(c.validate().is_err());
        assert!(generate_background(&cfg(0.5, 1), &PonConfig::default(), 0.0).is_err());
    }

    #[test]
    fn tiny_horizon_is_usually_empty() {
        let c = cfg(0.01, 5);
        let v = generate_background(&c, &PonConfig::default(), 1e-9).unwrap();
        assert!(v.len() <= 1);
    }

    #[test]
    fn arrivals_are_ordered_with_mixed_distances() {
        let mut pon = PonConfig::uniform(8, 0.0);
        for (i, d) in pon.distance_km.iter_mut().enumerate() {
            *d = i as f64 * 5.0;
        }
        let src = BackgroundSource::new(&cfg(0.9, 11), &pon).unwrap();
        let mut last = f64::NEG_INFINITY;
        for a in src.take(50_000) {
            assert!(a.arrival >= last);
            assert!((a.arrival - a.time - pon.prop_delay(a.onu).unwrap()).abs() < 1e-15);
            last = a.arrival;
        }
    }

    #[test]
    fn coarse_mode_keeps_load() {
        let mut c = cfg(0.5, 9);
        c.coarse_unit_bits = Some(COARSE_UNIT_BITS);
        let v = generate_background(&c, &PonConfig::default(), 10.0).unwrap();
        let bits: f64 = v.iter().map(|a| a.bits).sum();
        assert!((bits / (0.5 * 1e10 * 10.0) - 1.0).abs() < 0.02, "{bits}");
    }

    #[test]
    fn weighted_onus() {
        let pon = PonConfig::uniform(2, 0.0);
        let mut c = cfg(0.5, 2);
        c.onu_weights = Some(vec![0.0, 1.0]);
        let src = BackgroundSource::new(&c, &pon).unwrap();
        assert!(src.take(1000).all(|a| a.onu == 1));
    }
}
