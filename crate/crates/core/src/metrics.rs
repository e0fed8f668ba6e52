//! Evaluation metrics: traffic index, delivery ratio, throughput, Jain
//! fairness, delay, energy and network lifetime.
//!
//! Everything here is a pure function of its inputs. The simulator calls
//! these online and the replay oracle calls them again over the event log.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent counts: {0}")]
    Inconsistent(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MetricsError::InvalidArgument(msg.into()))
}

/// Traffic a child routes through one parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildContribution {
    pub child_id: u32,
    /// Fraction of the child's traffic sent via this parent.
    pub theta: f64,
    /// Child's offered load in bits/second.
    pub traffic: f64,
}

/// Load on a parent relative to its capacity `cb` (bits/second), clamped
/// to `[0, 1]`.
pub fn traffic_index(contributions: &[ChildContribution], cb: f64) -> Result<f64> {
    if !(cb > 0.0) {
        return invalid(format!("capacity must be positive, got {cb}"));
    }
    let load: f64 = contributions.iter().map(|c| c.theta * c.traffic).sum();
    Ok((load / cb).clamp(0.0, 1.0))
}

/// Delivered over sent; zero when nothing was sent.
pub fn pdr(sent: u64, received: u64) -> Result<f64> {
    if received > sent {
        return Err(MetricsError::Inconsistent(format!(
            "received {received} exceeds sent {sent}"
        )));
    }
    if sent == 0 {
        return Ok(0.0);
    }
    Ok(received as f64 / sent as f64)
}

/// Bits received from all neighbours over `dt` seconds.
pub fn throughput_basic(received_bits: &[f64], dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    Ok(received_bits.iter().sum::<f64>() / dt)
}

/// LQI-weighted throughput scaled by `ln(1 + child_count)`.
pub fn throughput_weighted(per_neighbor: &[(f64, f64)], dt: f64, child_count: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if !(child_count >= 0.0) {
        return invalid(format!("child count must be non-negative, got {child_count}"));
    }
    if let Some((_, lqi)) = per_neighbor.iter().find(|(_, q)| !(0.0..=1.0).contains(q)) {
        return invalid(format!("lqi {lqi} outside [0, 1]"));
    }
    let weighted: f64 = per_neighbor.iter().map(|(bits, lqi)| bits * lqi).sum();
    Ok(weighted / dt * child_count.ln_1p())
}

/// Jain's fairness index `(Σv)² / (n Σv²)`. An all-zero vector is
/// perfectly fair.
pub fn jain_fairness(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("fairness of an empty set");
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return invalid("fairness values must be finite and non-negative");
    }
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return Ok(1.0);
    }
    let n = values.len() as f64;
    Ok(((sum * sum) / (n * sum_sq)).clamp(1.0 / n, 1.0))
}

/// Per-hop delay components, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub proc: f64,
    pub queue: f64,
    pub trans: f64,
    pub prop: f64,
}

pub fn node_delay(d: &DelayBreakdown) -> f64 {
    d.proc + d.queue + d.trans + d.prop
}

pub fn link_delay_index(per_hop_delays: &[f64]) -> f64 {
    per_hop_delays.iter().sum()
}

/// Mean latency of delivered packets; `None` when nothing was delivered.
pub fn avg_end_to_end_delay(latencies: &[f64]) -> Option<f64> {
    if latencies.is_empty() {
        None
    } else {
        Some(latencies.iter().sum::<f64>() / latencies.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioState {
    Tx,
    Rx,
    Idle,
    Sleep,
}

/// Power draw per radio state, in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub tx: f64,
    pub rx: f64,
    pub idle: f64,
    pub sleep: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self {
            tx: 0.0522,
            rx: 0.0591,
            idle: 0.00128,
            sleep: 1e-6,
        }
    }
}

impl PowerProfile {
    pub fn draw(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Tx => self.tx,
            RadioState::Rx => self.rx,
            RadioState::Idle => self.idle,
            RadioState::Sleep => self.sleep,
        }
    }
}

/// Accumulated seconds per radio state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDurations {
    pub tx: f64,
    pub rx: f64,
    pub idle: f64,
    pub sleep: f64,
}

impl StateDurations {
    pub fn add(&mut self, state: RadioState, seconds: f64) {
        match state {
            RadioState::Tx => self.tx += seconds,
            RadioState::Rx => self.rx += seconds,
            RadioState::Idle => self.idle += seconds,
            RadioState::Sleep => self.sleep += seconds,
        }
    }

    pub fn total(&self) -> f64 {
        self.tx + self.rx + self.idle + self.sleep
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub power: PowerProfile,
    pub time: StateDurations,
}

/// `P_T t_T + P_R t_R + P_I t_I + P_S t_S`, in joules.
pub fn energy_total(ledger: &EnergyLedger) -> f64 {
    let (p, t) = (&ledger.power, &ledger.time);
    p.tx * t.tx + p.rx * t.rx + p.idle * t.idle + p.sleep * t.sleep
}

/// Average network lifetime normalized by the cap `lifetime_cap`:
/// `(Σ death_times + survivors · cap) / n / cap`.
pub fn altn(death_times: &[f64], survivors: usize, lifetime_cap: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return invalid("network has no nodes");
    }
    if !(lifetime_cap > 0.0) {
        return invalid(format!("lifetime cap must be positive, got {lifetime_cap}"));
    }
    if death_times.len() + survivors != n {
        return invalid(format!(
            "{} deaths + {survivors} survivors != {n} nodes",
            death_times.len()
        ));
    }
    if let Some(t) = death_times
        .iter()
        .find(|t| !(**t >= 0.0 && **t <= lifetime_cap))
    {
        return invalid(format!("death time {t} outside [0, {lifetime_cap}]"));
    }
    let raw = (death_times.iter().sum::<f64>() + survivors as f64 * lifetime_cap) / n as f64;
    Ok((raw / lifetime_cap).clamp(0.0, 1.0))
}

/// Drop counts by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub buffer_full: u64,
    pub link_loss: u64,
    pub no_route: u64,
    pub node_dead: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.buffer_full + self.link_loss + self.no_route + self.node_dead
    }
}

/// Every metric for one run. Per-node lists cover sensors only, indexed by
/// sensor id order; the sink is mains-powered and excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pdr: f64,
    pub packets_sent: u64,
    pub packets_received: u64,
    pub packets_dropped: u64,
    pub packets_in_flight: u64,
    pub drops: DropCounts,
    pub throughput_per_node: Vec<f64>,
    pub weighted_throughput_per_node: Vec<f64>,
    pub jfi_throughput: f64,
    /// `None` when no packet was delivered.
    pub aeed: Option<f64>,
    pub energy_per_node: Vec<f64>,
    pub jfi_energy: f64,
    pub altn: f64,
    /// Death instants of sensors that ran out of energy, by node id.
    pub death_times: Vec<f64>,
}

impl MetricsReport {
    pub fn mean_throughput(&self) -> f64 {
        mean(&self.throughput_per_node)
    }

    pub fn mean_weighted_throughput(&self) -> f64 {
        mean(&self.weighted_throughput_per_node)
    }

    pub fn mean_energy(&self) -> f64 {
        mean(&self.energy_per_node)
    }

    /// Field-by-field comparison at relative tolerance `rel`. Returns a
    /// description of every divergence.
    pub fn divergences(&self, other: &MetricsReport, rel: f64) -> Vec<String> {
        let mut out = Vec::new();
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= rel * a.abs().max(b.abs());
        let mut scalar = |name: &str, a: f64, b: f64| {
            if !close(a, b) {
                out.push(format!("{name}: {a} vs {b}"));
            }
        };
        scalar("pdr", self.pdr, other.pdr);
        scalar("jfi_throughput", self.jfi_throughput, other.jfi_throughput);
        scalar("jfi_energy", self.jfi_energy, other.jfi_energy);
        scalar("altn", self.altn, other.altn);
        match (self.aeed, other.aeed) {
            (Some(a), Some(b)) => scalar("aeed", a, b),
            (None, None) => {}
            (a, b) => out.push(format!("aeed: {a:?} vs {b:?}")),
        }
        let counts = [
            ("packets_sent", self.packets_sent, other.packets_sent),
            ("packets_received", self.packets_received, other.packets_received),
            ("packets_dropped", self.packets_dropped, other.packets_dropped),
            ("packets_in_flight", self.packets_in_flight, other.packets_in_flight),
        ];
        for (name, a, b) in counts {
            if a != b {
                out.push(format!("{name}: {a} vs {b}"));
            }
        }
        if self.drops != other.drops {
            out.push(format!("drops: {:?} vs {:?}", self.drops, other.drops));
        }
        let lists = [
            ("throughput_per_node", &self.throughput_per_node, &other.throughput_per_node),
            (
                "weighted_throughput_per_node",
                &self.weighted_throughput_per_node,
                &other.weighted_throughput_per_node,
            ),
            ("energy_per_node", &self.energy_per_node, &other.energy_per_node),
            ("death_times", &self.death_times, &other.death_times),
        ];
        for (name, a, b) in lists {
            if a.len() != b.len() {
                out.push(format!("{name}: length {} vs {}", a.len(), b.len()));
                continue;
            }
            for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
                if !close(*x, *y) {
                    out.push(format!("{name}[{i}]: {x} vs {y}"));
                }
            }
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contrib(theta: f64, traffic: f64) -> ChildContribution {
        ChildContribution {
            child_id: 0,
            theta,
            traffic,
        }
    }

    #[test]
    fn traffic_index_examples() {
        assert_eq!(traffic_index(&[], 250.0).unwrap(), 0.0);
        assert_eq!(traffic_index(&[contrib(1.0, 100.0)], 200.0).unwrap(), 0.5);
        let full = traffic_index(&[contrib(0.5, 400.0), contrib(1.0, 100.0)], 250.0).unwrap();
        assert_eq!(full, 1.0);
        assert!(traffic_index(&[], 0.0).is_err());
        assert!(traffic_index(&[], -1.0).is_err());
    }

    #[test]
    fn pdr_examples() {
        assert_eq!(pdr(100, 96).unwrap(), 0.96);
        assert_eq!(pdr(0, 0).unwrap(), 0.0);
        assert_eq!(pdr(7, 7).unwrap(), 1.0);
        assert!(matches!(pdr(3, 4), Err(MetricsError::Inconsistent(_))));
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput_basic(&[0.0, 0.0], 10.0).unwrap(), 0.0);
        assert_eq!(throughput_basic(&[400.0, 600.0], 10.0).unwrap(), 100.0);
        assert_eq!(throughput_basic(&[250_000.0], 1.0).unwrap(), 250_000.0);
        assert!(throughput_basic(&[1.0], 0.0).is_err());

        assert_eq!(throughput_weighted(&[(1000.0, 1.0)], 1.0, 0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((throughput_weighted(&[(1000.0, 1.0)], 1.0, e - 1.0).unwrap() - 1000.0).abs() < 1e-9);
        let w = throughput_weighted(&[(1000.0, 0.5), (2000.0, 1.0)], 10.0, 1.0).unwrap();
        assert!((w - 250.0 * 2f64.ln()).abs() < 1e-9);
        assert!((w - 173.29).abs() < 0.01);
        assert!(throughput_weighted(&[(1.0, 1.5)], 1.0, 1.0).is_err());
        assert!(throughput_weighted(&[(1.0, -0.1)], 1.0, 1.0).is_err());
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_fairness(&[5.0; 4]).unwrap(), 1.0);
        assert_eq!(jain_fairness(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        assert!((jain_fairness(&[1.0, 2.0, 3.0]).unwrap() - 36.0 / 42.0).abs() < 1e-15);
        assert_eq!(jain_fairness(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(jain_fairness(&[]).is_err());
        assert!(jain_fairness(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn delay_examples() {
        assert_eq!(node_delay(&DelayBreakdown::default()), 0.0);
        let d = DelayBreakdown {
            proc: 1e-4,
            queue: 3.2e-3,
            trans: 1.6e-3,
            prop: 3.3e-7,
        };
        assert!((node_delay(&d) - 4.90033e-3).abs() < 1e-12);
        let t = DelayBreakdown {
            trans: 1.6e-3,
            ..Default::default()
        };
        assert_eq!(node_delay(&t), 1.6e-3);

        assert_eq!(link_delay_index(&[]), 0.0);
        assert!((link_delay_index(&[0.001, 0.002, 0.003]) - 0.006).abs() < 1e-15);
        assert_eq!(link_delay_index(&[0.0042]), 0.0042);

        assert!((avg_end_to_end_delay(&[0.010, 0.012, 0.011]).unwrap() - 0.011).abs() < 1e-15);
        assert_eq!(avg_end_to_end_delay(&[0.7]), Some(0.7));
        assert!((avg_end_to_end_delay(&[0.011064; 37]).unwrap() - 0.011064).abs() < 1e-15);
        assert_eq!(avg_end_to_end_delay(&[]), None);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_total(&EnergyLedger::default()), 0.0);
        let ledger = EnergyLedger {
            power: PowerProfile {
                tx: 0.0522,
                rx: 0.0591,
                idle: 0.00128,
                sleep: 1e-6,
            },
            time: StateDurations {
                tx: 10.0,
                rx: 20.0,
                idle: 900.0,
                sleep: 70.0,
            },
        };
        assert!((energy_total(&ledger) - 2.85607).abs() < 1e-12);
        let idle = EnergyLedger {
            power: PowerProfile {
                tx: 0.0,
                rx: 0.0,
                idle: 0.002,
                sleep: 0.0,
            },
            time: StateDurations {
                idle: 1000.0,
                ..Default::default()
            },
        };
        assert_eq!(energy_total(&idle), 2.0);
    }

    #[test]
    fn altn_examples() {
        assert_eq!(altn(&[], 5, 1000.0, 5).unwrap(), 1.0);
        assert_eq!(altn(&[0.0, 0.0], 0, 1000.0, 2).unwrap(), 0.0);
        assert_eq!(altn(&[400.0, 600.0], 2, 1000.0, 4).unwrap(), 0.75);
        assert!(altn(&[400.0], 2, 1000.0, 4).is_err());
        assert!(altn(&[1200.0], 0, 1000.0, 1).is_err());
        assert!(altn(&[], 0, 1000.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn traffic_index_bounded_and_monotone(
            parts in prop::collection::vec((0.0f64..=1.0, 0.0f64..1e5), 0..8),
            bump in 0.0f64..1e4,
            cb in 1.0f64..3e5,
        ) {
            let cs: Vec<_> = parts.iter().map(|&(t, x)| contrib(t, x)).collect();
            let ti = traffic_index(&cs, cb).unwrap();
            prop_assert!((0.0..=1.0).contains(&ti));
            if let Some(first) = cs.first() {
                let mut more = cs.clone();
                more[0] = contrib(first.theta, first.traffic + bump);
                prop_assert!(traffic_index(&more, cb).unwrap() >= ti);
            }
            prop_assert!(traffic_index(&cs, cb * 2.0).unwrap() <= ti);
        }

        #[test]
        fn jain_bounds_and_scale(
            v in prop::collection::vec(0.0f64..1e6, 1..40),
            c in 1e-3f64..1e3,
        ) {
            let j = jain_fairness(&v).unwrap();
            let n = v.len() as f64;
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((jain_fairness(&scaled).unwrap() - j).abs() <= 1e-9);
        }

        #[test]
        fn pdr_times_sent_is_received(sent in 1u64..1_000_000, frac in 0.0f64..=1.0) {
            let received = (sent as f64 * frac).floor() as u64;
            let p = pdr(sent, received).unwrap();
            prop_assert_eq!((p * sent as f64).round() as u64, received);
        }

        #[test]
        fn aeed_concatenation_is_weighted_mean(
            a in prop::collection::vec(0.0f64..1.0, 1..50),
            b in prop::collection::vec(0.0f64..1.0, 1..50),
        ) {
            let whole: Vec<f64> = a.iter().chain(&b).copied().collect();
            let ma = avg_end_to_end_delay(&a).unwrap();
            let mb = avg_end_to_end_delay(&b).unwrap();
            let weighted = (ma * a.len() as f64 + mb * b.len() as f64) / whole.len() as f64;
            prop_assert!((avg_end_to_end_delay(&whole).unwrap() - weighted).abs() <= 1e-12);
        }

        #[test]
        fn altn_monotone(
            deaths in prop::collection::vec(0.0f64..=1000.0, 0..10),
            survivors in 0usize..10,
            idx in 0usize..10,
            bump in 0.0f64..100.0,
        ) {
            let n = deaths.len() + survivors;
            prop_assume!(n > 0);
            let base = altn(&deaths, survivors, 1000.0, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            if !deaths.is_empty() {
                let mut later = deaths.clone();
                let i = idx % later.len();
                later[i] = (later[i] + bump).min(1000.0);
                prop_assert!(altn(&later, survivors, 1000.0, n).unwrap() >= base);
                // one death replaced by a survivor
                let mut fewer = deaths.clone();
                fewer.remove(i);
                prop_assert!(altn(&fewer, survivors + 1, 1000.0, n).unwrap() >= base);
            }
        }
    }
}
