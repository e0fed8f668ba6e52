use std::collections::BTreeMap;

use crate::metrics::{self, EnergyLedger, MetricsReport, StateDurations};
use crate::netmodel::NodeId;

use super::log::{EventLog, LogRecord};
use super::{ReportInputs, ScenarioConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    Pending,
    Done,
}

/// Recomputes the metrics report from the event log alone.
///
/// The log has to be complete: it must open with a start record matching
/// `cfg` and close with an end record whose count matches. Anything else is
/// an error, never a partial report.
pub fn replay_oracle(log: &EventLog, cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    let records = log.records();
    let bad = |m: String| Err(SimError::Log(m));

    match records.last() {
        Some(LogRecord::End { records: n, .. }) if *n as usize == records.len() - 1 => {}
        Some(LogRecord::End { records: n, .. }) => {
            return bad(format!("end record counts {n} records, log has {}", records.len() - 1))
        }
        _ => return bad("log is truncated: no end record".into()),
    }
    let (n_nodes, sim_time, lifetime_cap, power) = match records.first() {
        Some(LogRecord::Start {
            n_nodes,
            sim_time,
            lifetime_cap,
            power,
            seed,
            ..
        }) => {
            if *seed != cfg.seed || *sim_time != cfg.sim_time {
                return bad(format!(
                    "log was produced by seed {seed}, sim_time {sim_time}; expected seed {}, sim_time {}",
                    cfg.seed, cfg.sim_time
                ));
            }
            (*n_nodes, *sim_time, *lifetime_cap, *power)
        }
        _ => return bad("log does not open with a start record".into()),
    };
    let sensors = n_nodes - 1;
    let sensor = |node: NodeId| -> Result<usize, SimError> {
        if node.0 == 0 || node.index() >= n_nodes {
            Err(SimError::Log(format!("record refers to node {node}, not a sensor")))
        } else {
            Ok(node.index() - 1)
        }
    };

    let mut inputs = ReportInputs {
        rx: vec![BTreeMap::new(); sensors],
        ledgers: vec![
            EnergyLedger {
                power,
                time: StateDurations::default(),
            };
            sensors
        ],
        deaths: vec![None; sensors],
        sim_time,
        lifetime_cap,
        ..ReportInputs::default()
    };
    let mut fate: Vec<Fate> = Vec::new();
    let mut hops: Vec<Vec<f64>> = Vec::new();

    let settle = |fate: &mut Vec<Fate>, packet: u64| -> Result<(), SimError> {
        match fate.get_mut(packet as usize) {
            Some(f @ Fate::Pending) => {
                *f = Fate::Done;
                Ok(())
            }
            Some(Fate::Done) => Err(SimError::Log(format!("packet {packet} ends twice"))),
            None => Err(SimError::Log(format!("packet {packet} ends before it is generated"))),
        }
    };

    for rec in &records[1..records.len() - 1] {
        match rec {
            LogRecord::Gen { packet, .. } => {
                if *packet as usize != fate.len() {
                    return bad(format!("packet ids out of sequence at {packet}"));
                }
                fate.push(Fate::Pending);
                hops.push(Vec::new());
                inputs.sent += 1;
            }
            LogRecord::Rx {
                packet,
                from,
                to,
                bits,
                lqi,
                delay,
                ..
            } => {
                let Some(h) = hops.get_mut(*packet as usize) else {
                    return bad(format!("reception of unknown packet {packet}"));
                };
                h.push(metrics::node_delay(delay));
                if *to != NodeId::SINK {
                    inputs.rx[sensor(*to)?].entry(*from).or_insert((0.0, *lqi)).0 += bits;
                }
            }
            LogRecord::Deliver { packet, .. } => {
                settle(&mut fate, *packet)?;
                inputs.delivered += 1;
                inputs
                    .latencies
                    .push(metrics::link_delay_index(&hops[*packet as usize]));
            }
            LogRecord::Drop { packet, reason, .. } => {
                settle(&mut fate, *packet)?;
                reason.count_into(&mut inputs.drops);
            }
            LogRecord::Energy {
                node,
                state,
                seconds,
                ..
            } => inputs.ledgers[sensor(*node)?].time.add(*state, *seconds),
            LogRecord::Death { node, at, .. } => {
                let slot = &mut inputs.deaths[sensor(*node)?];
                if slot.is_some() {
                    return bad(format!("node {node} dies twice"));
                }
                *slot = Some(*at);
            }
            LogRecord::Start { .. } => return bad("second start record".into()),
            LogRecord::End { .. } => return bad("end record before the end of the log".into()),
            LogRecord::Tx { .. }
            | LogRecord::Ack { .. }
            | LogRecord::AutomatonUpdate { .. }
            | LogRecord::DioRound { .. }
            | LogRecord::ParentSet { .. } => {}
        }
    }
    inputs.in_flight = fate.iter().filter(|f| **f == Fate::Pending).count() as u64;
    inputs.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Position;
    use crate::simcore::run_scenario;

    fn pair() -> ScenarioConfig {
        ScenarioConfig {
            n_nodes: 2,
            positions: Some(vec![Position { x: 0.0, y: 0.0 }, Position { x: 50.0, y: 0.0 }]),
            loss_scale: 0.0,
            sim_time: 100.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn lossless_pair_matches() {
        let cfg = pair();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.report.pdr, 1.0);
        let replayed = replay_oracle(&out.log, &cfg).unwrap();
        assert_eq!(replayed.pdr, 1.0);
        assert!(out.report.divergences(&replayed, 1e-9).is_empty());
    }

    #[test]
    fn truncated_log_is_rejected() {
        let cfg = pair();
        let mut log = run_scenario(&cfg).unwrap().log;
        let keep = log.len() / 2;
        log.truncate(keep);
        assert!(matches!(replay_oracle(&log, &cfg), Err(SimError::Log(_))));
        log.truncate(0);
        assert!(replay_oracle(&log, &cfg).is_err());
    }

    #[test]
    fn foreign_log_is_rejected() {
        let cfg = pair();
        let log = run_scenario(&cfg).unwrap().log;
        assert!(replay_oracle(&log, &cfg.clone().with_seed(9)).is_err());
    }
}
