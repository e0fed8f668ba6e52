//! Deterministic discrete-event engine.
//!
//! [`run_scenario`] places nodes, builds the DODAG and plays CBR traffic
//! through per-hop queueing, transmission, propagation and stochastic loss
//! while charging radio energy. Everything that feeds a metric is written
//! to the [`EventLog`], and [`replay_oracle`] rebuilds the report from the
//! log alone.

mod config;
mod engine;
mod event;
mod log;
mod replay;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, DelayBreakdown, DropCounts, EnergyLedger, MetricsError, MetricsReport};
use crate::netmodel::{NodeId, TopologyError};

pub use config::{PacketSizes, ScenarioConfig};
pub use engine::{run_scenario, Diagnostics, RunOutput, Sample};
pub use event::{Event, EventKind, EventQueue};
pub use log::{EventLog, LogRecord};
pub use replay::replay_oracle;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("event log: {0}")]
    Log(String),
    #[error("replay diverges from the online report:\n{}", .0.join("\n"))]
    Divergence(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BufferFull,
    LinkLoss,
    NoRoute,
    NodeDead,
}

impl DropReason {
    pub fn count_into(self, drops: &mut DropCounts) {
        match self {
            DropReason::BufferFull => drops.buffer_full += 1,
            DropReason::LinkLoss => drops.link_loss += 1,
            DropReason::NoRoute => drops.no_route += 1,
            DropReason::NodeDead => drops.node_dead += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PacketStatus {
    InFlight,
    Delivered { at: f64 },
    Dropped { at: f64, node: NodeId, reason: DropReason },
}

/// A data packet and its route history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub src: NodeId,
    pub created_at: f64,
    /// Bytes.
    pub size: u32,
    pub hops_taken: u32,
    pub per_hop_delays: Vec<DelayBreakdown>,
    pub status: PacketStatus,
}

impl Packet {
    /// Sum of the per-hop node delays.
    pub fn latency(&self) -> f64 {
        let hops: Vec<f64> = self.per_hop_delays.iter().map(metrics::node_delay).collect();
        metrics::link_delay_index(&hops)
    }
}

/// Raw tallies from which a [`MetricsReport`] is computed. Built once from
/// engine state and once from the log.
#[derive(Debug, Clone, Default)]
pub(crate) struct ReportInputs {
    pub sent: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub drops: DropCounts,
    /// End-to-end latency per delivered packet, in delivery order.
    pub latencies: Vec<f64>,
    /// Per sensor: accepted data bits and link quality per sending neighbour.
    pub rx: Vec<BTreeMap<NodeId, (f64, f64)>>,
    pub ledgers: Vec<EnergyLedger>,
    /// Per sensor.
    pub deaths: Vec<Option<f64>>,
    pub sim_time: f64,
    pub lifetime_cap: f64,
}

impl ReportInputs {
    pub fn finish(&self) -> Result<MetricsReport, SimError> {
        let dt = self.sim_time;
        let mut throughput = Vec::with_capacity(self.rx.len());
        let mut weighted = Vec::with_capacity(self.rx.len());
        for per_neighbor in &self.rx {
            let bits: Vec<f64> = per_neighbor.values().map(|(b, _)| *b).collect();
            let pairs: Vec<(f64, f64)> = per_neighbor.values().copied().collect();
            throughput.push(metrics::throughput_basic(&bits, dt)?);
            weighted.push(metrics::throughput_weighted(
                &pairs,
                dt,
                per_neighbor.len() as f64,
            )?);
        }
        let energy: Vec<f64> = self.ledgers.iter().map(metrics::energy_total).collect();
        let cap = self.lifetime_cap;
        let death_times: Vec<f64> = self.deaths.iter().flatten().copied().collect();
        let capped: Vec<f64> = death_times.iter().map(|t| t.min(cap)).collect();
        let survivors = self.deaths.len() - death_times.len();
        Ok(MetricsReport {
            pdr: metrics::pdr(self.sent, self.delivered)?,
            packets_sent: self.sent,
            packets_received: self.delivered,
            packets_dropped: self.drops.total(),
            packets_in_flight: self.in_flight,
            drops: self.drops,
            jfi_throughput: metrics::jain_fairness(&throughput)?,
            throughput_per_node: throughput,
            weighted_throughput_per_node: weighted,
            aeed: metrics::avg_end_to_end_delay(&self.latencies),
            jfi_energy: metrics::jain_fairness(&energy)?,
            energy_per_node: energy,
            altn: metrics::altn(&capped, survivors, cap, self.deaths.len())?,
            death_times,
        })
    }
}
