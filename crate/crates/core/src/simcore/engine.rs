use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, ChildContribution, DelayBreakdown, DropCounts, RadioState};
use crate::netmodel::{
    build_links, compute_hop_counts, place_nodes, BoundedQueue, DodagState, EnergyAccount,
    EnergyOutcome, NodeId, NodeState, QueuedPacket, Role, Topology,
};
use crate::protocol::{
    self, eligible_dios, form_parent_set, make_dio, on_ack_received, AckBatcher, AckPacket,
    ProtocolError,
};
use crate::rng::{rng_for, SimRng, Stream};

use super::event::{EventKind, EventQueue};
use super::log::{EventLog, LogRecord};
use super::{DropReason, Packet, PacketStatus, ReportInputs, ScenarioConfig, SimError};

/// Snapshot of the sensors at one sampling instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Accepted data bits per second since the previous sample.
    pub throughput: Vec<f64>,
    /// Joules consumed so far.
    pub energy: Vec<f64>,
    pub alive: Vec<bool>,
}

/// Counters that are not metrics but help explain a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dio_rounds: u64,
    pub repair_rounds: u64,
    pub parent_sets_formed: u64,
    pub acks_sent: u64,
    pub acks_lost: u64,
    /// Acks that arrived after the child had replaced that parent.
    pub stale_acks: u64,
    pub automaton_updates: u64,
    /// Steps that fell back to the clamp maximum on a zero denominator.
    pub degenerate_steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: crate::metrics::MetricsReport,
    pub log: EventLog,
    pub samples: Vec<Sample>,
    pub topology: Topology,
    pub packets: Vec<Packet>,
    /// Final battery state per node; `None` for the sink.
    pub accounts: Vec<Option<EnergyAccount>>,
    pub diagnostics: Diagnostics,
}

/// Exponentially decayed counter.
#[derive(Debug, Clone, Copy, Default)]
struct Decayed {
    value: f64,
    at: f64,
}

impl Decayed {
    fn value_at(&self, t: f64, tau: f64) -> f64 {
        self.value * (-(t - self.at) / tau).exp()
    }

    fn add(&mut self, t: f64, tau: f64, x: f64) {
        self.value = self.value_at(t, tau) + x;
        self.at = t;
    }
}

/// Simulates `cfg` to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let positions = match &cfg.positions {
        Some(p) => p.clone(),
        None => {
            let mut rng = rng_for(cfg.seed, Stream::Placement);
            place_nodes(cfg.n_nodes, cfg.area, cfg.radio_range, cfg.placement, &mut rng)?
        }
    };
    let topology = build_links(&positions, cfg.radio_range, cfg.lqi_override)?;
    let mut sim = Sim::new(cfg, topology);
    sim.run()?;
    sim.finish()
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    topo: Topology,
    nodes: Vec<NodeState>,
    alive: Vec<bool>,
    radio_free_at: Vec<f64>,
    tx_scheduled: Vec<bool>,
    batchers: Vec<AckBatcher>,
    sent_bits: Vec<Decayed>,
    child_bits: Vec<BTreeMap<NodeId, Decayed>>,
    gen_offset: Vec<f64>,
    gen_count: Vec<u64>,
    packets: Vec<Packet>,
    events: EventQueue,
    log: EventLog,
    traffic_rng: SimRng,
    loss_rng: SimRng,
    automaton_rng: SimRng,
    dodag: DodagState,
    now: f64,
    rx_totals: Vec<BTreeMap<NodeId, (f64, f64)>>,
    window_bits: Vec<f64>,
    window_start: f64,
    sent: u64,
    delivered: u64,
    drops: DropCounts,
    latencies: Vec<f64>,
    samples: Vec<Sample>,
    diag: Diagnostics,
    repair_pending: bool,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, topo: Topology) -> Self {
        let n = topo.len();
        let nodes = topo
            .positions
            .iter()
            .enumerate()
            .map(|(i, pos)| {
                let sink = i == 0;
                NodeState {
                    id: NodeId(i as u32),
                    position: *pos,
                    role: if sink { Role::Sink } else { Role::Sensor },
                    energy: (!sink).then(|| {
                        EnergyAccount::new(cfg.initial_energy, cfg.power, cfg.sleep_ratio, cfg.sim_time)
                    }),
                    queue: BoundedQueue::new(cfg.queue_capacity),
                    hop_count: None,
                    routing: None,
                    tx_batch_counters: BTreeMap::new(),
                }
            })
            .collect();
        Self {
            cfg,
            nodes,
            alive: vec![true; n],
            radio_free_at: vec![0.0; n],
            tx_scheduled: vec![false; n],
            batchers: vec![AckBatcher::default(); n],
            sent_bits: vec![Decayed::default(); n],
            child_bits: vec![BTreeMap::new(); n],
            gen_offset: vec![0.0; n],
            gen_count: vec![0; n],
            packets: Vec::new(),
            events: EventQueue::new(),
            log: EventLog::new(),
            traffic_rng: rng_for(cfg.seed, Stream::Traffic),
            loss_rng: rng_for(cfg.seed, Stream::Loss),
            automaton_rng: rng_for(cfg.seed, Stream::Automaton),
            dodag: DodagState {
                hop_counts: vec![None; n],
                max_hop: 0,
            },
            now: 0.0,
            rx_totals: vec![BTreeMap::new(); n],
            window_bits: vec![0.0; n],
            window_start: 0.0,
            sent: 0,
            delivered: 0,
            drops: DropCounts::default(),
            latencies: Vec::new(),
            samples: Vec::new(),
            diag: Diagnostics::default(),
            repair_pending: false,
            topo,
        }
    }

    fn sensors(&self) -> impl Iterator<Item = NodeId> + use<> {
        (1..self.nodes.len() as u32).map(NodeId)
    }

    fn run(&mut self) -> Result<(), SimError> {
        let cfg = self.cfg;
        self.log.push(LogRecord::Start {
            t: 0.0,
            seed: cfg.seed,
            variant: cfg.variant(),
            n_nodes: self.nodes.len(),
            sim_time: cfg.sim_time,
            lifetime_cap: cfg.lifetime_cap(),
            initial_energy: cfg.initial_energy,
            power: cfg.power,
        });
        self.events.schedule(0.0, EventKind::DioRound { repair: false });
        self.events.schedule(0.0, EventKind::MetricSample);
        for node in self.sensors() {
            let offset = self.traffic_rng.random::<f64>() * cfg.start_jitter;
            self.gen_offset[node.index()] = offset;
            if offset < cfg.sim_time {
                self.events.schedule(offset, EventKind::GenPacket { node });
            }
        }
        self.events.schedule(cfg.sim_time, EventKind::EndOfSim);

        while let Some(ev) = self.events.pop() {
            self.now = ev.time;
            match ev.kind {
                EventKind::GenPacket { node } => self.on_gen(node),
                EventKind::TxStart { node } => self.on_tx_start(node),
                EventKind::RxComplete {
                    packet,
                    from,
                    to,
                    lqi,
                    delay,
                } => self.on_rx_complete(packet, from, to, lqi, delay)?,
                EventKind::AckDelivery { ack } => self.on_ack(ack)?,
                EventKind::DioRound { repair } => self.on_dio_round(repair)?,
                EventKind::MetricSample => self.on_sample(),
                EventKind::EndOfSim => {
                    self.on_end();
                    break;
                }
            }
        }
        Ok(())
    }

    // ----- energy and liveness -----

    fn record_energy(&mut self, node: NodeId, out: EnergyOutcome) {
        for c in &out.charges {
            self.log.push(LogRecord::Energy {
                t: self.now,
                node,
                state: c.state,
                seconds: c.seconds,
            });
        }
        if let Some(at) = out.died_at {
            self.on_death(node, at);
        }
    }

    fn settle(&mut self, node: NodeId) {
        if !self.alive[node.index()] {
            return;
        }
        if let Some(acc) = self.nodes[node.index()].energy.as_mut() {
            let out = acc.settle(self.now);
            self.record_energy(node, out);
        }
    }

    /// Charges an activity starting now. Returns whether the node survived.
    fn charge(&mut self, node: NodeId, state: RadioState, seconds: f64) -> bool {
        if !self.alive[node.index()] {
            return false;
        }
        if let Some(acc) = self.nodes[node.index()].energy.as_mut() {
            let out = acc.charge(state, self.now, seconds);
            self.record_energy(node, out);
        }
        self.alive[node.index()]
    }

    fn on_death(&mut self, node: NodeId, at: f64) {
        let i = node.index();
        if !self.alive[i] {
            return;
        }
        self.alive[i] = false;
        self.log.push(LogRecord::Death {
            t: self.now,
            node,
            at,
        });
        let stranded: Vec<QueuedPacket> = self.nodes[i].queue.drain().collect();
        for qp in stranded {
            self.drop_packet(qp.packet, node, DropReason::NodeDead);
        }
        self.tx_scheduled[i] = false;
        if !self.repair_pending && self.now < self.cfg.sim_time {
            self.repair_pending = true;
            self.events.schedule(self.now, EventKind::DioRound { repair: true });
        }
    }

    // ----- data path -----

    fn drop_packet(&mut self, packet: u64, node: NodeId, reason: DropReason) {
        let p = &mut self.packets[packet as usize];
        debug_assert_eq!(p.status, PacketStatus::InFlight);
        p.status = PacketStatus::Dropped {
            at: self.now,
            node,
            reason,
        };
        reason.count_into(&mut self.drops);
        self.log.push(LogRecord::Drop {
            t: self.now,
            packet,
            node,
            reason,
        });
    }

    fn on_gen(&mut self, node: NodeId) {
        let i = node.index();
        self.settle(node);
        if !self.alive[i] {
            return;
        }
        let id = self.packets.len() as u64;
        self.packets.push(Packet {
            id,
            src: node,
            created_at: self.now,
            size: self.cfg.sizes.data,
            hops_taken: 0,
            per_hop_delays: Vec::new(),
            status: PacketStatus::InFlight,
        });
        self.sent += 1;
        self.log.push(LogRecord::Gen {
            t: self.now,
            packet: id,
            node,
        });

        self.gen_count[i] += 1;
        let next = self.gen_offset[i] + self.gen_count[i] as f64 / self.cfg.lambda;
        if next < self.cfg.sim_time {
            self.events.schedule(next, EventKind::GenPacket { node });
        }
        self.enqueue(node, id);
    }

    fn enqueue(&mut self, node: NodeId, packet: u64) {
        let qp = QueuedPacket {
            packet,
            arrived_at: self.now,
            ready_at: self.now + self.cfg.proc_delay,
        };
        match self.nodes[node.index()].queue.push(qp) {
            Ok(()) => self.kick(node),
            Err(_) => self.drop_packet(packet, node, DropReason::BufferFull),
        }
    }

    /// Schedules the next transmission if the radio has work and none is
    /// pending.
    fn kick(&mut self, node: NodeId) {
        let i = node.index();
        if self.tx_scheduled[i] || !self.alive[i] {
            return;
        }
        if let Some(front) = self.nodes[i].queue.front() {
            let at = front.ready_at.max(self.radio_free_at[i]);
            self.tx_scheduled[i] = true;
            self.events.schedule(at, EventKind::TxStart { node });
        }
    }

    fn on_tx_start(&mut self, node: NodeId) {
        let i = node.index();
        self.tx_scheduled[i] = false;
        self.settle(node);
        if !self.alive[i] {
            return;
        }
        let Some(qp) = self.nodes[i].queue.pop() else {
            return;
        };
        let alive = &self.alive;
        let choice = protocol::choose_parent(
            &mut self.nodes[i],
            self.cfg.variant(),
            |p| alive[p.index()],
            &mut self.automaton_rng,
        );
        let parent = match choice {
            Ok(p) => p,
            Err(_) => {
                self.drop_packet(qp.packet, node, DropReason::NoRoute);
                self.kick(node);
                return;
            }
        };
        let link = *self
            .topo
            .link_between(node, parent)
            .expect("parents are always neighbours");
        let size = self.packets[qp.packet as usize].size;
        let trans = self.cfg.airtime(size);
        let bits = f64::from(size) * 8.0;
        self.log.push(LogRecord::Tx {
            t: self.now,
            packet: qp.packet,
            from: node,
            to: parent,
        });

        let tau = self.cfg.ti_tau;
        self.sent_bits[i].add(self.now, tau, bits);
        self.child_bits[parent.index()]
            .entry(node)
            .or_default()
            .add(self.now, tau, bits);

        let sender_ok = self.charge(node, RadioState::Tx, trans);
        self.charge(parent, RadioState::Rx, trans);
        self.radio_free_at[i] = self.now + trans;
        if !sender_ok {
            self.drop_packet(qp.packet, node, DropReason::NodeDead);
            return;
        }
        let delay = DelayBreakdown {
            proc: qp.ready_at - qp.arrived_at,
            queue: self.now - qp.ready_at,
            trans,
            prop: link.prop_delay,
        };
        self.events.schedule(
            self.now + trans + link.prop_delay,
            EventKind::RxComplete {
                packet: qp.packet,
                from: node,
                to: parent,
                lqi: link.lqi,
                delay,
            },
        );
        self.kick(node);
    }

    fn loss_probability(&self, lqi: f64) -> f64 {
        self.cfg.loss_scale * (1.0 - lqi)
    }

    fn on_rx_complete(
        &mut self,
        packet: u64,
        from: NodeId,
        to: NodeId,
        lqi: f64,
        delay: DelayBreakdown,
    ) -> Result<(), SimError> {
        let j = to.index();
        self.settle(to);
        if !self.alive[j] {
            self.drop_packet(packet, to, DropReason::NodeDead);
            return Ok(());
        }
        let u: f64 = self.loss_rng.random();
        if u < self.loss_probability(lqi) {
            self.drop_packet(packet, to, DropReason::LinkLoss);
            return Ok(());
        }
        let to_sink = to == NodeId::SINK;
        if !to_sink && self.nodes[j].queue.is_full() {
            self.drop_packet(packet, to, DropReason::BufferFull);
            return Ok(());
        }

        let p = &mut self.packets[packet as usize];
        p.per_hop_delays.push(delay);
        p.hops_taken += 1;
        let bits = f64::from(p.size) * 8.0;
        self.log.push(LogRecord::Rx {
            t: self.now,
            packet,
            from,
            to,
            bits,
            lqi,
            delay,
        });
        self.rx_totals[j].entry(from).or_insert((0.0, lqi)).0 += bits;
        self.window_bits[j] += bits;

        if to_sink {
            let p = &mut self.packets[packet as usize];
            p.status = PacketStatus::Delivered { at: self.now };
            let latency = p.latency();
            self.latencies.push(latency);
            self.delivered += 1;
            self.log.push(LogRecord::Deliver {
                t: self.now,
                packet,
            });
        } else {
            self.enqueue(to, packet);
        }

        if self.cfg.variant().learns() {
            let ti = self.traffic_index(to)?;
            let batch = self.cfg.protocol.batch_p;
            if let Some(ack) = self.batchers[j].on_data_received(to, from, ti, batch) {
                self.send_ack(ack);
            }
        }
        Ok(())
    }

    /// Load of `parent` relative to the channel capacity.
    fn traffic_index(&self, parent: NodeId) -> Result<f64, SimError> {
        let tau = self.cfg.ti_tau;
        let contributions: Vec<ChildContribution> = self.child_bits[parent.index()]
            .iter()
            .map(|(child, to_parent)| {
                let total = self.sent_bits[child.index()].value_at(self.now, tau);
                let theta = if total > 0.0 {
                    (to_parent.value_at(self.now, tau) / total).min(1.0)
                } else {
                    0.0
                };
                ChildContribution {
                    child_id: child.0,
                    theta,
                    traffic: total / tau,
                }
            })
            .collect();
        Ok(metrics::traffic_index(&contributions, self.cfg.data_rate)?)
    }

    // ----- feedback -----

    fn send_ack(&mut self, ack: AckPacket) {
        let air = self.cfg.airtime(self.cfg.sizes.dao_ack);
        if !self.charge(ack.sender, RadioState::Tx, air) && ack.sender != NodeId::SINK {
            return;
        }
        self.charge(ack.child, RadioState::Rx, air);
        let link = *self
            .topo
            .link_between(ack.sender, ack.child)
            .expect("acks travel over existing links");
        let u: f64 = self.loss_rng.random();
        let lost = u < self.loss_probability(link.lqi);
        self.diag.acks_sent += 1;
        self.log.push(LogRecord::Ack {
            t: self.now,
            from: ack.sender,
            to: ack.child,
            traffic_index: ack.traffic_index,
            lost,
        });
        if lost {
            self.diag.acks_lost += 1;
        } else {
            self.events
                .schedule(self.now + air + link.prop_delay, EventKind::AckDelivery { ack });
        }
    }

    fn on_ack(&mut self, ack: AckPacket) -> Result<(), SimError> {
        let child = ack.child;
        self.settle(child);
        if !self.alive[child.index()] {
            return Ok(());
        }
        let max_hop = self.dodag.max_hop;
        let Some(table) = self.nodes[child.index()].routing.as_mut() else {
            self.diag.stale_acks += 1;
            return Ok(());
        };
        match on_ack_received(table, &ack, max_hop, &self.cfg.protocol.automaton) {
            Ok(class) => {
                self.diag.automaton_updates += 1;
                if class.degenerate {
                    self.diag.degenerate_steps += 1;
                }
                self.log.push(LogRecord::AutomatonUpdate {
                    t: self.now,
                    node: child,
                    parent: ack.sender,
                    feedback: class.kind,
                    step: class.step,
                    probs: table.automaton().entries().to_vec(),
                });
                Ok(())
            }
            Err(ProtocolError::UnknownParent(_)) => {
                self.diag.stale_acks += 1;
                Ok(())
            }
            Err(e) => Err(SimError::Config(e.to_string())),
        }
    }

    // ----- control plane -----

    fn on_dio_round(&mut self, repair: bool) -> Result<(), SimError> {
        if repair {
            self.repair_pending = false;
            self.diag.repair_rounds += 1;
        } else {
            self.diag.dio_rounds += 1;
        }
        for node in self.sensors() {
            self.settle(node);
        }
        let snapshot = self.alive.clone();
        self.dodag = compute_hop_counts(&self.topo, &snapshot);
        for (node, hop) in self.nodes.iter_mut().zip(&self.dodag.hop_counts) {
            node.hop_count = *hop;
        }
        let mut order: Vec<(u32, NodeId)> = self
            .dodag
            .hop_counts
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|h| (h, NodeId(i as u32))))
            .collect();
        order.sort();

        let tis: Vec<f64> = (0..self.nodes.len() as u32)
            .map(|i| self.traffic_index(NodeId(i)))
            .collect::<Result<_, _>>()?;

        let air = self.cfg.airtime(self.cfg.sizes.dio);
        for &(_, sender) in &order {
            self.charge(sender, RadioState::Tx, air);
            let neighbours: Vec<NodeId> = self.topo.neighbors(sender).iter().map(|(n, _)| *n).collect();
            for nb in neighbours {
                self.charge(nb, RadioState::Rx, air);
            }
        }

        for &(hop, node) in &order {
            if node == NodeId::SINK || !self.alive[node.index()] {
                continue;
            }
            let dios: Vec<_> = self
                .topo
                .neighbors(node)
                .iter()
                .filter(|(nb, _)| snapshot[nb.index()])
                .filter_map(|(nb, _)| make_dio(&self.nodes[nb.index()], tis[nb.index()]))
                .collect();
            let senders: Vec<NodeId> = eligible_dios(hop, &dios).iter().map(|d| d.sender).collect();
            let state = &mut self.nodes[node.index()];
            match state.routing.as_mut() {
                Some(table) if table.candidates() == senders.as_slice() => table.refresh(&dios),
                // every lower-hop neighbour died during this round; the
                // repair round it triggered rebuilds the route
                _ if senders.is_empty() => state.routing = None,
                _ => {
                    let table = form_parent_set(hop, &dios, &self.cfg.protocol)
                        .map_err(|e| SimError::Config(e.to_string()))?;
                    self.log.push(LogRecord::ParentSet {
                        t: self.now,
                        node,
                        parents: table.entries().iter().map(|e| e.parent_id).collect(),
                        probs: table.automaton().entries().to_vec(),
                    });
                    state.routing = Some(table);
                    self.diag.parent_sets_formed += 1;
                }
            }
        }
        for node in self.nodes.iter_mut().skip(1) {
            if node.hop_count.is_none() {
                node.routing = None;
            }
        }
        let reachable = order.len();
        self.log.push(LogRecord::DioRound {
            t: self.now,
            max_hop: self.dodag.max_hop,
            reachable,
        });
        if !repair {
            let next = self.now + self.cfg.protocol.dio_period;
            if next < self.cfg.sim_time {
                self.events.schedule(next, EventKind::DioRound { repair: false });
            }
        }
        Ok(())
    }

    // ----- sampling and teardown -----

    fn take_sample(&mut self) {
        for node in self.sensors() {
            self.settle(node);
        }
        let width = self.now - self.window_start;
        let sample = Sample {
            t: self.now,
            throughput: self.window_bits[1..]
                .iter()
                .map(|b| if width > 0.0 { b / width } else { 0.0 })
                .collect(),
            energy: self.nodes[1..]
                .iter()
                .map(|n| n.energy.as_ref().map_or(0.0, EnergyAccount::consumed))
                .collect(),
            alive: self.alive[1..].to_vec(),
        };
        self.samples.push(sample);
        self.window_bits.iter_mut().for_each(|b| *b = 0.0);
        self.window_start = self.now;
    }

    fn on_sample(&mut self) {
        self.take_sample();
        let next = self.now + self.cfg.metric_dt;
        if next < self.cfg.sim_time {
            self.events.schedule(next, EventKind::MetricSample);
        }
    }

    fn on_end(&mut self) {
        self.take_sample();
        let records = self.log.len() as u64;
        self.log.push(LogRecord::End {
            t: self.now,
            records,
        });
    }

    fn finish(self) -> Result<RunOutput, SimError> {
        let in_flight = self
            .packets
            .iter()
            .filter(|p| p.status == PacketStatus::InFlight)
            .count() as u64;
        let sensors = &self.nodes[1..];
        let inputs = ReportInputs {
            sent: self.sent,
            delivered: self.delivered,
            in_flight,
            drops: self.drops,
            latencies: self.latencies,
            rx: self.rx_totals[1..].to_vec(),
            ledgers: sensors
                .iter()
                .map(|n| n.energy.as_ref().expect("sensors have batteries").ledger.clone())
                .collect(),
            deaths: sensors
                .iter()
                .map(|n| n.energy.as_ref().and_then(|e| e.death_time))
                .collect(),
            sim_time: self.cfg.sim_time,
            lifetime_cap: self.cfg.lifetime_cap(),
        };
        let report = inputs.finish()?;
        Ok(RunOutput {
            report,
            log: self.log,
            samples: self.samples,
            topology: self.topo,
            packets: self.packets,
            accounts: self.nodes.into_iter().map(|n| n.energy).collect(),
            diagnostics: self.diag,
        })
    }
}
