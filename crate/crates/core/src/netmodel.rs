//! Static network model: placement, unit-disk links, hop counts to the
//! sink and per-node energy accounting.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{EnergyLedger, PowerProfile, RadioState};
use crate::protocol::RoutingTable;

/// Propagation speed used for link delays, m/s.
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Attempts allowed when drawing one connected sensor position.
const MAX_PLACEMENT_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const SINK: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn center(&self) -> Position {
        Position {
            x: self.width / 2.0,
            y: self.height / 2.0,
        }
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sink,
    Sensor,
}

/// How sensor positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Uniform over the area, conditioned on landing within radio range of
    /// an already placed node. Always yields a connected topology.
    Connected,
    /// Independent uniform positions; may be disconnected.
    Uniform,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("need at least 2 nodes (sink plus one sensor), got {0}")]
    TooFewNodes(usize),
    #[error("area and radio range must be positive")]
    InvalidGeometry,
    #[error("could not place node {0} within radio range of the network")]
    PlacementFailed(u32),
    #[error("nodes unreachable from the sink: {0:?}")]
    Disconnected(Vec<NodeId>),
}

/// Sink at the centre of `area` (node 0), then `n - 1` random sensors.
pub fn place_nodes<R: Rng + ?Sized>(
    n: usize,
    area: Area,
    radio_range: f64,
    placement: Placement,
    rng: &mut R,
) -> Result<Vec<Position>, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes(n));
    }
    if !(area.width > 0.0 && area.height > 0.0 && radio_range > 0.0) {
        return Err(TopologyError::InvalidGeometry);
    }
    let mut positions = Vec::with_capacity(n);
    positions.push(area.center());
    let draw = |rng: &mut R| Position {
        x: rng.random::<f64>() * area.width,
        y: rng.random::<f64>() * area.height,
    };
    for id in 1..n {
        let p = match placement {
            Placement::Uniform => draw(rng),
            Placement::Connected => {
                let mut attempts = 0;
                loop {
                    let p = draw(rng);
                    if positions.iter().any(|q| q.distance(&p) <= radio_range) {
                        break p;
                    }
                    attempts += 1;
                    if attempts >= MAX_PLACEMENT_ATTEMPTS {
                        return Err(TopologyError::PlacementFailed(id as u32));
                    }
                }
            }
        };
        positions.push(p);
    }
    Ok(positions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub distance: f64,
    pub lqi: f64,
    pub prop_delay: f64,
}

/// Link quality as a function of distance: `1 - (d / range)^2`.
pub fn lqi_for_distance(distance: f64, radio_range: f64) -> f64 {
    let r = distance / radio_range;
    (1.0 - r * r).clamp(0.0, 1.0)
}

/// Positions plus the unit-disk link set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub positions: Vec<Position>,
    pub links: Vec<Link>,
    /// Per node: (neighbour, index into `links`), sorted by neighbour id.
    #[serde(skip)]
    adjacency: Vec<Vec<(NodeId, usize)>>,
}

impl Topology {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[node.index()]
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.adjacency[a.index()]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, i)| &self.links[*i])
    }

    /// Nodes with no path to the sink, ascending.
    pub fn unreachable(&self) -> Vec<NodeId> {
        let alive = vec![true; self.len()];
        let dodag = compute_hop_counts(self, &alive);
        (0..self.len() as u32)
            .map(NodeId)
            .filter(|n| dodag.hop(*n).is_none())
            .collect()
    }
}

/// Links every pair within `radio_range`. `lqi_override` replaces the
/// geometric link quality on every link. Disconnected layouts are rejected.
pub fn build_links(
    positions: &[Position],
    radio_range: f64,
    lqi_override: Option<f64>,
) -> Result<Topology, TopologyError> {
    let topo = build_links_unchecked(positions, radio_range, lqi_override);
    let unreachable = topo.unreachable();
    if unreachable.is_empty() {
        Ok(topo)
    } else {
        Err(TopologyError::Disconnected(unreachable))
    }
}

pub fn build_links_unchecked(
    positions: &[Position],
    radio_range: f64,
    lqi_override: Option<f64>,
) -> Topology {
    let n = positions.len();
    let mut links = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            let distance = positions[a].distance(&positions[b]);
            if distance <= radio_range {
                let idx = links.len();
                links.push(Link {
                    a: NodeId(a as u32),
                    b: NodeId(b as u32),
                    distance,
                    lqi: lqi_override.unwrap_or_else(|| lqi_for_distance(distance, radio_range)),
                    prop_delay: distance / SPEED_OF_LIGHT,
                });
                adjacency[a].push((NodeId(b as u32), idx));
                adjacency[b].push((NodeId(a as u32), idx));
            }
        }
    }
    Topology {
        positions: positions.to_vec(),
        links,
        adjacency,
    }
}

/// Minimum hop counts to the sink over alive nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DodagState {
    pub hop_counts: Vec<Option<u32>>,
    /// Largest hop count among reachable alive nodes.
    pub max_hop: u32,
}

impl DodagState {
    pub fn hop(&self, node: NodeId) -> Option<u32> {
        self.hop_counts.get(node.index()).copied().flatten()
    }
}

/// Breadth-first search from the sink through alive nodes. Dead and
/// unreachable nodes get `None` and do not count toward `max_hop`.
pub fn compute_hop_counts(topology: &Topology, alive: &[bool]) -> DodagState {
    let mut hop_counts = vec![None; topology.len()];
    let mut max_hop = 0;
    if topology.is_empty() || !alive[0] {
        return DodagState { hop_counts, max_hop };
    }
    hop_counts[0] = Some(0);
    let mut frontier = VecDeque::from([NodeId::SINK]);
    while let Some(node) = frontier.pop_front() {
        let h = hop_counts[node.index()].unwrap_or(0);
        for (next, _) in topology.neighbors(node) {
            if alive[next.index()] && hop_counts[next.index()].is_none() {
                hop_counts[next.index()] = Some(h + 1);
                max_hop = max_hop.max(h + 1);
                frontier.push_back(*next);
            }
        }
    }
    DodagState { hop_counts, max_hop }
}

/// Seconds charged to one radio state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub state: RadioState,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyOutcome {
    pub charges: Vec<Charge>,
    /// Set when the reserve hit zero during this call.
    pub died_at: Option<f64>,
}

/// Battery of one sensor.
///
/// Activities are charged back to back on a single accounting cursor; the
/// gap between the cursor and the next activity is split between idle and
/// sleep by `sleep_ratio`. Nothing is charged past `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAccount {
    pub initial: f64,
    pub remaining: f64,
    pub ledger: EnergyLedger,
    pub accounted_until: f64,
    pub death_time: Option<f64>,
    sleep_ratio: f64,
    horizon: f64,
}

impl EnergyAccount {
    pub fn new(initial: f64, power: PowerProfile, sleep_ratio: f64, horizon: f64) -> Self {
        Self {
            initial,
            remaining: initial,
            ledger: EnergyLedger {
                power,
                time: Default::default(),
            },
            accounted_until: 0.0,
            death_time: None,
            sleep_ratio,
            horizon,
        }
    }

    pub fn alive(&self) -> bool {
        self.death_time.is_none()
    }

    pub fn consumed(&self) -> f64 {
        crate::metrics::energy_total(&self.ledger)
    }

    /// Charges the idle/sleep gap up to `t`.
    pub fn settle(&mut self, t: f64) -> EnergyOutcome {
        let mut out = EnergyOutcome::default();
        self.settle_into(t, &mut out);
        out
    }

    fn settle_into(&mut self, t: f64, out: &mut EnergyOutcome) {
        let t = t.min(self.horizon);
        if !self.alive() || t <= self.accounted_until {
            return;
        }
        let p = &self.ledger.power;
        let full_gap = t - self.accounted_until;
        let (idle_frac, sleep_frac) = (1.0 - self.sleep_ratio, self.sleep_ratio);
        let draw = idle_frac * p.idle + sleep_frac * p.sleep;
        let (gap, depleted) = if draw > 0.0 && draw * full_gap >= self.remaining {
            (self.remaining / draw, true)
        } else {
            (full_gap, false)
        };
        for (state, frac) in [(RadioState::Idle, idle_frac), (RadioState::Sleep, sleep_frac)] {
            if frac > 0.0 {
                let seconds = gap * frac;
                self.ledger.time.add(state, seconds);
                self.remaining -= self.ledger.power.draw(state) * seconds;
                out.charges.push(Charge { state, seconds });
            }
        }
        self.accounted_until += gap;
        if depleted {
            self.die(out);
        } else {
            self.remaining = self.remaining.max(0.0);
        }
    }

    /// Charges `duration` seconds in `state` starting no earlier than
    /// `start`. The gap before it is settled first. If the reserve runs out
    /// mid-activity, only the affordable part is charged and the node dies
    /// at that instant.
    pub fn charge(&mut self, state: RadioState, start: f64, duration: f64) -> EnergyOutcome {
        let mut out = EnergyOutcome::default();
        self.settle_into(start, &mut out);
        if !self.alive() {
            return out;
        }
        let begin = self.accounted_until.max(start);
        let mut seconds = duration.min(self.horizon - begin).max(0.0);
        let power = self.ledger.power.draw(state);
        let mut depleted = false;
        if power > 0.0 && power * seconds >= self.remaining {
            seconds = self.remaining / power;
            depleted = true;
        }
        if seconds > 0.0 || depleted {
            self.ledger.time.add(state, seconds);
            self.remaining -= power * seconds;
            out.charges.push(Charge { state, seconds });
        }
        self.accounted_until = begin + seconds;
        if depleted {
            self.die(&mut out);
        }
        out
    }

    /// Charges `duration` in `state` at the accounting cursor.
    pub fn consume(&mut self, state: RadioState, duration: f64) -> EnergyOutcome {
        let at = self.accounted_until;
        self.charge(state, at, duration)
    }

    fn die(&mut self, out: &mut EnergyOutcome) {
        self.remaining = 0.0;
        self.death_time = Some(self.accounted_until);
        out.died_at = self.death_time;
    }
}

/// Drop-tail FIFO with a packet-count bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedQueue<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    /// Hands the item back when the queue is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.is_full() {
            return Err(item);
        }
        self.items.push_back(item);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn drain(&mut self) -> impl Iterator<Item = T> + '_ {
        self.items.drain(..)
    }
}

/// A packet waiting in a node's output queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuedPacket {
    pub packet: u64,
    pub arrived_at: f64,
    /// Earliest transmission start: arrival plus processing delay.
    pub ready_at: f64,
}

/// Mutable state of one node during a run.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Position,
    pub role: Role,
    /// `None` for the mains-powered sink.
    pub energy: Option<EnergyAccount>,
    pub queue: BoundedQueue<QueuedPacket>,
    pub hop_count: Option<u32>,
    pub routing: Option<RoutingTable>,
    /// Data packets sent to each parent, toward its Ack batch.
    pub tx_batch_counters: BTreeMap<NodeId, u64>,
}

impl NodeState {
    pub fn alive(&self) -> bool {
        self.energy.as_ref().is_none_or(EnergyAccount::alive)
    }

    pub fn is_sink(&self) -> bool {
        self.role == Role::Sink
    }
}
