//! Load-aware parent selection.
//!
//! Parents advertise their hop count and traffic index in DIO indicators.
//! Each child keeps 1 to 5 candidate parents ranked by [`selection_probabilities`]
//! and a learning automaton over them. Parents acknowledge every `batch_p`
//! data packets from a child with their current traffic index; the child
//! classifies that Ack as reward, penalty or neutral and updates its
//! automaton with dynamically computed steps.
//!
//! Two baselines share the same tables: `minhop` always takes the
//! lowest-hop parent and `random` picks uniformly. Neither learns.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::{compute_alpha, compute_beta, AutomatonConfig, AutomatonError, ProbabilityVector};
use crate::netmodel::{NodeId, NodeState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("no DIO from a lower-hop sender")]
    NoEligibleParent,
    #[error("no alive parent in routing table")]
    NoRoute,
    #[error("ack from {0}, which is not in the routing table")]
    UnknownParent(NodeId),
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Lalarpl,
    Minhop,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lalarpl, Variant::Minhop, Variant::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lalarpl => "lalarpl",
            Variant::Minhop => "minhop",
            Variant::Random => "random",
        }
    }

    pub fn learns(self) -> bool {
        self == Variant::Lalarpl
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lalarpl" => Ok(Variant::Lalarpl),
            "minhop" => Ok(Variant::Minhop),
            "random" => Ok(Variant::Random),
            other => Err(format!(
                "unknown variant `{other}` (expected lalarpl, minhop or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Weight of the hop term against the traffic term when ranking parents.
    pub zeta: f64,
    /// Data packets per Ack.
    pub batch_p: u32,
    pub min_parents: usize,
    pub max_parents: usize,
    pub automaton: AutomatonConfig,
    pub variant: Variant,
    /// Rank parents by inverse traffic index instead of traffic index.
    pub invert_traffic_term: bool,
    /// Seconds between DIO rounds.
    pub dio_period: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            batch_p: 5,
            min_parents: 2,
            max_parents: 5,
            automaton: AutomatonConfig::default(),
            variant: Variant::Lalarpl,
            invert_traffic_term: false,
            dio_period: 30.0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad(format!("zeta must be in [0, 1], got {}", self.zeta));
        }
        if self.batch_p < 1 {
            return bad("batch_p must be at least 1".into());
        }
        if self.min_parents < 1 || self.min_parents > self.max_parents {
            return bad(format!(
                "need 1 <= min_parents <= max_parents, got {} and {}",
                self.min_parents, self.max_parents
            ));
        }
        if !(self.dio_period > 0.0) {
            return bad(format!("dio_period must be positive, got {}", self.dio_period));
        }
        self.automaton.validate()?;
        Ok(())
    }
}

/// Advertisement broadcast by a prospective parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DioIndicator {
    pub sender: NodeId,
    pub min_hops_to_root: u32,
    pub traffic_index: f64,
}

/// Builds the node's DIO indicator. Dead or detached nodes stay silent.
pub fn make_dio(node: &NodeState, traffic_index: f64) -> Option<DioIndicator> {
    if !node.alive() {
        return None;
    }
    Some(DioIndicator {
        sender: node.id,
        min_hops_to_root: node.hop_count?,
        traffic_index,
    })
}

/// Acknowledgement for a batch of data packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AckPacket {
    pub sender: NodeId,
    pub child: NodeId,
    pub traffic_index: f64,
    pub covers: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Reward,
    Penalty,
    Neutral,
}

/// A classified Ack with the step that was applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackClass {
    pub kind: FeedbackKind,
    /// `None` exactly when `kind` is neutral.
    pub step: Option<f64>,
    /// The step ratio had a zero denominator.
    #[serde(skip)]
    pub degenerate: bool,
}

/// Per-candidate selection probability mixing inverse hop count and traffic
/// index with weight `zeta`. `candidates` are `(num_hop, traffic_index)`
/// with `num_hop >= 1`.
///
/// A zero traffic sum makes the traffic term uniform. With `invert`, the
/// traffic term uses `1 / T` weights and zero-traffic candidates share it.
pub fn selection_probabilities(candidates: &[(u32, f64)], zeta: f64, invert: bool) -> Vec<f64> {
    let n = candidates.len();
    if n == 0 {
        return Vec::new();
    }
    let uniform = 1.0 / n as f64;
    let inv_hops: Vec<f64> = candidates.iter().map(|(h, _)| 1.0 / f64::from((*h).max(1))).collect();
    let hop_sum: f64 = inv_hops.iter().sum();

    let traffic: Vec<f64> = if invert {
        let zeros = candidates.iter().filter(|(_, t)| *t <= 0.0).count();
        if zeros > 0 {
            candidates
                .iter()
                .map(|(_, t)| if *t <= 0.0 { 1.0 / zeros as f64 } else { 0.0 })
                .collect()
        } else {
            let inv: Vec<f64> = candidates.iter().map(|(_, t)| 1.0 / t).collect();
            let s: f64 = inv.iter().sum();
            inv.iter().map(|w| w / s).collect()
        }
    } else {
        let s: f64 = candidates.iter().map(|(_, t)| t).sum();
        if s > 0.0 {
            candidates.iter().map(|(_, t)| t / s).collect()
        } else {
            vec![uniform; n]
        }
    };

    inv_hops
        .iter()
        .zip(&traffic)
        .map(|(h, t)| zeta * (h / hop_sum) + (1.0 - zeta) * t)
        .collect()
}

/// One candidate parent of a child.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParentEntry {
    pub parent_id: NodeId,
    pub selection_probability: f64,
    pub traffic_index: f64,
    /// Parent's hop count to the root.
    pub hop_count: u32,
}

/// A child's parent set plus the automaton over it. Entry `i` corresponds
/// to action `i` of the automaton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    entries: Vec<ParentEntry>,
    automaton: ProbabilityVector,
    /// Eligible senders the table was formed from, ascending.
    candidates: Vec<NodeId>,
}

impl RoutingTable {
    pub fn entries(&self) -> &[ParentEntry] {
        &self.entries
    }

    pub fn automaton(&self) -> &ProbabilityVector {
        &self.automaton
    }

    pub fn candidates(&self) -> &[NodeId] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, parent: NodeId) -> Option<usize> {
        self.entries.iter().position(|e| e.parent_id == parent)
    }

    pub fn min_hops(&self) -> u32 {
        self.entries.iter().map(|e| e.hop_count).min().unwrap_or(0)
    }

    /// Updates advertised hop counts and traffic indices without touching
    /// the automaton.
    pub fn refresh(&mut self, dios: &[DioIndicator]) {
        for dio in dios {
            if let Some(i) = self.position(dio.sender) {
                self.entries[i].traffic_index = dio.traffic_index;
                self.entries[i].hop_count = dio.min_hops_to_root;
            }
        }
    }

    fn sync_probabilities(&mut self) {
        for (e, p) in self.entries.iter_mut().zip(self.automaton.entries()) {
            e.selection_probability = *p;
        }
    }

    /// Picks a parent among those accepted by `alive` according to
    /// `variant`. `lalarpl` and `random` consume exactly one draw; `minhop`
    /// consumes none.
    pub fn choose<R, F>(&self, variant: Variant, alive: F, rng: &mut R) -> Option<NodeId>
    where
        R: Rng + ?Sized,
        F: Fn(NodeId) -> bool,
    {
        match variant {
            Variant::Lalarpl => self
                .automaton
                .select_among(|i| alive(self.entries[i].parent_id), rng)
                .map(|i| self.entries[i].parent_id),
            Variant::Minhop => self
                .entries
                .iter()
                .filter(|e| alive(e.parent_id))
                .min_by_key(|e| (e.hop_count, e.parent_id))
                .map(|e| e.parent_id),
            Variant::Random => {
                let u: f64 = rng.random();
                let live: Vec<NodeId> = self
                    .entries
                    .iter()
                    .map(|e| e.parent_id)
                    .filter(|p| alive(*p))
                    .collect();
                if live.is_empty() {
                    return None;
                }
                let k = ((u * live.len() as f64) as usize).min(live.len() - 1);
                Some(live[k])
            }
        }
    }
}

/// Eligible senders (hop strictly below `own_hop`), deduplicated by sender
/// keeping the last DIO heard, in ascending sender order.
pub fn eligible_dios(own_hop: u32, dios: &[DioIndicator]) -> Vec<DioIndicator> {
    let mut by_sender = BTreeMap::new();
    for dio in dios.iter().filter(|d| d.min_hops_to_root < own_hop) {
        by_sender.insert(dio.sender, *dio);
    }
    by_sender.into_values().collect()
}

/// Builds a parent set from the DIOs a node at `own_hop` received.
///
/// A single eligible sender becomes the only parent with probability 1.
/// Otherwise the top `min(max_parents, N)` candidates by selection
/// probability are kept (ties to the lower id), their probabilities
/// renormalized and used to seed the automaton.
pub fn form_parent_set(
    own_hop: u32,
    dios: &[DioIndicator],
    cfg: &ProtocolConfig,
) -> Result<RoutingTable, ProtocolError> {
    let eligible = eligible_dios(own_hop, dios);
    if eligible.is_empty() {
        return Err(ProtocolError::NoEligibleParent);
    }
    let candidates: Vec<NodeId> = eligible.iter().map(|d| d.sender).collect();
    let scored: Vec<(u32, f64)> = eligible
        .iter()
        .map(|d| (d.min_hops_to_root + 1, d.traffic_index))
        .collect();
    let probs = selection_probabilities(&scored, cfg.zeta, cfg.invert_traffic_term);

    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .total_cmp(&probs[a])
            .then(eligible[a].sender.cmp(&eligible[b].sender))
    });
    let keep = cfg.max_parents.min(eligible.len());
    order.truncate(keep);

    let weights: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    let automaton = if weights.iter().sum::<f64>() > 0.0 {
        ProbabilityVector::from_weights(weights)?
    } else {
        ProbabilityVector::uniform(keep)?
    };
    let entries = order
        .iter()
        .map(|&i| ParentEntry {
            parent_id: eligible[i].sender,
            selection_probability: 0.0,
            traffic_index: eligible[i].traffic_index,
            hop_count: eligible[i].min_hops_to_root,
        })
        .collect();
    let mut table = RoutingTable {
        entries,
        automaton,
        candidates,
    };
    table.sync_probabilities();
    Ok(table)
}

/// Picks the next hop for `node` and counts it toward that parent's Ack
/// batch.
pub fn choose_parent<R, F>(
    node: &mut NodeState,
    variant: Variant,
    alive: F,
    rng: &mut R,
) -> Result<NodeId, ProtocolError>
where
    R: Rng + ?Sized,
    F: Fn(NodeId) -> bool,
{
    let table = node.routing.as_ref().ok_or(ProtocolError::NoRoute)?;
    let parent = table
        .choose(variant, alive, rng)
        .ok_or(ProtocolError::NoRoute)?;
    *node.tx_batch_counters.entry(parent).or_insert(0) += 1;
    Ok(parent)
}

/// Non-learning parent choice for the baselines.
pub fn baseline_choose<R, F>(
    variant: Variant,
    node: &mut NodeState,
    alive: F,
    rng: &mut R,
) -> Result<NodeId, ProtocolError>
where
    R: Rng + ?Sized,
    F: Fn(NodeId) -> bool,
{
    debug_assert!(!variant.learns());
    choose_parent(node, variant, alive, rng)
}

/// Parent-side Ack batching: counts data packets per child.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AckBatcher {
    received: BTreeMap<NodeId, u64>,
    acks_sent: BTreeMap<NodeId, u64>,
}

impl AckBatcher {
    /// Registers one accepted data packet from `child`; every `batch_p`-th
    /// one yields an Ack carrying `traffic_index`.
    pub fn on_data_received(
        &mut self,
        parent: NodeId,
        child: NodeId,
        traffic_index: f64,
        batch_p: u32,
    ) -> Option<AckPacket> {
        let count = self.received.entry(child).or_insert(0);
        *count += 1;
        if *count % u64::from(batch_p) == 0 {
            *self.acks_sent.entry(child).or_insert(0) += 1;
            Some(AckPacket {
                sender: parent,
                child,
                traffic_index,
                covers: batch_p,
            })
        } else {
            None
        }
    }

    pub fn received_from(&self, child: NodeId) -> u64 {
        self.received.get(&child).copied().unwrap_or(0)
    }

    pub fn acks_sent_to(&self, child: NodeId) -> u64 {
        self.acks_sent.get(&child).copied().unwrap_or(0)
    }
}

/// Reward when the sender's traffic index is under half the others'
/// average, or under 80% of it while the sender has the fewest hops in the
/// set. Penalty when it exceeds the average. Neutral otherwise, and always
/// for single-parent sets.
pub fn classify_feedback(
    ack_ti: f64,
    other_parent_tis: &[f64],
    ack_sender_hops: u32,
    table_hops: &[u32],
) -> FeedbackKind {
    if other_parent_tis.is_empty() {
        return FeedbackKind::Neutral;
    }
    let avg = other_parent_tis.iter().sum::<f64>() / other_parent_tis.len() as f64;
    let min_hops = table_hops.iter().copied().min().unwrap_or(ack_sender_hops);
    if ack_ti < 0.5 * avg {
        FeedbackKind::Reward
    } else if ack_ti < 0.8 * avg && ack_sender_hops == min_hops {
        FeedbackKind::Reward
    } else if ack_ti > avg {
        FeedbackKind::Penalty
    } else {
        FeedbackKind::Neutral
    }
}

/// Applies an Ack to the child's table: records the sender's traffic index,
/// classifies the feedback and updates the automaton with the computed step.
pub fn on_ack_received(
    table: &mut RoutingTable,
    ack: &AckPacket,
    max_hop: u32,
    cfg: &AutomatonConfig,
) -> Result<FeedbackClass, ProtocolError> {
    let idx = table
        .position(ack.sender)
        .ok_or(ProtocolError::UnknownParent(ack.sender))?;
    table.entries[idx].traffic_index = ack.traffic_index;

    let sender_hops = table.entries[idx].hop_count;
    let others: Vec<f64> = table
        .entries
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != idx)
        .map(|(_, e)| e.traffic_index)
        .collect();
    let hops: Vec<u32> = table.entries.iter().map(|e| e.hop_count).collect();
    let kind = classify_feedback(ack.traffic_index, &others, sender_hops, &hops);

    let class = match kind {
        FeedbackKind::Neutral => FeedbackClass {
            kind,
            step: None,
            degenerate: false,
        },
        FeedbackKind::Reward => {
            let max_ti = table
                .entries
                .iter()
                .map(|e| e.traffic_index)
                .fold(0.0, f64::max);
            let step = compute_alpha(
                ack.traffic_index,
                f64::from(sender_hops),
                f64::from(max_hop),
                max_ti,
                cfg,
            );
            table.automaton.reward(idx, step.value)?;
            FeedbackClass {
                kind,
                step: Some(step.value),
                degenerate: step.zero_denominator,
            }
        }
        FeedbackKind::Penalty => {
            let avg = others.iter().sum::<f64>() / others.len() as f64;
            let step = compute_beta(
                avg,
                ack.traffic_index,
                f64::from(sender_hops),
                f64::from(max_hop),
                cfg,
            );
            table.automaton.penalize(idx, step.value)?;
            FeedbackClass {
                kind,
                step: Some(step.value),
                degenerate: step.zero_denominator,
            }
        }
    };
    table.sync_probabilities();
    Ok(class)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;
    use crate::netmodel::{BoundedQueue, Position, Role};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    pub(crate) fn dio(sender: u32, hops: u32, ti: f64) -> DioIndicator {
        DioIndicator {
            sender: NodeId(sender),
            min_hops_to_root: hops,
            traffic_index: ti,
        }
    }

    fn node(id: u32, hop: Option<u32>) -> NodeState {
        NodeState {
            id: NodeId(id),
            position: Position { x: 0.0, y: 0.0 },
            role: if id == 0 { Role::Sink } else { Role::Sensor },
            energy: None,
            queue: BoundedQueue::new(10),
            hop_count: hop,
            routing: None,
            tx_batch_counters: BTreeMap::new(),
        }
    }

    fn table_with(probs: &[f64], tis: &[f64], hops: &[u32]) -> RoutingTable {
        let entries = probs
            .iter()
            .enumerate()
            .map(|(i, p)| ParentEntry {
                parent_id: NodeId(i as u32 + 1),
                selection_probability: *p,
                traffic_index: tis[i],
                hop_count: hops[i],
            })
            .collect();
        RoutingTable {
            entries,
            automaton: ProbabilityVector::from_weights(probs.to_vec()).unwrap(),
            candidates: (1..=probs.len() as u32).map(NodeId).collect(),
        }
    }

    #[test]
    fn dio_examples() {
        let sink = node(0, Some(0));
        assert_eq!(make_dio(&sink, 0.0), Some(dio(0, 0, 0.0)));
        let relay = node(4, Some(2));
        let ti = crate::metrics::traffic_index(
            &[crate::metrics::ChildContribution {
                child_id: 9,
                theta: 1.0,
                traffic: 125_000.0,
            }],
            250_000.0,
        )
        .unwrap();
        assert_eq!(make_dio(&relay, ti), Some(dio(4, 2, 0.5)));
        let mut dead = node(5, Some(1));
        let mut acc = crate::netmodel::EnergyAccount::new(
            1e-6,
            crate::metrics::PowerProfile::default(),
            0.0,
            10.0,
        );
        acc.settle(10.0);
        dead.energy = Some(acc);
        assert_eq!(make_dio(&dead, 0.1), None);
        assert_eq!(make_dio(&node(6, None), 0.1), None);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(selection_probabilities(&[(3, 0.7)], 0.5, false), vec![1.0]);
        let p = selection_probabilities(&[(1, 0.2), (2, 0.3)], 0.5, false);
        assert!((p[0] - (0.5 * 2.0 / 3.0 + 0.5 * 0.4)).abs() < 1e-12);
        assert!((p[1] - (0.5 / 3.0 + 0.5 * 0.6)).abs() < 1e-12);
        assert!((p[0] - 0.533_333_333_333).abs() < 1e-9);
        assert_eq!(selection_probabilities(&[(1, 0.1), (1, 0.9)], 1.0, false), vec![0.5, 0.5]);
        // cold start: traffic term uniform
        let p = selection_probabilities(&[(1, 0.0), (3, 0.0)], 0.0, false);
        assert_eq!(p, vec![0.5, 0.5]);
        // inverted traffic term favours the lightly loaded parent
        let p = selection_probabilities(&[(1, 0.1), (1, 0.4)], 0.0, true);
        assert!((p[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_dio_gives_certain_parent() {
        let t = form_parent_set(3, &[dio(7, 2, 0.4)], &ProtocolConfig::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.automaton().entries(), &[1.0]);
        assert_eq!(t.entries()[0].selection_probability, 1.0);
    }

    #[test]
    fn seven_dios_keep_top_five() {
        let cfg = ProtocolConfig::default();
        let dios: Vec<_> = (1..=7).map(|i| dio(i, 1, 0.05 * i as f64)).collect();
        let t = form_parent_set(2, &dios, &cfg).unwrap();
        assert_eq!(t.len(), 5);

        // oracle: score all seven, sort, keep five, renormalize
        let all = selection_probabilities(
            &dios.iter().map(|d| (d.min_hops_to_root + 1, d.traffic_index)).collect::<Vec<_>>(),
            cfg.zeta,
            false,
        );
        let mut ranked: Vec<(f64, u32)> = all.iter().zip(1..=7u32).map(|(p, id)| (*p, id)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top: Vec<(f64, u32)> = ranked[..5].to_vec();
        let s: f64 = top.iter().map(|x| x.0).sum();
        for (entry, (p, id)) in t.entries().iter().zip(&top) {
            assert_eq!(entry.parent_id, NodeId(*id));
            assert!((entry.selection_probability - p / s).abs() < 1e-12);
        }
        assert!((t.automaton().sum() - 1.0).abs() < 1e-12);
        assert_eq!(t.candidates().len(), 7);
    }

    #[test]
    fn identical_dios_split_evenly() {
        let t = form_parent_set(2, &[dio(1, 1, 0.3), dio(2, 1, 0.3)], &ProtocolConfig::default()).unwrap();
        assert_eq!(t.automaton().entries(), &[0.5, 0.5]);
    }

    #[test]
    fn only_lower_hop_senders_are_eligible() {
        let cfg = ProtocolConfig::default();
        assert_eq!(
            form_parent_set(2, &[dio(1, 2, 0.1), dio(2, 3, 0.1)], &cfg),
            Err(ProtocolError::NoEligibleParent)
        );
        let t = form_parent_set(2, &[dio(1, 2, 0.1), dio(2, 1, 0.1)], &cfg).unwrap();
        assert_eq!(t.entries()[0].parent_id, NodeId(2));
    }

    #[test]
    fn choose_examples() {
        let mut rng = stream_rng(1, 4);
        let single = table_with(&[1.0], &[0.0], &[1]);
        for v in Variant::ALL {
            assert_eq!(single.choose(v, |_| true, &mut rng), Some(NodeId(1)));
        }

        let skewed = table_with(&[0.9, 0.1], &[0.0, 0.0], &[1, 1]);
        let n = 100_000;
        let firsts = (0..n)
            .filter(|_| skewed.choose(Variant::Lalarpl, |_| true, &mut rng) == Some(NodeId(1)))
            .count();
        assert!((firsts as f64 / n as f64 - 0.9).abs() < 0.005);

        // dead entries are skipped
        for _ in 0..100 {
            assert_eq!(
                skewed.choose(Variant::Lalarpl, |p| p != NodeId(1), &mut rng),
                Some(NodeId(2))
            );
        }
        assert_eq!(skewed.choose(Variant::Lalarpl, |_| false, &mut rng), None);

        let mixed = table_with(&[0.2, 0.5, 0.3], &[0.0; 3], &[2, 1, 3]);
        assert_eq!(mixed.choose(Variant::Minhop, |_| true, &mut rng), Some(NodeId(2)));

        let k = 4;
        let uniform = table_with(&[0.7, 0.1, 0.1, 0.1], &[0.0; 4], &[1; 4]);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let p = uniform.choose(Variant::Random, |_| true, &mut rng).unwrap();
            counts[p.index() - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / k as f64).abs() < 0.01);
        }
    }

    #[test]
    fn minhop_ties_go_to_lowest_id() {
        let mut t = table_with(&[0.5, 0.5, 0.0001], &[0.0; 3], &[1, 1, 1]);
        t.entries.reverse();
        let mut rng = stream_rng(1, 4);
        assert_eq!(t.choose(Variant::Minhop, |_| true, &mut rng), Some(NodeId(1)));
    }

    #[test]
    fn choose_parent_counts_batches() {
        let mut n = node(3, Some(2));
        let mut rng = stream_rng(1, 4);
        assert_eq!(
            choose_parent(&mut n, Variant::Lalarpl, |_| true, &mut rng),
            Err(ProtocolError::NoRoute)
        );
        n.routing = Some(table_with(&[1.0], &[0.0], &[1]));
        for _ in 0..3 {
            choose_parent(&mut n, Variant::Lalarpl, |_| true, &mut rng).unwrap();
        }
        assert_eq!(n.tx_batch_counters[&NodeId(1)], 3);
        assert_eq!(
            baseline_choose(Variant::Minhop, &mut n, |_| false, &mut rng),
            Err(ProtocolError::NoRoute)
        );
    }

    #[test]
    fn ack_batching() {
        let mut b = AckBatcher::default();
        let acks = (0..4)
            .filter_map(|_| b.on_data_received(NodeId(1), NodeId(2), 0.1, 1))
            .count();
        assert_eq!(acks, 4);

        let mut b = AckBatcher::default();
        for _ in 0..4 {
            assert!(b.on_data_received(NodeId(1), NodeId(2), 0.1, 5).is_none());
        }
        let ack = b.on_data_received(NodeId(1), NodeId(2), 0.3, 5).unwrap();
        assert_eq!(ack.covers, 5);
        assert_eq!(ack.traffic_index, 0.3);

        let mut b = AckBatcher::default();
        let acks = (0..12)
            .filter_map(|_| b.on_data_received(NodeId(1), NodeId(2), 0.1, 5))
            .count();
        assert_eq!(acks, 2);
        assert_eq!(b.acks_sent_to(NodeId(2)), 12 / 5);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_feedback(0.1, &[0.4, 0.6], 3, &[3, 2, 2]), FeedbackKind::Reward);
        assert_eq!(classify_feedback(0.35, &[0.5, 0.5], 1, &[1, 1, 2]), FeedbackKind::Reward);
        assert_eq!(classify_feedback(0.35, &[0.5, 0.5], 2, &[1, 2, 2]), FeedbackKind::Neutral);
        assert_eq!(classify_feedback(0.9, &[0.4, 0.4], 1, &[1, 1, 1]), FeedbackKind::Penalty);
        assert_eq!(classify_feedback(0.45, &[0.5], 1, &[1, 1]), FeedbackKind::Neutral);
        assert_eq!(classify_feedback(0.9, &[], 1, &[1]), FeedbackKind::Neutral);
    }

    #[test]
    fn ack_updates_mirror_automaton() {
        let cfg = AutomatonConfig::default();

        let mut t = table_with(&[0.5, 0.5], &[0.4, 0.5], &[1, 1]);
        let before = t.automaton().clone();
        let ack = AckPacket { sender: NodeId(1), child: NodeId(9), traffic_index: 0.45, covers: 5 };
        let c = on_ack_received(&mut t, &ack, 3, &cfg).unwrap();
        assert_eq!(c.kind, FeedbackKind::Neutral);
        assert_eq!(c.step, None);
        assert_eq!(t.automaton(), &before);
        assert_eq!(t.entries()[0].traffic_index, 0.45);

        // reward with a step pinned to 0.1
        let pinned = |s: f64| AutomatonConfig { clamp_min: s, clamp_max: s, ..cfg.clone() };
        let mut t = table_with(&[0.5, 0.5], &[0.1, 0.5], &[1, 1]);
        let ack = AckPacket { traffic_index: 0.1, ..ack };
        let c = on_ack_received(&mut t, &ack, 3, &pinned(0.1)).unwrap();
        assert_eq!(c.kind, FeedbackKind::Reward);
        assert!((t.automaton().entries()[0] - 0.55).abs() < 1e-12);
        assert!((t.automaton().entries()[1] - 0.45).abs() < 1e-12);

        let mut t = table_with(&[0.5, 0.5], &[0.9, 0.4], &[1, 1]);
        let ack = AckPacket { traffic_index: 0.9, ..ack };
        let c = on_ack_received(&mut t, &ack, 3, &pinned(0.1)).unwrap();
        assert_eq!(c.kind, FeedbackKind::Penalty);
        assert!((t.automaton().entries()[0] - 0.45).abs() < 1e-12);
        assert!((t.automaton().entries()[1] - 0.55).abs() < 1e-12);
        for (e, p) in t.entries().iter().zip(t.automaton().entries()) {
            assert_eq!(e.selection_probability, *p);
        }

        let stranger = AckPacket { sender: NodeId(77), ..ack };
        assert_eq!(
            on_ack_received(&mut t, &stranger, 3, &cfg),
            Err(ProtocolError::UnknownParent(NodeId(77)))
        );
    }

    // Two parents reporting fixed loads of 0.9 and 0.1: the automaton has
    // to shift its mass to the lightly loaded one.
    #[test]
    fn load_shedding_fixture() {
        let cfg = ProtocolConfig::default();
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = stream_rng(seed, 4);
            let mut t = form_parent_set(2, &[dio(1, 1, 0.9), dio(2, 1, 0.1)], &cfg).unwrap();
            for _ in 0..500 {
                let p = t.choose(Variant::Lalarpl, |_| true, &mut rng).unwrap();
                let ti = if p == NodeId(1) { 0.9 } else { 0.1 };
                let ack = AckPacket { sender: p, child: NodeId(5), traffic_index: ti, covers: 5 };
                on_ack_received(&mut t, &ack, 4, &cfg.automaton).unwrap();
            }
            let a = t.automaton().entries()[t.position(NodeId(1)).unwrap()];
            let b = t.automaton().entries()[t.position(NodeId(2)).unwrap()];
            if b > a {
                wins += 1;
            }
        }
        assert!(wins >= 95, "B preferred in {wins}/100 seeds");
    }

    proptest! {
        #[test]
        fn selection_sums_to_one(
            cands in prop::collection::vec((1u32..10, 0.0f64..1.0), 1..8),
            zeta in 0.0f64..=1.0,
            invert in any::<bool>(),
        ) {
            let p = selection_probabilities(&cands, zeta, invert);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn classify_is_total(ti in 0.0f64..1.0, others in prop::collection::vec(0.0f64..1.0, 0..5), h in 0u32..5) {
            let hops = vec![h; others.len() + 1];
            let k = classify_feedback(ti, &others, h, &hops);
            prop_assert!(matches!(k, FeedbackKind::Reward | FeedbackKind::Penalty | FeedbackKind::Neutral));
        }

        #[test]
        fn table_size_bounds(n in 1usize..12, seed in 0u64..100) {
            let mut rng = stream_rng(seed, 0);
            let dios: Vec<_> = (0..n).map(|i| dio(i as u32 + 1, rng.random_range(0..3), rng.random())).collect();
            let t = form_parent_set(3, &dios, &ProtocolConfig::default()).unwrap();
            if n >= 2 { prop_assert!((2..=5).contains(&t.len())); } else { prop_assert_eq!(t.len(), 1); }
            prop_assert!((t.automaton().sum() - 1.0).abs() < 1e-9);
        }
    }
}
