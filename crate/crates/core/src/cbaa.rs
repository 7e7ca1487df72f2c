//! Consensus-based auction for an ordered priority list (CBAA-M).
//!
//! Every agent keeps a winner vector and a bid vector of length `S`. In each
//! iteration it first bids for the highest list slot it can beat (Phase 1),
//! then takes, slot by slot, the maximum bid heard from its in-neighbours
//! together with the winner that neighbour reported (Phase 2, max-consensus).
//! On a complete graph the vectors agree after every Phase 2 and equal the
//! descending sort of the bids after `S` iterations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AuctionError {
    #[error("auction needs at least one agent")]
    NoAgents,
    #[error("bid of agent {0} must be finite and positive, got {1}")]
    InvalidBid(AgentId, f64),
    #[error("graph node set does not match the bidding agents")]
    GraphMismatch,
}

/// Per-agent winner and bid vectors. `None` marks an empty slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionVectors {
    pub winners: Vec<Option<AgentId>>,
    pub bids: Vec<f64>,
}

impl AuctionVectors {
    pub fn empty(len: usize) -> Self {
        Self {
            winners: vec![None; len],
            bids: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.winners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.winners.is_empty()
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.winners.contains(&Some(id))
    }

    /// All slots filled.
    pub fn is_complete(&self) -> bool {
        self.winners.iter().all(Option::is_some)
    }
}

/// Directed communication graph. Self-loops are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    nodes: BTreeSet<AgentId>,
    edges: BTreeSet<(AgentId, AgentId)>,
}

impl CommGraph {
    pub fn complete(nodes: impl IntoIterator<Item = AgentId>) -> Self {
        let nodes: BTreeSet<AgentId> = nodes.into_iter().collect();
        let edges = nodes
            .iter()
            .flat_map(|&a| nodes.iter().map(move |&b| (a, b)))
            .collect();
        Self { nodes, edges }
    }

    /// Graph with the given directed edges `(from, to)` plus all self-loops.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = AgentId>,
        edges: impl IntoIterator<Item = (AgentId, AgentId)>,
    ) -> Self {
        let nodes: BTreeSet<AgentId> = nodes.into_iter().collect();
        let mut set: BTreeSet<(AgentId, AgentId)> = nodes.iter().map(|&n| (n, n)).collect();
        set.extend(
            edges
                .into_iter()
                .filter(|(a, b)| nodes.contains(a) && nodes.contains(b)),
        );
        Self { nodes, edges: set }
    }

    pub fn nodes(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.nodes.iter().copied()
    }

    /// Agents that transmit to `id`, including `id` itself.
    pub fn in_neighbours(&self, id: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges
            .iter()
            .filter(move |(_, to)| *to == id)
            .map(|(from, _)| *from)
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.nodes.len() * self.nodes.len()
    }
}

/// Phase 1: write `me` into the first slot whose bid it beats, unless `me`
/// already holds a slot.
pub fn phase1_bid(me: AgentId, bid: f64, vecs: &AuctionVectors) -> AuctionVectors {
    let mut out = vecs.clone();
    if vecs.contains(me) {
        return out;
    }
    if let Some(j) = vecs.bids.iter().position(|&b| bid > b) {
        out.winners[j] = Some(me);
        out.bids[j] = bid;
    }
    out
}

/// Phase 2: slot-wise max-consensus over the first `round` slots.
///
/// Each slot takes the largest bid among `received`, and the winner reported
/// by a vector attaining it. Ties pick the lowest agent id.
pub fn phase2_update(
    mine: &AuctionVectors,
    received: &[&AuctionVectors],
    round: usize,
) -> AuctionVectors {
    let mut out = mine.clone();
    let upto = round.min(mine.len());
    for j in 0..upto {
        let mut best_bid = mine.bids[j];
        let mut best_winner = mine.winners[j];
        for r in received {
            let (b, w) = (r.bids[j], r.winners[j]);
            if b > best_bid || (b == best_bid && lower_id(w, best_winner)) {
                best_bid = b;
                best_winner = w;
            }
        }
        out.bids[j] = best_bid;
        out.winners[j] = best_winner;
    }
    out
}

/// `a` strictly preferred over `b` in a tie: real ids before empty slots,
/// then lowest id.
fn lower_id(a: Option<AgentId>, b: Option<AgentId>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    /// Agreed order, highest bid first.
    pub winners: Vec<AgentId>,
    pub bids: Vec<f64>,
    /// Two or more agents submitted the same bid.
    pub tied_bids: bool,
    /// Every agent held identical, complete vectors at the end.
    pub agreed: bool,
    /// First iteration after which all agents held identical complete vectors.
    pub converged_at: Option<usize>,
    /// Per-iteration vectors of every agent, in agent-id order.
    pub rounds: Vec<BTreeMap<AgentId, AuctionVectors>>,
}

/// Runs `S` synchronous iterations of Phase 1 then Phase 2 for all agents.
///
/// On a non-complete graph the returned order is that of the lowest-id agent
/// and `agreed` reports whether everybody ended with the same vectors.
pub fn run_auction(
    bids: &BTreeMap<AgentId, f64>,
    graph: &CommGraph,
) -> Result<AuctionOutcome, AuctionError> {
    if bids.is_empty() {
        return Err(AuctionError::NoAgents);
    }
    for (&id, &c) in bids {
        if !(c.is_finite() && c > 0.0) {
            return Err(AuctionError::InvalidBid(id, c));
        }
    }
    if !graph.nodes().eq(bids.keys().copied()) {
        return Err(AuctionError::GraphMismatch);
    }

    let s = bids.len();
    let mut distinct: Vec<f64> = bids.values().copied().collect();
    distinct.sort_by(f64::total_cmp);
    let tied_bids = distinct.windows(2).any(|w| w[0] == w[1]);

    let in_nbrs: BTreeMap<AgentId, Vec<AgentId>> = bids
        .keys()
        .map(|&id| (id, graph.in_neighbours(id).collect()))
        .collect();

    let mut state: BTreeMap<AgentId, AuctionVectors> = bids
        .keys()
        .map(|&id| (id, AuctionVectors::empty(s)))
        .collect();
    let mut rounds = Vec::with_capacity(s);
    let mut converged_at = None;

    for round in 1..=s {
        let after_bid: BTreeMap<AgentId, AuctionVectors> = state
            .iter()
            .map(|(&id, v)| (id, phase1_bid(id, bids[&id], v)))
            .collect();
        state = after_bid
            .iter()
            .map(|(&id, v)| {
                let received: Vec<&AuctionVectors> =
                    in_nbrs[&id].iter().map(|n| &after_bid[n]).collect();
                (id, phase2_update(v, &received, round))
            })
            .collect();
        if converged_at.is_none() && all_agree_complete(&state) {
            converged_at = Some(round);
        }
        rounds.push(state.clone());
    }

    let agreed = all_agree_complete(&state);
    let reference = state.values().next().expect("at least one agent");
    Ok(AuctionOutcome {
        winners: reference.winners.iter().flatten().copied().collect(),
        bids: reference
            .bids
            .iter()
            .copied()
            .filter(|&b| b > 0.0)
            .collect(),
        tied_bids,
        agreed,
        converged_at,
        rounds,
    })
}

fn all_agree_complete(state: &BTreeMap<AgentId, AuctionVectors>) -> bool {
    let mut it = state.values();
    let first = it.next().expect("nonempty");
    first.is_complete() && it.all(|v| v == first)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(i: u32) -> AgentId {
        AgentId(i)
    }

    fn vecs(w: &[Option<u32>], b: &[f64]) -> AuctionVectors {
        AuctionVectors {
            winners: w.iter().map(|x| x.map(AgentId)).collect(),
            bids: b.to_vec(),
        }
    }

    #[test]
    fn phase1_takes_first_beatable_slot() {
        let v = vecs(&[Some(1), None, None], &[7.0, 0.0, 0.0]);
        let out = phase1_bid(a(2), 5.0, &v);
        assert_eq!(out, vecs(&[Some(1), Some(2), None], &[7.0, 5.0, 0.0]));
    }

    #[test]
    fn phase1_noop_when_already_listed() {
        let v = vecs(&[Some(1), Some(2), None], &[7.0, 5.0, 0.0]);
        assert_eq!(phase1_bid(a(2), 100.0, &v), v);
    }

    #[test]
    fn phase1_overwrites_rather_than_inserts() {
        let v = vecs(&[Some(1), Some(2), None], &[7.0, 5.0, 0.0]);
        let out = phase1_bid(a(3), 9.0, &v);
        assert_eq!(out, vecs(&[Some(3), Some(2), None], &[9.0, 5.0, 0.0]));
    }

    #[test]
    fn phase1_unchanged_when_nothing_beatable() {
        let v = vecs(&[Some(1), Some(2)], &[7.0, 5.0]);
        assert_eq!(phase1_bid(a(3), 1.0, &v), v);
    }

    #[test]
    fn phase2_takes_max_and_its_winner() {
        let mine = vecs(&[Some(1), None], &[4.0, 0.0]);
        let other = vecs(&[Some(2), None], &[9.0, 0.0]);
        let out = phase2_update(&mine, &[&mine, &other], 1);
        assert_eq!(out, other);
    }

    #[test]
    fn phase2_singleton_is_identity() {
        let mine = vecs(&[Some(1), Some(3)], &[4.0, 2.0]);
        assert_eq!(phase2_update(&mine, &[&mine], 2), mine);
    }

    #[test]
    fn phase2_leaves_slots_beyond_round() {
        let mine = vecs(&[Some(1), Some(5)], &[4.0, 1.0]);
        let other = vecs(&[Some(2), Some(6)], &[3.0, 2.0]);
        let out = phase2_update(&mine, &[&mine, &other], 1);
        assert_eq!(out, vecs(&[Some(1), Some(5)], &[4.0, 1.0]));
    }

    #[test]
    fn phase2_tie_goes_to_lowest_id() {
        let mine = vecs(&[Some(7), None], &[3.0, 0.0]);
        let other = vecs(&[Some(4), None], &[3.0, 0.0]);
        let out = phase2_update(&mine, &[&mine, &other], 1);
        assert_eq!(out.winners[0], Some(a(4)));
        let out = phase2_update(&other, &[&other, &mine], 1);
        assert_eq!(out.winners[0], Some(a(4)));
    }

    #[test]
    fn auction_sorts_bids() {
        let bids: BTreeMap<_, _> = [(a(1), 3.0), (a(2), 1.0), (a(3), 2.0)].into();
        let g = CommGraph::complete(bids.keys().copied());
        let out = run_auction(&bids, &g).unwrap();
        assert_eq!(out.winners, vec![a(1), a(3), a(2)]);
        assert_eq!(out.bids, vec![3.0, 2.0, 1.0]);
        assert!(out.agreed);
        assert!(!out.tied_bids);

        let bids: BTreeMap<_, _> = [(a(1), 0.5), (a(2), 7.0)].into();
        let g = CommGraph::complete(bids.keys().copied());
        assert_eq!(run_auction(&bids, &g).unwrap().winners, vec![a(2), a(1)]);
    }

    #[test]
    fn prefix_holds_top_agents_each_round() {
        let bids: BTreeMap<_, _> = [(a(1), 1.0), (a(2), 4.0), (a(3), 2.0), (a(4), 3.0)].into();
        let g = CommGraph::complete(bids.keys().copied());
        let out = run_auction(&bids, &g).unwrap();
        let order = [a(2), a(4), a(3), a(1)];
        for (k, round) in out.rounds.iter().enumerate() {
            for v in round.values() {
                let prefix: Vec<AgentId> = v.winners[..=k].iter().flatten().copied().collect();
                assert_eq!(prefix, order[..=k]);
                assert!(v.winners[k + 1..].iter().all(Option::is_none));
            }
        }
    }

    #[test]
    fn single_agent_and_errors() {
        let bids: BTreeMap<_, _> = [(a(9), 0.3)].into();
        let g = CommGraph::complete([a(9)]);
        let out = run_auction(&bids, &g).unwrap();
        assert_eq!(out.winners, vec![a(9)]);

        let empty = BTreeMap::new();
        assert_eq!(
            run_auction(&empty, &CommGraph::complete([])),
            Err(AuctionError::NoAgents)
        );
        let bad: BTreeMap<_, _> = [(a(1), 0.0)].into();
        assert!(matches!(
            run_auction(&bad, &CommGraph::complete([a(1)])),
            Err(AuctionError::InvalidBid(..))
        ));
    }

    #[test]
    fn ties_are_flagged_and_deterministic() {
        let bids: BTreeMap<_, _> = [(a(3), 2.0), (a(1), 2.0), (a(2), 5.0)].into();
        let g = CommGraph::complete(bids.keys().copied());
        let first = run_auction(&bids, &g).unwrap();
        assert!(first.tied_bids);
        assert_eq!(first, run_auction(&bids, &g).unwrap());
        assert_eq!(first.winners[0], a(2));
    }

    #[test]
    fn ring_graph_runs_but_need_not_agree() {
        let ids: Vec<AgentId> = (1..=4).map(a).collect();
        let bids: BTreeMap<_, _> = ids.iter().map(|&i| (i, i.0 as f64)).collect();
        let ring = CommGraph::from_edges(
            ids.clone(),
            ids.iter().zip(ids.iter().cycle().skip(1)).map(|(&x, &y)| (x, y)),
        );
        assert!(!ring.is_complete());
        let out = run_auction(&bids, &ring).unwrap();
        assert_eq!(out.rounds.len(), 4);
    }
}
