//! Bids, crossing maps and the per-point priority negotiation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbaa::{run_auction, AgentId, CommGraph};
use crate::dynamics::VehicleState;
use crate::geometry::{euclidean_distance, GlobalPos, Path, PROJECT_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum PriorityError {
    #[error("bid parameter {0} must be strictly positive")]
    NonPositive(&'static str),
}

/// Weights of the bid `c = (p_v v + p_d) / (d + ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BidParams {
    pub p_v: f64,
    pub p_d: f64,
    /// Meters.
    pub epsilon: f64,
}

impl Default for BidParams {
    fn default() -> Self {
        Self {
            p_v: 1.0,
            p_d: 1.0,
            epsilon: 0.1,
        }
    }
}

impl BidParams {
    pub fn validate(&self) -> Result<(), PriorityError> {
        for (name, v) in [("p_v", self.p_v), ("p_d", self.p_d), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PriorityError::NonPositive(name));
            }
        }
        Ok(())
    }
}

pub fn compute_bid(v: f64, d: f64, params: &BidParams) -> f64 {
    (params.p_v * v + params.p_d) / (d + params.epsilon)
}

/// What one vehicle broadcasts at a sampling instant.
#[derive(Debug, Clone)]
pub struct VehicleSnapshot {
    pub id: AgentId,
    pub path: Arc<Path>,
    pub state: VehicleState,
    /// Input applied at the previous step, used for constant-input predictions.
    pub input: f64,
    pub v_ref: f64,
}

impl VehicleSnapshot {
    pub fn position(&self) -> GlobalPos {
        self.path.locate_clamped(self.state.p)
    }
}

/// All broadcasts of one sampling instant, sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    vehicles: Vec<VehicleSnapshot>,
}

impl Snapshot {
    pub fn new(mut vehicles: Vec<VehicleSnapshot>) -> Self {
        vehicles.sort_by_key(|v| v.id);
        Self { vehicles }
    }

    pub fn vehicles(&self) -> &[VehicleSnapshot] {
        &self.vehicles
    }

    pub fn get(&self, id: AgentId) -> Option<&VehicleSnapshot> {
        self.vehicles
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

/// Vehicles located on `subject`'s path strictly ahead of it.
pub fn frontal_set(subject: &VehicleSnapshot, snapshot: &Snapshot) -> BTreeSet<AgentId> {
    snapshot
        .vehicles()
        .iter()
        .filter(|z| z.id != subject.id)
        .filter(|z| {
            subject
                .path
                .project(z.position(), PROJECT_TOL)
                .is_some_and(|s| s > subject.state.p)
        })
        .map(|z| z.id)
        .collect()
}

/// Collision points ahead of each vehicle, with the remaining distance.
pub type PointsAhead = BTreeMap<AgentId, Vec<(u8, f64)>>;
/// Vehicles still approaching each collision point.
pub type PointUsers = BTreeMap<u8, BTreeSet<AgentId>>;

pub fn crossing_maps(snapshot: &Snapshot) -> (PointsAhead, PointUsers) {
    let mut g = PointsAhead::new();
    let mut h = PointUsers::new();
    for veh in snapshot.vehicles() {
        let ahead: Vec<(u8, f64)> = veh
            .path
            .collision_points_ahead(veh.state.p)
            .into_iter()
            .map(|(cp, d)| (cp.index, d))
            .collect();
        for &(idx, _) in &ahead {
            h.entry(idx).or_default().insert(veh.id);
        }
        g.insert(veh.id, ahead);
    }
    (g, h)
}

/// Agreed crossing order at one collision point.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingList {
    pub point: u8,
    pub order: Vec<AgentId>,
    pub bids: Vec<f64>,
    pub tied: bool,
}

impl CrossingList {
    pub fn rank(&self, id: AgentId) -> Option<usize> {
        self.order.iter().position(|&a| a == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehiclePriority {
    /// ℱ: vehicles ahead on the own path.
    pub frontal: BTreeSet<AgentId>,
    /// ℒ: vehicles ranked ahead in the list of any point still ahead.
    pub higher: BTreeSet<AgentId>,
    /// For each member of ℒ, the points where it outranks this vehicle.
    pub higher_at: BTreeMap<AgentId, Vec<u8>>,
    /// Bid placed at each point ahead.
    pub bids: Vec<(u8, f64)>,
    /// Euclidean distance to each point ahead.
    pub distances: Vec<(u8, f64)>,
}

impl VehiclePriority {
    /// ℐ = ℱ ∪ ℒ.
    pub fn awareness(&self) -> BTreeSet<AgentId> {
        self.frontal.union(&self.higher).copied().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorityView {
    pub vehicles: BTreeMap<AgentId, VehiclePriority>,
    pub lists: BTreeMap<u8, CrossingList>,
    pub diagnostics: Vec<String>,
}

impl PriorityView {
    pub fn of(&self, id: AgentId) -> Option<&VehiclePriority> {
        self.vehicles.get(&id)
    }
}

/// Runs one auction per occupied collision point and derives ℱ, ℒ and ℐ.
pub fn negotiate(snapshot: &Snapshot, params: &BidParams) -> PriorityView {
    let (g, h) = crossing_maps(snapshot);
    let mut view = PriorityView::default();

    let mut bids_at: BTreeMap<u8, BTreeMap<AgentId, f64>> = BTreeMap::new();
    for veh in snapshot.vehicles() {
        let here = veh.position();
        let mut entry = VehiclePriority {
            frontal: frontal_set(veh, snapshot),
            ..Default::default()
        };
        for &(idx, _) in &g[&veh.id] {
            let point = veh
                .path
                .crossing_of(idx)
                .expect("points ahead come from the path")
                .point;
            let d = euclidean_distance(here, point.position);
            let c = compute_bid(veh.state.v, d, params);
            entry.bids.push((idx, c));
            entry.distances.push((idx, d));
            bids_at.entry(idx).or_default().insert(veh.id, c);
        }
        view.vehicles.insert(veh.id, entry);
    }

    for (&idx, members) in &h {
        let bids = &bids_at[&idx];
        debug_assert!(members.iter().eq(bids.keys()));
        let graph = CommGraph::complete(bids.keys().copied());
        let outcome = run_auction(bids, &graph).expect("bids are positive and finite");
        if outcome.tied_bids {
            view.diagnostics
                .push(format!("point {idx}: tied bids resolved by lowest id"));
        }
        view.lists.insert(
            idx,
            CrossingList {
                point: idx,
                order: outcome.winners,
                bids: outcome.bids,
                tied: outcome.tied_bids,
            },
        );
    }

    for (&id, entry) in view.vehicles.iter_mut() {
        for &(idx, _) in &g[&id] {
            let list = &view.lists[&idx];
            let rank = list.rank(id).expect("vehicle bids at its points ahead");
            for &other in &list.order[..rank] {
                entry.higher.insert(other);
                entry.higher_at.entry(other).or_default().push(idx);
            }
        }
    }

    // A rear vehicle outranking its frontal vehicle is left as negotiated.
    for (&id, entry) in &view.vehicles {
        for &front in &entry.frontal {
            for list in view.lists.values() {
                if let (Some(r), Some(f)) = (list.rank(id), list.rank(front)) {
                    if r < f {
                        view.diagnostics.push(format!(
                            "point {}: {id} ranked above its frontal vehicle {front}",
                            list.point
                        ));
                    }
                }
            }
        }
    }
    view
}
