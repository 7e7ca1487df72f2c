//! Per-vehicle receding-horizon controller.
//!
//! States are eliminated through the affine double-integrator rollout, so the
//! decision vector is `z = [u(0..H), δ(0..=H)]`. Safety requirements from
//! frontal and higher-priority vehicles all take the form
//! `p(t) + λ₂ v(t) + δ(t) ≤ c(t)`, so only the tightest `c(t)` per step is kept.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbaa::AgentId;
use crate::dynamics::{rollout_const_input, rollout_inputs, StepParams, VehicleState};
use crate::geometry::PROJECT_TOL;
use crate::priority::{PriorityView, Snapshot, VehicleSnapshot};
use crate::qp::{solve, QpSettings, QpStatus, QuadraticProgram};

#[derive(Debug, Error, PartialEq)]
pub enum MpcConfigError {
    #[error("invalid controller parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Prediction horizon in steps.
    pub horizon: usize,
    pub q_weight: f64,
    pub r_weight: f64,
    /// Reward on the safety slack; negative.
    pub omega: f64,
    /// λ₂, seconds.
    pub time_headway: f64,
    /// λ̄₂, seconds.
    pub headway_relax: f64,
    /// λ₃, meters. Also the collision distance.
    pub standstill_gap: f64,
    /// δ̄, meters.
    pub slack_upper: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// How far past a collision point a higher-priority vehicle must be before
    /// the point is released, meters.
    pub crossing_clearance: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            q_weight: 1.0,
            r_weight: 0.01,
            omega: -0.1,
            time_headway: 0.1,
            headway_relax: 0.0,
            standstill_gap: 3.5,
            slack_upper: 5.0,
            a_min: -9.0,
            a_max: 5.0,
            v_min: 0.0,
            v_max: 130.0 / 3.6,
            crossing_clearance: 3.5,
            qp_tol: 1e-6,
            qp_max_iter: 20_000,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcConfigError> {
        let bad = |m: &str| Err(MpcConfigError::Invalid(m.to_string()));
        let finite = [
            self.q_weight,
            self.r_weight,
            self.omega,
            self.time_headway,
            self.headway_relax,
            self.standstill_gap,
            self.slack_upper,
            self.a_min,
            self.a_max,
            self.v_min,
            self.v_max,
            self.crossing_clearance,
            self.qp_tol,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite value");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.q_weight > 0.0 && self.r_weight > 0.0) {
            return bad("q_weight and r_weight must be positive");
        }
        if !(self.omega < 0.0) {
            return bad("omega must be negative");
        }
        if !(0.0 <= self.headway_relax && self.headway_relax < self.time_headway) {
            return bad("need 0 <= headway_relax < time_headway");
        }
        if !(self.standstill_gap > 0.0) {
            return bad("standstill_gap must be positive");
        }
        if !(self.slack_upper > 0.0) {
            return bad("slack_upper must be positive");
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return bad("need a_min < 0 < a_max");
        }
        if !(0.0 <= self.v_min && self.v_min < self.v_max) {
            return bad("need 0 <= v_min < v_max");
        }
        if self.crossing_clearance < 0.0 {
            return bad("crossing_clearance must be nonnegative");
        }
        if !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return bad("solver budget must be positive");
        }
        Ok(())
    }

    fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
        }
    }
}

/// Why another vehicle is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConflictRole {
    Frontal,
    Higher,
    /// Within the standstill gap before a shared point, or past it by no more
    /// than the clearance distance.
    Clearing,
}

/// A shared collision point this vehicle must not approach before `other`
/// has released it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precedence {
    pub point: u8,
    /// Coordinate of the point along the subject's path.
    pub my_coord: f64,
    /// Coordinate of the point along the other vehicle's path.
    pub other_coord: f64,
    /// First prediction step at which the other vehicle is released; steps
    /// `0..crossed_by_step` carry the constraint. `horizon + 1` if never.
    pub crossed_by_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtherPrediction {
    pub id: AgentId,
    pub roles: BTreeSet<ConflictRole>,
    /// Constant-input rollout along the other vehicle's own path.
    pub states: Vec<VehicleState>,
    /// Coordinate on the subject's path at each step, when on it and still
    /// inside its own path.
    pub on_my_path: Vec<Option<f64>>,
    pub precedence: Vec<Precedence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictPrediction {
    pub subject: AgentId,
    pub others: Vec<OtherPrediction>,
    pub diagnostics: Vec<String>,
}

/// First step index whose coordinate exceeds `coord + clearance`.
pub fn crossed_by_step(states: &[VehicleState], coord: f64, clearance: f64) -> usize {
    states
        .iter()
        .position(|x| x.p > coord + clearance)
        .unwrap_or(states.len())
}

pub fn predict_conflicts(
    subject: &VehicleSnapshot,
    view: &PriorityView,
    snapshot: &Snapshot,
    cfg: &MpcConfig,
    params: StepParams,
) -> ConflictPrediction {
    let mut diagnostics = Vec::new();
    let mut roles: std::collections::BTreeMap<AgentId, BTreeSet<ConflictRole>> =
        Default::default();
    let mine = view.of(subject.id);
    if let Some(pv) = mine {
        for &z in &pv.frontal {
            roles.entry(z).or_default().insert(ConflictRole::Frontal);
        }
        for &z in &pv.higher {
            roles.entry(z).or_default().insert(ConflictRole::Higher);
        }
    } else {
        diagnostics.push(format!("{}: no priority entry", subject.id));
    }

    // Points ahead of the subject that some other vehicle is occupying: it
    // has just passed them, or it is closer than the standstill gap and
    // cannot back out. The second case yields to the auction when the
    // subject is that close too.
    let ahead = subject.path.collision_points_ahead(subject.state.p);
    let holds = |z: &VehicleSnapshot, their_coord: f64, my_dist: f64| {
        let past = z.state.p - their_coord;
        past <= cfg.crossing_clearance
            && (past >= 0.0 || (-past < cfg.standstill_gap && my_dist >= cfg.standstill_gap))
    };
    for z in snapshot.vehicles() {
        if z.id == subject.id {
            continue;
        }
        for (cp, my_dist) in &ahead {
            if let Some(c) = z.path.crossing_of(cp.index) {
                if holds(z, c.coord, *my_dist) {
                    roles.entry(z.id).or_default().insert(ConflictRole::Clearing);
                }
            }
        }
    }

    let mut others = Vec::new();
    for (id, roles) in roles {
        let Some(z) = snapshot.get(id) else {
            diagnostics.push(format!("{}: no broadcast from {id}; ignored", subject.id));
            continue;
        };
        let states = rollout_const_input(
            z.state,
            z.input,
            cfg.horizon,
            params,
            cfg.v_min,
            cfg.v_max,
        );
        let end = z.path.total_length();
        let on_my_path: Vec<Option<f64>> = states
            .iter()
            .map(|x| {
                if x.p > end {
                    return None;
                }
                subject.path.project(z.path.locate_clamped(x.p), PROJECT_TOL)
            })
            .collect();

        // Lanes admit no overtaking: a vehicle behind on the subject's path
        // cannot reach a shared point first, whatever its bid.
        let behind = matches!(on_my_path.first(), Some(Some(c)) if *c <= subject.state.p);
        let mut precedence = Vec::new();
        for (cp, my_dist) in ahead.iter().filter(|_| !behind) {
            let outranks = mine
                .and_then(|pv| pv.higher_at.get(&id))
                .is_some_and(|pts| pts.contains(&cp.index));
            let Some(theirs) = z.path.crossing_of(cp.index) else {
                continue;
            };
            let clearing =
                roles.contains(&ConflictRole::Clearing) && holds(z, theirs.coord, *my_dist);
            if outranks || clearing {
                let my_coord = subject
                    .path
                    .crossing_of(cp.index)
                    .expect("point ahead is on the path")
                    .coord;
                precedence.push(Precedence {
                    point: cp.index,
                    my_coord,
                    other_coord: theirs.coord,
                    crossed_by_step: crossed_by_step(&states, theirs.coord, cfg.crossing_clearance),
                });
            }
        }
        others.push(OtherPrediction {
            id,
            roles,
            states,
            on_my_path,
            precedence,
        });
    }

    ConflictPrediction {
        subject: subject.id,
        others,
        diagnostics,
    }
}

/// Index map of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub horizon: usize,
}

impl VariableLayout {
    pub fn u(&self, t: usize) -> usize {
        debug_assert!(t < self.horizon);
        t
    }
    pub fn delta(&self, t: usize) -> usize {
        debug_assert!(t <= self.horizon);
        self.horizon + t
    }
    pub fn len(&self) -> usize {
        2 * self.horizon + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Origin of a safety row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetySource {
    RearEnd { other: AgentId },
    Precedence { other: AgentId, point: u8 },
}

/// Tightest safety bound at one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyBound {
    pub t: usize,
    /// Upper bound on `p(t) + λ₂ v(t) + δ(t)`.
    pub limit: f64,
    pub source: SafetySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledProblem {
    pub qp: QuadraticProgram,
    pub layout: VariableLayout,
    pub safety: Vec<SafetyBound>,
    /// Safety bounds at `t = 0` violated by the current state and dropped.
    pub dropped: Vec<SafetyBound>,
}

/// Per-step safety limits implied by the prediction.
///
/// A vehicle outside the box that must yield at a later point to a vehicle
/// not predicted to clear it stops before the first point instead.
///
/// A frontal vehicle that has just rounded a corner still ahead of the
/// subject is closer in a straight line than along the path; the limit then
/// keeps the straight-line distance at or above the standstill gap.
pub fn safety_limits(
    subject: &VehicleSnapshot,
    prediction: &ConflictPrediction,
    cfg: &MpcConfig,
) -> Vec<Option<SafetyBound>> {
    let x0 = subject.state;
    let gap = cfg.standstill_gap;
    let corners = subject.path.corners();
    let h = cfg.horizon;
    // First collision point ahead, while the subject can still stop short of it.
    let entry = subject
        .path
        .collision_points_ahead(x0.p)
        .first()
        .map(|(_, d)| x0.p + d)
        .filter(|a| x0.p <= a - gap);
    let mut limits: Vec<Option<SafetyBound>> = vec![None; h + 1];
    let mut tighten = |t: usize, limit: f64, source: SafetySource| {
        if limits[t].is_none_or(|b| limit < b.limit) {
            limits[t] = Some(SafetyBound { t, limit, source });
        }
    };
    for o in &prediction.others {
        if matches!(o.on_my_path.first(), Some(Some(c)) if *c <= x0.p) {
            continue;
        }
        for t in 0..=h {
            match o.on_my_path[t] {
                Some(c) if c > x0.p => {
                    let mut limit = c - gap;
                    for &corner in corners {
                        let past = c - corner;
                        if corner > x0.p && (0.0..gap).contains(&past) {
                            limit = limit.min(corner - (gap * gap - past * past).sqrt());
                        }
                    }
                    tighten(t, limit, SafetySource::RearEnd { other: o.id });
                }
                _ => {
                    for pr in &o.precedence {
                        if t < pr.crossed_by_step {
                            // Nobody waits inside the box for a point whose
                            // holder is not predicted to clear it.
                            let stop_at = match entry {
                                Some(a) if pr.crossed_by_step > h && a < pr.my_coord => a,
                                _ => pr.my_coord,
                            };
                            tighten(
                                t,
                                stop_at - cfg.standstill_gap,
                                SafetySource::Precedence {
                                    other: o.id,
                                    point: pr.point,
                                },
                            );
                        }
                    }
                }
            }
        }
    }
    limits
}

pub fn assemble(
    subject: &VehicleSnapshot,
    prediction: &ConflictPrediction,
    cfg: &MpcConfig,
    params: StepParams,
) -> AssembledProblem {
    let h = cfg.horizon;
    let ts = params.sampling_time;
    let layout = VariableLayout { horizon: h };
    let n = layout.len();
    let x0 = subject.state;
    let (p0, v0) = (x0.p, x0.v);
    let lam2 = cfg.time_headway;

    // Cost.
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let qw = cfg.q_weight;
    for s in 0..h {
        for s2 in 0..h {
            p[(s, s2)] = 2.0 * qw * ts * ts * (h - s.max(s2)) as f64;
        }
        p[(s, s)] += 2.0 * cfg.r_weight;
        q[s] = 2.0 * qw * ts * (v0 - subject.v_ref) * (h - s) as f64;
    }
    for t in 0..=h {
        q[layout.delta(t)] = cfg.omega;
    }

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for t in 0..h {
        rows.push((vec![(layout.u(t), 1.0)], cfg.a_max));
        rows.push((vec![(layout.u(t), -1.0)], -cfg.a_min));
    }
    // Speed bounds for t ≥ 1; rows implied by the input bounds are omitted.
    for t in 1..=h {
        let reach_hi = v0 + ts * cfg.a_max * t as f64;
        let reach_lo = v0 + ts * cfg.a_min * t as f64;
        let coeffs = |sign: f64| (0..t).map(|s| (layout.u(s), sign * ts)).collect::<Vec<_>>();
        if reach_hi > cfg.v_max {
            rows.push((coeffs(1.0), cfg.v_max - v0));
        }
        if reach_lo < cfg.v_min {
            rows.push((coeffs(-1.0), v0 - cfg.v_min));
        }
    }
    for t in 0..=h {
        rows.push((vec![(layout.delta(t), 1.0)], cfg.slack_upper));
        // -δ(t) - λ̄₂ v(t) ≤ 0
        let mut r = vec![(layout.delta(t), -1.0)];
        if cfg.headway_relax > 0.0 {
            r.extend((0..t).map(|s| (layout.u(s), -cfg.headway_relax * ts)));
        }
        rows.push((r, cfg.headway_relax * v0));
    }

    let mut safety = Vec::new();
    let mut dropped = Vec::new();
    for bound in safety_limits(subject, prediction, cfg).into_iter().flatten() {
        let t = bound.t;
        // p(t) + λ₂ v(t) + δ(t) ≤ limit
        let rhs = bound.limit - p0 - t as f64 * ts * v0 - lam2 * v0;
        if t == 0 && rhs < -cfg.headway_relax * v0 {
            dropped.push(bound);
            continue;
        }
        let mut r: Vec<(usize, f64)> = (0..t)
            .map(|s| (layout.u(s), ts * ts * (t - 1 - s) as f64 + lam2 * ts))
            .collect();
        r.push((layout.delta(t), 1.0));
        rows.push((r, rhs));
        safety.push(bound);
    }

    let m = rows.len();
    let mut g = DMatrix::zeros(m, n);
    let mut hv = DVector::zeros(m);
    for (i, (coeffs, rhs)) in rows.into_iter().enumerate() {
        for (j, a) in coeffs {
            g[(i, j)] = a;
        }
        hv[i] = rhs;
    }
    let qp = QuadraticProgram::new(p, q, g, hv).expect("assembled cost is convex");
    AssembledProblem {
        qp,
        layout,
        safety,
        dropped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStatus {
    Optimal,
    FallbackBraking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u0: f64,
    pub predicted_states: Vec<VehicleState>,
    pub slack: Vec<f64>,
    pub status: DecisionStatus,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub safety_rows: usize,
    pub diagnostics: Vec<String>,
}

pub fn fallback_input(v: f64, cfg: &MpcConfig, params: StepParams) -> f64 {
    cfg.a_min.max(-v / params.sampling_time)
}

pub fn decide(
    subject: &VehicleSnapshot,
    view: &PriorityView,
    snapshot: &Snapshot,
    cfg: &MpcConfig,
    params: StepParams,
) -> ControlDecision {
    let prediction = predict_conflicts(subject, view, snapshot, cfg, params);
    let problem = assemble(subject, &prediction, cfg, params);
    let mut diagnostics = prediction.diagnostics;
    for b in &problem.dropped {
        diagnostics.push(format!(
            "{}: proximity, safety bound {:.3} m from {:?} already violated at t=0",
            subject.id, b.limit, b.source
        ));
    }
    let sol = solve(&problem.qp, &cfg.qp_settings());
    let layout = problem.layout;
    if sol.status == QpStatus::Optimal {
        let inputs: Vec<f64> = (0..layout.horizon).map(|t| sol.z[layout.u(t)]).collect();
        let slack = (0..=layout.horizon).map(|t| sol.z[layout.delta(t)]).collect();
        ControlDecision {
            u0: inputs[0].clamp(cfg.a_min, cfg.a_max),
            predicted_states: rollout_inputs(subject.state, &inputs, params),
            slack,
            status: DecisionStatus::Optimal,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            safety_rows: problem.safety.len(),
            diagnostics,
        }
    } else {
        diagnostics.push(format!(
            "{}: solver returned {:?}; braking",
            subject.id, sol.status
        ));
        ControlDecision {
            u0: fallback_input(subject.state.v, cfg, params),
            predicted_states: Vec::new(),
            slack: Vec::new(),
            status: DecisionStatus::FallbackBraking,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            safety_rows: problem.safety.len(),
            diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_intersection, Approach, Intersection, LayoutConfig, Maneuver};
    use crate::priority::{negotiate, BidParams};

    const TS: f64 = 0.03;

    fn world() -> Intersection {
        build_intersection(LayoutConfig::default()).unwrap()
    }

    fn veh(w: &Intersection, id: u32, a: Approach, m: Maneuver, p: f64, v: f64) -> VehicleSnapshot {
        VehicleSnapshot {
            id: AgentId(id),
            path: w.path(a, m).clone(),
            state: VehicleState::new(p, v),
            input: 0.0,
            v_ref: v,
        }
    }

    fn params() -> StepParams {
        StepParams::new(TS)
    }

    #[test]
    fn default_config_is_valid_and_checks_fire() {
        assert!(MpcConfig::default().validate().is_ok());
        let c = MpcConfig {
            omega: 0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = MpcConfig {
            headway_relax: 0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn crossed_by_step_uniform_motion() {
        let states = rollout_const_input(VehicleState::new(0.0, 10.0), 0.0, 100, params(), 0.0, 36.11);
        // Literal sign rule: first state strictly past the point.
        assert_eq!(crossed_by_step(&states, 20.0, 0.0), 67);
        assert_eq!(crossed_by_step(&states, 20.0, 3.5), 79);
        assert_eq!(crossed_by_step(&states, -1.0, 0.0), 0);
        assert_eq!(crossed_by_step(&states, 1000.0, 0.0), 101);
    }

    #[test]
    fn lone_vehicle_problem_shape() {
        let w = world();
        let me = veh(&w, 1, Approach::South, Maneuver::Straight, 0.0, 12.5);
        let snap = Snapshot::new(vec![me.clone()]);
        let view = negotiate(&snap, &BidParams::default());
        let cfg = MpcConfig {
            horizon: 2,
            ..Default::default()
        };
        let pred = predict_conflicts(&me, &view, &snap, &cfg, params());
        assert!(pred.others.is_empty());
        let prob = assemble(&me, &pred, &cfg, params());
        assert_eq!(prob.qp.num_vars(), 5);
        assert!(prob.safety.is_empty());
        // Input bounds and slack bounds only; speed rows are implied here.
        assert_eq!(prob.qp.num_constraints(), 2 * 2 + 2 * 3);
    }

    #[test]
    fn lone_vehicle_at_reference_holds_speed() {
        let w = world();
        let me = veh(&w, 1, Approach::South, Maneuver::Straight, 0.0, 12.5);
        let snap = Snapshot::new(vec![me.clone()]);
        let view = negotiate(&snap, &BidParams::default());
        let d = decide(&me, &view, &snap, &MpcConfig::default(), params());
        assert_eq!(d.status, DecisionStatus::Optimal);
        assert!(d.u0.abs() < 1e-4, "{}", d.u0);
        assert!(d.slack.iter().all(|&s| (s - 5.0).abs() < 1e-3));
    }

    #[test]
    fn lone_vehicle_below_reference_accelerates() {
        let w = world();
        let mut me = veh(&w, 1, Approach::South, Maneuver::Straight, 0.0, 10.0);
        me.v_ref = 12.5;
        let snap = Snapshot::new(vec![me.clone()]);
        let view = negotiate(&snap, &BidParams::default());
        let d = decide(&me, &view, &snap, &MpcConfig::default(), params());
        assert!(d.u0 > 0.0);
    }

    #[test]
    fn three_vehicle_i3_has_precedence_rows_until_i1_clears() {
        let w = world();
        let kmh = |x: f64| x / 3.6;
        let snap = Snapshot::new(vec![
            veh(&w, 1, Approach::South, Maneuver::Right, 25.75, kmh(51.0)),
            veh(&w, 2, Approach::South, Maneuver::Straight, 17.75, kmh(44.0)),
            veh(&w, 3, Approach::West, Maneuver::Straight, 23.75, kmh(53.0)),
        ]);
        let view = negotiate(&snap, &BidParams::default());
        let cfg = MpcConfig::default();
        let i3 = snap.get(AgentId(3)).unwrap();
        let pred = predict_conflicts(i3, &view, &snap, &cfg, params());
        let o1 = pred.others.iter().find(|o| o.id == AgentId(1)).unwrap();
        assert_eq!(o1.precedence.len(), 1);
        let pr = o1.precedence[0];
        assert_eq!(pr.point, 1);
        // i1 needs 6 m + clearance at 51 km/h.
        let v1 = kmh(51.0);
        let want = ((6.0 + cfg.crossing_clearance) / (v1 * TS)).floor() as usize + 1;
        assert_eq!(pr.crossed_by_step, want);

        let limits = safety_limits(i3, &pred, &cfg);
        let first_on_path = o1.on_my_path.iter().position(|c| c.is_some()).unwrap();
        let end = w.path(Approach::South, Maneuver::Right).total_length();
        for (t, l) in limits.iter().enumerate() {
            if o1.states[t].p > end {
                assert!(l.is_none(), "i1 has left the layout at step {t}");
                continue;
            }
            let l = l.expect("i1 constrains i3 while it is in the layout");
            if t < first_on_path {
                assert!(matches!(l.source, SafetySource::Precedence { point: 1, .. }));
                assert!((l.limit - (35.25 - 3.5)).abs() < 1e-12);
            } else {
                assert!(matches!(l.source, SafetySource::RearEnd { .. }));
            }
        }
    }

    #[test]
    fn stopped_obstacle_keeps_gap_closed_loop() {
        let w = world();
        let cfg = MpcConfig {
            horizon: 60,
            ..Default::default()
        };
        let obstacle = veh(&w, 2, Approach::South, Maneuver::Straight, 30.0, 0.0);
        let mut me = veh(&w, 1, Approach::South, Maneuver::Straight, 10.0, 8.0);
        me.v_ref = 12.0;
        for _ in 0..400 {
            let snap = Snapshot::new(vec![me.clone(), obstacle.clone()]);
            let view = negotiate(&snap, &BidParams::default());
            let d = decide(&me, &view, &snap, &cfg, params());
            me.state = crate::dynamics::step(me.state, d.u0, params()).state;
            me.input = d.u0;
            assert!(30.0 - me.state.p > cfg.standstill_gap - 1e-6);
        }
        assert!(me.state.v < 0.05);
    }

    #[test]
    fn decide_is_deterministic() {
        let w = world();
        let snap = Snapshot::new(vec![
            veh(&w, 1, Approach::South, Maneuver::Right, 25.75, 14.0),
            veh(&w, 3, Approach::West, Maneuver::Straight, 23.75, 14.7),
        ]);
        let view = negotiate(&snap, &BidParams::default());
        let me = snap.get(AgentId(3)).unwrap();
        let a = decide(me, &view, &snap, &MpcConfig::default(), params());
        let b = decide(me, &view, &snap, &MpcConfig::default(), params());
        assert_eq!(a, b);
    }

    #[test]
    fn fallback_never_reverses() {
        let cfg = MpcConfig::default();
        assert_eq!(fallback_input(0.0, &cfg, params()), 0.0);
        assert!((fallback_input(0.1, &cfg, params()) + 0.1 / TS).abs() < 1e-12);
        assert_eq!(fallback_input(10.0, &cfg, params()), -9.0);
    }

    fn limits_for(me_id: u32, vehicles: Vec<VehicleSnapshot>) -> Vec<Option<SafetyBound>> {
        let snap = Snapshot::new(vehicles);
        let view = negotiate(&snap, &BidParams::default());
        let me = snap.get(AgentId(me_id)).unwrap();
        let cfg = MpcConfig::default();
        let pred = predict_conflicts(me, &view, &snap, &cfg, params());
        safety_limits(me, &pred, &cfg)
    }

    #[test]
    fn faster_follower_in_the_same_lane_is_ignored() {
        let w = world();
        let leader = veh(&w, 1, Approach::South, Maneuver::Straight, 25.0, 1.0);
        let follower = veh(&w, 2, Approach::South, Maneuver::Right, 10.0, 12.0);
        let snap = Snapshot::new(vec![leader.clone(), follower.clone()]);
        let view = negotiate(&snap, &BidParams::default());
        // The follower outbids its leader at point 1.
        assert!(view.of(AgentId(1)).unwrap().higher_at.contains_key(&AgentId(2)));
        assert!(limits_for(1, vec![leader, follower]).iter().all(Option::is_none));
    }

    #[test]
    fn vehicle_inside_the_gap_holds_the_point() {
        let w = world();
        // Stopped 2.25 m before point 1 on its path, so it bids low.
        let parked = veh(&w, 2, Approach::West, Maneuver::Straight, 33.0, 0.0);
        let far = veh(&w, 1, Approach::South, Maneuver::Straight, 15.0, 12.0);
        let lim = limits_for(1, vec![far, parked.clone()]);
        assert!(lim.iter().all(|b| b.is_some_and(|b| (b.limit - 28.25).abs() < 1e-9)));
        // Once the subject is that close too, the auction decides.
        let near = veh(&w, 1, Approach::South, Maneuver::Straight, 29.5, 12.0);
        assert!(limits_for(1, vec![near, parked]).iter().all(Option::is_none));
    }

    #[test]
    fn stalled_holder_keeps_the_subject_out_of_the_box() {
        let w = world();
        let me = veh(&w, 1, Approach::South, Maneuver::Straight, 15.0, 10.0);
        // Holds point 2 (the subject's second) and is braking to a stop
        // short of it.
        let mut holder = veh(&w, 2, Approach::East, Maneuver::Straight, 20.0, 10.0);
        holder.input = -9.0;
        let lim = limits_for(1, vec![me.clone(), holder.clone()]);
        assert!(lim.iter().all(|b| b.is_some_and(|b| (b.limit - 28.25).abs() < 1e-9)));
        // Moving through: the subject may wait at point 2 itself.
        holder.input = 0.0;
        let lim = limits_for(1, vec![me, holder]);
        assert!((lim[0].unwrap().limit - 31.75).abs() < 1e-9);
        assert!(lim.last().unwrap().is_none());
    }
}
