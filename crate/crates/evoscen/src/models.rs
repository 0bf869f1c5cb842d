//! Driver models sharing one decision interface: the Nilsson-style
//! utility NPC, the Stackelberg game-theoretic SUT, the learned DualDM
//! policy wrapper and a scripted constant-speed driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::discretize_lateral;
use crate::error::{Error, Result};
use crate::learner::net::Mlp;
use crate::learner::td3::ACTION_DIM;
use crate::observation::{ObservationGrid, GRID_LEN};
use crate::world::{RoadGeometry, VehicleState, WorldState};

/// Lane-change sign convention matches the control layer: +1 moves one
/// lane left (toward lane 1), -1 one lane right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverDecision {
    Strategic { v_target: f64, lane_change: i8 },
    Operational { a_long: f64, lane_change: i8 },
}

impl DriverDecision {
    pub fn lane_change(&self) -> i8 {
        match self {
            DriverDecision::Strategic { lane_change, .. }
            | DriverDecision::Operational { lane_change, .. } => *lane_change,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    Nilsson,
    Stackelberg,
    DualDm,
    ConstantSpeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBinding {
    pub vehicle_id: u32,
    pub kind: ModelKind,
}

fn signed_change(from: u32, to: u32) -> i8 {
    // Lower lane index is further left.
    if to < from {
        1
    } else if to > from {
        -1
    } else {
        0
    }
}

/// Bumper-to-bumper gap to the nearest vehicle ahead of `ego` in `lane`.
fn leader_in_lane<'a>(
    world: &'a WorldState,
    ego: &VehicleState,
    lane: u32,
) -> Option<(&'a VehicleState, f64)> {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && v.lane == lane && v.rear() >= ego.front())
        .map(|v| (v, v.rear() - ego.front()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Bumper-to-bumper gap to the nearest vehicle behind `ego` in `lane`.
fn follower_in_lane<'a>(
    world: &'a WorldState,
    ego: &VehicleState,
    lane: u32,
) -> Option<(&'a VehicleState, f64)> {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && v.lane == lane && v.front() < ego.rear())
        .map(|v| (v, ego.rear() - v.front()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

// ---------------------------------------------------------------------
// Nilsson baseline NPC
// ---------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NilssonParams {
    pub w_distance: f64,
    pub w_speed: f64,
    pub w_change: f64,
    pub g_min: f64,
    pub ttc_min: f64,
    /// Constant-time-gap headway for the speed target.
    pub time_gap: f64,
    pub standstill: f64,
    pub horizon: f64,
    /// Utility margin a candidate lane must beat the current lane by.
    pub hysteresis: f64,
}

impl Default for NilssonParams {
    fn default() -> Self {
        NilssonParams {
            w_distance: 1.0,
            w_speed: 0.5,
            w_change: 0.3,
            g_min: 12.0,
            ttc_min: 3.0,
            time_gap: 1.0,
            standstill: 2.0,
            horizon: 100.0,
            hysteresis: 1.0,
        }
    }
}

/// Drivable distance ahead in `lane`: leader gap capped at the horizon,
/// and on the ramp lane additionally capped by the remaining merge window.
fn drivable_distance(
    world: &WorldState,
    geo: &RoadGeometry,
    ego: &VehicleState,
    lane: u32,
    params: &NilssonParams,
) -> f64 {
    let mut dd = leader_in_lane(world, ego, lane)
        .map(|(_, gap)| gap)
        .unwrap_or(params.horizon)
        .min(params.horizon);
    if geo.spec().has_ramp() && lane > geo.spec().main_lane_count {
        dd = dd.min((geo.spec().merge_window[1] - ego.s).max(0.0));
    }
    dd.max(0.0)
}

/// Mean speed of traffic ahead in `lane` within the horizon; free lane
/// counts as flowing at the ego's speed limit.
fn lane_mean_speed(
    world: &WorldState,
    ego: &VehicleState,
    lane: u32,
    params: &NilssonParams,
) -> f64 {
    let ahead: Vec<f64> = world
        .vehicles
        .iter()
        .filter(|v| {
            v.id != ego.id
                && v.lane == lane
                && v.rear() >= ego.front()
                && v.rear() - ego.front() <= params.horizon
        })
        .map(|v| v.v_s)
        .collect();
    if ahead.is_empty() {
        ego.v_max
    } else {
        ahead.iter().sum::<f64>() / ahead.len() as f64
    }
}

fn lane_utility(
    world: &WorldState,
    geo: &RoadGeometry,
    ego: &VehicleState,
    lane: u32,
    params: &NilssonParams,
) -> f64 {
    params.w_distance * drivable_distance(world, geo, ego, lane, params)
        + params.w_speed * lane_mean_speed(world, ego, lane, params)
        - params.w_change * (lane as f64 - ego.lane as f64).abs()
}

/// Gap acceptance for a move into `lane`: both neighbor gaps at least
/// g_min and closing-speed TTC toward each neighbor at least ttc_min.
pub fn gap_acceptable(
    world: &WorldState,
    ego: &VehicleState,
    lane: u32,
    params: &NilssonParams,
) -> bool {
    if let Some((leader, gap)) = leader_in_lane(world, ego, lane) {
        if gap < params.g_min {
            return false;
        }
        let closing = ego.v_s - leader.v_s;
        if closing > 0.0 && gap / closing < params.ttc_min {
            return false;
        }
    }
    if let Some((follower, gap)) = follower_in_lane(world, ego, lane) {
        if gap < params.g_min {
            return false;
        }
        let closing = follower.v_s - ego.v_s;
        if closing > 0.0 && gap / closing < params.ttc_min {
            return false;
        }
    }
    true
}

fn ctg_speed(ego: &VehicleState, gap: f64, params: &NilssonParams) -> f64 {
    ((gap - params.standstill) / params.time_gap).clamp(0.0, ego.v_max)
}

/// Lane-utility driver: picks the argmax-utility reachable lane, gated
/// by gap acceptance and hysteresis; speed follows a constant-time-gap
/// rule behind the current leader.
pub fn nilsson_decide(
    world: &WorldState,
    geo: &RoadGeometry,
    ego_id: u32,
    params: &NilssonParams,
) -> DriverDecision {
    let ego = world.vehicle(ego_id).expect("ego alive");
    let main = geo.spec().main_lane_count;
    let on_ramp = ego.lane > main;
    let mut candidates = vec![ego.lane];
    if on_ramp {
        candidates.push(main); // merging left is the only lateral option
    } else {
        if ego.lane > 1 {
            candidates.push(ego.lane - 1);
        }
        if ego.lane < main {
            candidates.push(ego.lane + 1);
        }
    }

    let u_keep = lane_utility(world, geo, ego, ego.lane, params);
    let mut best = (ego.lane, u_keep);
    for &lane in &candidates {
        if lane == ego.lane {
            continue;
        }
        let u = lane_utility(world, geo, ego, lane, params);
        if u > best.1 && u > u_keep + params.hysteresis && gap_acceptable(world, ego, lane, params)
        {
            best = (lane, u);
        }
    }

    let target_lane = best.0;
    let lane_change = signed_change(ego.lane, target_lane);
    let mut v_target = ego.v_max;
    if let Some((_, gap)) = leader_in_lane(world, ego, ego.lane) {
        v_target = v_target.min(ctg_speed(ego, gap, params));
    }
    if target_lane != ego.lane {
        if let Some((_, gap)) = leader_in_lane(world, ego, target_lane) {
            v_target = v_target.min(ctg_speed(ego, gap, params));
        }
    }
    DriverDecision::Strategic {
        v_target,
        lane_change,
    }
}

// ---------------------------------------------------------------------
// Stackelberg SUT
// ---------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StackelbergParams {
    pub w_progress: f64,
    pub w_risk: f64,
    pub w_lane_change: f64,
    pub g_min: f64,
    /// One planning step of the discrete game, seconds.
    pub plan_dt: f64,
    pub accel: f64,
    pub decel: f64,
}

impl Default for StackelbergParams {
    fn default() -> Self {
        StackelbergParams {
            w_progress: 1.0,
            w_risk: 4.0,
            w_lane_change: 5.0,
            g_min: 12.0,
            plan_dt: 1.0,
            accel: 2.0,
            decel: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Longitudinal {
    Hold,
    Accel,
    Decel,
}

fn speed_after(v: f64, v_max: f64, lon: Longitudinal, p: &StackelbergParams) -> f64 {
    match lon {
        Longitudinal::Hold => v,
        Longitudinal::Accel => (v + p.accel * p.plan_dt).min(v_max),
        Longitudinal::Decel => (v - p.decel * p.plan_dt).max(0.0),
    }
}

/// Predicted longitudinal interval after one planning step at the
/// trapezoidal average speed.
fn predicted_span(s: f64, len: f64, v0: f64, v1: f64, dt: f64) -> (f64, f64) {
    let s1 = s + 0.5 * (v0 + v1) * dt;
    (s1 - len / 2.0, s1 + len / 2.0)
}

fn spans_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Outcome of one SV action under the follower's assumed best response.
struct GameOutcome {
    payoff: f64,
    overlap: bool,
}

fn evaluate_sv_action(
    world: &WorldState,
    sv: &VehicleState,
    target_lane: u32,
    lon: Longitudinal,
    p: &StackelbergParams,
) -> GameOutcome {
    let v_next = speed_after(sv.v_s, sv.v_max, lon, p);

    // The nearest BV behind the SV in the intended lane is the follower
    // and may brake; every other vehicle is assumed to hold speed.
    let follower_id = world
        .vehicles
        .iter()
        .filter(|v| v.id != sv.id && v.lane == target_lane && v.s < sv.s)
        .min_by(|a, b| (sv.s - a.s).total_cmp(&(sv.s - b.s)))
        .map(|v| v.id);

    let mut overlap = false;
    let mut min_gap = f64::INFINITY;
    for v in &world.vehicles {
        if v.id == sv.id || (v.lane != sv.lane && v.lane != target_lane) {
            continue;
        }
        // Conflict with the vacated lane only lasts until the SV has
        // moved over, so check it at half the planning step.
        let dt = if target_lane != sv.lane && v.lane == sv.lane {
            p.plan_dt / 2.0
        } else {
            p.plan_dt
        };
        let frac = dt / p.plan_dt;
        let sv_v_at = sv.v_s + (v_next - sv.v_s) * frac;
        let sv_span = predicted_span(sv.s, sv.length, sv.v_s, sv_v_at, dt);
        let responses: &[Longitudinal] = if Some(v.id) == follower_id {
            &[Longitudinal::Hold, Longitudinal::Decel]
        } else {
            &[Longitudinal::Hold]
        };
        // Follower best response: prefers holding speed, brakes only to
        // avoid a predicted overlap.
        let mut best: Option<(f64, bool, f64)> = None; // (payoff, overlap, gap)
        for &resp in responses {
            let bv_full = speed_after(v.v_s, v.v_max, resp, p);
            let bv_v_at = v.v_s + (bv_full - v.v_s) * frac;
            let bv_span = predicted_span(v.s, v.length, v.v_s, bv_v_at, dt);
            let hit = spans_overlap(sv_span, bv_span);
            let gap = if bv_span.0 >= sv_span.1 {
                bv_span.0 - sv_span.1
            } else if sv_span.0 >= bv_span.1 {
                sv_span.0 - bv_span.1
            } else {
                0.0
            };
            let payoff = bv_full - if hit { 1e6 } else { 0.0 };
            if best.map_or(true, |(bp, _, _)| payoff > bp) {
                best = Some((payoff, hit, gap));
            }
        }
        let (_, hit, gap) = best.unwrap();
        overlap |= hit;
        min_gap = min_gap.min(gap);
    }

    let risk = if overlap {
        f64::INFINITY
    } else if min_gap < p.g_min {
        p.w_risk * (p.g_min - min_gap)
    } else {
        0.0
    };
    let payoff = p.w_progress * v_next
        - risk
        - p.w_lane_change * if target_lane != sv.lane { 1.0 } else { 0.0 };
    GameOutcome { payoff, overlap }
}

/// One-step leader-follower game over {keep,left,right}x{hold,accel,decel}.
/// Candidate order encodes the tie-break: keep > left > right and
/// hold > accel > decel; strictly greater payoff wins.
pub fn stackelberg_decide(
    world: &WorldState,
    geo: &RoadGeometry,
    sv_id: u32,
    params: &StackelbergParams,
) -> DriverDecision {
    let sv = world.vehicle(sv_id).expect("sv alive");
    let main = geo.spec().main_lane_count;
    let mut lanes = vec![sv.lane];
    if sv.lane > 1 {
        lanes.push(sv.lane - 1);
    }
    if sv.lane < main {
        lanes.push(sv.lane + 1);
    }

    let lons = [Longitudinal::Hold, Longitudinal::Accel, Longitudinal::Decel];
    let mut best: Option<(f64, u32, Longitudinal)> = None;
    for &lane in &lanes {
        for lon in lons {
            let outcome = evaluate_sv_action(world, sv, lane, lon, params);
            if outcome.overlap {
                continue; // never knowingly collide
            }
            if best.map_or(true, |(bp, _, _)| outcome.payoff > bp) {
                best = Some((outcome.payoff, lane, lon));
            }
        }
    }
    // Every branch predicting overlap: brake in lane as the least-bad move.
    let (_, lane, lon) = best.unwrap_or((f64::NEG_INFINITY, sv.lane, Longitudinal::Decel));
    let v_target = match lon {
        Longitudinal::Hold => sv.v_s,
        Longitudinal::Accel => sv.v_max,
        Longitudinal::Decel => speed_after(sv.v_s, sv.v_max, Longitudinal::Decel, params),
    };
    DriverDecision::Strategic {
        v_target,
        lane_change: signed_change(sv.lane, lane),
    }
}

#[cfg(test)]
pub(crate) fn stackelberg_choice_is_overlap_free(
    world: &WorldState,
    geo: &RoadGeometry,
    sv_id: u32,
    params: &StackelbergParams,
) -> bool {
    let sv = world.vehicle(sv_id).unwrap();
    let decision = stackelberg_decide(world, geo, sv_id, params);
    let lane = (sv.lane as i64 - decision.lane_change() as i64) as u32;
    let v_target = match decision {
        DriverDecision::Strategic { v_target, .. } => v_target,
        _ => unreachable!(),
    };
    let lon = if v_target > sv.v_s + 1e-9 {
        Longitudinal::Accel
    } else if v_target < sv.v_s - 1e-9 {
        Longitudinal::Decel
    } else {
        Longitudinal::Hold
    };
    let any_safe = {
        let main = geo.spec().main_lane_count;
        let mut lanes = vec![sv.lane];
        if sv.lane > 1 {
            lanes.push(sv.lane - 1);
        }
        if sv.lane < main {
            lanes.push(sv.lane + 1);
        }
        lanes.iter().any(|&l| {
            [Longitudinal::Hold, Longitudinal::Accel, Longitudinal::Decel]
                .iter()
                .any(|&lo| !evaluate_sv_action(world, sv, l, lo, params).overlap)
        })
    };
    !any_safe || !evaluate_sv_action(world, sv, lane, lon, params).overlap
}

// ---------------------------------------------------------------------
// DualDM policy wrapper
// ---------------------------------------------------------------------

const POLICY_HEADER: &str = "evoscen-net v1";

/// Serialize a policy network in the versioned text weight format.
pub fn policy_to_text(net: &Mlp) -> String {
    format!("{POLICY_HEADER}\n{}", net.to_text())
}

/// Load a policy network, validating the expected observation/action shape.
pub fn policy_from_text(text: &str) -> Result<Mlp> {
    let mut tokens = text.split_whitespace();
    for word in POLICY_HEADER.split_whitespace() {
        match tokens.next() {
            Some(t) if t == word => {}
            other => {
                return Err(Error::Parse(format!(
                    "bad policy header: expected {word}, got {other:?}"
                )))
            }
        }
    }
    let net = Mlp::from_tokens(&mut tokens)?;
    if net.input_dim() != GRID_LEN || net.output_dim() != ACTION_DIM {
        return Err(Error::Parse(format!(
            "policy shape {}->{} does not match the {GRID_LEN}->{ACTION_DIM} contract",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(net)
}

/// Deterministic forward pass of the shared policy: no exploration noise.
pub fn dualdm_decide(grid: &ObservationGrid, policy: &Mlp) -> DriverDecision {
    let out = policy.forward(grid.flat());
    DriverDecision::Operational {
        a_long: out[0],
        lane_change: discretize_lateral(out[1]),
    }
}

/// Scripted driver that maintains its spawn speed and lane.
pub fn constant_speed_decide(ego: &VehicleState) -> DriverDecision {
    DriverDecision::Strategic {
        v_target: ego.v_s,
        lane_change: 0,
    }
}

// ---------------------------------------------------------------------
// Population schedule
// ---------------------------------------------------------------------

/// Deterministic assignment of model kinds to BVs from configured
/// proportions: largest-remainder apportionment, then a seeded shuffle.
pub fn population_schedule(
    proportions: &[(ModelKind, f64)],
    bv_ids: &[u32],
    seed: u64,
) -> Result<Vec<ModelBinding>> {
    let total: f64 = proportions.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "population proportions sum to {total}, expected 1"
        )));
    }
    let n = bv_ids.len();
    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|(_, p)| (p * n as f64).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(i, (_, p))| (i, p * n as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut short = n - counts.iter().sum::<usize>();
    for (i, _) in remainders {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    let mut kinds = Vec::with_capacity(n);
    for ((kind, _), count) in proportions.iter().zip(&counts) {
        kinds.extend(std::iter::repeat(*kind).take(*count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kinds.shuffle(&mut rng);
    Ok(bv_ids
        .iter()
        .zip(kinds)
        .map(|(&vehicle_id, kind)| ModelBinding { vehicle_id, kind })
        .collect())
}
