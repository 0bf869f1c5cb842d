//! Per-step individual rewards, cooperative rewards, the even-split
//! allocation, and the five behavioral-constraint checks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::Modality;
use crate::world::{RoadGeometry, VehicleState, WorldState};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    pub r_c: f64,
    pub mu: f64,
    pub lambda: f64,
    pub d_desired: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub p_lc: f64,
    pub r_rv: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Front-distance cap when no leader exists, m.
    pub d_cap: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_c: -3.0,
            mu: 1.0,
            lambda: 10.0,
            d_desired: 15.0,
            delta1: 8000.0,
            delta2: 3000.0,
            p_lc: -0.1,
            r_rv: -0.3,
            eta1: 400.0,
            eta2: 4000.0,
            d_cap: 100.0,
        }
    }
}

/// SV-relative gaps feeding the cooperative reward, all bumper-to-bumper
/// and capped at d_cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvNeighborhood {
    pub d_front: f64,
    /// None when the adjacent lane does not exist at the SV's position.
    pub left: Option<(f64, f64)>,
    pub right: Option<(f64, f64)>,
}

/// Lane-change constraint violations. At most one r_rv is charged per
/// step regardless of how many are hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    LeftAtLeftmost,
    RightAtRightmost,
    LeftGapOccupied,
    RightGapOccupied,
    EnterRamp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ind: f64,
    pub r_cf: f64,
    pub r_lc: f64,
    pub r_rv_applied: f64,
    pub r_coop_share: f64,
    pub total: f64,
    pub modality: Modality,
}

/// Following-distance reward: -(d_front - d_desired)^2 / delta1.
pub fn following_reward(cfg: &RewardConfig, d_front: f64) -> f64 {
    let d = d_front.clamp(0.0, cfg.d_cap);
    -(d - cfg.d_desired) * (d - cfg.d_desired) / cfg.delta1
}

/// Car-following reward: mu * r_d_after + lambda * (r_d_after - r_d_before).
pub fn r_cf(cfg: &RewardConfig, r_d_before: f64, r_d_after: f64) -> f64 {
    cfg.mu * r_d_after + cfg.lambda * (r_d_after - r_d_before)
}

/// Lane-change reward, applied only on steps that emit a lane-change
/// decision: sgn(delta) * (delta/delta2)^2 + p_lc.
pub fn r_lc(cfg: &RewardConfig, d_target: f64, d_current: f64, lane_change_made: bool) -> f64 {
    if !lane_change_made {
        return 0.0;
    }
    let delta = d_target.clamp(0.0, cfg.d_cap) - d_current.clamp(0.0, cfg.d_cap);
    let scaled = delta / cfg.delta2;
    delta.signum() * scaled * scaled + cfg.p_lc
}

/// Bumper gap from `ego` to the nearest leader in `lane`, capped.
pub fn front_gap(world: &WorldState, ego: &VehicleState, lane: u32, d_cap: f64) -> f64 {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && v.lane == lane && v.s > ego.s)
        .map(|v| (v.rear() - ego.front()).max(0.0))
        .fold(d_cap, f64::min)
}

/// Bumper gap to the nearest follower in `lane`, capped.
pub fn rear_gap(world: &WorldState, ego: &VehicleState, lane: u32, d_cap: f64) -> f64 {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && v.lane == lane && v.s <= ego.s)
        .map(|v| (ego.rear() - v.front()).max(0.0))
        .fold(d_cap, f64::min)
}

/// Constraint check for a lane-change decision emitted this step.
/// `decision` is +1 left, -1 right (lane 1 is leftmost). The 10 m rule
/// looks at bumper gaps in the target lane.
pub fn violations(
    world: &WorldState,
    geo: &RoadGeometry,
    ego: &VehicleState,
    decision: i8,
) -> BTreeSet<Violation> {
    let mut out = BTreeSet::new();
    if decision == 0 {
        return out;
    }
    let lane_count = geo.lane_count_at(ego.s);
    let main = geo.spec().main_lane_count;
    if decision > 0 && ego.lane == 1 {
        out.insert(Violation::LeftAtLeftmost);
    }
    if decision < 0 && ego.lane >= lane_count {
        out.insert(Violation::RightAtRightmost);
    }
    let target = ego.lane as i64 - decision as i64;
    if target >= 1 && target <= lane_count as i64 {
        let target = target as u32;
        // Ramp lane sits beyond the main lanes; merging into it from the
        // main road is prohibited.
        if decision < 0 && ego.lane == main && target > main {
            out.insert(Violation::EnterRamp);
        }
        let front = front_gap(world, ego, target, f64::INFINITY);
        let rear = rear_gap(world, ego, target, f64::INFINITY);
        if front < 10.0 || rear < 10.0 {
            out.insert(if decision > 0 {
                Violation::LeftGapOccupied
            } else {
                Violation::RightGapOccupied
            });
        }
    }
    out
}

/// Inputs for one agent's individual reward at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub collided_or_out: bool,
    pub r_d_before: f64,
    pub r_d_after: f64,
    pub d_target: f64,
    pub d_current: f64,
    pub lane_change_made: bool,
    pub violated: bool,
}

/// Individual reward: r_c on a collision/boundary step, else the sum of
/// the car-following, lane-change and constraint terms.
pub fn individual_reward(cfg: &RewardConfig, ctx: &StepContext) -> f64 {
    if ctx.collided_or_out {
        return cfg.r_c;
    }
    let cf = r_cf(cfg, ctx.r_d_before, ctx.r_d_after);
    let lc = r_lc(cfg, ctx.d_target, ctx.d_current, ctx.lane_change_made);
    let rv = if ctx.violated { cfg.r_rv } else { 0.0 };
    cf + lc + rv
}

/// Measure the SV's neighborhood gaps for the cooperative reward.
pub fn sv_neighborhood(world: &WorldState, geo: &RoadGeometry, cfg: &RewardConfig) -> Option<SvNeighborhood> {
    let sv = world.sv()?;
    let lane_count = geo.lane_count_at(sv.s);
    let side = |lane: i64| -> Option<(f64, f64)> {
        if lane < 1 || lane > lane_count as i64 {
            return None;
        }
        let lane = lane as u32;
        Some((
            front_gap(world, sv, lane, cfg.d_cap),
            rear_gap(world, sv, lane, cfg.d_cap),
        ))
    };
    Some(SvNeighborhood {
        d_front: front_gap(world, sv, sv.lane, cfg.d_cap),
        left: side(sv.lane as i64 - 1),
        right: side(sv.lane as i64 + 1),
    })
}

/// Space-compression reward from before/after SV-neighborhood snapshots:
/// r_l + r_r + r_f. A missing adjacent lane contributes 0.
pub fn cooperative_reward(cfg: &RewardConfig, before: &SvNeighborhood, after: &SvNeighborhood) -> f64 {
    let side = |b: Option<(f64, f64)>, a: Option<(f64, f64)>| -> f64 {
        match (b, a) {
            (Some((bf, bb)), Some((af, ab))) => {
                ((bf * bf).min(bb * bb) - (af * af).min(ab * ab)) / cfg.eta1
            }
            _ => 0.0,
        }
    };
    let r_l = side(before.left, after.left);
    let r_r = side(before.right, after.right);
    let r_f = (before.d_front * before.d_front - after.d_front * after.d_front) / cfg.eta2;
    r_l + r_r + r_f
}

/// Even-split allocation of the cooperative reward over the agents inside
/// the adversarial driving area.
pub fn allocate(
    r_ind_per_agent: &[(u32, f64)],
    r_coop: f64,
    adversarial_ids: &BTreeSet<u32>,
) -> Result<Vec<(u32, RewardBreakdown)>> {
    let n = adversarial_ids.len();
    if n == 0 && r_coop != 0.0 {
        return Err(Error::Contract(
            "cooperative reward computed with no agents in the adversarial area".into(),
        ));
    }
    Ok(r_ind_per_agent
        .iter()
        .map(|&(id, r_ind)| {
            let inside = adversarial_ids.contains(&id);
            let share = if inside { r_coop / n as f64 } else { 0.0 };
            (
                id,
                RewardBreakdown {
                    r_ind,
                    r_cf: 0.0,
                    r_lc: 0.0,
                    r_rv_applied: 0.0,
                    r_coop_share: share,
                    total: r_ind + share,
                    modality: if inside {
                        Modality::Adversarial
                    } else {
                        Modality::NonAdversarial
                    },
                },
            )
        })
        .collect())
}
