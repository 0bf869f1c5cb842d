//! Deterministic stepped 2D highway environment in lane-centric (Frenet)
//! coordinates: map topology, vehicle kinematics, spawning, collision and
//! TTC detection.

pub mod geometry;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
pub use geometry::{MapSpec, RoadGeometry, Segment, SegmentKind};

pub const DT: f64 = 0.1;
/// Speed overshoot tolerance above v_max.
pub const SPEED_EPS: f64 = 0.5;
/// Adversarial driving area: 22.5 m front and rear, two lanes each side.
pub const ADV_LONG_HALF: f64 = 22.5;
pub const ADV_LANE_HALF: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Sv,
    Bv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub role: Role,
    /// Lane index, 1 = leftmost.
    pub lane: u32,
    /// Longitudinal arc position, m.
    pub s: f64,
    /// Lateral offset from the assigned lane centerline, m (positive rightward).
    pub d: f64,
    /// Heading relative to the road tangent, rad.
    pub heading_err: f64,
    /// Longitudinal speed, m/s.
    pub v_s: f64,
    /// Lateral speed, m/s.
    pub v_t: f64,
    /// Longitudinal acceleration, m/s^2.
    pub a: f64,
    pub length: f64,
    pub width: f64,
    /// Per-episode speed limit, m/s.
    pub v_max: f64,
}

impl VehicleState {
    /// Lateral coordinate measured from the lane-1 centerline.
    pub fn lat(&self, geo: &RoadGeometry) -> f64 {
        geo.lane_center(self.lane) + self.d
    }

    /// Front-bumper arc position.
    pub fn front(&self) -> f64 {
        self.s + self.length / 2.0
    }

    /// Rear-bumper arc position.
    pub fn rear(&self) -> f64 {
        self.s - self.length / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    CollisionSvBv { sv: u32, bv: u32 },
    CollisionBvBv { a: u32, b: u32 },
    BoundaryViolation { id: u32 },
    SvReachedEnd,
}

impl Event {
    /// Events that end the round. Collisions and road end restart the
    /// round; a boundary violation also ends it since the violating
    /// vehicle has left the drivable surface.
    pub fn is_terminal(&self) -> bool {
        true
    }

    pub fn involves(&self, id: u32) -> bool {
        match *self {
            Event::CollisionSvBv { sv, bv } => sv == id || bv == id,
            Event::CollisionBvBv { a, b } => a == id || b == id,
            Event::BoundaryViolation { id: v } => v == id,
            Event::SvReachedEnd => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Simulation time; always step_index * DT exactly.
    pub t: f64,
    pub step_index: u64,
    pub vehicles: Vec<VehicleState>,
    pub rng_seed: u64,
    pub events: Vec<Event>,
}

impl WorldState {
    pub fn vehicle(&self, id: u32) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn sv(&self) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.role == Role::Sv)
    }

    pub fn is_terminal(&self) -> bool {
        self.events.iter().any(|e| e.is_terminal())
    }
}

/// Point-mass longitudinal model plus kinematic lateral motion; replaces a
/// full per-model vehicle dynamics stack.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Full-throttle acceleration, m/s^2.
    pub a_max: f64,
    /// Full-brake deceleration, m/s^2.
    pub b_max: f64,
    /// Linear speed decay, 1/s.
    pub drag: f64,
    /// Lane-change maneuver duration, s.
    pub lane_change_duration: f64,
    pub dt: f64,
    pub wheelbase: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            a_max: 3.0,
            b_max: 8.0,
            drag: 0.01,
            lane_change_duration: 2.5,
            dt: DT,
            wheelbase: 2.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpawnConfig {
    pub bv_count: u32,
    pub with_sv: bool,
    /// Episode speed limit, m/s.
    pub v_max: f64,
    /// Minimum bumper-to-bumper gap at spawn, m.
    pub min_gap: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
}

impl SpawnConfig {
    pub fn new(bv_count: u32, with_sv: bool, v_max: f64) -> Self {
        SpawnConfig {
            bv_count,
            with_sv,
            v_max,
            min_gap: 10.0,
            vehicle_length: 4.7,
            vehicle_width: 1.9,
        }
    }
}

/// Place vehicles in the init area with non-overlapping boxes and initial
/// speeds in [0.5, 0.8] * v_max. Identical seeds yield identical worlds.
pub fn spawn(geo: &RoadGeometry, cfg: &SpawnConfig, seed: u64) -> Result<WorldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.bv_count + if cfg.with_sv { 1 } else { 0 };
    if n == 0 {
        return Err(Error::Spawn("no vehicles requested".into()));
    }
    let lanes = geo.spec().main_lane_count;
    let [i0, i1] = geo.spec().init_area;
    let per_lane = (n + lanes - 1) / lanes;
    let slot = (i1 - i0) / per_lane as f64;
    let need = cfg.min_gap + cfg.vehicle_length;
    if slot < need {
        return Err(Error::Spawn(format!(
            "init area {:.0} m cannot hold {} vehicles per lane with {} m gaps",
            i1 - i0,
            per_lane,
            cfg.min_gap
        )));
    }
    // The SV sits mid-pack so adversarial interactions start early.
    let sv_index = if cfg.with_sv { n / 2 } else { u32::MAX };
    let jitter_half = (slot - need) / 2.0;
    let mut vehicles = Vec::with_capacity(n as usize);
    for i in 0..n {
        let lane = 1 + i % lanes;
        let slot_idx = i / lanes;
        let center = i0 + cfg.vehicle_length / 2.0 + slot * slot_idx as f64 + slot / 2.0;
        let s = center + rng.gen_range(-jitter_half..=jitter_half) * 0.98;
        let v_s = rng.gen_range(0.5..=0.8) * cfg.v_max;
        vehicles.push(VehicleState {
            id: i,
            role: if i == sv_index { Role::Sv } else { Role::Bv },
            lane,
            s,
            d: 0.0,
            heading_err: 0.0,
            v_s,
            v_t: 0.0,
            a: 0.0,
            length: cfg.vehicle_length,
            width: cfg.vehicle_width,
            v_max: cfg.v_max,
        });
    }
    let world = WorldState {
        t: 0.0,
        step_index: 0,
        vehicles,
        rng_seed: seed,
        events: Vec::new(),
    };
    // Never allow a silent overlap out of spawn.
    for i in 0..world.vehicles.len() {
        for j in (i + 1)..world.vehicles.len() {
            let (a, b) = (&world.vehicles[i], &world.vehicles[j]);
            if a.lane == b.lane && (a.s - b.s).abs() < a.length / 2.0 + b.length / 2.0 + cfg.min_gap
            {
                return Err(Error::Spawn(format!(
                    "vehicles {} and {} spawned closer than the minimum gap",
                    a.id, b.id
                )));
            }
        }
    }
    Ok(world)
}

/// Oriented rectangle in the (s, lat) road frame.
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub cx: f64,
    pub cy: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub angle: f64,
}

impl Obb {
    pub fn of(v: &VehicleState, geo: &RoadGeometry) -> Self {
        Obb {
            cx: v.s,
            cy: v.lat(geo),
            half_len: v.length / 2.0,
            half_wid: v.width / 2.0,
            angle: v.heading_err,
        }
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (sin, cos) = self.angle.sin_cos();
        [(cos, sin), (-sin, cos)]
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let [(ux, uy), (vx, vy)] = self.axes();
        let (l, w) = (self.half_len, self.half_wid);
        [
            (self.cx + ux * l + vx * w, self.cy + uy * l + vy * w),
            (self.cx + ux * l - vx * w, self.cy + uy * l - vy * w),
            (self.cx - ux * l + vx * w, self.cy - uy * l + vy * w),
            (self.cx - ux * l - vx * w, self.cy - uy * l - vy * w),
        ]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let corners_a = self.corners();
        let corners_b = other.corners();
        for (ax, ay) in self.axes().into_iter().chain(other.axes()) {
            let proj = |cs: &[(f64, f64); 4]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &(x, y) in cs {
                    let p = x * ax + y * ay;
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
                (lo, hi)
            };
            let (alo, ahi) = proj(&corners_a);
            let (blo, bhi) = proj(&corners_b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }
}

/// Sub-samples per step when sweeping collision checks; with |v| <= 40 m/s
/// and dt = 0.1 s the relative motion per sample stays below half a car.
const SWEEP_SAMPLES: u32 = 10;

/// Advance the world one step under the given controls.
///
/// Semi-implicit Euler: a = throttle*a_max - brake*b_max - drag*v_s,
/// v' = clamp(v + a dt, 0, v_max + eps), s' = s + v' dt; lateral motion is
/// kinematic from the steering angle. Collision, boundary and road-end
/// events for the step are appended to the world and returned.
pub fn step(
    world: &WorldState,
    geo: &RoadGeometry,
    cfg: &DynamicsConfig,
    controls: &BTreeMap<u32, ControlSignal>,
) -> Result<(WorldState, Vec<Event>)> {
    let mut next = world.clone();
    next.step_index = world.step_index + 1;
    next.t = next.step_index as f64 * cfg.dt;

    let prev: Vec<(f64, f64, f64)> = world
        .vehicles
        .iter()
        .map(|v| (v.s, v.lat(geo), v.heading_err))
        .collect();

    for v in &mut next.vehicles {
        let ctl = controls.get(&v.id).ok_or_else(|| {
            Error::Contract(format!("missing control for live vehicle {}", v.id))
        })?;
        let a = ctl.throttle * cfg.a_max - ctl.brake * cfg.b_max - cfg.drag * v.v_s;
        let v_new = (v.v_s + a * cfg.dt).clamp(0.0, v.v_max + SPEED_EPS);
        let s_new = v.s + v_new * cfg.dt;
        // Heading relative to the road tangent: steering turns the body,
        // road curvature rotates the tangent underneath it.
        let yaw_rate = v_new / cfg.wheelbase * ctl.steering.tan() - geo.curvature_at(v.s) * v_new;
        let heading = v.heading_err + yaw_rate * cfg.dt;
        let lat_new = v.lat(geo) + v_new * heading.sin() * cfg.dt;

        v.a = a;
        v.v_s = v_new;
        v.s = s_new;
        v.heading_err = heading;
        v.v_t = v_new * heading.sin();
        let lane = geo.nearest_lane(lat_new, s_new);
        v.lane = lane;
        v.d = lat_new - geo.lane_center(lane);
    }

    let mut events = Vec::new();
    // Swept collision detection: interpolate pose pairs through the step.
    for i in 0..next.vehicles.len() {
        for j in (i + 1)..next.vehicles.len() {
            let (va, vb) = (&next.vehicles[i], &next.vehicles[j]);
            if (va.s - vb.s).abs() > 30.0 {
                continue;
            }
            let (pa, pb) = (prev[i], prev[j]);
            let (na, nb) = (
                (va.s, va.lat(geo), va.heading_err),
                (vb.s, vb.lat(geo), vb.heading_err),
            );
            let hit = (0..=SWEEP_SAMPLES).any(|k| {
                let f = k as f64 / SWEEP_SAMPLES as f64;
                let lerp = |p: (f64, f64, f64), n: (f64, f64, f64)| Obb {
                    cx: p.0 + (n.0 - p.0) * f,
                    cy: p.1 + (n.1 - p.1) * f,
                    half_len: va.length / 2.0,
                    half_wid: va.width / 2.0,
                    angle: p.2 + (n.2 - p.2) * f,
                };
                let mut ra = lerp(pa, na);
                let mut rb = lerp(pb, nb);
                ra.half_len = va.length / 2.0;
                ra.half_wid = va.width / 2.0;
                rb.half_len = vb.length / 2.0;
                rb.half_wid = vb.width / 2.0;
                ra.overlaps(&rb)
            });
            if hit {
                let ev = match (va.role, vb.role) {
                    (Role::Sv, Role::Bv) => Event::CollisionSvBv { sv: va.id, bv: vb.id },
                    (Role::Bv, Role::Sv) => Event::CollisionSvBv { sv: vb.id, bv: va.id },
                    _ => Event::CollisionBvBv { a: va.id, b: vb.id },
                };
                events.push(ev);
            }
        }
    }
    for v in &next.vehicles {
        if v.d.abs() > geo.lane_width() {
            events.push(Event::BoundaryViolation { id: v.id });
        }
        if v.role == Role::Sv && v.s >= geo.total_length() {
            events.push(Event::SvReachedEnd);
        }
    }
    next.events.extend(events.iter().copied());
    Ok((next, events))
}

/// TTC horizon and resolution for constant-velocity extrapolation.
const TTC_HORIZON: f64 = 10.0;
const TTC_RES: f64 = 0.01;

/// Minimum time-to-collision between the SV and any BV under
/// constant-velocity extrapolation of both rectangles in the road frame.
/// Infinite when no future overlap within the horizon.
pub fn ttc_sv(world: &WorldState, geo: &RoadGeometry) -> f64 {
    let Some(sv) = world.sv() else {
        return f64::INFINITY;
    };
    let sv_lat = sv.lat(geo);
    let mut best = f64::INFINITY;
    for bv in world.vehicles.iter().filter(|v| v.role == Role::Bv) {
        let bv_lat = bv.lat(geo);
        // Quick reject: relative displacement over the horizon cannot
        // close the current gap.
        let reach_s = (sv.v_s - bv.v_s).abs() * TTC_HORIZON + sv.length + bv.length;
        let reach_t = (sv.v_t - bv.v_t).abs() * TTC_HORIZON + sv.width + bv.width;
        if (sv.s - bv.s).abs() > reach_s || (sv_lat - bv_lat).abs() > reach_t {
            continue;
        }
        let steps = (TTC_HORIZON / TTC_RES) as u32;
        for k in 0..=steps {
            let tau = k as f64 * TTC_RES;
            if tau >= best {
                break;
            }
            let ra = Obb {
                cx: sv.s + sv.v_s * tau,
                cy: sv_lat + sv.v_t * tau,
                half_len: sv.length / 2.0,
                half_wid: sv.width / 2.0,
                angle: sv.heading_err,
            };
            let rb = Obb {
                cx: bv.s + bv.v_s * tau,
                cy: bv_lat + bv.v_t * tau,
                half_len: bv.length / 2.0,
                half_wid: bv.width / 2.0,
                angle: bv.heading_err,
            };
            if ra.overlaps(&rb) {
                best = best.min(tau);
                break;
            }
        }
    }
    best
}

/// True iff the BV sits inside the adversarial driving area around the SV:
/// 45 m longitudinally (22.5 each way), five lanes laterally.
pub fn adversarial_area_contains(ego: &VehicleState, sv: &VehicleState) -> bool {
    (ego.s - sv.s).abs() <= ADV_LONG_HALF
        && (ego.lane as i64 - sv.lane as i64).abs() <= ADV_LANE_HALF
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> RoadGeometry {
        RoadGeometry::build(MapSpec::default_map()).unwrap()
    }

    fn vehicle(id: u32, role: Role, lane: u32, s: f64, v_s: f64) -> VehicleState {
        VehicleState {
            id,
            role,
            lane,
            s,
            d: 0.0,
            heading_err: 0.0,
            v_s,
            v_t: 0.0,
            a: 0.0,
            length: 4.7,
            width: 1.9,
            v_max: 33.333,
        }
    }

    fn world_of(vehicles: Vec<VehicleState>) -> WorldState {
        WorldState {
            t: 0.0,
            step_index: 0,
            vehicles,
            rng_seed: 0,
            events: Vec::new(),
        }
    }

    #[test]
    fn spawn_is_deterministic() {
        let geo = geo();
        let cfg = SpawnConfig::new(15, true, 120.0 / 3.6);
        let w1 = spawn(&geo, &cfg, 42).unwrap();
        let w2 = spawn(&geo, &cfg, 42).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(w1.vehicles.len(), 16);
        assert_eq!(w1.vehicles.iter().filter(|v| v.role == Role::Sv).count(), 1);
    }

    #[test]
    fn spawn_gaps_and_speeds() {
        let geo = geo();
        let v_max = 120.0 / 3.6;
        let cfg = SpawnConfig::new(15, true, v_max);
        for seed in 0..20 {
            let w = spawn(&geo, &cfg, seed).unwrap();
            for a in &w.vehicles {
                assert!(a.v_s >= 0.5 * v_max - 1e-9 && a.v_s <= 0.8 * v_max + 1e-9);
                let [i0, i1] = geo.spec().init_area;
                assert!(a.rear() >= i0 - 1.0 && a.front() <= i1 + 1.0);
                for b in &w.vehicles {
                    if a.id != b.id && a.lane == b.lane {
                        let gap = (a.s - b.s).abs() - a.length / 2.0 - b.length / 2.0;
                        assert!(gap >= 10.0, "gap {gap}");
                    }
                }
            }
        }
    }

    #[test]
    fn spawn_rejects_insufficient_space() {
        let mut spec = MapSpec::default_map();
        spec.init_area = [320.0, 360.0];
        let geo = RoadGeometry::build(spec).unwrap();
        let cfg = SpawnConfig::new(15, true, 30.0);
        assert!(matches!(spawn(&geo, &cfg, 1), Err(Error::Spawn(_))));
    }

    #[test]
    fn euler_step_hand_values() {
        let geo = geo();
        let cfg = DynamicsConfig {
            drag: 0.0,
            ..DynamicsConfig::default()
        };
        let w = world_of(vec![vehicle(0, Role::Sv, 2, 1000.0, 20.0)]);
        let mut controls = BTreeMap::new();
        controls.insert(
            0,
            ControlSignal {
                throttle: 1.0,
                brake: 0.0,
                steering: 0.0,
            },
        );
        let (next, events) = step(&w, &geo, &cfg, &controls).unwrap();
        assert!(events.is_empty());
        let v = &next.vehicles[0];
        assert!((v.v_s - 20.3).abs() < 1e-12);
        assert!((v.s - 1002.03).abs() < 1e-12);
        assert_eq!(next.t, 0.1);

        // No force, no drag: speed unchanged.
        controls.insert(0, ControlSignal::coast());
        let (next2, _) = step(&next, &geo, &cfg, &controls).unwrap();
        assert_eq!(next2.vehicles[0].v_s, 20.3);
        assert_eq!(next2.t, 0.2);
    }

    #[test]
    fn missing_control_is_contract_violation() {
        let geo = geo();
        let cfg = DynamicsConfig::default();
        let w = world_of(vec![vehicle(0, Role::Sv, 2, 1000.0, 20.0)]);
        let controls = BTreeMap::new();
        assert!(matches!(
            step(&w, &geo, &cfg, &controls),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn closing_pair_collides_within_one_step() {
        let geo = geo();
        let cfg = DynamicsConfig::default();
        // Gap 0.3 m, closing at 5 m/s: overlap mid-step.
        let rear = vehicle(0, Role::Sv, 2, 1000.0, 25.0);
        let lead = vehicle(1, Role::Bv, 2, 1000.0 + 4.7 + 0.3, 20.0);
        let w = world_of(vec![rear, lead]);
        let mut controls = BTreeMap::new();
        controls.insert(0, ControlSignal::coast());
        controls.insert(1, ControlSignal::coast());
        let (_, events) = step(&w, &geo, &cfg, &controls).unwrap();
        assert!(matches!(events[0], Event::CollisionSvBv { sv: 0, bv: 1 }));
    }

    #[test]
    fn time_is_exactly_step_times_dt() {
        let geo = geo();
        let cfg = DynamicsConfig::default();
        let mut w = world_of(vec![vehicle(0, Role::Sv, 2, 100.0, 10.0)]);
        let mut controls = BTreeMap::new();
        controls.insert(0, ControlSignal::coast());
        for k in 1..=50u64 {
            let (next, _) = step(&w, &geo, &cfg, &controls).unwrap();
            assert_eq!(next.t, k as f64 * 0.1);
            w = next;
        }
    }

    #[test]
    fn ttc_hand_values() {
        let geo = geo();
        // Bumper gap 10 m, closing 20 m/s -> 0.5 s.
        let sv = vehicle(0, Role::Sv, 2, 1000.0, 30.0);
        let bv = vehicle(1, Role::Bv, 2, 1000.0 + 4.7 + 10.0, 10.0);
        let w = world_of(vec![sv, bv]);
        let ttc = ttc_sv(&w, &geo);
        assert!((ttc - 0.5).abs() < 0.011, "ttc {ttc}");

        // Same speed behind: infinite.
        let sv = vehicle(0, Role::Sv, 2, 1000.0, 20.0);
        let bv = vehicle(1, Role::Bv, 2, 950.0, 20.0);
        let w = world_of(vec![sv, bv]);
        assert_eq!(ttc_sv(&w, &geo), f64::INFINITY);

        // Nothing around: infinite.
        let w = world_of(vec![vehicle(0, Role::Sv, 2, 1000.0, 20.0)]);
        assert_eq!(ttc_sv(&w, &geo), f64::INFINITY);
    }

    #[test]
    fn adversarial_area_boundaries() {
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 20.0);
        let at = |lane: u32, ds: f64| vehicle(1, Role::Bv, lane, 1000.0 + ds, 20.0);
        assert!(adversarial_area_contains(&at(5, 22.5), &sv));
        assert!(!adversarial_area_contains(&at(3, 22.6), &sv));
        assert!(!adversarial_area_contains(&at(6, 0.0), &sv)); // three lanes over
        // Symmetry under sign reflection.
        assert!(adversarial_area_contains(&at(1, -22.5), &sv));
        assert!(!adversarial_area_contains(&at(3, -22.6), &sv));
    }

    #[test]
    fn replay_determinism() {
        let geo = geo();
        let cfg = DynamicsConfig::default();
        let spawn_cfg = SpawnConfig::new(15, true, 30.0);
        let w0 = spawn(&geo, &spawn_cfg, 7).unwrap();
        let mut controls = BTreeMap::new();
        for v in &w0.vehicles {
            controls.insert(
                v.id,
                ControlSignal {
                    throttle: 0.3,
                    brake: 0.0,
                    steering: 0.001,
                },
            );
        }
        let run = |mut w: WorldState| {
            for _ in 0..100 {
                let (n, _) = step(&w, &geo, &cfg, &controls).unwrap();
                w = n;
            }
            w
        };
        assert_eq!(run(w0.clone()), run(w0));
    }
}
