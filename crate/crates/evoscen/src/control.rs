//! Actuation layer: action mapping, the dual-PID lateral controller and
//! the longitudinal speed PID, plus the lane-change reference profile.

use serde::{Deserialize, Serialize};

/// Raw policy output, both components in [-1, 1] (clamped on ingestion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionPair {
    pub a_long: f64,
    pub a_lat: f64,
}

impl ActionPair {
    pub fn new(a_long: f64, a_lat: f64) -> Self {
        ActionPair {
            a_long: a_long.clamp(-1.0, 1.0),
            a_lat: a_lat.clamp(-1.0, 1.0),
        }
    }
}

/// Actuator command consumed by the world integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub throttle: f64,
    pub brake: f64,
    pub steering: f64,
}

impl ControlSignal {
    pub fn coast() -> Self {
        ControlSignal {
            throttle: 0.0,
            brake: 0.0,
            steering: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Dual-PID lateral controller configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PidConfig {
    /// Weight for the lateral-deviation PID.
    pub alpha: f64,
    /// Weight for the yaw-error PID.
    pub beta: f64,
    pub lateral: PidGains,
    pub yaw: PidGains,
    /// Longitudinal speed PID, output clamped to [-1, 1].
    pub speed: PidGains,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        // Gains tuned for stability at dt = 0.1 s up to 33 m/s.
        PidConfig {
            alpha: 1.5,
            beta: 1.0,
            lateral: PidGains {
                kp: 0.035,
                ki: 0.0,
                kd: 0.0,
            },
            yaw: PidGains {
                kp: 0.68,
                ki: 0.0,
                kd: 0.0,
            },
            speed: PidGains {
                kp: 0.1,
                ki: 0.0,
                kd: 0.0,
            },
            s_min: -0.5,
            s_max: 0.5,
        }
    }
}

/// Single-channel PID state.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
    pub initialized: bool,
}

impl PidState {
    /// One PID step. `freeze_integral` implements anti-windup: the caller
    /// sets it when the combined output was clipped on the previous step.
    fn update(&mut self, gains: &PidGains, error: f64, dt: f64, freeze_integral: bool) -> f64 {
        if !freeze_integral {
            self.integral += error * dt;
        }
        let derivative = if self.initialized {
            (error - self.prev_error) / dt
        } else {
            0.0
        };
        self.prev_error = error;
        self.initialized = true;
        gains.kp * error + gains.ki * self.integral + gains.kd * derivative
    }
}

/// Map the continuous longitudinal action onto throttle/brake; at most one
/// of the two is nonzero.
pub fn map_longitudinal(a_long: f64) -> (f64, f64) {
    let a = a_long.clamp(-1.0, 1.0);
    if a > 0.0 {
        (a, 0.0)
    } else if a < 0.0 {
        (0.0, -a)
    } else {
        (0.0, 0.0)
    }
}

/// Discretize the lateral action: +1 left, -1 right, 0 keep lane.
/// Thresholds are strict, so exactly +/-0.5 keeps the lane.
pub fn discretize_lateral(a_lat: f64) -> i8 {
    let a = a_lat.clamp(-1.0, 1.0);
    if a > 0.5 {
        1
    } else if a < -0.5 {
        -1
    } else {
        0
    }
}

/// Cubic ease-in-out from 0 at progress 0 to 1 at progress 1.
pub fn lane_change_ease(progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    3.0 * p * p - 2.0 * p * p * p
}

/// An in-flight lane change; produces the lateral reference the dual PID
/// tracks. Cannot be preempted except by episode end.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LaneChangePlan {
    pub from_lane: u32,
    pub to_lane: u32,
    pub start_step: u64,
    pub duration_steps: u64,
}

impl LaneChangePlan {
    pub fn progress(&self, step: u64) -> f64 {
        if self.duration_steps == 0 {
            return 1.0;
        }
        (step.saturating_sub(self.start_step)) as f64 / self.duration_steps as f64
    }

    pub fn done(&self, step: u64) -> bool {
        step >= self.start_step + self.duration_steps
    }

    /// Target lateral offset measured from the from-lane centerline.
    pub fn offset(&self, step: u64, lane_width: f64) -> f64 {
        let dir = self.to_lane as f64 - self.from_lane as f64;
        dir * lane_width * lane_change_ease(self.progress(step))
    }
}

/// Per-vehicle controller state: the two lateral PIDs, the speed PID and
/// the active lane-change plan.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub lateral: PidState,
    pub yaw: PidState,
    pub speed: PidState,
    pub plan: Option<LaneChangePlan>,
    /// Whether the last steering output was clipped (anti-windup input).
    pub steer_clipped: bool,
    pub speed_clipped: bool,
}

impl ControllerState {
    /// Start a lane change for a nonzero decision. Lane 1 is leftmost, so a
    /// left change (+1) decreases the lane index. Returns the accepted plan,
    /// or None when the decision is 0, a plan is already running, or the
    /// target lane does not exist (rejected, treated as keep-lane).
    pub fn request_lane_change(
        &mut self,
        decision: i8,
        lane: u32,
        lane_count: u32,
        step: u64,
        duration_steps: u64,
    ) -> Option<LaneChangePlan> {
        if decision == 0 || self.plan.is_some() {
            return None;
        }
        let target = lane as i64 - decision as i64;
        if target < 1 || target > lane_count as i64 {
            return None;
        }
        let plan = LaneChangePlan {
            from_lane: lane,
            to_lane: target as u32,
            start_step: step,
            duration_steps,
        };
        self.plan = Some(plan);
        Some(plan)
    }

    /// Eq.-style dual-PID steering: clip(alpha*PID(d) + beta*PID(e)).
    /// `d_err` is the lateral deviation from the reference line and
    /// `yaw_err` the heading discrepancy relative to the road tangent.
    pub fn lateral_dual_pid(&mut self, cfg: &PidConfig, d_err: f64, yaw_err: f64, dt: f64) -> f64 {
        let freeze = self.steer_clipped;
        let out_d = self.lateral.update(&cfg.lateral, d_err, dt, freeze);
        let out_e = self.yaw.update(&cfg.yaw, yaw_err, dt, freeze);
        let raw = cfg.alpha * out_d + cfg.beta * out_e;
        let clipped = raw.clamp(cfg.s_min, cfg.s_max);
        self.steer_clipped = clipped != raw;
        clipped
    }

    /// Speed PID producing a longitudinal action in [-1, 1].
    pub fn longitudinal_pid(&mut self, cfg: &PidConfig, v_target: f64, v_current: f64, dt: f64) -> f64 {
        let freeze = self.speed_clipped;
        let raw = self.speed.update(&cfg.speed, v_target - v_current, dt, freeze);
        let clipped = raw.clamp(-1.0, 1.0);
        self.speed_clipped = clipped != raw;
        clipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_longitudinal_branches() {
        assert_eq!(map_longitudinal(0.5), (0.5, 0.0));
        assert_eq!(map_longitudinal(-0.3), (0.0, 0.3));
        assert_eq!(map_longitudinal(0.0), (0.0, 0.0));
    }

    #[test]
    fn map_longitudinal_never_both_positive() {
        for i in -100..=100 {
            let (t, b) = map_longitudinal(i as f64 / 100.0);
            assert_eq!(t * b, 0.0);
        }
    }

    #[test]
    fn map_longitudinal_odd_symmetric() {
        for i in -100..=100 {
            let x = i as f64 / 100.0;
            let (t, b) = map_longitudinal(x);
            let (t2, b2) = map_longitudinal(-x);
            assert_eq!((t, b), (b2, t2));
        }
    }

    #[test]
    fn discretize_lateral_thresholds() {
        assert_eq!(discretize_lateral(0.7), 1);
        assert_eq!(discretize_lateral(-0.6), -1);
        assert_eq!(discretize_lateral(0.5), 0);
        assert_eq!(discretize_lateral(-0.5), 0);
        assert_eq!(discretize_lateral(0.0), 0);
    }

    #[test]
    fn discretize_lateral_monotone() {
        let mut prev = -2;
        for i in -100..=100 {
            let d = discretize_lateral(i as f64 / 100.0);
            assert!(d as i32 >= prev);
            prev = d as i32;
        }
    }

    #[test]
    fn dual_pid_zero_error_fixed_point() {
        let cfg = PidConfig::default();
        let mut st = ControllerState::default();
        assert_eq!(st.lateral_dual_pid(&cfg, 0.0, 0.0, 0.1), 0.0);
    }

    #[test]
    fn dual_pid_p_only_hand_value() {
        // kp-only gains: clip(1.5*0.2*0.5 + 1.0*1.0*0.1) = 0.25 rad.
        let cfg = PidConfig {
            alpha: 1.5,
            beta: 1.0,
            lateral: PidGains {
                kp: 0.2,
                ki: 0.0,
                kd: 0.0,
            },
            yaw: PidGains {
                kp: 1.0,
                ki: 0.0,
                kd: 0.0,
            },
            ..PidConfig::default()
        };
        let mut st = ControllerState::default();
        let out = st.lateral_dual_pid(&cfg, 0.5, 0.1, 0.1);
        assert!((out - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dual_pid_saturates_at_s_max() {
        let cfg = PidConfig::default();
        let mut st = ControllerState::default();
        let out = st.lateral_dual_pid(&cfg, 1e6, 0.0, 0.1);
        assert_eq!(out, cfg.s_max);
        assert!(st.steer_clipped);
    }

    #[test]
    fn longitudinal_pid_hand_values() {
        let cfg = PidConfig::default();
        let mut st = ControllerState::default();
        // Zero error -> zero action.
        assert_eq!(st.longitudinal_pid(&cfg, 20.0, 20.0, 0.1), 0.0);
        // P-only: kp=0.1, error +5 -> 0.5.
        let mut st = ControllerState::default();
        assert!((st.longitudinal_pid(&cfg, 25.0, 20.0, 0.1) - 0.5).abs() < 1e-12);
        // Large negative error clamps to -1.
        let mut st = ControllerState::default();
        assert_eq!(st.longitudinal_pid(&cfg, 0.0, 50.0, 0.1), -1.0);
    }

    #[test]
    fn lane_change_rejected_outside_road() {
        let mut st = ControllerState::default();
        // Right change (-1) from the rightmost of 4 lanes is rejected.
        assert!(st.request_lane_change(-1, 4, 4, 0, 25).is_none());
        // Left change (+1) from lane 1 is rejected.
        assert!(st.request_lane_change(1, 1, 4, 0, 25).is_none());
        // Valid change accepted, and a second request cannot preempt it.
        let plan = st.request_lane_change(1, 2, 4, 0, 25).unwrap();
        assert_eq!(plan.to_lane, 1);
        assert!(st.request_lane_change(-1, 2, 4, 5, 25).is_none());
    }

    #[test]
    fn lane_change_profile_endpoints_and_midpoint() {
        let plan = LaneChangePlan {
            from_lane: 2,
            to_lane: 3,
            start_step: 0,
            duration_steps: 25,
        };
        assert_eq!(plan.offset(0, 3.5), 0.0);
        assert!((plan.offset(25, 3.5) - 3.5).abs() < 1e-12);
        // Cubic s-curve is symmetric about its midpoint.
        assert!((plan.offset(12, 3.5) + plan.offset(13, 3.5) - 3.5).abs() < 1e-9);
        let mid = lane_change_ease(0.5);
        assert!((mid - 0.5).abs() < 1e-12);
    }
}
