//! Episode engine: dispatches per-vehicle driver models, runs the
//! controller stack, advances the world, computes rewards, and records
//! the trajectory plus training transitions.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::control::{
    discretize_lateral, map_longitudinal, ControlSignal, ControllerState, PidConfig,
};
use crate::error::Result;
use crate::learner::net::Mlp;
use crate::learner::replay::Transition;
use crate::learner::td3::Td3Agent;
use crate::models::{
    constant_speed_decide, dualdm_decide, nilsson_decide, stackelberg_decide, DriverDecision,
    NilssonParams, StackelbergParams,
};
use crate::observation::{encode, modality_of, Modality};
use crate::rewards::{
    allocate, cooperative_reward, following_reward, front_gap, individual_reward,
    sv_neighborhood, violations, RewardConfig, StepContext,
};
use crate::scenarios::TrajectoryLog;
use crate::world::{
    adversarial_area_contains, step, DynamicsConfig, Role, RoadGeometry, WorldState,
};

/// What drives each vehicle during an episode.
#[derive(Clone, Copy)]
pub enum Binding<'a> {
    /// Shared learning policy; emits replay transitions.
    Learner,
    /// Fixed policy network, deterministic forward pass.
    FrozenPolicy(&'a Mlp),
    Nilsson,
    Stackelberg,
    ConstantSpeed,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub dynamics: DynamicsConfig,
    pub pid: PidConfig,
    pub rewards: RewardConfig,
    pub nilsson: NilssonParams,
    pub stackelberg: StackelbergParams,
    /// Round length cap, steps.
    pub max_steps: u64,
    /// Discount used to accumulate rewards across a lane-change maneuver
    /// into its decision transition; matches the learner's gamma.
    pub gamma: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dynamics: DynamicsConfig::default(),
            pid: PidConfig::default(),
            rewards: RewardConfig::default(),
            nilsson: NilssonParams::default(),
            stackelberg: StackelbergParams::default(),
            max_steps: 600,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOutcome {
    pub log: TrajectoryLog,
    pub transitions: Vec<Transition>,
    /// Mean total reward over all learning-agent steps.
    pub mean_reward: f64,
    pub adversarial_reward_sum: f64,
    pub adversarial_steps: u64,
    pub natural_reward_sum: f64,
    pub natural_steps: u64,
    /// Learning-agent steps whose longitudinal action saturated at |1|.
    pub saturated_steps: u64,
    pub learning_steps: u64,
}

/// Run one episode to a terminal event or the step cap.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    geo: &RoadGeometry,
    cfg: &EpisodeConfig,
    world0: WorldState,
    bindings: &BTreeMap<u32, Binding>,
    learner: Option<&Td3Agent>,
    explore: bool,
    rng: &mut ChaCha8Rng,
    episode: u64,
) -> Result<EpisodeOutcome> {
    let duration_steps =
        (cfg.dynamics.lane_change_duration / cfg.dynamics.dt).round() as u64;
    let mut controllers: BTreeMap<u32, ControllerState> = world0
        .vehicles
        .iter()
        .map(|v| (v.id, ControllerState::default()))
        .collect();
    let mut outcome = EpisodeOutcome {
        log: TrajectoryLog::new(world0.rng_seed, episode, world0.clone()),
        ..EpisodeOutcome::default()
    };
    let mut world = world0;
    let mut reward_sum = 0.0;

    /// Open maneuver-spanning transition for one learner: a lane-change
    /// decision is a temporally extended action, so its replay record
    /// accumulates the discounted rewards of the whole maneuver.
    struct PendingManeuver {
        state: Vec<f64>,
        action: [f64; 2],
        coop: bool,
        reward: f64,
        gamma_pow: f64,
        steps: u32,
    }
    let mut pending: BTreeMap<u32, PendingManeuver> = BTreeMap::new();

    for _ in 0..cfg.max_steps {
        let step_index = world.step_index;
        let sv = world.sv().cloned();
        let before_hood = sv_neighborhood(&world, geo, &cfg.rewards);

        // Decision phase: every driver decides from the same snapshot.
        struct Decided {
            id: u32,
            decision: DriverDecision,
            /// New lane-change decision this step (no plan already active).
            fresh_change: bool,
            /// No maneuver plan was active when this decision was made.
            plan_free: bool,
            learning: Option<(Vec<f64>, [f64; 2], bool)>, // (obs, action, coop marker)
            d_target: f64,
            d_current: f64,
            violated: bool,
        }
        let mut decided = Vec::with_capacity(world.vehicles.len());
        for v in world.vehicles.iter() {
            let binding = bindings.get(&v.id).copied().unwrap_or(Binding::ConstantSpeed);
            let mut learning = None;
            let decision = match binding {
                Binding::Learner => {
                    let agent = learner.expect("learner binding without an agent");
                    let grid = encode(&world, geo, v.id)?;
                    let action = agent
                        .select_action(grid.flat(), if explore { Some(&mut *rng) } else { None });
                    let coop = modality_of(&grid) == Modality::Adversarial;
                    learning = Some((grid.flat().to_vec(), action, coop));
                    DriverDecision::Operational {
                        a_long: action[0],
                        lane_change: discretize_lateral(action[1]),
                    }
                }
                Binding::FrozenPolicy(net) => {
                    let grid = encode(&world, geo, v.id)?;
                    dualdm_decide(&grid, net)
                }
                Binding::Nilsson => nilsson_decide(&world, geo, v.id, &cfg.nilsson),
                Binding::Stackelberg => stackelberg_decide(&world, geo, v.id, &cfg.stackelberg),
                Binding::ConstantSpeed => constant_speed_decide(v),
            };
            let ctl = controllers.get(&v.id).unwrap();
            let plan_free = ctl.plan.is_none();
            let fresh_change = decision.lane_change() != 0 && plan_free;
            let (d_target, d_current, violated) = if fresh_change {
                let target = (v.lane as i64 - decision.lane_change() as i64).max(1) as u32;
                (
                    front_gap(&world, v, target, cfg.rewards.d_cap),
                    front_gap(&world, v, v.lane, cfg.rewards.d_cap),
                    !violations(&world, geo, v, decision.lane_change()).is_empty(),
                )
            } else {
                (0.0, 0.0, false)
            };
            decided.push(Decided {
                id: v.id,
                decision,
                fresh_change,
                plan_free,
                learning,
                d_target,
                d_current,
                violated,
            });
        }

        // Actuation phase.
        let mut controls: BTreeMap<u32, ControlSignal> = BTreeMap::new();
        for d in &decided {
            let v = world.vehicle(d.id).unwrap().clone();
            let ctl = controllers.get_mut(&d.id).unwrap();
            if let Some(plan) = ctl.plan {
                if plan.done(step_index) {
                    ctl.plan = None;
                }
            }
            if d.fresh_change {
                ctl.request_lane_change(
                    d.decision.lane_change(),
                    v.lane,
                    geo.lane_count_at(v.s),
                    step_index,
                    duration_steps,
                );
            }
            let ref_lat = match ctl.plan {
                Some(plan) => {
                    geo.lane_center(plan.from_lane) + plan.offset(step_index, geo.lane_width())
                }
                None => geo.lane_center(v.lane),
            };
            let steering = ctl.lateral_dual_pid(
                &cfg.pid,
                ref_lat - v.lat(geo),
                -v.heading_err,
                cfg.dynamics.dt,
            );
            let a_long = match d.decision {
                DriverDecision::Strategic { v_target, .. } => {
                    ctl.longitudinal_pid(&cfg.pid, v_target, v.v_s, cfg.dynamics.dt)
                }
                DriverDecision::Operational { a_long, .. } => a_long,
            };
            let (throttle, brake) = map_longitudinal(a_long);
            controls.insert(
                d.id,
                ControlSignal {
                    throttle,
                    brake,
                    steering,
                },
            );
        }

        // Pre-step following rewards per learning agent.
        let r_d_before: BTreeMap<u32, f64> = decided
            .iter()
            .filter(|d| d.learning.is_some())
            .map(|d| {
                let v = world.vehicle(d.id).unwrap();
                (
                    d.id,
                    following_reward(
                        &cfg.rewards,
                        front_gap(&world, v, v.lane, cfg.rewards.d_cap),
                    ),
                )
            })
            .collect();

        let (next, events) = step(&world, geo, &cfg.dynamics, &controls)?;
        let terminal = next.is_terminal() || next.step_index >= cfg.max_steps;

        // Adversarial-area membership of BVs at the pre-step snapshot.
        let adv_ids: Vec<u32> = match &sv {
            Some(sv) => world
                .vehicles
                .iter()
                .filter(|v| v.role == Role::Bv && adversarial_area_contains(v, sv))
                .map(|v| v.id)
                .collect(),
            None => Vec::new(),
        };
        let after_hood = sv_neighborhood(&next, geo, &cfg.rewards);
        let raw_coop = match (&before_hood, &after_hood) {
            (Some(b), Some(a)) => cooperative_reward(&cfg.rewards, b, a),
            _ => 0.0,
        };
        // Cooperative shaping only exists while someone is in the area.
        let learner_adv: BTreeSet<u32> = adv_ids
            .iter()
            .copied()
            .filter(|id| {
                decided
                    .iter()
                    .any(|d| d.id == *id && d.learning.is_some())
            })
            .collect();
        let r_coop = if learner_adv.is_empty() { 0.0 } else { raw_coop };

        // Individual rewards for learning agents.
        let r_ind: Vec<(u32, f64)> = decided
            .iter()
            .filter(|d| d.learning.is_some())
            .map(|d| {
                let involved = events.iter().any(|e| e.involves(d.id));
                let v_next = next.vehicle(d.id).unwrap();
                let ctx = StepContext {
                    collided_or_out: involved,
                    r_d_before: r_d_before[&d.id],
                    r_d_after: following_reward(
                        &cfg.rewards,
                        front_gap(&next, v_next, v_next.lane, cfg.rewards.d_cap),
                    ),
                    d_target: d.d_target,
                    d_current: d.d_current,
                    lane_change_made: d.fresh_change,
                    violated: d.violated,
                };
                (d.id, individual_reward(&cfg.rewards, &ctx))
            })
            .collect();
        let breakdowns = allocate(&r_ind, r_coop, &learner_adv)?;
        let totals: BTreeMap<u32, f64> =
            breakdowns.iter().map(|(id, b)| (*id, b.total)).collect();

        // Emit transitions. A fresh lane-change decision opens a
        // maneuver-spanning transition that accumulates the discounted
        // rewards of the maneuver and closes at the next plan-free
        // decision, bootstrapping with gamma^steps. Without this, the
        // cooperative payoff of a cut-in lands over a second after the
        // decision that caused it and the critic never connects the two.
        for d in &decided {
            let Some((obs, action, coop)) = &d.learning else {
                continue;
            };
            let reward = totals[&d.id];
            reward_sum += reward;
            outcome.learning_steps += 1;
            if action[0].abs() >= 0.999 {
                outcome.saturated_steps += 1;
            }
            if *coop {
                outcome.adversarial_reward_sum += reward;
                outcome.adversarial_steps += 1;
            } else {
                outcome.natural_reward_sum += reward;
                outcome.natural_steps += 1;
            }
            if d.plan_free {
                // The maneuver ended before this decision was made; the
                // state decided from here is the macro's successor.
                if let Some(p) = pending.remove(&d.id) {
                    outcome.transitions.push(Transition {
                        state: p.state,
                        action: p.action,
                        reward: p.reward,
                        next_state: obs.clone(),
                        done: false,
                        coop: p.coop,
                        steps: p.steps,
                    });
                }
            }
            if d.fresh_change {
                pending.insert(
                    d.id,
                    PendingManeuver {
                        state: obs.clone(),
                        action: *action,
                        coop: *coop,
                        reward,
                        gamma_pow: cfg.gamma,
                        steps: 1,
                    },
                );
            } else if let Some(p) = pending.get_mut(&d.id) {
                p.reward += p.gamma_pow * reward;
                p.gamma_pow *= cfg.gamma;
                p.steps += 1;
            } else {
                let next_grid = encode(&next, geo, d.id)?;
                outcome.transitions.push(Transition {
                    state: obs.clone(),
                    action: *action,
                    reward,
                    next_state: next_grid.flat().to_vec(),
                    done: terminal,
                    coop: *coop,
                    steps: 1,
                });
            }
            if terminal {
                if let Some(p) = pending.remove(&d.id) {
                    let next_grid = encode(&next, geo, d.id)?;
                    outcome.transitions.push(Transition {
                        state: p.state,
                        action: p.action,
                        reward: p.reward,
                        next_state: next_grid.flat().to_vec(),
                        done: true,
                        coop: p.coop,
                        steps: p.steps,
                    });
                }
            }
        }

        outcome
            .log
            .push(&controls, events, adv_ids, r_coop, next.clone());
        world = next;
        if terminal {
            break;
        }
    }

    outcome.mean_reward = if outcome.learning_steps > 0 {
        reward_sum / outcome.learning_steps as f64
    } else {
        0.0
    };
    Ok(outcome)
}
