//! Test efficiency, information-entropy scenario complexity and the
//! diversity statistics over extracted safety-critical scenarios.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::ScenarioRecord;
use crate::world::{Role, VehicleState, WorldState, ADV_LONG_HALF};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityConfig {
    pub c_act: f64,
    pub c_noact: f64,
    /// Absolute acceleration marking a BV as "acting", m/s^2.
    pub accel_threshold: f64,
    /// Normalization factor of the per-scenario complexity.
    pub eta_c: f64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            c_act: 1.0,
            c_noact: 0.0,
            accel_threshold: 4.0,
            eta_c: 3.0,
        }
    }
}

/// Test efficiency: generated critical scenarios per round, capped at 1.
pub fn efficiency(n: u64, rounds: u64) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::Contract("efficiency over zero rounds".into()));
    }
    Ok((n as f64 / rounds as f64).min(1.0))
}

/// Eight-area ring around the SV used for positional complexity: same
/// lane and both adjacent lanes split front/rear, plus one catch-all per
/// side two lanes over, all within the adversarial longitudinal span.
pub fn area8_of(bv: &VehicleState, sv: &VehicleState) -> Option<usize> {
    let ds = bv.s - sv.s;
    if ds.abs() > ADV_LONG_HALF {
        return None;
    }
    let dlane = bv.lane as i64 - sv.lane as i64;
    let front = ds > 0.0;
    match dlane {
        0 => Some(if front { 0 } else { 1 }),
        -1 => Some(if front { 2 } else { 3 }),
        1 => Some(if front { 4 } else { 5 }),
        -2 => Some(6),
        2 => Some(7),
        _ => None,
    }
}

/// Ten-area grid for diversity patterns: five relative lanes times
/// front/rear, ids 1..=10.
pub fn area10_of(bv: &VehicleState, sv: &VehicleState) -> Option<u8> {
    let ds = bv.s - sv.s;
    if ds.abs() > ADV_LONG_HALF {
        return None;
    }
    let dlane = bv.lane as i64 - sv.lane as i64;
    if dlane.abs() > 2 {
        return None;
    }
    let front = ds > 0.0;
    Some((2 * (dlane + 2) + if front { 1 } else { 2 }) as u8)
}

fn trigger_state(record: &ScenarioRecord) -> Result<&WorldState> {
    record
        .steps
        .last()
        .and_then(|s| s.state.as_ref())
        .ok_or_else(|| Error::Contract("record has no trigger state".into()))
}

/// BVs assigned to one of the eight areas at the trigger step, with
/// their area ids.
fn counted_bvs(record: &ScenarioRecord) -> Result<Vec<(u32, usize)>> {
    let state = trigger_state(record)?;
    let sv = state
        .vehicles
        .iter()
        .find(|v| v.role == Role::Sv)
        .ok_or_else(|| Error::Contract("record trigger state has no SV".into()))?;
    Ok(state
        .vehicles
        .iter()
        .filter(|v| v.role == Role::Bv)
        .filter_map(|v| area8_of(v, sv).map(|a| (v.id, a)))
        .collect())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComplexityBreakdown {
    pub c_pos: f64,
    pub c_act: f64,
    pub c_i: f64,
    /// No BV was inside any of the eight areas.
    pub degenerate: bool,
}

/// Positional complexity: Shannon entropy (base 2) of the BV-per-area
/// distribution; exactly 0.5 when all counted BVs share one area, 0 when
/// the ring is empty.
pub fn complexity_pos(record: &ScenarioRecord) -> Result<(f64, bool)> {
    let counted = counted_bvs(record)?;
    if counted.is_empty() {
        return Ok((0.0, true));
    }
    let mut per_area: BTreeMap<usize, u64> = BTreeMap::new();
    for (_, a) in &counted {
        *per_area.entry(*a).or_default() += 1;
    }
    if per_area.len() == 1 {
        return Ok((0.5, false));
    }
    let n = counted.len() as f64;
    let entropy = -per_area
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    Ok((entropy, false))
}

/// A counted BV is "acting" when anywhere in the window its |a| reaches
/// the threshold or its lane assignment changes.
pub fn complexity_act(record: &ScenarioRecord, cfg: &ComplexityConfig) -> Result<f64> {
    let counted = counted_bvs(record)?;
    if counted.is_empty() {
        return Ok(0.0);
    }
    let states: Vec<&WorldState> = record
        .steps
        .iter()
        .filter_map(|s| s.state.as_ref())
        .collect();
    let mut acting = 0usize;
    for (id, _) in &counted {
        let mut is_acting = false;
        let mut prev_lane = None;
        for state in &states {
            if let Some(v) = state.vehicle(*id) {
                if v.a.abs() >= cfg.accel_threshold {
                    is_acting = true;
                }
                if let Some(prev) = prev_lane {
                    if prev != v.lane {
                        is_acting = true;
                    }
                }
                prev_lane = Some(v.lane);
            }
        }
        if is_acting {
            acting += 1;
        }
    }
    let n = counted.len() as f64;
    Ok((acting as f64 * cfg.c_act + (counted.len() - acting) as f64 * cfg.c_noact) / n)
}

/// Per-scenario complexity C_i = C_pos * C_act / eta_c.
pub fn complexity(record: &ScenarioRecord, cfg: &ComplexityConfig) -> Result<ComplexityBreakdown> {
    let (c_pos, degenerate) = complexity_pos(record)?;
    let c_act = complexity_act(record, cfg)?;
    Ok(ComplexityBreakdown {
        c_pos,
        c_act,
        c_i: c_pos * c_act / cfg.eta_c,
        degenerate,
    })
}

/// Model-level complexity: mean C_i over all records.
pub fn model_complexity(records: &[ScenarioRecord], cfg: &ComplexityConfig) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract(
            "complexity of an empty record set".into(),
        ));
    }
    let mut sum = 0.0;
    for r in records {
        sum += complexity(r, cfg)?.c_i;
    }
    Ok(sum / records.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Records with positive cooperative reward anywhere in the window.
    pub coop_positive_count: u64,
    /// Adversarial-participant count -> record count.
    pub bv_count_histogram: BTreeMap<usize, u64>,
    pub two_bv_patterns: BTreeSet<Vec<u8>>,
    pub three_bv_patterns: BTreeSet<Vec<u8>>,
}

/// Diversity statistics: how many BVs join adversarial interactions and
/// which 10-area occupancy patterns they form at coop-positive onset.
pub fn diversity(records: &[ScenarioRecord]) -> DiversityReport {
    let mut report = DiversityReport::default();
    for r in records {
        let Some(onset) = r.coop_positive_onset() else {
            continue;
        };
        report.coop_positive_count += 1;
        let n = r.adversarial_participants.len();
        *report.bv_count_histogram.entry(n).or_default() += 1;
        if n != 2 && n != 3 {
            continue;
        }
        let Some(state) = r.steps[onset].state.as_ref() else {
            continue;
        };
        let Some(sv) = state.vehicles.iter().find(|v| v.role == Role::Sv) else {
            continue;
        };
        let mut pattern: Vec<u8> = r
            .adversarial_participants
            .iter()
            .filter_map(|id| state.vehicle(*id))
            .filter_map(|bv| area10_of(bv, sv))
            .collect();
        pattern.sort_unstable();
        pattern.dedup();
        if pattern.is_empty() {
            continue;
        }
        if n == 2 {
            report.two_bv_patterns.insert(pattern);
        } else {
            report.three_bv_patterns.insert(pattern);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{Label, ScenarioStep, WINDOW_STEPS};

    fn vehicle(id: u32, role: Role, lane: u32, s: f64, a: f64) -> VehicleState {
        VehicleState {
            id,
            role,
            lane,
            s,
            d: 0.0,
            heading_err: 0.0,
            v_s: 20.0,
            v_t: 0.0,
            a,
            length: 4.7,
            width: 1.9,
            v_max: 33.3,
        }
    }

    fn record_with(vehicles: Vec<VehicleState>) -> ScenarioRecord {
        let state = WorldState {
            t: 3.4,
            step_index: 34,
            vehicles,
            rng_seed: 0,
            events: Vec::new(),
        };
        let mut steps = vec![
            ScenarioStep {
                padded: true,
                state: None,
                controls: Vec::new(),
                adversarial_ids: Vec::new(),
                coop_reward: 0.0,
            };
            WINDOW_STEPS - 1
        ];
        steps.push(ScenarioStep {
            padded: false,
            state: Some(state),
            controls: Vec::new(),
            adversarial_ids: Vec::new(),
            coop_reward: 0.0,
        });
        ScenarioRecord {
            label: Label::Crash,
            trigger_step: 34,
            seed: 0,
            episode: 0,
            padded_steps: WINDOW_STEPS - 1,
            steps,
            participants: Vec::new(),
            adversarial_participants: Vec::new(),
        }
    }

    #[test]
    fn efficiency_golden_values() {
        assert!((efficiency(429, 500).unwrap() - 0.858).abs() < 1e-12);
        assert!((efficiency(129, 500).unwrap() - 0.258).abs() < 1e-12);
        assert!((efficiency(145, 500).unwrap() - 0.29).abs() < 1e-12);
        assert_eq!(efficiency(600, 500).unwrap(), 1.0);
        assert!(efficiency(1, 0).is_err());
    }

    #[test]
    fn c_pos_uniform_eight_is_three() {
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        let mut vs = vec![sv];
        // One BV per area: same lane f/r, left f/r, right f/r, 2-left, 2-right.
        let spots = [
            (3u32, 10.0),
            (3, -10.0),
            (2, 10.0),
            (2, -10.0),
            (4, 10.0),
            (4, -10.0),
            (1, 5.0),
            (5, 5.0),
        ];
        for (i, (lane, ds)) in spots.iter().enumerate() {
            vs.push(vehicle(i as u32 + 1, Role::Bv, *lane, 1000.0 + ds, 0.0));
        }
        let r = record_with(vs);
        let (c_pos, degenerate) = complexity_pos(&r).unwrap();
        assert!((c_pos - 3.0).abs() < 1e-12);
        assert!(!degenerate);
    }

    #[test]
    fn c_pos_special_cases() {
        // All BVs in a single area: 0.5.
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        let r = record_with(vec![
            sv,
            vehicle(1, Role::Bv, 3, 1010.0, 0.0),
            vehicle(2, Role::Bv, 3, 1020.0, 0.0),
        ]);
        assert_eq!(complexity_pos(&r).unwrap(), (0.5, false));

        // Two BVs in two distinct areas: 1.0.
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        let r = record_with(vec![
            sv,
            vehicle(1, Role::Bv, 3, 1010.0, 0.0),
            vehicle(2, Role::Bv, 2, 990.0, 0.0),
        ]);
        let (c, _) = complexity_pos(&r).unwrap();
        assert!((c - 1.0).abs() < 1e-12);

        // Nothing in the ring: degenerate zero.
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        let r = record_with(vec![sv, vehicle(1, Role::Bv, 3, 1100.0, 0.0)]);
        assert_eq!(complexity_pos(&r).unwrap(), (0.0, true));
    }

    #[test]
    fn c_act_fractions() {
        let cfg = ComplexityConfig::default();
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        // Three of six acting via the acceleration threshold.
        let mut vs = vec![sv];
        for i in 0..6u32 {
            let a = if i < 3 { 5.0 } else { 0.5 };
            vs.push(vehicle(i + 1, Role::Bv, 3 - (i % 2), 1000.0 + 5.0 + i as f64, a));
        }
        let r = record_with(vs);
        assert!((complexity_act(&r, &cfg).unwrap() - 0.5).abs() < 1e-12);

        // All acting -> 1, none acting -> 0.
        let all = record_with(vec![
            vehicle(0, Role::Sv, 3, 1000.0, 0.0),
            vehicle(1, Role::Bv, 3, 1010.0, 6.0),
        ]);
        assert_eq!(complexity_act(&all, &cfg).unwrap(), 1.0);
        let none = record_with(vec![
            vehicle(0, Role::Sv, 3, 1000.0, 0.0),
            vehicle(1, Role::Bv, 3, 1010.0, 0.0),
        ]);
        assert_eq!(complexity_act(&none, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn c_i_normalization_and_mean() {
        let cfg = ComplexityConfig::default();
        // Uniform 8 areas, all acting -> C_i = 3 * 1 / 3 = 1.
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        let mut vs = vec![sv];
        let spots = [
            (3u32, 10.0),
            (3, -10.0),
            (2, 10.0),
            (2, -10.0),
            (4, 10.0),
            (4, -10.0),
            (1, 5.0),
            (5, 5.0),
        ];
        for (i, (lane, ds)) in spots.iter().enumerate() {
            vs.push(vehicle(i as u32 + 1, Role::Bv, *lane, 1000.0 + ds, 6.0));
        }
        let r = record_with(vs);
        let c = complexity(&r, &cfg).unwrap();
        assert!((c.c_i - 1.0).abs() < 1e-12);

        // Singleton mean degeneracy.
        let mean = model_complexity(std::slice::from_ref(&r), &cfg).unwrap();
        assert_eq!(mean, c.c_i);
        assert!(model_complexity(&[], &cfg).is_err());
    }

    #[test]
    fn diversity_patterns() {
        let sv = vehicle(0, Role::Sv, 3, 1000.0, 0.0);
        // BV 1 rear-left two over? No: areas 3 and 8 per the 10-area ids.
        // id = 2*(dlane+2) + (front ? 1 : 2).
        // Area 3: dlane -1 (left), front. Area 8: dlane +1 (right), rear.
        let b1 = vehicle(1, Role::Bv, 2, 1010.0, 0.0);
        let b2 = vehicle(2, Role::Bv, 4, 990.0, 0.0);
        let mut r = record_with(vec![sv, b1, b2]);
        r.adversarial_participants = vec![1, 2];
        // Put coop-positive onset on the trigger step.
        r.steps.last_mut().unwrap().coop_reward = 0.4;
        let report = diversity(std::slice::from_ref(&r));
        assert_eq!(report.coop_positive_count, 1);
        assert_eq!(report.bv_count_histogram.get(&2), Some(&1));
        assert!(report.two_bv_patterns.contains(&vec![3u8, 8u8]));

        // Records without positive coop reward are ignored.
        let mut quiet = record_with(vec![vehicle(0, Role::Sv, 3, 1000.0, 0.0)]);
        quiet.adversarial_participants = vec![];
        let empty = diversity(std::slice::from_ref(&quiet));
        assert_eq!(empty, DiversityReport::default());
    }
}
