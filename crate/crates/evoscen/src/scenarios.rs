//! Trajectory recording, safety-critical situation detection, 3.5 s
//! scenario-window extraction and the line-delimited scenario archive.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::world::{ttc_sv, DynamicsConfig, Event, RoadGeometry, WorldState};

/// Number of steps in an extracted window: 3.5 s at dt = 0.1 s,
/// the trigger step included.
pub const WINDOW_STEPS: usize = 35;
/// Near-crash threshold on the SV's time-to-collision, seconds.
pub const NEAR_CRASH_TTC: f64 = 0.5;

/// Full episode recording: states s_0..s_T plus, per transition, the
/// applied controls, emitted events, the adversarial-area membership and
/// the cooperative reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub episode: u64,
    pub states: Vec<WorldState>,
    pub controls: Vec<Vec<(u32, ControlSignal)>>,
    pub events: Vec<Vec<Event>>,
    pub adversarial_ids: Vec<Vec<u32>>,
    pub coop_reward: Vec<f64>,
}

impl Default for TrajectoryLog {
    fn default() -> Self {
        TrajectoryLog::new(
            0,
            0,
            WorldState {
                t: 0.0,
                step_index: 0,
                vehicles: Vec::new(),
                rng_seed: 0,
                events: Vec::new(),
            },
        )
    }
}

impl TrajectoryLog {
    pub fn new(seed: u64, episode: u64, initial: WorldState) -> Self {
        TrajectoryLog {
            seed,
            episode,
            states: vec![initial],
            controls: Vec::new(),
            events: Vec::new(),
            adversarial_ids: Vec::new(),
            coop_reward: Vec::new(),
        }
    }

    /// Append one transition; `controls` were applied to the latest state.
    pub fn push(
        &mut self,
        controls: &BTreeMap<u32, ControlSignal>,
        events: Vec<Event>,
        adversarial_ids: Vec<u32>,
        coop_reward: f64,
        next: WorldState,
    ) {
        self.controls
            .push(controls.iter().map(|(&id, &c)| (id, c)).collect());
        self.events.push(events);
        self.adversarial_ids.push(adversarial_ids);
        self.coop_reward.push(coop_reward);
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Crash,
    NearCrash,
}

/// One step inside an extracted window. Padding steps (episode began less
/// than 35 steps before the trigger) carry no state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    pub padded: bool,
    pub state: Option<WorldState>,
    /// Controls applied at this state; empty on the trigger step.
    pub controls: Vec<(u32, ControlSignal)>,
    pub adversarial_ids: Vec<u32>,
    pub coop_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub label: Label,
    /// State index of the trigger within the source episode.
    pub trigger_step: u64,
    pub seed: u64,
    pub episode: u64,
    /// Count of zero-padding steps at the front of the window.
    pub padded_steps: usize,
    /// Exactly WINDOW_STEPS entries, trigger step last.
    pub steps: Vec<ScenarioStep>,
    pub participants: Vec<u32>,
    /// Ids inside the adversarial area on window steps where the
    /// cooperative reward was positive.
    pub adversarial_participants: Vec<u32>,
}

impl ScenarioRecord {
    /// Index of the first window step with positive cooperative reward.
    pub fn coop_positive_onset(&self) -> Option<usize> {
        self.steps.iter().position(|s| s.coop_reward > 0.0)
    }
}

fn build_record(log: &TrajectoryLog, label: Label, trigger: usize) -> ScenarioRecord {
    let lo = trigger as i64 - (WINDOW_STEPS as i64 - 1);
    let mut steps = Vec::with_capacity(WINDOW_STEPS);
    let mut padded_steps = 0;
    for i in lo..=trigger as i64 {
        if i < 0 {
            padded_steps += 1;
            steps.push(ScenarioStep {
                padded: true,
                state: None,
                controls: Vec::new(),
                adversarial_ids: Vec::new(),
                coop_reward: 0.0,
            });
            continue;
        }
        let i = i as usize;
        steps.push(ScenarioStep {
            padded: false,
            state: Some(log.states[i].clone()),
            controls: if i < trigger {
                log.controls[i].clone()
            } else {
                Vec::new()
            },
            adversarial_ids: log
                .adversarial_ids
                .get(i)
                .cloned()
                .unwrap_or_default(),
            coop_reward: log.coop_reward.get(i).copied().unwrap_or(0.0),
        });
    }
    let participants: Vec<u32> = log.states[trigger].vehicles.iter().map(|v| v.id).collect();
    let mut adversarial_participants: Vec<u32> = steps
        .iter()
        .filter(|s| s.coop_reward > 0.0)
        .flat_map(|s| s.adversarial_ids.iter().copied())
        .collect();
    adversarial_participants.sort_unstable();
    adversarial_participants.dedup();
    ScenarioRecord {
        label,
        trigger_step: trigger as u64,
        seed: log.seed,
        episode: log.episode,
        padded_steps,
        steps,
        participants,
        adversarial_participants,
    }
}

/// Extract crash and near-crash windows from a completed episode.
///
/// Every collision-with-SV step yields a crash record; every maximal
/// TTC-below-0.5 excursion yields one near-crash record at its entry step,
/// except when a crash follows within the window length (the crash record
/// subsumes it). BV-BV collisions end rounds but never produce records.
pub fn detect_and_extract(log: &TrajectoryLog, geo: &RoadGeometry) -> Vec<ScenarioRecord> {
    let mut crash_steps = Vec::new();
    for (i, events) in log.events.iter().enumerate() {
        // The transition i produced state i + 1.
        if events
            .iter()
            .any(|e| matches!(e, Event::CollisionSvBv { .. }))
        {
            crash_steps.push(i + 1);
        }
    }

    let ttc: Vec<f64> = log.states.iter().map(|s| ttc_sv(s, geo)).collect();
    let mut near_steps = Vec::new();
    let mut below = false;
    for (i, &t) in ttc.iter().enumerate() {
        if t < NEAR_CRASH_TTC && !below && !crash_steps.contains(&i) {
            near_steps.push(i);
        }
        below = t < NEAR_CRASH_TTC;
    }
    // Suppress near-crashes a crash resolves within the window.
    near_steps.retain(|&n| {
        !crash_steps
            .iter()
            .any(|&c| c >= n && c - n < WINDOW_STEPS)
    });

    let mut records: Vec<(usize, Label)> = crash_steps
        .into_iter()
        .map(|s| (s, Label::Crash))
        .chain(near_steps.into_iter().map(|s| (s, Label::NearCrash)))
        .collect();
    records.sort_by_key(|&(s, _)| s);
    records.dedup_by_key(|&mut (s, _)| s);
    records
        .into_iter()
        .map(|(s, label)| build_record(log, label, s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    pub crash: u64,
    pub near_crash: u64,
    pub total: u64,
    pub files: Vec<String>,
}

/// Table-style roll-up of an archive: total = crash + near_crash.
pub fn summarize(rounds: u64, records: &[ScenarioRecord], files: Vec<String>) -> RunSummary {
    let crash = records.iter().filter(|r| r.label == Label::Crash).count() as u64;
    let near_crash = records.len() as u64 - crash;
    RunSummary {
        rounds,
        crash,
        near_crash,
        total: crash + near_crash,
        files,
    }
}

/// Write records to a line-delimited archive, one JSON record per line.
pub fn persist(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Parse(format!("serializing record: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Load an archive; malformed lines are reported with their line number.
pub fn load(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::Parse(format!("archive line {}: {e}", i + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Re-run a record's window through the world integrator from its first
/// real state using the logged controls; returns the replayed states.
pub fn replay_window(
    record: &ScenarioRecord,
    geo: &RoadGeometry,
    dynamics: &DynamicsConfig,
) -> Result<Vec<WorldState>> {
    let real: Vec<&ScenarioStep> = record.steps.iter().filter(|s| !s.padded).collect();
    let first = real
        .first()
        .and_then(|s| s.state.clone())
        .ok_or_else(|| Error::Contract("window has no real steps".into()))?;
    let mut states = vec![first];
    for step in &real[..real.len().saturating_sub(1)] {
        let controls: BTreeMap<u32, ControlSignal> = step.controls.iter().copied().collect();
        let (next, _) = crate::world::step(states.last().unwrap(), geo, dynamics, &controls)?;
        states.push(next);
    }
    Ok(states)
}

/// Maximum per-vehicle position discrepancy between a record's logged
/// window and its replay.
pub fn replay_error(
    record: &ScenarioRecord,
    geo: &RoadGeometry,
    dynamics: &DynamicsConfig,
) -> Result<f64> {
    let replayed = replay_window(record, geo, dynamics)?;
    let logged: Vec<&WorldState> = record
        .steps
        .iter()
        .filter_map(|s| s.state.as_ref())
        .collect();
    if logged.len() != replayed.len() {
        return Err(Error::Contract("replay length mismatch".into()));
    }
    let mut worst: f64 = 0.0;
    for (a, b) in logged.iter().zip(&replayed) {
        for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
            worst = worst
                .max((va.s - vb.s).abs())
                .max((va.lat(geo) - vb.lat(geo)).abs());
        }
    }
    Ok(worst)
}
