//! Command-line interface: staged training, batch simulation with
//! scenario extraction, and archive evaluation, each writing into a
//! deterministic run directory (manifest, checkpoints, archives,
//! reports, plots).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Preset, RunConfig};
use crate::error::{Error, Result};
use crate::learner::stage::{curve_to_csv, run_stage, Stage};
use crate::metrics::{
    behavior_distributions_from_csv, diversity, efficiency, histogram_svg, js_divergence,
    model_complexity, record_distributions, ComplexityConfig, MetricsReport,
};
use crate::models::{policy_from_text, policy_to_text};
use crate::scenarios::{detect_and_extract, load, persist, summarize, ScenarioRecord};
use crate::sim::{run_episode, Binding};
use crate::world::{spawn, Role, RoadGeometry, SpawnConfig};

#[derive(Debug, Parser)]
#[command(name = "evoscen", version, about = "Highway scenario generation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a driver-model stage and write its checkpoint.
    Train(TrainArgs),
    /// Run simulation rounds and archive safety-critical scenarios.
    Simulate(SimulateArgs),
    /// Compute the evaluation metrics of a scenario archive.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration preset.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Round-count override.
    #[arg(long)]
    rounds: Option<u64>,
    /// Run directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training stage: level1, level2 or marl.
    #[arg(long)]
    stage: String,
    /// Checkpoint of the prerequisite stage (required after level1).
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Background-vehicle driver model: nilsson or dualdm.
    #[arg(long)]
    npc: String,
    /// Policy network file (required with --npc dualdm).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Line-delimited scenario archive to evaluate.
    #[arg(long)]
    archive: PathBuf,
    /// Simulation rounds the archive was produced from.
    #[arg(long)]
    rounds: u64,
    /// Naturalistic reference trajectories (CSV) for the fidelity metrics.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Run directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// Everything needed to reproduce a run; deliberately timestamp-free.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    rounds: u64,
    detail: BTreeMap<&'a str, String>,
    config: Option<&'a RunConfig>,
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(Preset::parse(&common.preset)?),
    };
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    if let Some(rounds) = common.rounds {
        cfg.sim.rounds = rounds;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_layout(out: &Path) -> Result<()> {
    for sub in ["checkpoints", "archives", "reports", "plots"] {
        fs::create_dir_all(out.join(sub))?;
    }
    Ok(())
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let stage = Stage::parse(&args.stage)?;
    let cfg = resolve_config(&args.common)?;
    let init_text = match (&args.init, stage.prerequisite()) {
        (Some(path), _) => Some(fs::read_to_string(path)?),
        (None, Some(pre)) => {
            return Err(Error::Config(format!(
                "--stage {} requires --init with the {pre:?} checkpoint",
                args.stage
            )))
        }
        (None, None) => None,
    };
    let stage_cfg = cfg.stage_config(stage);
    let output = run_stage(&stage_cfg, init_text.as_deref())?;

    let out = &args.common.out;
    run_layout(out)?;
    fs::write(
        out.join("checkpoints").join(format!("{}.ckpt", args.stage)),
        output.agent.checkpoint_text(),
    )?;
    fs::write(
        out.join("checkpoints").join(format!("{}.policy", args.stage)),
        policy_to_text(&output.agent.actor),
    )?;
    fs::write(
        out.join("reports").join(format!("reward_curve_{}.csv", args.stage)),
        curve_to_csv(&output.curve),
    )?;
    let mut detail = BTreeMap::new();
    detail.insert("stage", args.stage.clone());
    detail.insert("diverged", output.diverged.to_string());
    write_manifest(
        out,
        &RunManifest {
            command: "train",
            seed: cfg.sim.seed,
            rounds: cfg.sim.rounds,
            detail,
            config: Some(&cfg),
        },
    )?;
    if output.diverged {
        eprintln!("warning: policy saturated over the trailing rounds (divergence)");
    }
    println!(
        "trained {} for {} rounds -> {}",
        args.stage,
        cfg.sim.rounds,
        out.display()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let policy = match args.npc.as_str() {
        "nilsson" => None,
        "dualdm" => {
            let path = args.policy.as_ref().ok_or_else(|| {
                Error::Config("--npc dualdm requires --policy <FILE>".into())
            })?;
            Some(policy_from_text(&fs::read_to_string(path)?)?)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown npc model '{other}' (expected nilsson|dualdm)"
            )))
        }
    };

    let geo = RoadGeometry::build(cfg.map.clone())?;
    let spawn_cfg = SpawnConfig::new(cfg.sim.bv_count, true, cfg.sim.v_max);
    let episode_cfg = cfg.episode_config();
    let mut records: Vec<ScenarioRecord> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    for round in 0..cfg.sim.rounds {
        let seed = crate::learner::stage::round_seed(cfg.sim.seed, round);
        let world0 = spawn(&geo, &spawn_cfg, seed)?;
        let bindings: BTreeMap<u32, Binding> = world0
            .vehicles
            .iter()
            .map(|v| {
                let b = if v.role == Role::Sv {
                    Binding::Stackelberg
                } else {
                    match &policy {
                        Some(net) => Binding::FrozenPolicy(net),
                        None => Binding::Nilsson,
                    }
                };
                (v.id, b)
            })
            .collect();
        let outcome = run_episode(
            &geo,
            &episode_cfg,
            world0,
            &bindings,
            None,
            false,
            &mut rng,
            round,
        )?;
        records.extend(detect_and_extract(&outcome.log, &geo));
    }

    let out = &args.common.out;
    run_layout(out)?;
    let archive = out.join("archives").join("scenarios.jsonl");
    persist(&archive, &records)?;
    let summary = summarize(
        cfg.sim.rounds,
        &records,
        vec!["archives/scenarios.jsonl".into()],
    );
    let summary_text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Parse(format!("summary: {e}")))?;
    fs::write(out.join("reports").join("summary.json"), summary_text + "\n")?;
    let mut detail = BTreeMap::new();
    detail.insert("npc", args.npc.clone());
    write_manifest(
        out,
        &RunManifest {
            command: "simulate",
            seed: cfg.sim.seed,
            rounds: cfg.sim.rounds,
            detail,
            config: Some(&cfg),
        },
    )?;
    println!(
        "{} rounds: {} crash, {} near-crash -> {}",
        summary.rounds,
        summary.crash,
        summary.near_crash,
        archive.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.rounds == 0 {
        return Err(Error::Config("--rounds must be positive".into()));
    }
    let records = load(&args.archive)?;
    let generated = record_distributions(&records);
    let (mut js_velocity, mut js_lane_change_ttc) = (None, None);
    if let Some(reference) = &args.reference {
        let natural = behavior_distributions_from_csv(reference)?;
        if generated.velocity.total() > 0 {
            js_velocity = Some(js_divergence(&generated.velocity, &natural.velocity)?);
        }
        if generated.lane_change_ttc.total() > 0 {
            js_lane_change_ttc = Some(js_divergence(
                &generated.lane_change_ttc,
                &natural.lane_change_ttc,
            )?);
        }
    }

    let complexity_cfg = ComplexityConfig::default();
    let crash = records
        .iter()
        .filter(|r| r.label == crate::scenarios::Label::Crash)
        .count() as u64;
    let report = MetricsReport {
        rounds: args.rounds,
        crash_count: crash,
        near_crash_count: records.len() as u64 - crash,
        js_velocity,
        js_lane_change_ttc,
        efficiency: efficiency(records.len() as u64, args.rounds)?,
        mean_complexity: if records.is_empty() {
            0.0
        } else {
            model_complexity(&records, &complexity_cfg)?
        },
        degenerate_complexity_records: records
            .iter()
            .filter_map(|r| crate::metrics::complexity(r, &complexity_cfg).ok())
            .filter(|c| c.degenerate)
            .count() as u64,
        diversity: diversity(&records),
    };

    let out = &args.out;
    run_layout(out)?;
    fs::write(out.join("reports").join("metrics.json"), report.to_json() + "\n")?;
    fs::write(
        out.join("plots").join("velocity.svg"),
        histogram_svg(&generated.velocity, "BV velocity (m/s)"),
    )?;
    fs::write(
        out.join("plots").join("lane_change_ttc.svg"),
        histogram_svg(&generated.lane_change_ttc, "Lane-change TTC (s)"),
    )?;
    let mut detail = BTreeMap::new();
    detail.insert("archive", args.archive.display().to_string());
    if let Some(reference) = &args.reference {
        detail.insert("reference", reference.display().to_string());
    }
    write_manifest(
        out,
        &RunManifest {
            command: "evaluate",
            seed: 0,
            rounds: args.rounds,
            detail,
            config: None,
        },
    )?;
    match report.js_velocity {
        Some(js) => println!(
            "efficiency {:.4}, complexity {:.4}, JS(velocity) {:.4}",
            report.efficiency, report.mean_complexity, js
        ),
        None => println!(
            "efficiency {:.4}, complexity {:.4}, fidelity not computed (no reference)",
            report.efficiency, report.mean_complexity
        ),
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) => 2,
        _ => 3,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
