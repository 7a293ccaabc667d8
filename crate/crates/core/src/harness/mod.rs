//! Experiment orchestration: seeded scenario construction, agent training,
//! frozen-policy evaluation, aggregation, comparison tables and curves.
//!
//! Per seed: build the network, assign station types, train (agent only),
//! then run `eval_episodes` fresh-seed episodes and report medians. Seeds
//! are independent, so they run in parallel and the result does not depend
//! on execution order.

pub mod bridge;
mod config;
mod curves;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DeskScale, RewardConfig, ScenarioConfig, ScenarioId};
pub use curves::{read_training_log, training_curves, write_curve, write_training_log, CurveRow, SMOOTHING};

use crate::engine::{self, hex_digest, Allocator, MetricsLedger, Scenario, Summary};
use crate::error::{config as config_error, Result};
use crate::mdp::RewardSpec;
use crate::policy::{Mcaa, PolicyKind, Slci};
use crate::sac::{CurvePoint, MhrsacPolicy, ReplayBuffer, SacAgent};
use crate::topology::{build_network, Network};
use crate::traffic::{assign_station_types, FlowType, StationTypes};
use crate::util::median;

/// Deterministic sub-seed for `(seed, purpose, k)`.
pub fn derive_seed(seed: u64, purpose: &str, k: u64) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(purpose.as_bytes());
    bytes.extend_from_slice(&k.to_le_bytes());
    let hex = hex_digest(&bytes);
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

/// Network and station types of one seed.
pub fn build_world(cfg: &ScenarioConfig, seed: u64) -> Result<(Network, StationTypes)> {
    let network = build_network(&cfg.network, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "types", 0));
    let types = assign_station_types(&network, &cfg.traffic.mix, &mut rng)?;
    Ok((network, types))
}

pub fn baseline(cfg: &ScenarioConfig, kind: PolicyKind) -> Result<Box<dyn Allocator>> {
    match kind {
        PolicyKind::Slci => Ok(Box::new(Slci)),
        PolicyKind::Mcaa if cfg.mcaa_snap => Ok(Box::new(Mcaa::snapped(cfg.trainer.actions.granularity))),
        PolicyKind::Mcaa => Ok(Box::new(Mcaa::raw())),
        other => Err(config_error(format!("{other} is not a baseline policy"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub summary: Summary,
    /// SHA-256 of the episode's decision and flow logs.
    pub log_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub d_tol: Option<f64>,
    pub train_steps: u64,
    pub episodes: Vec<EpisodeReport>,
    pub tdr_median: f64,
    pub fs_median_by_type: BTreeMap<String, f64>,
    /// Smoothed training curve; empty for baselines.
    pub curve: Vec<CurveRow>,
}

impl SeedReport {
    /// Last smoothed training TDR, if the seed was trained.
    pub fn final_training_tdr(&self) -> Option<f64> {
        self.curve.last().map(|r| r.tdr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub seeds: Vec<SeedReport>,
    pub tdr_median: f64,
    pub fs_median_by_type: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

impl RunReport {
    /// Hash of everything except wall time.
    pub fn content_hash(&self) -> String {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        hex_digest(&serde_json::to_vec(&r).expect("report serializes"))
    }

    pub fn tdr_by_seed(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.tdr_median).collect()
    }

    pub fn fs_median(&self, t: FlowType) -> Option<f64> {
        self.fs_median_by_type.get(t.name()).copied()
    }

    /// Median over seeds of the final smoothed training TDR.
    pub fn final_training_tdr(&self) -> Option<f64> {
        let v: Vec<f64> = self.seeds.iter().filter_map(SeedReport::final_training_tdr).collect();
        (!v.is_empty()).then(|| median(&v))
    }
}

/// Where to persist per-event logs; nothing is written when `log_dir` is
/// `None`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log_dir: Option<PathBuf>,
}

pub(crate) fn fs_medians<'a>(summaries: impl Iterator<Item = &'a BTreeMap<String, f64>> + Clone) -> BTreeMap<String, f64> {
    FlowType::ALL
        .iter()
        .filter_map(|t| {
            let v: Vec<f64> = summaries.clone().filter_map(|m| m.get(t.name()).copied()).collect();
            (!v.is_empty()).then(|| (t.name().to_string(), median(&v)))
        })
        .collect()
}

fn episode_paths(dir: &Path, label: &str, seed: u64, k: usize) -> (PathBuf, PathBuf) {
    let stem = format!("{label}_seed{seed}_ep{k}");
    (dir.join(format!("{stem}_decisions.csv")), dir.join(format!("{stem}_flows.csv")))
}

fn training_log_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}_train.csv"))
}

fn persist(ledger: &MetricsLedger, dir: &Path, label: &str, seed: u64, k: usize) -> Result<()> {
    let (d, f) = episode_paths(dir, label, seed, k);
    ledger.write_decisions(BufWriter::new(File::create(d)?))?;
    ledger.write_flows(BufWriter::new(File::create(f)?))?;
    Ok(())
}

/// Runs `eval_episodes` fresh-seed episodes with a frozen allocator.
pub fn evaluate(
    cfg: &ScenarioConfig,
    scenario: &Scenario<'_>,
    allocator: &mut dyn Allocator,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<EpisodeReport>> {
    (0..cfg.eval_episodes)
        .map(|k| {
            let ep_seed = derive_seed(seed, "eval", k as u64);
            let ledger = engine::run(scenario, allocator, cfg.horizon_s, ep_seed)?;
            if let Some(dir) = &opts.log_dir {
                persist(&ledger, dir, &cfg.label(), seed, k)?;
            }
            Ok(EpisodeReport { seed: ep_seed, summary: ledger.summary(), log_hash: ledger.content_hash() })
        })
        .collect()
}

/// MCAA's mean TDR on the first training episode, kept inside (0, 1).
pub fn calibrate_d_tol(cfg: &ScenarioConfig, scenario: &Scenario<'_>, seed: u64) -> Result<f64> {
    let mut mcaa = baseline(cfg, PolicyKind::Mcaa)?;
    let ledger = engine::run(scenario, mcaa.as_mut(), cfg.horizon_s, derive_seed(seed, "train", 0))?;
    Ok(ledger.tdr_mean().clamp(0.01, 0.99))
}

/// Trains a fresh agent for `cfg.train_decisions` agent steps.
pub fn train_agent(
    cfg: &ScenarioConfig,
    scenario: &Scenario<'_>,
    seed: u64,
) -> Result<(SacAgent, Vec<CurvePoint>, f64)> {
    let d_tol = match cfg.reward.d_tol {
        Some(d) => d,
        None => calibrate_d_tol(cfg, scenario, seed)?,
    };
    let spec = RewardSpec { hindsight: cfg.reward.hindsight, d_tol };
    let agent = SacAgent::new(cfg.trainer.clone(), derive_seed(seed, "agent", 0))?;
    let buffer = Arc::new(ReplayBuffer::new(cfg.trainer.replay_capacity));
    let mut policy =
        MhrsacPolicy::training(agent, spec, buffer, scenario.network.aps.len(), derive_seed(seed, "explore", 0))
            .with_step_budget(cfg.train_decisions);
    let mut episode = 0u64;
    while policy.is_learning() {
        let before = policy.agent.steps;
        engine::run(scenario, &mut policy, cfg.horizon_s, derive_seed(seed, "train", episode))?;
        if policy.agent.steps == before {
            return Err(config_error("training episode produced no agent decisions"));
        }
        episode += 1;
    }
    let curve = std::mem::take(&mut policy.curve);
    Ok((policy.into_agent(), curve, d_tol))
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64, opts: &RunOptions) -> Result<SeedReport> {
    let (network, types) = build_world(cfg, seed)?;
    let scenario = Scenario { network: &network, types: &types, traffic: &cfg.traffic };
    let label = cfg.label();
    let (episodes, d_tol, train_steps, curve) = match cfg.policy {
        PolicyKind::Slci | PolicyKind::Mcaa => {
            let mut alloc = baseline(cfg, cfg.policy)?;
            (evaluate(cfg, &scenario, alloc.as_mut(), seed, opts)?, None, 0, Vec::new())
        }
        PolicyKind::Mhrsac => {
            let (agent, points, d_tol) = train_agent(cfg, &scenario, seed)?;
            if let Some(dir) = &opts.log_dir {
                write_training_log(BufWriter::new(File::create(training_log_path(dir, &label, seed))?), &points)?;
            }
            let steps = agent.steps;
            let mut frozen = MhrsacPolicy::evaluation(agent, network.aps.len());
            let eps = evaluate(cfg, &scenario, &mut frozen, seed, opts)?;
            (eps, Some(d_tol), steps, training_curves(&points, curves::SMOOTHING))
        }
        PolicyKind::External => return Err(config_error("the external policy runs through the bridge")),
    };
    let tdrs: Vec<f64> = episodes.iter().map(|e| e.summary.TDR_mean).collect();
    Ok(SeedReport {
        seed,
        d_tol,
        train_steps,
        tdr_median: median(&tdrs),
        fs_median_by_type: fs_medians(episodes.iter().map(|e| &e.summary.FS_mean_by_type)),
        episodes,
        curve,
    })
}

pub fn run_experiment(cfg: &ScenarioConfig) -> Result<RunReport> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let start = Instant::now();
    let seeds: Vec<SeedReport> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s, opts)).collect::<Result<_>>()?;
    let report = assemble(cfg, seeds, start.elapsed().as_secs_f64());
    if let Some(dir) = &opts.log_dir {
        let mut f = BufWriter::new(File::create(dir.join(format!("{}_report.json", report.label)))?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.flush()?;
    }
    Ok(report)
}

fn assemble(cfg: &ScenarioConfig, seeds: Vec<SeedReport>, wall_time_s: f64) -> RunReport {
    let tdrs: Vec<f64> = seeds.iter().map(|s| s.tdr_median).collect();
    RunReport {
        label: cfg.label(),
        config: cfg.clone(),
        config_hash: cfg.content_hash(),
        tdr_median: median(&tdrs),
        fs_median_by_type: fs_medians(seeds.iter().map(|s| &s.fs_median_by_type)),
        seeds,
        wall_time_s,
    }
}

/// Rebuilds the figure-level numbers of `report` from the persisted logs.
pub fn reaggregate(report: &RunReport, dir: &Path) -> Result<RunReport> {
    let cfg = &report.config;
    let mut seeds = Vec::new();
    for s in &report.seeds {
        let mut episodes = Vec::new();
        for (k, ep) in s.episodes.iter().enumerate() {
            let (d, f) = episode_paths(dir, &report.label, s.seed, k);
            let ledger = MetricsLedger::read(BufReader::new(File::open(d)?), BufReader::new(File::open(f)?))?;
            episodes.push(EpisodeReport { seed: ep.seed, summary: ledger.summary(), log_hash: ledger.content_hash() });
        }
        let curve = if cfg.policy == PolicyKind::Mhrsac {
            let points = read_training_log(BufReader::new(File::open(training_log_path(dir, &report.label, s.seed))?))?;
            training_curves(&points, curves::SMOOTHING)
        } else {
            Vec::new()
        };
        let tdrs: Vec<f64> = episodes.iter().map(|e| e.summary.TDR_mean).collect();
        seeds.push(SeedReport {
            seed: s.seed,
            d_tol: s.d_tol,
            train_steps: s.train_steps,
            tdr_median: median(&tdrs),
            fs_median_by_type: fs_medians(episodes.iter().map(|e| &e.summary.FS_mean_by_type)),
            episodes,
            curve,
        });
    }
    Ok(assemble(cfg, seeds, report.wall_time_s))
}

/// TDR difference of `this` against `other`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    /// `(other - this) * 100`.
    pub percentage_points: f64,
    /// `(other - this) / other`, or 0 when `other` is 0.
    pub relative: f64,
}

pub fn tdr_gain(this: f64, other: f64) -> Gain {
    Gain {
        percentage_points: (other - this) * 100.0,
        relative: if other == 0.0 { 0.0 } else { (other - this) / other },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub label: String,
    pub tdr_median: f64,
    pub tdr_by_seed: Vec<f64>,
    pub fs_median_by_type: BTreeMap<String, f64>,
    /// Gain of this policy over each other policy in the table.
    pub gains: BTreeMap<String, Gain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<PolicyRow>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text table, one line per policy.
    pub fn to_table(&self) -> String {
        let mut out = String::from("policy                       TDR     FS_WB   FS_V4K  FS_VR   gains (pp / rel)\n");
        for r in &self.rows {
            let fs = |t: FlowType| r.fs_median_by_type.get(t.name()).map_or("-".to_string(), |v| format!("{v:.4}"));
            let gains: Vec<String> = r
                .gains
                .iter()
                .map(|(k, g)| format!("vs {k}: {:+.2} / {:+.1}%", g.percentage_points, 100.0 * g.relative))
                .collect();
            out.push_str(&format!(
                "{:<28} {:.4}  {:<7} {:<7} {:<7} {}\n",
                r.label,
                r.tdr_median,
                fs(FlowType::Wb),
                fs(FlowType::V4k),
                fs(FlowType::Vr),
                gains.join(", ")
            ));
        }
        out
    }
}

/// Tabulates reports of the same experiment under different policies.
pub fn compare_reports(reports: &[RunReport]) -> Result<Comparison> {
    if let Some(first) = reports.first() {
        let key = first.config.experiment_key();
        if reports.iter().any(|r| r.config.experiment_key() != key) {
            return Err(config_error("compared configs differ in more than the policy"));
        }
    }
    let rows = reports
        .iter()
        .map(|r| PolicyRow {
            label: r.label.clone(),
            tdr_median: r.tdr_median,
            tdr_by_seed: r.tdr_by_seed(),
            fs_median_by_type: r.fs_median_by_type.clone(),
            gains: reports
                .iter()
                .filter(|o| o.label != r.label)
                .map(|o| (o.label.clone(), tdr_gain(r.tdr_median, o.tdr_median)))
                .collect(),
        })
        .collect();
    Ok(Comparison { rows })
}

pub fn compare_policies(configs: &[ScenarioConfig]) -> Result<(Comparison, Vec<RunReport>)> {
    if let Some(first) = configs.first() {
        let key = first.experiment_key();
        if configs.iter().any(|c| c.experiment_key() != key) {
            return Err(config_error("compared configs differ in more than the policy"));
        }
    }
    let reports = configs.iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    Ok((compare_reports(&reports)?, reports))
}
