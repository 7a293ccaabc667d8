use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mlo_core::harness::{
    bridge, compare_policies, compare_reports, read_training_log, run_experiment_with, training_curves, write_curve,
    RunOptions, RunReport, ScenarioConfig, SMOOTHING,
};
use mlo_core::policy::PolicyKind;

#[derive(Parser)]
#[command(name = "mlo", version, about = "802.11be multi-link allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (if needed) and evaluate one policy over the configured seeds.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Directory for event logs, training logs and the report.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Compare policies, either by running configs or from saved reports.
    Compare {
        #[arg(long, num_args = 1.., conflicts_with = "reports", required_unless_present = "reports")]
        configs: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        desk_scale: bool,
    },
    /// Smooth a training log into a `step,reward,tdr` curve.
    Curves {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = SMOOTHING)]
        window: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve evaluation episodes to an external allocator.
    Bridge {
        /// `tcp://host:port` or `stdio`.
        #[arg(long)]
        endpoint: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    U1,
    U2,
    Desk,
}

#[derive(Args)]
struct ScenarioArgs {
    /// TOML scenario file; fields left out take their defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Apply the small-network overrides.
    #[arg(long)]
    desk_scale: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let cfg = match (&self.config, self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(Preset::U2)) => ScenarioConfig::u2(),
            (None, Some(Preset::Desk)) => ScenarioConfig::desk(),
            (None, Some(Preset::U1) | None) => ScenarioConfig::u1(),
        };
        Ok(if self.desk_scale { cfg.with_desk_scale() } else { cfg })
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_report(report: &RunReport, out: &Path) {
    println!("policy      {}", report.label);
    println!("config      {}", report.config_hash);
    println!("TDR median  {:.4}", report.tdr_median);
    for (t, fs) in &report.fs_median_by_type {
        println!("FS {t:<8} {fs:.4}");
    }
    for s in &report.seeds {
        let d_tol = s.d_tol.map(|d| format!(" d_tol {d:.4}")).unwrap_or_default();
        println!("  seed {:<4} TDR {:.4}{d_tol}", s.seed, s.tdr_median);
    }
    if let Some(t) = report.final_training_tdr() {
        println!("final training TDR {t:.4}");
    }
    println!("wall time   {:.1} s", report.wall_time_s);
    println!("logs        {}", out.display());
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, seed, policy, out } => {
            let mut cfg = scenario.load()?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(p) = policy {
                cfg.policy = p;
            }
            let report = run_experiment_with(&cfg, &RunOptions { log_dir: Some(out.clone()) })?;
            print_report(&report, &out);
        }
        Command::Compare { configs, reports, desk_scale } => {
            let comparison = if reports.is_empty() {
                let cfgs = configs
                    .iter()
                    .map(|p| load_config(p).map(|c| if desk_scale { c.with_desk_scale() } else { c }))
                    .collect::<Result<Vec<_>>>()?;
                compare_policies(&cfgs)?.0
            } else {
                let loaded = reports
                    .iter()
                    .map(|p| -> Result<RunReport> {
                        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                        Ok(serde_json::from_reader(BufReader::new(f))?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                compare_reports(&loaded)?
            };
            print!("{}", comparison.to_table());
        }
        Command::Curves { log, window, out } => {
            let f = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let rows = training_curves(&read_training_log(BufReader::new(f))?, window);
            match out {
                Some(path) => write_curve(BufWriter::new(File::create(path)?), &rows)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    write_curve(&mut lock, &rows)?;
                    lock.flush()?;
                }
            }
        }
        Command::Bridge { endpoint, scenario, seed } => {
            let cfg = scenario.load()?;
            let report = bridge::serve_endpoint(&cfg, seed, &endpoint)?;
            if endpoint == "stdio" {
                return Ok(());
            }
            eprintln!("session done: TDR median {:.4}, {} fallbacks", report.tdr_median, report.fallbacks);
        }
    }
    Ok(())
}
