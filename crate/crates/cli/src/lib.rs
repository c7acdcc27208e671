//! Command-line front end: scenario loading, the `simulate`, `cluster`,
//! `train-policy` and `compare` commands, and their file outputs.

pub mod scenario;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use crosatfl::engine::{
    client_profiles, run_ablation_no_skip, run_crosatfl, run_fedsyn, transfer_bits, EngineError,
    LedgerSummary, SatLedger, SessionConfig, SessionResult,
};
use crosatfl::starmask::{
    evaluate_paired, fallback_partition, run_clustering_episode, terminal_reward, train_policy,
    ClusterPartition, Instance, MaskedPolicy, Mode, RewardBreakdown, StarMaskError,
};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use scenario::{InstanceFile, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("clustering is infeasible; at least {k_min} clusters are needed")]
    Infeasible { k_min: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Run(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible { .. } => 2,
            CliError::Diverged(_) => 3,
            _ => 1,
        }
    }
}

impl From<StarMaskError> for CliError {
    fn from(e: StarMaskError) -> Self {
        match e {
            StarMaskError::Infeasible { k_min } => CliError::Infeasible { k_min },
            StarMaskError::Diverged { .. } | StarMaskError::NonFinitePolicy => {
                CliError::Diverged(e.to_string())
            }
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::StarMask(s) => s.into(),
            EngineError::Train(t) => CliError::Diverged(t.to_string()),
            EngineError::Config(m) => CliError::Invalid(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "crosatfl", version, about = "On-orbit hierarchical federated learning simulator")]
pub struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Crosatfl,
    Fedsyn,
    NoSkip,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Crosatfl => "crosatfl",
            Method::Fedsyn => "fedsyn",
            Method::NoSkip => "no-skip",
        }
    }

    fn run(self, config: &SessionConfig) -> Result<SessionResult, CliError> {
        log::info!("running {}", self.name());
        Ok(match self {
            Method::Crosatfl => run_crosatfl(config)?,
            Method::Fedsyn => run_fedsyn(config)?,
            Method::NoSkip => run_ablation_no_skip(config)?,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method and write the ledger, event log, round metrics and skips.
    Simulate {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "crosatfl")]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Partition the scenario's clients and report the reward breakdown.
    Cluster {
        scenario: PathBuf,
        /// `greedy` or `trained:<policy file>`.
        #[arg(long, default_value = "greedy")]
        policy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the clustering policy on an instance file.
    TrainPolicy {
        instances: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-episode reward trace; defaults to `<out>.trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Paired policy-versus-constructor report; defaults to `<out>.eval.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run several methods on one scenario and tabulate the ledgers.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "crosatfl,fedsyn")]
        methods: Vec<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate {
            scenario,
            method,
            seed,
            out_dir,
        } => simulate(scenario, *method, *seed, out_dir.as_deref()),
        Command::Cluster {
            scenario,
            policy,
            seed,
            out,
        } => cluster(scenario, policy, *seed, out),
        Command::TrainPolicy {
            instances,
            episodes,
            learning_rate,
            seed,
            out,
            trace,
            report,
        } => {
            let suffixed = |ext: &str| {
                let mut p = out.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            train(
                instances,
                TrainOverrides {
                    episodes: *episodes,
                    learning_rate: *learning_rate,
                    seed: *seed,
                },
                out,
                &trace.clone().unwrap_or_else(|| suffixed(".trace.csv")),
                &report.clone().unwrap_or_else(|| suffixed(".eval.json")),
            )
        }
        Command::Compare {
            scenario,
            methods,
            seed,
            out,
        } => compare(scenario, methods, *seed, out),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

/// `header` is only written for an empty table; otherwise serde supplies it.
fn csv_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).map_err(|e| CliError::Run(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Run(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Run(e.to_string()))?;
    write(path, bytes)
}

fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.session.seed = seed;
    }
    Ok(s)
}

const SKIP_HEADER: [&str; 10] = [
    "round",
    "cluster",
    "master",
    "skipped",
    "delta_t_s",
    "delta_e_j",
    "psi",
    "barrier_before_s",
    "barrier_after_s",
    "forced_full",
];

#[derive(Debug, Serialize)]
pub struct LedgerReport {
    #[serde(flatten)]
    pub summary: LedgerSummary,
    pub seed: u64,
    pub final_metric: f64,
    pub cluster_count: Option<usize>,
    pub per_satellite: BTreeMap<usize, SatLedger>,
}

fn simulate(path: &Path, method: Method, seed: Option<u64>, out_dir: Option<&Path>) -> Result<(), CliError> {
    let s = load_with_seed(path, seed)?;
    let dir = out_dir.unwrap_or(&s.output.dir);
    let r = method.run(&s.session)?;
    let report = LedgerReport {
        summary: r.ledger.summary(method.name()),
        seed: s.session.seed,
        final_metric: r.final_metric,
        cluster_count: r.partition.as_ref().map(|p| p.k),
        per_satellite: r.ledger.per_satellite.clone(),
    };
    json(&dir.join(&s.output.ledger), &report)?;
    csv_rows(&dir.join(&s.output.events), &r.events, &[])?;
    csv_rows(&dir.join(&s.output.metrics), &r.rounds, &[])?;
    csv_rows(&dir.join(&s.output.skips), &r.skips, &SKIP_HEADER)?;
    if let Some(p) = &r.partition {
        json(&dir.join(&s.output.partition), p)?;
    }
    log::info!("{}: gs {} final metric {:.4}", method.name(), report.summary.gs_count, r.final_metric);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ClusterReport {
    pub policy: String,
    pub feasible: bool,
    pub k_min: Option<usize>,
    pub partition: Option<ClusterPartition>,
    pub reward: Option<RewardBreakdown>,
    /// Reward of the deterministic constructor on the same instance.
    pub constructor_reward: Option<f64>,
    pub fell_back: bool,
}

fn cluster(path: &Path, policy: &str, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let s = load_with_seed(path, seed)?;
    let cfg = &s.session;
    let profiles = client_profiles(cfg)?;
    let payload = transfer_bits(cfg)?;
    let inst = Instance::new(&profiles, &cfg.constraints).map_err(|e| CliError::Invalid(e.to_string()))?;
    let infeasible = |k_min| ClusterReport {
        policy: policy.to_string(),
        feasible: false,
        k_min: Some(k_min),
        partition: None,
        reward: None,
        constructor_reward: None,
        fell_back: false,
    };
    let constructed = match fallback_partition(&inst, &cfg.constraints) {
        Ok(p) => p,
        Err(StarMaskError::Infeasible { k_min }) => {
            json(out, &infeasible(k_min))?;
            return Err(CliError::Infeasible { k_min });
        }
        Err(e) => return Err(e.into()),
    };
    let (partition, weights, fell_back) = if policy == "greedy" {
        (constructed.clone(), cfg.reward, false)
    } else if let Some(file) = policy.strip_prefix("trained:") {
        let bytes = fs::read(file).map_err(|e| CliError::Invalid(format!("cannot read {file}: {e}")))?;
        let (pol, header) = MaskedPolicy::from_bytes(&bytes).map_err(|e| CliError::Invalid(e.to_string()))?;
        let ep = run_clustering_episode::<ChaCha8Rng>(&inst, &pol, &cfg.constraints, Mode::Greedy)?;
        (ep.partition, header.reward.unwrap_or(cfg.reward), ep.fell_back)
    } else {
        return Err(CliError::Invalid(format!("unknown policy {policy:?}")));
    };
    let reward = terminal_reward(&partition, &inst, &cfg.constraints, &weights, &cfg.link, payload)?;
    let base = terminal_reward(&constructed, &inst, &cfg.constraints, &weights, &cfg.link, payload)?;
    json(
        out,
        &ClusterReport {
            policy: policy.to_string(),
            feasible: true,
            k_min: None,
            partition: Some(partition),
            reward: Some(reward),
            constructor_reward: Some(base.reward),
            fell_back,
        },
    )
}

pub struct TrainOverrides {
    pub episodes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    episode: usize,
    reward: f64,
    moving_avg: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub seed: u64,
    pub fallbacks: usize,
    pub early_mean: Option<f64>,
    pub late_mean: Option<f64>,
    pub instances: usize,
    pub policy_wins: usize,
    pub win_fraction: f64,
    pub pairs: Vec<Pair>,
}

#[derive(Debug, Serialize)]
pub struct Pair {
    pub policy_reward: f64,
    pub constructor_reward: f64,
    pub policy_fell_back: bool,
}

/// Mean of the first and last fifth of a trace.
pub fn window_means(rewards: &[f64]) -> Option<(f64, f64)> {
    let w = rewards.len() / 5;
    if w == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&rewards[..w]), mean(&rewards[rewards.len() - w..])))
}

fn train(path: &Path, o: TrainOverrides, out: &Path, trace: &Path, report: &Path) -> Result<(), CliError> {
    let file = InstanceFile::load(path)?;
    let mut hyper = file.hyper;
    if let Some(e) = o.episodes {
        hyper.episodes = e;
    }
    if let Some(lr) = o.learning_rate {
        hyper.learning_rate = lr;
    }
    if let Some(s) = o.seed {
        hyper.seed = s;
    }
    let instances = file.instances()?;
    let t = train_policy(&instances, &file.constraints, &file.reward, &file.link, file.payload_bits, &hyper)?;
    write(
        out,
        t.policy.to_bytes(hyper.seed, hyper.episodes, Some(hyper), Some(t.weights)),
    )?;
    let rows: Vec<TraceRow> = t
        .rewards
        .iter()
        .zip(&t.moving_avg)
        .enumerate()
        .map(|(episode, (&reward, &moving_avg))| TraceRow {
            episode,
            reward,
            moving_avg,
        })
        .collect();
    csv_rows(trace, &rows, &["episode", "reward", "moving_avg"])?;
    let paired = evaluate_paired(
        &t.policy,
        &instances,
        &file.constraints,
        &t.weights,
        &file.link,
        file.payload_bits,
    )?;
    let wins = paired.iter().filter(|p| p.policy_reward >= p.greedy_reward).count();
    let means = window_means(&t.rewards);
    json(
        report,
        &TrainReport {
            episodes: hyper.episodes,
            seed: hyper.seed,
            fallbacks: t.fallbacks,
            early_mean: means.map(|m| m.0),
            late_mean: means.map(|m| m.1),
            instances: paired.len(),
            policy_wins: wins,
            win_fraction: wins as f64 / paired.len() as f64,
            pairs: paired
                .iter()
                .map(|p| Pair {
                    policy_reward: p.policy_reward,
                    constructor_reward: p.greedy_reward,
                    policy_fell_back: p.policy_fell_back,
                })
                .collect(),
        },
    )
}

/// Row labels of the comparison table, in display order.
pub const TABLE_ROWS: [&str; 6] = [
    "Intra-cluster LISLs (No.)",
    "Inter-cluster LISLs (No.)",
    "GS Communication (No.)",
    "Transmission Energy Cost (kJ)",
    "Training Energy Cost (kJ)",
    "Waiting Time (Hours)",
];

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub seed: u64,
    pub methods: Vec<String>,
    /// Row label to method to value.
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
    pub ledgers: Vec<LedgerSummary>,
    /// FedSyn over CroSatFL, when both ran.
    pub gs_count_ratio: Option<f64>,
    pub gs_energy_ratio: Option<f64>,
    pub transmission_energy_ratio: Option<f64>,
}

fn compare(path: &Path, methods: &[Method], seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let s = load_with_seed(path, seed)?;
    let mut ledgers = Vec::new();
    for &m in methods {
        let r = m.run(&s.session)?;
        ledgers.push(r.ledger.summary(m.name()));
    }
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for l in &ledgers {
        for row in TABLE_ROWS {
            table.entry(row.to_string()).or_default().insert(l.method.clone(), l.table[row]);
        }
    }
    let find = |name: &str| ledgers.iter().find(|l| l.method == name);
    let ratio = |f: fn(&LedgerSummary) -> f64| match (find("fedsyn"), find("crosatfl")) {
        (Some(a), Some(b)) => Some(f(a) / f(b)),
        _ => None,
    };
    let cmp = Comparison {
        seed: s.session.seed,
        methods: ledgers.iter().map(|l| l.method.clone()).collect(),
        gs_count_ratio: ratio(|l| l.gs_count as f64),
        gs_energy_ratio: ratio(|l| l.gs_energy_j),
        transmission_energy_ratio: ratio(|l| l.transmission_energy_j),
        table,
        ledgers,
    };
    json(&out.join("comparison.json"), &cmp)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend(cmp.methods.iter().cloned());
    let err = |e: csv::Error| CliError::Run(e.to_string());
    w.write_record(&header).map_err(err)?;
    for row in TABLE_ROWS {
        let mut rec = vec![row.to_string()];
        rec.extend(cmp.methods.iter().map(|m| cmp.table[row][m].to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Run(e.to_string()))?;
    write(&out.join("comparison.csv"), bytes)
}
