use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use log::info;
use serde_json::json;

use dtvec_core::harness::policies::{build_policy, collect_cases, BackendKind, PolicyOptions};
use dtvec_core::harness::report::{self, write_backlog_csv, write_slot_csv};
use dtvec_core::harness::sweep::{self, run_sweep, SweepSpec};
use dtvec_core::harness::run_episode;
use dtvec_core::learners::env::VecEnv;
use dtvec_core::learners::{checkpoint, LearnerConfig, Trainer};
use dtvec_core::llm::CaseSet;
use dtvec_core::SimConfig;

/// One optional `--<key>` flag per simulation config key.
#[derive(Debug, Clone, Default)]
struct SimFlags {
    config_file: Option<PathBuf>,
    set: Vec<(String, String)>,
}

fn flag_name(key: &str) -> String {
    key.to_ascii_lowercase().replace('_', "-")
}

impl FromArgMatches for SimFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = SimFlags {
            config_file: m.get_one::<PathBuf>("config").cloned(),
            set: Vec::new(),
        };
        for key in SimConfig::KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                out.set.push((key.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for SimFlags {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            clap::Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Simulation config file (key = value lines); flags override it"),
        );
        for key in SimConfig::KEYS {
            cmd = cmd.arg(
                clap::Arg::new(*key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .help_heading("Simulation config")
                    .help(format!("Sets `{key}`")),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl SimFlags {
    fn build(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config_file {
            Some(p) => SimConfig::from_file(p)?,
            None => SimConfig::default(),
        };
        for (k, v) in &self.set {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct PolicyFlags {
    /// uniform, greedy, random, fixed:<omega>:<alpha>, llm, marl or sarl
    #[arg(long, default_value = "uniform")]
    policy: String,
    /// Completion backend for the llm policy
    #[arg(long, default_value = "mock")]
    backend: BackendKind,
    /// Model name sent to the http backend
    #[arg(long, default_value = "llama-3.1-8b")]
    model: String,
    /// Case set (JSONL) for the llm policy
    #[arg(long)]
    cases: Option<PathBuf>,
    /// Policy whose rollout seeds the llm case set when --cases is absent
    #[arg(long, default_value = "uniform")]
    case_source: String,
    #[arg(long)]
    marl_checkpoint: Option<PathBuf>,
    #[arg(long)]
    sarl_checkpoint: Option<PathBuf>,
    /// Train marl/sarl in place for this many episodes when no checkpoint is given
    #[arg(long, default_value_t = 0)]
    learner_episodes: usize,
    #[arg(long, default_value_t = 6000)]
    token_budget: usize,
}

impl PolicyFlags {
    fn options(&self) -> PolicyOptions {
        let mut o = PolicyOptions {
            backend: self.backend,
            model: self.model.clone(),
            case_file: self.cases.clone(),
            case_source: self.case_source.clone(),
            marl_checkpoint: self.marl_checkpoint.clone(),
            sarl_checkpoint: self.sarl_checkpoint.clone(),
            learner_episodes: self.learner_episodes,
            ..PolicyOptions::default()
        };
        o.llm.token_budget = self.token_budget;
        o
    }
}

#[derive(Debug, Parser)]
#[command(name = "dtvec", version, about = "Digital-twin vehicular edge computing simulator")]
struct Cli {
    /// Log filter, e.g. info or dtvec_core=debug
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run one episode and write per-slot and backlog CSVs
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        policy: PolicyFlags,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the multi-agent (marl) or local-critic (sarl) learner and export its cases
    Train {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long, default_value = "marl")]
        learner: String,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 50)]
        episode_len: usize,
        #[arg(long)]
        train_every: Option<usize>,
        #[arg(long, default_value_t = 200)]
        export_slots: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every cell of a sweep spec
    Sweep {
        /// Sweep spec file (key = value lines, list values comma separated)
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the spec's worker count
        #[arg(long)]
        workers: Option<usize>,
        /// Record wall-clock time per cell in the results file
        #[arg(long)]
        timing: bool,
    },
    /// Export or inspect case sets
    Cases {
        #[command(subcommand)]
        action: CasesCmd,
    },
    /// Turn a sweep results CSV into plot-data series
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CasesCmd {
    /// Roll out a policy and save its (state, action) pairs
    Export {
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        policy: PolicyFlags,
        #[arg(long, default_value_t = 200)]
        slots: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a case set
    Inspect { file: PathBuf },
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn config_map(cfg: &SimConfig) -> serde_json::Map<String, serde_json::Value> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().into()))
        .collect()
}

fn simulate(sim: &SimFlags, pf: &PolicyFlags, horizon: usize, out: &Path) -> Result<()> {
    let cfg = sim.build()?;
    let mut policy = build_policy(&pf.policy, &cfg, horizon, &pf.options())?;
    let r = run_episode(&cfg, policy.as_mut(), horizon)?;
    ensure_dir(out)?;
    write_slot_csv(&out.join("slots.csv"), &r)?;
    write_backlog_csv(&out.join("backlog.csv"), &r)?;
    let summary = json!({
        "policy": r.policy,
        "horizon": horizon,
        "deterministic": !(pf.policy == "llm" && pf.backend == BackendKind::Http),
        "mean_energy_j": r.mean_energy(),
        "mean_delay_s": r.mean_delay(),
        "mean_qos": r.mean_qos(),
        "mean_edge_energy_j": r.mean_edge_energy(),
        "mean_alpha_sum": r.mean_alpha_sum(),
        "fallback_slots": r.fallbacks(),
        "stability": r.stability,
        "stability_note": r.stability_note,
        "runtime_s": r.runtime_s,
        "config": config_map(&cfg),
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}: {} slots, mean energy {:.6} J, mean delay {:.6} s, mean QoS {:.4}, {}",
        r.policy,
        horizon,
        r.mean_energy(),
        r.mean_delay(),
        r.mean_qos(),
        if r.is_stable() { "stable" } else { "not stable" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    sim: &SimFlags,
    learner: &str,
    episodes: usize,
    episode_len: usize,
    train_every: Option<usize>,
    export_slots: usize,
    out: &Path,
) -> Result<()> {
    let cfg = sim.build()?;
    let base = match learner {
        "marl" => LearnerConfig::marl(),
        "sarl" => LearnerConfig::sarl(),
        other => bail!("unknown learner `{other}` (expected marl or sarl)"),
    };
    let lc = LearnerConfig {
        episodes,
        episode_len,
        export_slots,
        train_every: train_every.unwrap_or(base.train_every),
        ..base.with_sim(&cfg)
    };
    let mut env = VecEnv::new(cfg.clone())?;
    let mut trainer = Trainer::new(lc, &env);
    let report = trainer.train(&mut env)?;
    let cases = trainer.export_cases(&mut env, export_slots)?;
    ensure_dir(out)?;
    checkpoint::save(&trainer.snapshot(), &out.join("checkpoint.bin"))?;
    cases.save(&out.join("cases.jsonl"))?;
    let mut curve = String::from("episode");
    for i in 0..report.episode_rewards.len() {
        curve.push_str(&format!(",mean_reward_{i}"));
    }
    curve.push('\n');
    for e in 0..report.mean_curve.len() {
        curve.push_str(&e.to_string());
        for agent in &report.episode_rewards {
            curve.push_str(&format!(",{}", agent[e]));
        }
        curve.push('\n');
    }
    report::write_text(&out.join("curve.csv"), &curve)?;
    write_json(
        &out.join("training.json"),
        &json!({
            "learner": learner,
            "episodes": episodes,
            "gradient_steps": report.gradient_steps,
            "plateaued": report.plateaued,
            "first_10pct_mean_reward": report.window_mean(0.0, 0.1),
            "last_10pct_mean_reward": report.window_mean(0.9, 1.0),
            "cases": cases.len(),
        }),
    )?;
    println!(
        "{learner}: {} episodes, reward {:.4} -> {:.4}, {}plateaued, {} cases exported to {}",
        episodes,
        report.window_mean(0.0, 0.1),
        report.window_mean(0.9, 1.0),
        if report.plateaued { "" } else { "not " },
        cases.len(),
        out.display()
    );
    Ok(())
}

fn run_sweep_cmd(spec_path: &Path, out: &Path, workers: Option<usize>, timing: bool) -> Result<()> {
    let mut spec = SweepSpec::from_file(spec_path)?;
    if let Some(w) = workers {
        spec.workers = w;
    }
    spec.timing |= timing;
    let result = run_sweep(&spec)?;
    ensure_dir(out)?;
    report::write_text(&out.join("sweep.csv"), &sweep::rows_csv(&result.rows)?)?;
    report::write_text(&out.join("summary.csv"), &sweep::summary_csv(&result.rows)?)?;
    if !result.failures.is_empty() {
        report::write_text(&out.join("failures.csv"), &sweep::failures_csv(&result.failures))?;
        eprintln!("{} of {} cells failed, see failures.csv", result.failures.len(), spec.cells().len());
    }
    println!("{} rows written to {}", result.rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn inspect(file: &Path) -> Result<()> {
    let set = CaseSet::load(file)?;
    println!("{}: {} cases", file.display(), set.len());
    if let Some(first) = set.get(0) {
        let n = first.state.len();
        let k = first.n_types();
        println!("shape: {n} vehicles, {k} task types");
        let mean = |f: &dyn Fn(&dtvec_core::CaseRecord) -> f64| set.iter().map(f).sum::<f64>() / set.len() as f64;
        let omega = mean(&|c| c.action.iter().flat_map(|r| r[..k].iter()).sum::<f64>() / (n * k).max(1) as f64);
        let alpha = mean(&|c| c.action.iter().flat_map(|r| r[k..].iter()).sum::<f64>());
        println!("mean offload ratio {omega:.4}, mean total resource fraction {alpha:.4}");
        let with_outcome = set.iter().filter(|c| c.outcome.is_some()).count();
        println!("slots {}..{}, {} with outcomes", first.ts, set.iter().last().map_or(0, |c| c.ts), with_outcome);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Simulate {
            sim,
            policy,
            horizon,
            out,
        } => simulate(&sim, &policy, horizon, &out),
        Cmd::Train {
            sim,
            learner,
            episodes,
            episode_len,
            train_every,
            export_slots,
            out,
        } => train(&sim, &learner, episodes, episode_len, train_every, export_slots, &out),
        Cmd::Sweep {
            spec,
            out,
            workers,
            timing,
        } => run_sweep_cmd(&spec, &out, workers, timing),
        Cmd::Cases { action } => match action {
            CasesCmd::Export {
                sim,
                policy,
                slots,
                out,
            } => {
                let cfg = sim.build()?;
                let mut p = build_policy(&policy.policy, &cfg, slots, &policy.options())?;
                let cases = collect_cases(&cfg, p.as_mut(), slots)?;
                cases.save(&out)?;
                println!("{} cases written to {}", cases.len(), out.display());
                Ok(())
            }
            CasesCmd::Inspect { file } => inspect(&file),
        },
        Cmd::Report { results, out } => {
            let files = report::write_report(&results, &out)?;
            info!("wrote {} series", files.len());
            println!("{} series files written to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
