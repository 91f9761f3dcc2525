//! Command-line surface: `train`, `probe`, `report` and `baseline`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use punctlab_core::agents::{AgentKind, AgentSpec};
use punctlab_core::rng::{indexed_stream, PROBE_STREAM};
use punctlab_core::trainer::{manual_baseline, probe_adaptation, probe_reaction, train, RunResult};
use rayon::prelude::*;

use crate::aggregate::{
    aggregate_episodes, aggregate_probes, SummaryRow, EPISODE_METRICS, SUMMARY_HEADER,
};
use crate::chart::{emit_linechart, BandPoint, LineChart, Series};
use crate::checkpoint::{self, CheckpointFile};
use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::records::{self, run_id, EpisodeRow, ProbeRow};

pub const MANIFEST: &str = "manifest.toml";
pub const PROBE_MANIFEST: &str = "probe_manifest.toml";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const PROBES_CSV: &str = "probes.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BASELINE_AGENT: &str = "manual";

#[derive(Debug, Parser)]
#[command(name = "punctlab", version, about = "URLLC puncturing DQN lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train repetitions of one agent and write metrics and checkpoints.
    Train(TrainArgs),
    /// Run the reaction or adaptation probe on trained checkpoints.
    Probe(ProbeArgs),
    /// Aggregate runs into summary tables and charts.
    Report(ReportArgs),
    /// Evaluate the manual scheduling heuristic.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Eg,
    Vb,
    Me,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Eg => AgentKind::Eg,
            AgentArg::Vb => AgentKind::Vb,
            AgentArg::Me => AgentKind::Me,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeMode {
    Reaction,
    Adapt,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `agent.kind` from the config.
    #[arg(long, value_enum)]
    pub agent: Option<AgentArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Defaults to `<run.out_dir>/<agent>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ProbeMode,
    /// Adaptation repetitions per checkpoint; defaults to `run.probe_reps`.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Adaptation step cap; defaults to `run.probe_cap` (10000).
    #[arg(long)]
    pub cap: Option<usize>,
    /// Defaults to the manifest next to the checkpoint directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving probes.csv; defaults to the checkpoint directory's parent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Defaults to `<run.out_dir>/manual`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Probe(a) => cmd_probe(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::Baseline(a) => cmd_baseline(&a).map(|_| ()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn thread_pool(parallel: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| LabError::Usage(format!("cannot start worker threads: {e}")))
}

/// Runs `reps` seeded trainings of `kind` (seeds `seed`, `seed + 1`, ...),
/// concurrently when allowed, returning results in seed order.
pub fn train_repetitions(cfg: &LabConfig, kind: AgentKind) -> Result<Vec<RunResult>> {
    let seeds: Vec<u64> = (0..cfg.run.reps as u64).map(|i| cfg.run.seed + i).collect();
    let pool = thread_pool(cfg.run.parallel)?;
    let runs = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| train(&cfg.train_config(kind, seed)))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    Ok(runs)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<RunResult>> {
    let mut cfg = LabConfig::load_or_default(args.config.as_deref())?;
    if let Some(a) = args.agent {
        cfg.agent.kind = a.into();
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(reps) = args.reps {
        if reps == 0 {
            return Err(LabError::Usage("--reps must be at least 1".into()));
        }
        cfg.run.reps = reps;
    }
    let kind = cfg.agent.kind;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.run.out_dir.join(kind.as_str()));
    cfg.run.out_dir = out.clone();

    let runs = train_repetitions(&cfg, kind)?;

    let ck_dir = out.join(CHECKPOINT_DIR);
    create_dir(&ck_dir)?;
    let mut rows = Vec::new();
    for run in &runs {
        let id = run_id(run.agent, run.seed);
        rows.extend(
            run.episodes
                .iter()
                .map(|m| EpisodeRow::from_metrics(&id, run.agent.as_str(), run.seed, m)),
        );
        CheckpointFile {
            agent: run.agent,
            seed: run.seed,
            step: run.steps,
            params: run.snapshot.clone(),
        }
        .save(&ck_dir.join(format!("{id}.{}", checkpoint::EXTENSION)))?;
        if !run.checkpoints.is_empty() {
            let sub = ck_dir.join(&id);
            create_dir(&sub)?;
            for c in &run.checkpoints {
                CheckpointFile {
                    agent: run.agent,
                    seed: run.seed,
                    step: c.step,
                    params: c.params.clone(),
                }
                .save(&sub.join(format!(
                    "ep{:04}.{}",
                    c.episode,
                    checkpoint::EXTENSION
                )))?;
            }
        }
        let last = run.episodes.last().map(|m| m.sum_reward);
        println!(
            "{id}: {} episodes, final sum reward {}, probe argmax {}, md {}",
            run.episodes.len(),
            last.map_or("-".into(), |r| format!("{r:.1}")),
            run.reaction.argmax,
            run.reaction
                .md
                .map_or("undefined".into(), |m| format!("{m:.4}")),
        );
    }
    records::write_episodes(&rows, &out.join(EPISODES_CSV))?;
    let manifest = format!("# punctlab train --config {MANIFEST}\n{}", cfg.to_toml());
    write_text(&out.join(MANIFEST), &manifest)?;
    Ok(runs)
}

fn probe_config(args: &ProbeArgs) -> Result<LabConfig> {
    if let Some(p) = &args.config {
        return LabConfig::load(p);
    }
    let candidates = [
        args.checkpoints.join(MANIFEST),
        args.checkpoints
            .parent()
            .map(|p| p.join(MANIFEST))
            .unwrap_or_default(),
    ];
    match candidates.iter().find(|p| p.is_file()) {
        Some(p) => LabConfig::load(p),
        None => Ok(LabConfig::default()),
    }
}

fn probe_out_dir(args: &ProbeArgs) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    match args.checkpoints.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Runs the probe on every checkpoint directly inside `--checkpoints` and
/// merges the results into probes.csv. Reaction rows fill the md and logstd
/// cells of repetition 0; adaptation rows fill steps_until_explore.
pub fn cmd_probe(args: &ProbeArgs) -> Result<Vec<ProbeRow>> {
    let mut cfg = probe_config(args)?;
    if let Some(reps) = args.reps {
        cfg.run.probe_reps = reps;
    }
    if let Some(cap) = args.cap {
        cfg.run.probe_cap = cap;
    }
    if cfg.run.probe_cap == 0 {
        return Err(LabError::Usage("--cap must be at least 1".into()));
    }
    let paths = checkpoint::list(&args.checkpoints)?;
    if paths.is_empty() {
        return Err(LabError::Missing(format!(
            "no checkpoints found in {}",
            args.checkpoints.display()
        )));
    }
    let checkpoints = paths
        .iter()
        .map(|p| CheckpointFile::load(p))
        .collect::<Result<Vec<_>>>()?;

    let fresh = match args.mode {
        ProbeMode::Reaction => reaction_rows(&cfg, &checkpoints)?,
        ProbeMode::Adapt => adaptation_rows(&cfg, &checkpoints)?,
    };

    let out = probe_out_dir(args);
    create_dir(&out)?;
    let path = out.join(PROBES_CSV);
    let existing: Vec<ProbeRow> = if path.is_file() {
        records::read_csv(&path)?
    } else {
        Vec::new()
    };
    let merged = merge_probe_rows(existing, &fresh, args.mode);
    records::write_probes(&merged, &path)?;
    let manifest = format!(
        "# punctlab probe --mode {} --config {PROBE_MANIFEST}\n{}",
        match args.mode {
            ProbeMode::Reaction => "reaction",
            ProbeMode::Adapt => "adapt",
        },
        cfg.to_toml()
    );
    write_text(&out.join(PROBE_MANIFEST), &manifest)?;
    for r in &fresh {
        match args.mode {
            ProbeMode::Reaction => println!(
                "{}: md {}, logstd wait {}, mean logstd puncture {}",
                r.run_id,
                fmt_opt(r.md),
                fmt_opt(r.logstd_wait),
                fmt_opt(r.mean_logstd_punct)
            ),
            ProbeMode::Adapt => println!(
                "{} rep {}: {} steps until explore",
                r.run_id,
                r.repetition,
                r.steps_until_explore.unwrap_or(0)
            ),
        }
    }
    Ok(merged)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn reaction_rows(cfg: &LabConfig, checkpoints: &[CheckpointFile]) -> Result<Vec<ProbeRow>> {
    checkpoints
        .iter()
        .map(|ck| {
            let p = probe_reaction(&ck.params, ck.agent, &cfg.sim)?;
            Ok(ProbeRow {
                run_id: run_id(ck.agent, ck.seed),
                agent: ck.agent.as_str().to_string(),
                repetition: 0,
                md: p.md,
                logstd_wait: p.logstd_wait,
                mean_logstd_punct: p.mean_logstd_punct,
                steps_until_explore: None,
            })
        })
        .collect()
}

fn adaptation_rows(cfg: &LabConfig, checkpoints: &[CheckpointFile]) -> Result<Vec<ProbeRow>> {
    let jobs: Vec<(&CheckpointFile, usize)> = checkpoints
        .iter()
        .flat_map(|ck| (0..cfg.run.probe_reps).map(move |rep| (ck, rep)))
        .collect();
    let pool = thread_pool(cfg.run.parallel)?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(ck, rep)| {
                let spec = AgentSpec {
                    kind: ck.agent,
                    ..cfg.agent.clone()
                };
                let mut rng = indexed_stream(ck.seed, PROBE_STREAM, rep as u64);
                let a = probe_adaptation(
                    &ck.params,
                    &spec,
                    &cfg.sim,
                    cfg.run.probe_cap,
                    cfg.run.probe_transition,
                    &mut rng,
                )?;
                Ok(ProbeRow {
                    run_id: run_id(ck.agent, ck.seed),
                    agent: ck.agent.as_str().to_string(),
                    repetition: rep,
                    md: None,
                    logstd_wait: None,
                    mean_logstd_punct: None,
                    steps_until_explore: Some(a.steps),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(rows)
}

/// Replaces the `mode` columns of existing rows with `fresh` values, keyed by
/// (run_id, repetition). Stale values of that mode are cleared.
pub fn merge_probe_rows(
    existing: Vec<ProbeRow>,
    fresh: &[ProbeRow],
    mode: ProbeMode,
) -> Vec<ProbeRow> {
    let mut by_key: BTreeMap<(String, usize), ProbeRow> = BTreeMap::new();
    for mut r in existing {
        match mode {
            ProbeMode::Reaction => {
                r.md = None;
                r.logstd_wait = None;
                r.mean_logstd_punct = None;
            }
            ProbeMode::Adapt => r.steps_until_explore = None,
        }
        by_key.insert((r.run_id.clone(), r.repetition), r);
    }
    for f in fresh {
        let slot = by_key
            .entry((f.run_id.clone(), f.repetition))
            .or_insert_with(|| ProbeRow {
                steps_until_explore: None,
                md: None,
                logstd_wait: None,
                mean_logstd_punct: None,
                ..f.clone()
            });
        match mode {
            ProbeMode::Reaction => {
                slot.md = f.md;
                slot.logstd_wait = f.logstd_wait;
                slot.mean_logstd_punct = f.mean_logstd_punct;
            }
            ProbeMode::Adapt => slot.steps_until_explore = f.steps_until_explore,
        }
    }
    by_key
        .into_values()
        .filter(|r| r.repetition == 0 || r.steps_until_explore.is_some() || r.md.is_some())
        .collect()
}

fn find_named(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| LabError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| LabError::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_named(&p, name, out)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            out.push(p);
        }
    }
    Ok(())
}

/// Agent display order: the learned agents first, then anything else by name.
fn agent_order(agent: &str) -> (usize, &str) {
    match AgentKind::parse(agent) {
        Some(k) => (
            AgentKind::ALL.iter().position(|&a| a == k).unwrap_or(0),
            agent,
        ),
        None => (AgentKind::ALL.len(), agent),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub charts: Vec<(String, LineChart)>,
    pub text: String,
}

/// Builds summaries, charts and text tables from loaded rows.
pub fn build_report(episodes: &[EpisodeRow], probes: &[ProbeRow]) -> Report {
    let mut summary = aggregate_episodes(episodes);
    let probe_summary = aggregate_probes(probes);
    summary.extend(probe_summary.iter().cloned());

    let mut charts = Vec::new();
    for metric in EPISODE_METRICS {
        let baseline_values: Vec<f64> = episodes
            .iter()
            .filter(|r| r.agent == BASELINE_AGENT)
            .map(|r| match metric {
                "sum_reward" => r.sum_reward,
                "tx_interrupted_ratio" => r.tx_interrupted_ratio,
                "urllc_missed_ratio" => r.urllc_missed_ratio,
                _ => r.critical_missed_ratio,
            })
            .collect();
        let baseline = crate::aggregate::summarize(&baseline_values)
            .ok()
            .map(|s| s.mean);
        let mut by_agent: BTreeMap<(usize, &str), Vec<BandPoint>> = BTreeMap::new();
        for row in summary
            .iter()
            .filter(|r| r.metric == metric && r.agent != BASELINE_AGENT)
        {
            if let Some(ep) = row.episode {
                by_agent
                    .entry(agent_order(&row.agent))
                    .or_default()
                    .push(BandPoint {
                        x: ep as f64,
                        mean: row.mean,
                        min: row.min,
                        max: row.max,
                    });
            }
        }
        let series = by_agent
            .into_iter()
            .map(|((_, agent), points)| Series {
                label: agent.to_string(),
                points,
            })
            .collect();
        charts.push((
            metric.to_string(),
            LineChart {
                title: metric.replace('_', " "),
                x_label: "episode".into(),
                y_label: metric.replace('_', " "),
                series,
                baseline,
            },
        ));
    }

    Report {
        text: text_tables(episodes, &summary, &probe_summary),
        summary,
        charts,
    }
}

fn text_tables(episodes: &[EpisodeRow], summary: &[SummaryRow], probes: &[SummaryRow]) -> String {
    let mut agents: Vec<&str> = summary.iter().map(|r| r.agent.as_str()).collect();
    agents.sort_by_key(|a| agent_order(a));
    agents.dedup();
    let pm = |v: Option<&SummaryRow>| {
        v.map_or("-".to_string(), |r| format!("{:.4} ± {:.4}", r.mean, r.std))
    };
    let mut s = String::new();

    let _ = writeln!(s, "Training, last episode (mean ± std over runs)");
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>26} {:>26} {:>26}",
        "agent", "runs", "sum_reward", "tx_interrupted_ratio", "urllc_missed_ratio"
    );
    for agent in &agents {
        let Some(last) = episodes
            .iter()
            .filter(|r| r.agent == *agent)
            .map(|r| r.episode)
            .max()
        else {
            continue;
        };
        let get = |m: &str| {
            summary
                .iter()
                .find(|r| r.agent == *agent && r.episode == Some(last) && r.metric == m)
        };
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>26} {:>26} {:>26}",
            agent,
            get("sum_reward").map_or(0, |r| r.n),
            pm(get("sum_reward")),
            pm(get("tx_interrupted_ratio")),
            pm(get("urllc_missed_ratio"))
        );
    }

    let get = |agent: &str, m: &str| probes.iter().find(|r| r.agent == agent && r.metric == m);
    let _ = writeln!(s, "\nReaction to a new critical request (mean ± std)");
    let _ = writeln!(
        s,
        "{:<8} {:>26} {:>26} {:>26}",
        "agent", "MD", "logstd wait", "mean logstd puncture"
    );
    for agent in &agents {
        if get(agent, "md").is_none() {
            continue;
        }
        let _ = writeln!(
            s,
            "{:<8} {:>26} {:>26} {:>26}",
            agent,
            pm(get(agent, "md")),
            pm(get(agent, "logstd_wait")),
            pm(get(agent, "mean_logstd_punct"))
        );
    }

    let _ = writeln!(s, "\nTraining steps until exploring the new event");
    let _ = writeln!(
        s,
        "{:<8} {:>5} {:>22} {:>8} {:>8}",
        "agent", "n", "mean ± std", "min", "max"
    );
    for agent in &agents {
        if let Some(r) = get(agent, "steps_until_explore") {
            let _ = writeln!(
                s,
                "{:<8} {:>5} {:>22} {:>8} {:>8}",
                agent,
                r.n,
                format!("{:.1} ± {:.1}", r.mean, r.std),
                r.min,
                r.max
            );
        }
    }
    s
}

pub fn cmd_report(args: &ReportArgs) -> Result<Report> {
    let no_runs = || LabError::Missing(format!("no runs found in {}", args.input.display()));
    if !args.input.is_dir() {
        return Err(no_runs());
    }
    let mut episode_files = Vec::new();
    find_named(&args.input, EPISODES_CSV, &mut episode_files)?;
    let mut probe_files = Vec::new();
    find_named(&args.input, PROBES_CSV, &mut probe_files)?;
    let mut episodes: Vec<EpisodeRow> = Vec::new();
    for p in &episode_files {
        episodes.extend(records::read_csv::<EpisodeRow>(p)?);
    }
    let mut probes: Vec<ProbeRow> = Vec::new();
    for p in &probe_files {
        probes.extend(records::read_csv::<ProbeRow>(p)?);
    }
    if episodes.is_empty() && probes.is_empty() {
        return Err(no_runs());
    }

    let report = build_report(&episodes, &probes);
    create_dir(&args.out)?;
    records::write_csv(
        &report.summary,
        &SUMMARY_HEADER,
        &args.out.join(SUMMARY_CSV),
    )?;
    for (name, chart) in &report.charts {
        emit_linechart(chart, &args.out.join(format!("{name}.svg")))?;
    }
    print!("{}", report.text);
    Ok(report)
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<Vec<EpisodeRow>> {
    let mut cfg = LabConfig::load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(ep) = args.episodes {
        cfg.train.episodes = ep;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.run.out_dir.join(BASELINE_AGENT));
    cfg.run.out_dir = out.clone();
    let seed = cfg.run.seed;
    let metrics = manual_baseline(
        &cfg.sim,
        cfg.train.episodes,
        cfg.train.steps_per_episode,
        seed,
    )?;
    let id = format!("{BASELINE_AGENT}-s{seed}");
    let rows: Vec<EpisodeRow> = metrics
        .iter()
        .map(|m| EpisodeRow::from_metrics(&id, BASELINE_AGENT, seed, m))
        .collect();
    create_dir(&out)?;
    records::write_episodes(&rows, &out.join(EPISODES_CSV))?;
    let manifest = format!("# punctlab baseline --config {MANIFEST}\n{}", cfg.to_toml());
    write_text(&out.join(MANIFEST), &manifest)?;
    if let Ok(s) =
        crate::aggregate::summarize(&rows.iter().map(|r| r.sum_reward).collect::<Vec<_>>())
    {
        println!(
            "{id}: mean episode sum reward {:.1} ± {:.1} over {} episodes",
            s.mean, s.std, s.n
        );
    }
    Ok(rows)
}
