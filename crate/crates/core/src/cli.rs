//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::agents::{build_agents_with, AgentNetwork, NetworkSnapshot};
use crate::corpus::{generate, make_novel_goals, pairs, split, CorpusProfile, CorpusRecord, NovelSpec, Structure};
use crate::error::{Error, Result};
use crate::eval::{ablate, run_experiment, sweep, ExperimentConfig, MetricsReport, OVERALL, SWEEP_SIZES};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::orchestrator::{solve, VerifyMode};
use crate::workflow::Workflow;

pub const CONFIG_ENV: &str = "AGENTFLOW_CONFIG";
pub const DEFAULT_CONFIG: &str = "agentflow.toml";

#[derive(Debug, Parser)]
#[command(name = "agentflow", version, about = "Compose, verify and repair workflows with a network of atomic agents")]
pub struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, optionally split it and derive novel goals.
    GenCorpus(GenCorpusArgs),
    /// Build an agent network from training records and save its state.
    BuildNet(BuildNetArgs),
    /// Solve goals one after another against a live network.
    Solve(SolveArgs),
    /// Run an experiment and write a report.
    Eval(EvalArgs),
    /// Run an experiment with components switched off.
    Ablate(AblateArgs),
    /// Print a saved report as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Oracle,
    GoalAnchored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    Linear,
    Nested,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// `default`, `atomic`, or a path to a JSON profile.
    #[arg(long, default_value = "default")]
    pub profile: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "planted_rate")]
    pub planted_length: Option<usize>,
    #[arg(long, requires = "planted_length")]
    pub planted_rate: Option<f64>,
    #[arg(long, requires = "test_out")]
    pub train_out: Option<PathBuf>,
    #[arg(long, requires = "train_out")]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    /// Also write composite goals built from the training records.
    #[arg(long)]
    pub novel_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub novel_count: usize,
    #[arg(long, default_value_t = 2)]
    pub parts_min: usize,
    #[arg(long, default_value_t = 3)]
    pub parts_max: usize,
    #[arg(long, value_enum, default_value_t = StructureArg::Linear)]
    pub structure: StructureArg,
    /// Write the planted pattern library here.
    #[arg(long)]
    pub library_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildNetArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Settings shared by the experiment verbs. Unset flags fall back to the
/// config file, then to built-in defaults.
#[derive(Debug, Args, Default)]
pub struct ExperimentFlags {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Comma-separated k values, e.g. `1,3,5`.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Saved network state to resume from.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Goals to solve (corpus records).
    #[arg(long)]
    pub goals: PathBuf,
    /// Solve only this goal.
    #[arg(long)]
    pub goal_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Save the network state after solving.
    #[arg(long)]
    pub net_out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Pattern library for reuse efficiency.
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Also sweep accuracy against the number of atomic procedures.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Component to switch off; repeat for several.
    #[arg(long, required = true)]
    pub disable: Vec<String>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Write the flat CSV here as well.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Keys accepted in the config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub theta: Option<f64>,
    pub eta: Option<f64>,
    pub k_list: Option<Vec<usize>>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "L_init")]
    pub l_init: Option<f64>,
    #[serde(rename = "L_max")]
    pub l_max: Option<f64>,
    pub alphas: Option<[f64; 3]>,
    pub betas: Option<[f64; 3]>,
    pub refresh_period: Option<u64>,
    pub drift_threshold: Option<f64>,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<FileConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    /// Loads `explicit`, else the path in the environment variable, else the
    /// default file if present. An explicitly named file must exist.
    pub fn locate(explicit: Option<&Path>, env: Option<String>) -> Result<FileConfig> {
        let (path, required) = match (explicit, env) {
            (Some(p), _) => (p.to_path_buf(), true),
            (None, Some(e)) if !e.is_empty() => (PathBuf::from(e), true),
            _ => (PathBuf::from(DEFAULT_CONFIG), false),
        };
        if !path.exists() {
            if required {
                return Err(Error::Config(format!("config file {} not found", path.display())));
            }
            return Ok(FileConfig::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        FileConfig::parse(&text, &path.display().to_string())
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.theta, cfg.theta);
        set!(self.eta, cfg.eta);
        set!(self.k_list, cfg.k_list);
        set!(self.budget, cfg.repair_budget);
        set!(self.seed, cfg.seed);
        set!(self.l_init, cfg.life.l_init);
        set!(self.l_max, cfg.life.l_max);
        set!(self.alphas, cfg.life.alphas);
        set!(self.betas, cfg.life.betas);
        set!(self.refresh_period, cfg.life.refresh_period);
        set!(self.drift_threshold, cfg.life.drift_threshold);
    }
}

impl ExperimentFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = &self.k {
            cfg.k_list = v.clone();
        }
        if let Some(v) = self.budget {
            cfg.repair_budget = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Oracle => VerifyMode::Oracle,
                ModeArg::GoalAnchored => VerifyMode::GoalAnchored,
            };
        }
    }
}

/// Built-ins, overridden by the file, overridden by flags.
pub fn effective_config(file: &FileConfig, flags: &ExperimentFlags) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    file.apply(&mut cfg);
    flags.apply(&mut cfg);
    cfg.check()?;
    Ok(cfg)
}

fn read_records(path: &Path) -> Result<Vec<CorpusRecord>> {
    if !path.exists() {
        return Err(Error::Config(format!("corpus file {} not found", path.display())));
    }
    read_jsonl(path)
}

fn load_profile(spec: &str, n: Option<usize>) -> Result<CorpusProfile> {
    let mut profile = match spec {
        "default" => CorpusProfile::reference(n.unwrap_or(2000)),
        "atomic" => CorpusProfile::atomic(n.unwrap_or(2000)),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(Error::Config(format!("unknown profile `{path}`")));
            }
            read_json(p)?
        }
    };
    if let Some(n) = n {
        profile.total = n;
    }
    Ok(profile)
}

fn gen_corpus(a: &GenCorpusArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let mut profile = load_profile(&a.profile, a.n)?;
    if let (Some(length), Some(rate)) = (a.planted_length, a.planted_rate) {
        profile = profile.with_planted(length, rate);
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let records = generate(&profile, seed)?;
    let train = match (&a.train_out, &a.test_out) {
        (Some(tr), Some(te)) => {
            let (train, test) = split(&records, a.train_fraction, seed)?;
            write_jsonl(tr, &train)?;
            write_jsonl(te, &test)?;
            train
        }
        _ => records.clone(),
    };
    if let Some(path) = &a.novel_out {
        let structure = match a.structure {
            StructureArg::Linear => Structure::Linear,
            StructureArg::Nested => Structure::Nested,
        };
        let spec = NovelSpec { count: a.novel_count, parts_min: a.parts_min, parts_max: a.parts_max, structure, bucket: None };
        write_jsonl(path, &make_novel_goals(&train, seed, &spec)?)?;
    }
    if let Some(path) = &a.library_out {
        write_jsonl(path, &crate::corpus::pattern_library(&profile, seed)?)?;
    }
    write_jsonl(&a.out, &records)?;
    writeln!(out, "wrote {} records to {}", records.len(), a.out.display())?;
    Ok(())
}

fn build_net(a: &BuildNetArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(file, &ExperimentFlags { seed: a.seed, ..Default::default() })?;
    let train = read_records(&a.train)?;
    let net = build_agents_with(&pairs(&train), cfg.life.clone(), cfg.backend.clone(), cfg.seed)?;
    write_json(&a.out, &net.snapshot())?;
    writeln!(out, "built {} agents into {}", net.active.len(), a.out.display())?;
    Ok(())
}

fn solve_goals(a: &SolveArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(file, &a.flags)?;
    let train = read_records(&a.train)?;
    let mut net = match &a.net {
        Some(p) => AgentNetwork::from_snapshot(&read_json::<NetworkSnapshot>(p)?, &pairs(&train))?,
        None => build_agents_with(&pairs(&train), cfg.life.clone(), cfg.backend.clone(), cfg.seed)?,
    };
    let goals: Vec<CorpusRecord> =
        read_records(&a.goals)?.into_iter().filter(|r| a.goal_id.as_ref().is_none_or(|id| *id == r.goal.id)).collect();
    if goals.is_empty() {
        return Err(Error::Config("no goals to solve".into()));
    }
    let scfg = cfg.solve_config()?;
    let mut transcripts = Vec::with_capacity(goals.len());
    for r in &goals {
        let mut e = match solve(&mut net, &r.goal, Some(&r.workflow), &scfg) {
            Ok(e) => e,
            Err(err @ Error::DecompositionFailure(_)) => {
                crate::orchestrator::EpisodeResult::early_failure(&r.goal.id, scfg.seed, &err)
            }
            Err(err) => return Err(err),
        };
        e.bucket = Some(r.label());
        net.eliminate_and_refresh();
        transcripts.push(e);
    }
    write_jsonl(&a.out, &transcripts)?;
    if let Some(p) = &a.net_out {
        write_json(p, &net.snapshot())?;
    }
    let solved = transcripts.iter().filter(|e| e.first_correct_rank() == Some(1)).count();
    writeln!(out, "solved {solved}/{} at rank 1; transcripts in {}", transcripts.len(), a.out.display())?;
    Ok(())
}

fn write_outputs(dir: &Path, report: &MetricsReport, episodes: &[crate::orchestrator::EpisodeResult]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let report_path = dir.join("report.json");
    write_jsonl(&dir.join("transcripts.jsonl"), episodes)?;
    write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&report_path, report.to_json().as_bytes())?;
    Ok(report_path)
}

fn evaluate(a: &EvalArgs, disable: &[String], file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(file, &a.flags)?;
    let train = read_records(&a.train)?;
    let test = read_records(&a.test)?;
    let library: Vec<Workflow> = match &a.library {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut exp = if disable.is_empty() {
        run_experiment(&cfg, &train, &test)?
    } else {
        let (last, rest) = disable.split_last().expect("non-empty");
        let mut c = cfg.clone();
        for d in rest {
            c = c.disabling(d)?;
        }
        ablate(&c, last, &train, &test)?
    };
    if a.library.is_some() {
        exp.report.reuse_efficiency = Some(crate::eval::reuse_efficiency(&exp.episodes, &library));
    }
    if a.sweep {
        exp.report.sweep = sweep(&exp.report.config, &train, &SWEEP_SIZES, 20)?;
    }
    let path = write_outputs(&a.out_dir, &exp.report, &exp.episodes)?;
    let p1 = exp.report.pass(OVERALL, exp.report.config.k_list[0]).unwrap_or(0.0);
    writeln!(
        out,
        "pass@{} = {:.1}% over {} goals; report {}",
        exp.report.config.k_list[0],
        100.0 * p1,
        exp.episodes.len(),
        path.display()
    )?;
    Ok(())
}

fn report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let r: MetricsReport = read_json(&a.report)?;
    crate::eval::check_monotone(&r.pass_at_k)?;
    let ks = &r.config.k_list;
    write!(out, "{:<14}", "bucket")?;
    for k in ks {
        write!(out, " {:>8}", format!("pass@{k}"))?;
    }
    writeln!(out, " {:>6}", "n")?;
    for (bucket, row) in &r.pass_at_k {
        write!(out, "{bucket:<14}")?;
        for k in ks {
            write!(out, " {:>7.1}%", 100.0 * row.get(k).copied().unwrap_or(0.0))?;
        }
        let n = if bucket == OVERALL { r.runtime.episodes } else { r.episodes_per_bucket.get(bucket).copied().unwrap_or(0) };
        writeln!(out, " {n:>6}")?;
    }
    if let Some(reuse) = r.reuse_efficiency {
        writeln!(out, "reuse efficiency {reuse:.1}%")?;
    }
    if let Some(p) = &a.csv {
        write_atomic(p, r.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::locate(cli.config.as_deref(), std::env::var(CONFIG_ENV).ok())?;
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a, &file, out),
        Command::BuildNet(a) => build_net(a, &file, out),
        Command::Solve(a) => solve_goals(a, &file, out),
        Command::Eval(a) => evaluate(a, &[], &file, out),
        Command::Ablate(a) => evaluate(&a.eval, &a.disable, &file, out),
        Command::Report(a) => report(a, out),
    }
}

/// Parses `argv`, runs the verb and returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
