//! Experiment runner: batched episodes over a shared agent network,
//! pass@k tables per bucket, reuse efficiency, sweeps and ablations.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{build_agents_with, record_stats, AgentNetwork, LifeConfig, Outcome};
use crate::corpus::{make_novel_goals, pairs, CorpusRecord, NovelSpec, Structure};
use crate::error::{Error, Result};
use crate::goal::SimilarityBackend;
use crate::orchestrator::{solve_episode, Components, EpisodeResult, SolveConfig, VerifyMode};
use crate::workflow::{find_subflows, shape_signature, Workflow};

pub const COMPONENTS: [&str; 5] = ["scale_control", "verification", "hypothesis", "input_goal", "output_goal"];

pub fn components_without(disabled: &[String]) -> Result<Components> {
    let mut c = Components::default();
    for name in disabled {
        match name.as_str() {
            "scale_control" => c.scale_control = false,
            "verification" => c.verification = false,
            "hypothesis" => c.hypothesis = false,
            "input_goal" => c.input_goal = false,
            "output_goal" => c.output_goal = false,
            other => {
                return Err(Error::Config(format!("unknown component `{other}`; expected one of {}", COMPONENTS.join(", "))))
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k_list: Vec<usize>,
    pub theta: f64,
    pub eta: f64,
    pub life: LifeConfig,
    pub repair_budget: usize,
    #[serde(default)]
    pub disabled: Vec<String>,
    pub seed: u64,
    /// Worker threads; 0 or 1 runs episodes on the calling thread.
    #[serde(default)]
    pub threads: usize,
    /// Episodes per batch. Lives are merged and refreshed after each batch.
    pub batch_size: usize,
    pub mode: VerifyMode,
    #[serde(default)]
    pub backend: SimilarityBackend,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k_list: vec![1, 3, 5],
            theta: 0.8,
            eta: 0.95,
            life: LifeConfig::default(),
            repair_budget: 5,
            disabled: Vec::new(),
            seed: 0,
            threads: 0,
            batch_size: 10,
            mode: VerifyMode::Oracle,
            backend: SimilarityBackend::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k list must hold positive values".into()));
        }
        if self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("k list must be strictly ascending".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("theta and eta must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.life.check()?;
        components_without(&self.disabled).map(|_| ())
    }

    pub fn solve_config(&self) -> Result<SolveConfig> {
        Ok(SolveConfig {
            theta: self.theta,
            eta: self.eta,
            k: *self.k_list.last().unwrap_or(&1),
            repair_budget: self.repair_budget,
            mode: self.mode,
            seed: self.seed,
            components: components_without(&self.disabled)?,
            ..SolveConfig::default()
        })
    }

    pub fn disabling(&self, component: &str) -> Result<ExperimentConfig> {
        components_without(&[component.to_string()])?;
        let mut c = self.clone();
        if !c.disabled.iter().any(|d| d == component) {
            c.disabled.push(component.to_string());
            c.disabled.sort();
        }
        Ok(c)
    }
}

/// bucket label -> k -> pass rate.
pub type PassTable = BTreeMap<String, BTreeMap<usize, f64>>;

pub const OVERALL: &str = "overall";

/// Fraction of episodes per bucket (and overall) with a correct candidate
/// among ranks `1..=k`.
pub fn pass_at_k(episodes: &[EpisodeResult], ks: &[usize]) -> PassTable {
    let mut groups: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for e in episodes {
        let rank = e.first_correct_rank();
        groups.entry(e.bucket.clone().unwrap_or_else(|| "unbucketed".into())).or_default().push(rank);
        groups.entry(OVERALL.into()).or_default().push(rank);
    }
    groups
        .into_iter()
        .map(|(bucket, ranks)| {
            let row = ks
                .iter()
                .map(|&k| {
                    let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
                    (k, hits as f64 / ranks.len() as f64)
                })
                .collect();
            (bucket, row)
        })
        .collect()
}

/// Errors when some bucket's pass rate drops as k grows.
pub fn check_monotone(table: &PassTable) -> Result<()> {
    for (bucket, row) in table {
        let values: Vec<(usize, f64)> = row.iter().map(|(k, v)| (*k, *v)).collect();
        for w in values.windows(2) {
            if w[1].1 + 1e-12 < w[0].1 {
                return Err(Error::Invariant(format!(
                    "pass@{} = {} exceeds pass@{} = {} in bucket {bucket}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
    }
    Ok(())
}

/// Percentage of passing episodes whose passing workflow holds at least one
/// library pattern.
pub fn reuse_efficiency(episodes: &[EpisodeResult], library: &[Workflow]) -> f64 {
    if library.is_empty() {
        return 0.0;
    }
    let passing: Vec<&Workflow> =
        episodes.iter().filter_map(|e| e.candidates.iter().find(|c| c.correct).map(|c| &c.workflow)).collect();
    if passing.is_empty() {
        return 0.0;
    }
    let reusing = passing.iter().filter(|w| !find_subflows(w, library).is_empty()).count();
    100.0 * reusing as f64 / passing.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifeSummary {
    pub eliminations: usize,
    pub revivals: usize,
    pub spawns: usize,
    pub active: usize,
    pub archived: usize,
    pub mean_life: f64,
    pub epochs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub episodes: usize,
    pub early_failures: usize,
    pub candidates: usize,
    pub repair_steps: usize,
    pub solve_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub atomic_count: usize,
    pub goals: usize,
    pub pass_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub pass_at_k: PassTable,
    pub episodes_per_bucket: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse_efficiency: Option<f64>,
    pub life: LifeSummary,
    pub runtime: RuntimeStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
}

impl MetricsReport {
    pub fn pass(&self, bucket: &str, k: usize) -> Option<f64> {
        self.pass_at_k.get(bucket)?.get(&k).copied()
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }

    /// Flat `bucket,k,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket,k,value\n");
        for (bucket, row) in &self.pass_at_k {
            for (k, v) in row {
                s.push_str(&format!("{bucket},{k},{v:.6}\n"));
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: MetricsReport,
    pub episodes: Vec<EpisodeResult>,
    pub network: AgentNetwork,
}

pub fn build_network(cfg: &ExperimentConfig, train: &[CorpusRecord]) -> Result<AgentNetwork> {
    build_agents_with(&pairs(train), cfg.life.clone(), cfg.backend.clone(), cfg.seed)
}

fn run_episode(net: &AgentNetwork, record: &CorpusRecord, scfg: &SolveConfig) -> Result<EpisodeResult> {
    let mut result = match solve_episode(net, &record.goal, Some(&record.workflow), scfg) {
        Ok(r) => r,
        Err(e @ Error::DecompositionFailure(_)) => EpisodeResult::early_failure(&record.goal.id, scfg.seed, &e),
        Err(e) => return Err(e),
    };
    result.bucket = Some(record.label());
    Ok(result)
}

/// Applies one batch's outcomes to `net` in episode order: lives move by
/// the summed deltas and are clamped once, counters follow every outcome.
fn merge_batch(net: &mut AgentNetwork, batch: &[EpisodeResult], scale_control: bool) {
    let cfg = net.config.clone();
    let mut delta: BTreeMap<String, f64> = BTreeMap::new();
    let mut seen: Vec<(String, Outcome)> = Vec::new();
    for e in batch {
        for o in &e.outcomes {
            *delta.entry(o.agent_id.clone()).or_default() += o.outcome.reward(&cfg) - o.outcome.penalty(&cfg);
            seen.push((o.agent_id.clone(), o.outcome));
        }
        if let Some(c) = e.candidates.iter().find(|c| c.accepted) {
            net.solved_shapes.entry(shape_signature(&c.workflow)).or_default().insert(e.goal_id.clone());
        }
    }
    for (id, outcome) in &seen {
        if let Some(a) = net.agent_mut(id) {
            record_stats(&mut a.stats, outcome);
        }
    }
    if scale_control {
        for (id, d) in delta {
            if let Some(a) = net.agent_mut(&id) {
                a.life = (a.life + d).clamp(0.0, cfg.l_max);
            }
        }
    }
}

/// Solves every test record against a network built from `train`.
pub fn run_experiment(cfg: &ExperimentConfig, train: &[CorpusRecord], test: &[CorpusRecord]) -> Result<Experiment> {
    cfg.check()?;
    let scfg = cfg.solve_config()?;
    let mut net = build_network(cfg, train)?;
    let mut life = LifeSummary::default();
    let mut episodes = Vec::with_capacity(test.len());
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    for chunk in test.chunks(cfg.batch_size) {
        let start = &net;
        let batch: Vec<EpisodeResult> = match &pool {
            Some(p) => p.install(|| chunk.par_iter().map(|r| run_episode(start, r, &scfg)).collect::<Result<_>>())?,
            None => chunk.iter().map(|r| run_episode(start, r, &scfg)).collect::<Result<_>>()?,
        };
        merge_batch(&mut net, &batch, scfg.components.scale_control);
        let log = net.eliminate_and_refresh();
        life.eliminations += log.archived.len();
        life.revivals += log.revived.len();
        life.spawns += log.spawned.len();
        episodes.extend(batch);
    }
    life.active = net.active.len();
    life.archived = net.archive.len();
    life.epochs = net.epoch;
    life.mean_life =
        if net.active.is_empty() { 0.0 } else { net.active.iter().map(|a| a.life).sum::<f64>() / net.active.len() as f64 };

    let table = pass_at_k(&episodes, &cfg.k_list);
    check_monotone(&table)?;
    let mut per_bucket = BTreeMap::new();
    for e in &episodes {
        *per_bucket.entry(e.bucket.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    let runtime = RuntimeStats {
        episodes: episodes.len(),
        early_failures: episodes.iter().filter(|e| e.failure.is_some()).count(),
        candidates: episodes.iter().map(|e| e.candidates.len()).sum(),
        repair_steps: episodes.iter().flat_map(|e| &e.candidates).map(|c| c.repairs.len()).sum(),
        solve_steps: episodes.iter().map(|e| e.steps).sum(),
    };
    let report = MetricsReport {
        config: cfg.clone(),
        pass_at_k: table,
        episodes_per_bucket: per_bucket,
        reuse_efficiency: None,
        life,
        runtime,
        sweep: Vec::new(),
    };
    Ok(Experiment { report, episodes, network: net })
}

/// Same experiment with one component switched off.
pub fn ablate(cfg: &ExperimentConfig, component: &str, train: &[CorpusRecord], test: &[CorpusRecord]) -> Result<Experiment> {
    run_experiment(&cfg.disabling(component)?, train, test)
}

pub const SWEEP_SIZES: [usize; 6] = [1, 10, 20, 30, 40, 50];

/// Accuracy against the number of atomic procedures available. At each
/// size the network holds the first `n` linear training records; test goals
/// are 2-3 part composites over them, or the trained goals themselves when
/// no composite can be formed.
pub fn sweep(cfg: &ExperimentConfig, train: &[CorpusRecord], sizes: &[usize], goals_per_point: usize) -> Result<Vec<SweepPoint>> {
    let linear: Vec<CorpusRecord> = train.iter().filter(|r| r.bucket.structure == Structure::Linear).cloned().collect();
    let mut out = Vec::new();
    for &n in sizes {
        let subset = &linear[..n.min(linear.len())];
        let test = match make_novel_goals(subset, cfg.seed, &NovelSpec::linear(goals_per_point, 2, 3)) {
            Ok(goals) if n > 1 => goals,
            _ => subset.iter().take(goals_per_point).cloned().collect(),
        };
        let exp = run_experiment(&ExperimentConfig { k_list: vec![1], ..cfg.clone() }, subset, &test)?;
        out.push(SweepPoint {
            atomic_count: subset.len(),
            goals: test.len(),
            pass_at_1: exp.report.pass(OVERALL, 1).unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// Distinct agent ids that were used while not schema-compatible.
pub fn incompatible_reuse(episodes: &[EpisodeResult]) -> BTreeSet<String> {
    episodes.iter().flat_map(|e| &e.candidates).flat_map(|c| c.schema_incompatible_agents.iter().cloned()).collect()
}
