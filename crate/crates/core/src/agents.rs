//! The agent network: atomic agents built from goal/procedure pairs,
//! threshold retrieval, compatibility scoring, life-weighted selection,
//! life-value updates and elimination/refresh.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::{schema_compat, Goal, SimilarityBackend};
use crate::workflow::{validate, FieldSet, StructMetrics, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentStats {
    pub successes: u64,
    pub failures: u64,
    pub reuses: u64,
    pub generalizations: u64,
}

impl AgentStats {
    /// `successes / max(1, successes + failures)`.
    pub fn success_ratio(&self) -> f64 {
        self.successes as f64 / (self.successes + self.failures).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub inputs: FieldSet,
    pub outputs: FieldSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicAgent {
    pub id: String,
    pub goal: Goal,
    pub procedure: Workflow,
    pub toolset: BTreeSet<String>,
    pub constraints: Constraints,
    pub life: f64,
    pub stats: AgentStats,
}

impl AtomicAgent {
    pub fn new(id: &str, goal: Goal, procedure: Workflow, life: f64) -> Self {
        let constraints = Constraints { inputs: goal.input_schema.clone(), outputs: goal.output_schema.clone() };
        AtomicAgent {
            id: id.to_string(),
            toolset: procedure.tools(),
            goal,
            procedure,
            constraints,
            life,
            stats: AgentStats::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeConfig {
    pub l_init: f64,
    pub l_max: f64,
    pub alphas: [f64; 3],
    pub betas: [f64; 3],
    pub drift_threshold: f64,
    pub refresh_period: u64,
}

impl Default for LifeConfig {
    fn default() -> Self {
        LifeConfig {
            l_init: 10.0,
            l_max: 100.0,
            alphas: [3.0, 1.0, 2.0],
            betas: [4.0, 2.0, 1.0],
            drift_threshold: 0.5,
            refresh_period: 10,
        }
    }
}

impl LifeConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.l_init > 0.0 && self.l_init <= self.l_max) {
            return Err(Error::Config(format!("L_init {} must lie in (0, L_max = {}]", self.l_init, self.l_max)));
        }
        if self.alphas.iter().chain(&self.betas).any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::Config("reward and penalty weights must be non-negative".into()));
        }
        if self.refresh_period == 0 {
            return Err(Error::Config("refresh period must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rewards and penalties observed for one agent in one episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Outcome {
    pub correct: bool,
    pub reuse: bool,
    pub generalization: bool,
    pub failure: bool,
    pub drift: bool,
    pub redundancy: f64,
}

impl Outcome {
    pub fn success() -> Self {
        Outcome { correct: true, ..Default::default() }
    }

    pub fn failed() -> Self {
        Outcome { failure: true, ..Default::default() }
    }

    pub fn is_consistent(&self) -> bool {
        !(self.correct && self.failure) && (0.0..=1.0).contains(&self.redundancy)
    }

    fn flag(b: bool) -> f64 {
        if b {
            1.0
        } else {
            0.0
        }
    }

    pub fn reward(&self, cfg: &LifeConfig) -> f64 {
        cfg.alphas[0] * Self::flag(self.correct)
            + cfg.alphas[1] * Self::flag(self.reuse)
            + cfg.alphas[2] * Self::flag(self.generalization)
    }

    pub fn penalty(&self, cfg: &LifeConfig) -> f64 {
        cfg.betas[0] * Self::flag(self.failure) + cfg.betas[1] * Self::flag(self.drift) + cfg.betas[2] * self.redundancy
    }
}

/// The next unresolved subgoal slot while a composite is being built.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub subgoal: Goal,
    pub available_inputs: FieldSet,
    pub shape_context: StructMetrics,
}

/// Knobs of the compatibility score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatWeights {
    pub familiarity: f64,
    pub prior: f64,
    /// When false the input-schema gate always passes.
    pub input_gate: bool,
}

impl Default for CompatWeights {
    fn default() -> Self {
        CompatWeights { familiarity: 0.5, prior: 0.5, input_gate: true }
    }
}

/// `gate * (w_f * familiarity + w_p * prior)`.
pub fn compatibility(backend: &SimilarityBackend, weights: &CompatWeights, agent: &AtomicAgent, t: &Transition) -> f64 {
    let gate = !weights.input_gate || schema_compat(&t.available_inputs, &agent.goal);
    if !gate {
        return 0.0;
    }
    let familiarity = backend.score_tokens(&agent.goal.tokens, &t.subgoal.tokens);
    weights.familiarity * familiarity + weights.prior * agent.stats.success_ratio()
}

/// Selection weights: `L * gamma`, or `gamma` alone when lives are frozen.
pub fn selection_weights(candidates: &[(&AtomicAgent, f64)], life_weighted: bool) -> Vec<f64> {
    candidates
        .iter()
        .map(|(a, gamma)| {
            let w = if life_weighted { a.life * gamma } else { *gamma };
            if w.is_finite() && w > 0.0 {
                w
            } else {
                0.0
            }
        })
        .collect()
}

pub fn selection_probabilities(candidates: &[(&AtomicAgent, f64)], life_weighted: bool) -> Result<Vec<f64>> {
    let w = selection_weights(candidates, life_weighted);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoEligibleAgent);
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Draws one candidate index with probability proportional to `L * gamma`.
/// Zero-weight candidates are never drawn.
pub fn select<R: Rng + ?Sized>(candidates: &[(&AtomicAgent, f64)], life_weighted: bool, rng: &mut R) -> Result<usize> {
    let w = selection_weights(candidates, life_weighted);
    match w.iter().filter(|x| **x > 0.0).count() {
        0 => Err(Error::NoEligibleAgent),
        1 => Ok(w.iter().position(|x| *x > 0.0).unwrap()),
        _ => {
            let dist = WeightedIndex::new(&w).map_err(|_| Error::NoEligibleAgent)?;
            Ok(dist.sample(rng))
        }
    }
}

/// Applies one outcome: life moves by reward minus penalty and is clamped
/// to `[0, L_max]`; counters follow the outcome flags.
pub fn update_life(agent: &mut AtomicAgent, outcome: &Outcome, cfg: &LifeConfig) -> f64 {
    let next = agent.life + outcome.reward(cfg) - outcome.penalty(cfg);
    agent.life = next.clamp(0.0, cfg.l_max);
    record_stats(&mut agent.stats, outcome);
    agent.life
}

pub fn record_stats(stats: &mut AgentStats, outcome: &Outcome) {
    stats.successes += u64::from(outcome.correct);
    stats.failures += u64::from(outcome.failure);
    stats.reuses += u64::from(outcome.reuse);
    stats.generalizations += u64::from(outcome.generalization);
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChangeLog {
    pub epoch: u64,
    pub archived: Vec<String>,
    pub revived: Vec<String>,
    pub spawned: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AgentNetwork {
    pub active: Vec<AtomicAgent>,
    pub archive: Vec<AtomicAgent>,
    pub epoch: u64,
    pub config: LifeConfig,
    pub backend: SimilarityBackend,
    pub rng_seed: u64,
    /// Training pairs, kept for coverage checks and respawning.
    pub training: Vec<(Goal, Workflow)>,
    /// Shape signature -> goal ids solved with that shape.
    pub solved_shapes: BTreeMap<String, BTreeSet<String>>,
    active_index: HashMap<String, Vec<usize>>,
    training_index: HashMap<String, Vec<usize>>,
}

/// Builds one agent per training pair, each starting at `L_init`.
pub fn build_agents(dataset: &[(Goal, Workflow)], config: LifeConfig) -> Result<AgentNetwork> {
    build_agents_with(dataset, config, SimilarityBackend::default(), 0)
}

pub fn build_agents_with(
    dataset: &[(Goal, Workflow)],
    config: LifeConfig,
    backend: SimilarityBackend,
    rng_seed: u64,
) -> Result<AgentNetwork> {
    config.check()?;
    let mut seen = BTreeSet::new();
    let mut active = Vec::with_capacity(dataset.len());
    let mut training = Vec::with_capacity(dataset.len());
    for (goal, workflow) in dataset {
        if !seen.insert(goal.id.clone()) {
            return Err(Error::DuplicateGoal(goal.id.clone()));
        }
        if goal.tokens.is_empty() {
            return Err(Error::EmptyGoal(goal.id.clone()));
        }
        let report = validate(workflow);
        if !report.ok {
            return Err(Error::InvalidWorkflow(format!("{}: {}", goal.id, report.violations[0].message)));
        }
        let goal = goal.stripped();
        active.push(AtomicAgent::new(&goal.id, goal.clone(), workflow.clone(), config.l_init));
        training.push((goal, workflow.clone()));
    }
    let mut net = AgentNetwork {
        active,
        archive: Vec::new(),
        epoch: 0,
        config,
        backend,
        rng_seed,
        training,
        solved_shapes: BTreeMap::new(),
        active_index: HashMap::new(),
        training_index: HashMap::new(),
    };
    net.reindex();
    net.training_index = token_index(net.training.iter().map(|(g, _)| g));
    Ok(net)
}

fn token_index<'a>(goals: impl Iterator<Item = &'a Goal>) -> HashMap<String, Vec<usize>> {
    let mut index: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, g) in goals.enumerate() {
        for tok in &g.tokens {
            index.entry(tok.clone()).or_default().push(i);
        }
    }
    index
}

fn sharing(index: &HashMap<String, Vec<usize>>, g: &Goal) -> Vec<usize> {
    let mut hits: Vec<usize> = g.tokens.iter().filter_map(|t| index.get(t)).flatten().copied().collect();
    hits.sort_unstable();
    hits.dedup();
    hits
}

impl AgentNetwork {
    /// Rebuilds the token index after the active pool changed.
    pub fn reindex(&mut self) {
        self.active_index = token_index(self.active.iter().map(|a| &a.goal));
    }

    pub fn agent(&self, id: &str) -> Option<&AtomicAgent> {
        self.active.iter().find(|a| a.id == id)
    }

    pub fn agent_mut(&mut self, id: &str) -> Option<&mut AtomicAgent> {
        self.active.iter_mut().find(|a| a.id == id)
    }

    /// Active agents sharing at least one token with `g`, in pool order.
    pub fn overlapping(&self, g: &Goal) -> Vec<&AtomicAgent> {
        sharing(&self.active_index, g).into_iter().map(|i| &self.active[i]).collect()
    }

    /// Active agents whose goal similarity to `g` strictly exceeds `theta`,
    /// best first, ties by ascending id.
    pub fn retrieve(&self, g: &Goal, theta: f64) -> Vec<(&AtomicAgent, f64)> {
        if g.tokens.is_empty() {
            return Vec::new();
        }
        let pool: Vec<&AtomicAgent> = if theta >= 0.0 { self.overlapping(g) } else { self.active.iter().collect() };
        let mut hits: Vec<(&AtomicAgent, f64)> = pool
            .into_iter()
            .filter(|a| !a.goal.tokens.is_empty())
            .map(|a| (a, self.backend.score_tokens(&a.goal.tokens, &g.tokens)))
            .filter(|(_, s)| *s > theta)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
        hits
    }

    /// Highest similarity between `g` and any training goal.
    pub fn max_training_similarity(&self, g: &Goal) -> f64 {
        sharing(&self.training_index, g)
            .into_iter()
            .map(|i| self.backend.score_tokens(&self.training[i].0.tokens, &g.tokens))
            .fold(0.0, f64::max)
    }

    fn covered(&self, g: &Goal) -> bool {
        if self.active.iter().any(|a| a.goal.id == g.id && a.goal.tokens == g.tokens) {
            return true;
        }
        self.overlapping(g).iter().any(|a| self.backend.score_tokens(&a.goal.tokens, &g.tokens) >= 1.0)
    }

    /// Archives exhausted agents, then on every `E`-th epoch restores
    /// coverage of training goals by reviving or respawning agents.
    pub fn eliminate_and_refresh(&mut self) -> ChangeLog {
        let mut log = ChangeLog::default();
        let (alive, dead): (Vec<_>, Vec<_>) = std::mem::take(&mut self.active).into_iter().partition(|a| a.life > 0.0);
        self.active = alive;
        for a in dead {
            log.archived.push(a.id.clone());
            self.archive.push(a);
        }
        self.epoch += 1;
        log.epoch = self.epoch;
        if !log.archived.is_empty() {
            self.reindex();
        }
        if self.epoch.is_multiple_of(self.config.refresh_period) {
            for ti in 0..self.training.len() {
                let goal = self.training[ti].0.clone();
                if self.covered(&goal) {
                    continue;
                }
                let best = self
                    .archive
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| self.backend.score_tokens(&a.goal.tokens, &goal.tokens) >= 1.0)
                    .max_by(|(_, a), (_, b)| {
                        a.stats.success_ratio().total_cmp(&b.stats.success_ratio()).then_with(|| b.id.cmp(&a.id))
                    })
                    .map(|(i, _)| i);
                match best {
                    Some(i) => {
                        let mut agent = self.archive.remove(i);
                        agent.life = self.config.l_init;
                        log.revived.push(agent.id.clone());
                        self.active.push(agent);
                    }
                    None => {
                        let id = format!("{}@{}", goal.id, self.epoch);
                        let workflow = self.training[ti].1.clone();
                        log.spawned.push(id.clone());
                        self.active.push(AtomicAgent::new(&id, goal, workflow, self.config.l_init));
                    }
                }
                self.reindex();
            }
        }
        log
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        let record = |a: &AtomicAgent| AgentRecord { id: a.id.clone(), goal_id: a.goal.id.clone(), life: a.life, stats: a.stats };
        NetworkSnapshot {
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            config: self.config.clone(),
            backend: self.backend.clone(),
            active: self.active.iter().map(record).collect(),
            archive: self.archive.iter().map(record).collect(),
            solved_shapes: self.solved_shapes.clone(),
        }
    }

    /// Rebuilds a network from a snapshot and the training pairs it was
    /// built from.
    pub fn from_snapshot(snapshot: &NetworkSnapshot, dataset: &[(Goal, Workflow)]) -> Result<AgentNetwork> {
        let mut net = build_agents_with(dataset, snapshot.config.clone(), snapshot.backend.clone(), snapshot.rng_seed)?;
        let by_goal: HashMap<&str, &(Goal, Workflow)> = net.training.iter().map(|p| (p.0.id.as_str(), p)).collect();
        let restore = |r: &AgentRecord| -> Result<AtomicAgent> {
            let (goal, wf) = by_goal
                .get(r.goal_id.as_str())
                .ok_or_else(|| Error::Config(format!("snapshot agent `{}` has unknown goal `{}`", r.id, r.goal_id)))?;
            let mut a = AtomicAgent::new(&r.id, goal.clone(), wf.clone(), r.life);
            a.stats = r.stats;
            Ok(a)
        };
        let active = snapshot.active.iter().map(restore).collect::<Result<Vec<_>>>()?;
        let archive = snapshot.archive.iter().map(restore).collect::<Result<Vec<_>>>()?;
        net.active = active;
        net.archive = archive;
        net.epoch = snapshot.epoch;
        net.solved_shapes = snapshot.solved_shapes.clone();
        net.reindex();
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: String,
    pub goal_id: String,
    pub life: f64,
    pub stats: AgentStats,
}

/// Resumable network state: lives, counters and epoch per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub epoch: u64,
    pub rng_seed: u64,
    pub config: LifeConfig,
    pub backend: SimilarityBackend,
    pub active: Vec<AgentRecord>,
    pub archive: Vec<AgentRecord>,
    #[serde(default)]
    pub solved_shapes: BTreeMap<String, BTreeSet<String>>,
}
