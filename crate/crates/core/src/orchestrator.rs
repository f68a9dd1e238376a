//! The solve loop: decompose a goal over the agent network, compose the
//! chosen agents' procedures, verify the candidate and hand failures to
//! structural repair. Outcomes are fed back into agent lives.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{compatibility, record_stats, select, update_life, AgentNetwork, CompatWeights, Outcome, Transition};
use crate::error::{Error, Result};
use crate::goal::{Goal, SimilarityBackend};
use crate::repair::{repair_loop_traced, RepairStatus, RepairStep};
use crate::rng::derived_rng;
use crate::workflow::{
    concat, dead_node_ratio, diff, normalize, shape_signature, validate, EditScript, FieldSet, Node, StructMetrics, Violation,
    Workflow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Compare against the expected workflow.
    Oracle,
    /// Check the candidate against the goal's input/output schemas only.
    GoalAnchored,
}

/// Pipeline components that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub scale_control: bool,
    pub verification: bool,
    pub hypothesis: bool,
    pub input_goal: bool,
    pub output_goal: bool,
}

impl Default for Components {
    fn default() -> Self {
        Components { scale_control: true, verification: true, hypothesis: true, input_goal: true, output_goal: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub theta: f64,
    pub eta: f64,
    pub max_depth: usize,
    /// Number of ranked candidates to produce.
    pub k: usize,
    pub repair_budget: usize,
    pub mode: VerifyMode,
    pub seed: u64,
    pub components: Components,
    pub familiarity_weight: f64,
    pub prior_weight: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            theta: 0.8,
            eta: 0.95,
            max_depth: 8,
            k: 1,
            repair_budget: 5,
            mode: VerifyMode::Oracle,
            seed: 0,
            components: Components::default(),
            familiarity_weight: 0.5,
            prior_weight: 0.5,
        }
    }
}

impl SolveConfig {
    pub fn compat_weights(&self) -> CompatWeights {
        CompatWeights { familiarity: self.familiarity_weight, prior: self.prior_weight, input_gate: self.components.input_goal }
    }

    pub fn life_weighted(&self) -> bool {
        self.components.scale_control
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum DecompositionTree {
    Resolved {
        goal: Goal,
        agent_id: String,
        score: f64,
        /// Whether the chosen agent passed the input-schema gate.
        schema_compatible: bool,
    },
    Expanded {
        goal: Goal,
        children: Vec<DecompositionTree>,
        /// Compose the children as a sub-workflow under this goal's id.
        nested: bool,
    },
}

impl DecompositionTree {
    pub fn goal(&self) -> &Goal {
        match self {
            DecompositionTree::Resolved { goal, .. } | DecompositionTree::Expanded { goal, .. } => goal,
        }
    }

    /// Resolved leaves, left to right.
    pub fn leaves(&self) -> Vec<&DecompositionTree> {
        match self {
            DecompositionTree::Resolved { .. } => vec![self],
            DecompositionTree::Expanded { children, .. } => children.iter().flat_map(|c| c.leaves()).collect(),
        }
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.leaves()
            .into_iter()
            .filter_map(|l| match l {
                DecompositionTree::Resolved { agent_id, .. } => Some(agent_id.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        match self {
            DecompositionTree::Resolved { .. } => 0,
            DecompositionTree::Expanded { children, .. } => 1 + children.iter().map(|c| c.depth()).max().unwrap_or(0),
        }
    }
}

/// Per-call knobs for [`decompose`].
pub struct DecomposeParams<'a, R: Rng> {
    pub theta: f64,
    pub max_depth: usize,
    pub allow_split: bool,
    pub weights: CompatWeights,
    pub life_weighted: bool,
    pub rng: &'a mut R,
}

impl<'a, R: Rng> DecomposeParams<'a, R> {
    pub fn from_config(cfg: &SolveConfig, rng: &'a mut R) -> Self {
        DecomposeParams {
            theta: cfg.theta,
            max_depth: cfg.max_depth,
            allow_split: cfg.components.hypothesis,
            weights: cfg.compat_weights(),
            life_weighted: cfg.life_weighted(),
            rng,
        }
    }
}

/// Resolves `goal` directly when some agent clears the threshold, otherwise
/// splits it by greedy set cover over agent goal tokens and recurses.
pub fn decompose<R: Rng>(net: &AgentNetwork, goal: &Goal, params: &mut DecomposeParams<'_, R>) -> Result<DecompositionTree> {
    if params.max_depth == 0 {
        return Err(Error::Precondition("max_depth must be at least 1".into()));
    }
    decompose_at(net, goal, &goal.input_schema.clone(), 0, params)
}

fn decompose_at<R: Rng>(
    net: &AgentNetwork,
    goal: &Goal,
    available: &FieldSet,
    depth: usize,
    params: &mut DecomposeParams<'_, R>,
) -> Result<DecompositionTree> {
    let fail = || Error::DecompositionFailure(goal.id.clone());
    if goal.tokens.is_empty() {
        return Err(Error::EmptyGoal(goal.id.clone()));
    }
    let hits = net.retrieve(goal, params.theta);
    if !hits.is_empty() {
        let transition =
            Transition { subgoal: goal.clone(), available_inputs: available.clone(), shape_context: StructMetrics::default() };
        let scored: Vec<_> =
            hits.iter().map(|(a, _)| (*a, compatibility(&net.backend, &params.weights, a, &transition))).collect();
        match select(&scored, params.life_weighted, params.rng) {
            Ok(i) => {
                let agent = scored[i].0;
                return Ok(DecompositionTree::Resolved {
                    goal: goal.clone(),
                    agent_id: agent.id.clone(),
                    score: hits[i].1,
                    schema_compatible: agent.goal.input_schema.is_subset(available),
                });
            }
            Err(Error::NoEligibleAgent) => {}
            Err(e) => return Err(e),
        }
    }
    if !params.allow_split || depth + 1 > params.max_depth {
        return Err(fail());
    }
    let subgoals = set_cover(net, goal);
    if subgoals.is_empty() || (subgoals.len() == 1 && subgoals[0].tokens == goal.tokens) {
        return Err(fail());
    }
    let mut scope = available.clone();
    let mut children = Vec::with_capacity(subgoals.len());
    for sub in order_by_dataflow(subgoals, available) {
        let child = decompose_at(net, &sub, &scope, depth + 1, params)?;
        scope.extend(sub.output_schema.iter().cloned());
        children.push(child);
    }
    Ok(DecompositionTree::Expanded { goal: goal.clone(), children, nested: false })
}

/// Greedy set cover of the goal's tokens by active agents' goal tokens,
/// largest overlap first, ties by agent id. Returns an empty list when
/// some token cannot be covered.
fn set_cover(net: &AgentNetwork, goal: &Goal) -> Vec<Goal> {
    let mut uncovered: BTreeSet<String> = goal.tokens.clone();
    let pool = net.overlapping(goal);
    let mut picked: Vec<Goal> = Vec::new();
    while !uncovered.is_empty() {
        let best = pool
            .iter()
            .map(|a| (a, a.goal.tokens.intersection(&uncovered).count()))
            .filter(|(_, n)| *n > 0)
            .max_by(|(a, n), (b, m)| n.cmp(m).then_with(|| b.id.cmp(&a.id)));
        let Some((agent, _)) = best else { return Vec::new() };
        for t in &agent.goal.tokens {
            uncovered.remove(t);
        }
        let tokens: BTreeSet<String> = agent.goal.tokens.intersection(&goal.tokens).cloned().collect();
        picked.push(Goal {
            id: format!("{}/{}", goal.id, picked.len()),
            tokens,
            input_schema: agent.goal.input_schema.clone(),
            output_schema: agent.goal.output_schema.clone(),
            subgoal_template: None,
        });
    }
    picked
}

/// Orders subgoals so each one's inputs are bound when it runs, keeping the
/// cover order among those that are ready.
fn order_by_dataflow(mut pending: Vec<Goal>, available: &FieldSet) -> Vec<Goal> {
    let mut scope = available.clone();
    let mut ordered = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        let i = pending.iter().position(|g| g.input_schema.is_subset(&scope)).unwrap_or(0);
        let g = pending.remove(i);
        scope.extend(g.output_schema.iter().cloned());
        ordered.push(g);
    }
    ordered
}

/// Folds the decomposition into one workflow, left to right.
pub fn compose(net: &AgentNetwork, tree: &DecompositionTree) -> Result<Workflow> {
    match tree {
        DecompositionTree::Resolved { agent_id, .. } => {
            let agent =
                net.agent(agent_id).ok_or_else(|| Error::Invariant(format!("resolved agent `{agent_id}` is not active")))?;
            Ok(agent.procedure.clone())
        }
        DecompositionTree::Expanded { goal, children, nested } => {
            let mut acc = Workflow::empty(&goal.id);
            acc.declared_inputs = goal.input_schema.clone();
            for child in children {
                acc = concat(&acc, &compose(net, child)?);
            }
            if acc.declared_inputs.is_empty() {
                acc.declared_inputs = goal.input_schema.clone();
            }
            acc.id = format!("composite:{}", goal.id);
            acc.goal_id = goal.id.clone();
            if *nested {
                acc.root = normalize(&Node::nest(&goal.id, acc.root));
            }
            Ok(acc)
        }
    }
}

/// What a candidate is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub goal: Goal,
    pub expected: Option<Workflow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub score: f64,
    pub mode: VerifyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_script: Option<EditScript>,
    pub missing_outputs: FieldSet,
    pub unbound_inputs: Vec<Violation>,
    pub dead_node_ratio: f64,
}

impl Verdict {
    /// Distance used to measure repair progress.
    pub fn distance(&self) -> usize {
        match self.mode {
            VerifyMode::Oracle => self.edit_script.as_ref().map_or(0, |s| s.len()),
            VerifyMode::GoalAnchored => self.missing_outputs.len() + self.unbound_inputs.len(),
        }
    }
}

/// Options that shape a verdict beyond the mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub eta: f64,
    /// When false, missing outputs are ignored and dead-node pruning is off.
    pub output_goal: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { eta: 0.95, output_goal: true }
    }
}

pub fn verify(candidate: &Workflow, target: &Target, mode: VerifyMode, opts: VerifyOptions) -> Result<Verdict> {
    let required = &target.goal.output_schema;
    let dead = if opts.output_goal { dead_node_ratio(&candidate.root, required) } else { 0.0 };
    let normalized = candidate.normalized();
    let unbound_inputs: Vec<Violation> =
        validate(&normalized).violations.into_iter().filter(|v| v.unbound_field().is_some()).collect();
    match mode {
        VerifyMode::Oracle => {
            let expected = target.expected.as_ref().ok_or(Error::MissingOracle)?;
            let equal = candidate.structurally_eq(expected);
            let score = if equal { 1.0 } else { 0.0 };
            Ok(Verdict {
                passed: score >= opts.eta,
                score,
                mode,
                edit_script: Some(if equal { EditScript::default() } else { diff(candidate, expected) }),
                missing_outputs: FieldSet::new(),
                unbound_inputs,
                dead_node_ratio: dead,
            })
        }
        VerifyMode::GoalAnchored => {
            let produced = candidate.produced_fields();
            let missing: FieldSet =
                if opts.output_goal { required.difference(&produced).cloned().collect() } else { FieldSet::new() };
            let mut score = if !opts.output_goal || required.is_empty() {
                1.0
            } else {
                (required.len() - missing.len()) as f64 / required.len() as f64
            };
            if !unbound_inputs.is_empty() || normalize(&candidate.root).is_empty_seq() {
                score = 0.0;
            }
            Ok(Verdict {
                passed: score >= opts.eta,
                score,
                mode,
                edit_script: None,
                missing_outputs: missing,
                unbound_inputs,
                dead_node_ratio: dead,
            })
        }
    }
}

/// One ranked candidate of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub rank: usize,
    pub workflow: Workflow,
    pub verdict: Verdict,
    /// Whether the pipeline itself treats this candidate as passing.
    pub accepted: bool,
    /// Ground-truth correctness, used for reporting only.
    pub correct: bool,
    pub agents: Vec<String>,
    pub schema_incompatible_agents: Vec<String>,
    pub repairs: Vec<RepairStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_status: Option<RepairStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent_id: String,
    pub outcome: Outcome,
    pub life_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub goal_id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<String>,
    pub candidates: Vec<CandidateRecord>,
    pub outcomes: Vec<AgentOutcome>,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EpisodeResult {
    /// Episode that ended before any candidate was produced.
    pub fn early_failure(goal_id: &str, seed: u64, reason: &Error) -> Self {
        EpisodeResult {
            goal_id: goal_id.to_string(),
            seed,
            bucket: None,
            candidates: Vec::new(),
            outcomes: Vec::new(),
            steps: 0,
            failure: Some(reason.to_string()),
        }
    }

    /// 1-based rank of the first correct candidate.
    pub fn first_correct_rank(&self) -> Option<usize> {
        self.candidates.iter().find(|c| c.correct).map(|c| c.rank)
    }

    /// Workflow the pipeline settled on: the first accepted candidate.
    pub fn final_workflow(&self) -> Option<&Workflow> {
        self.candidates.iter().find(|c| c.accepted).map(|c| &c.workflow)
    }
}

/// Runs one episode for `goal` and applies the resulting outcomes to `net`.
pub fn solve(net: &mut AgentNetwork, goal: &Goal, expected: Option<&Workflow>, cfg: &SolveConfig) -> Result<EpisodeResult> {
    let result = solve_episode(net, goal, expected, cfg)?;
    apply_episode(net, &result, cfg.components.scale_control);
    Ok(result)
}

/// Runs one episode without touching the network. Each outcome's
/// `life_after` is the life the agent would have after this episode alone.
pub fn solve_episode(net: &AgentNetwork, goal: &Goal, expected: Option<&Workflow>, cfg: &SolveConfig) -> Result<EpisodeResult> {
    if cfg.k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let target = Target { goal: goal.stripped(), expected: expected.cloned() };
    let ranks = if cfg.components.verification { cfg.k } else { 1 };
    let mut candidates = Vec::with_capacity(ranks);
    let mut steps = 0usize;
    for rank in 0..ranks {
        let mut rng = derived_rng(cfg.seed, &target.goal.id, rank as u64);
        candidates.push(run_rank(net, &target, cfg, rank + 1, &mut rng, &mut steps)?);
    }
    let outcomes = issue_outcomes(net, &target, &candidates, cfg);
    Ok(EpisodeResult {
        goal_id: target.goal.id.clone(),
        seed: cfg.seed,
        bucket: None,
        candidates,
        outcomes,
        steps,
        failure: None,
    })
}

/// Feeds an episode's outcomes back: stats always, lives only under scale
/// control, and the accepted shape is remembered for reuse rewards.
pub fn apply_episode(net: &mut AgentNetwork, result: &EpisodeResult, scale_control: bool) {
    let cfg = net.config.clone();
    for o in &result.outcomes {
        if let Some(agent) = net.agent_mut(&o.agent_id) {
            if scale_control {
                update_life(agent, &o.outcome, &cfg);
            } else {
                record_stats(&mut agent.stats, &o.outcome);
            }
        }
    }
    if let Some(c) = result.candidates.iter().find(|c| c.accepted) {
        net.solved_shapes.entry(shape_signature(&c.workflow)).or_default().insert(result.goal_id.clone());
    }
}

fn run_rank<R: Rng>(
    net: &AgentNetwork,
    target: &Target,
    cfg: &SolveConfig,
    rank: usize,
    rng: &mut R,
    steps: &mut usize,
) -> Result<CandidateRecord> {
    let mut params = DecomposeParams::from_config(cfg, rng);
    let (candidate, mut agents, mut incompatible, note) = match decompose(net, &target.goal, &mut params) {
        Ok(tree) => {
            let incompatible = tree
                .leaves()
                .into_iter()
                .filter_map(|l| match l {
                    DecompositionTree::Resolved { agent_id, schema_compatible: false, .. } => Some(agent_id.clone()),
                    _ => None,
                })
                .collect();
            (compose(net, &tree)?, tree.agent_ids(), incompatible, None)
        }
        Err(e @ Error::DecompositionFailure(_)) if cfg.components.hypothesis => {
            let mut empty = Workflow::empty(&format!("composite:{}", target.goal.id));
            empty.goal_id = target.goal.id.clone();
            empty.declared_inputs = target.goal.input_schema.clone();
            (empty, Vec::new(), Vec::new(), Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let opts = VerifyOptions { eta: cfg.eta, output_goal: cfg.components.output_goal };
    let correct_of = |w: &Workflow, v: &Verdict| target.expected.as_ref().map_or(v.passed, |e| w.structurally_eq(e));

    if !cfg.components.verification {
        // Accepted unverified; the verdict is computed for reporting only.
        let mode = if target.expected.is_some() { VerifyMode::Oracle } else { VerifyMode::GoalAnchored };
        let verdict = verify(&candidate, target, mode, opts)?;
        let correct = correct_of(&candidate, &verdict);
        return Ok(CandidateRecord {
            rank,
            workflow: candidate,
            verdict,
            accepted: true,
            correct,
            agents,
            schema_incompatible_agents: incompatible,
            repairs: Vec::new(),
            repair_status: None,
            note,
        });
    }

    *steps += 1;
    let verdict = verify(&candidate, target, cfg.mode, opts)?;
    let (workflow, verdict, repairs, status) = if !verdict.passed && cfg.components.hypothesis && cfg.repair_budget > 0 {
        let trace = repair_loop_traced(net, target, candidate, cfg, params.rng)?;
        *steps += trace.steps.len();
        agents.extend(trace.agents_added.iter().cloned());
        incompatible.extend(trace.incompatible_added.iter().cloned());
        (trace.candidate, trace.verdict, trace.steps, Some(trace.status))
    } else {
        (candidate, verdict, Vec::new(), None)
    };
    let correct = correct_of(&workflow, &verdict);
    Ok(CandidateRecord {
        rank,
        accepted: verdict.passed,
        workflow,
        verdict,
        correct,
        agents,
        schema_incompatible_agents: incompatible,
        repairs,
        repair_status: status,
        note,
    })
}

fn dedup(ids: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect()
}

fn drift(produced: &FieldSet, expected: &FieldSet, backend: &SimilarityBackend) -> f64 {
    if produced.is_empty() && expected.is_empty() {
        return 0.0;
    }
    let jaccard = SimilarityBackend { kind: crate::goal::SimilarityKind::Jaccard, ..backend.clone() };
    1.0 - jaccard.score_tokens(produced, expected)
}

/// Agent blamed for a failed candidate: the owner of the task nearest the
/// first edit location, else the last agent on the path.
fn blame(net: &AgentNetwork, c: &CandidateRecord) -> Option<String> {
    let agents = dedup(&c.agents);
    let tool = c.verdict.edit_script.as_ref().and_then(|s| s.iter().next()).and_then(|edit| {
        let root = normalize(&c.workflow.root);
        let mut path = edit.path().clone();
        loop {
            if let Some(node) = root.at(&path) {
                if let Some(t) = node.tasks().first() {
                    return Some(t.tool_id.clone());
                }
            }
            match path.last_mut() {
                Some(0) | None => {
                    path.pop()?;
                }
                Some(i) => *i -= 1,
            }
        }
    });
    tool.and_then(|tool| agents.iter().find(|id| net.agent(id).is_some_and(|a| a.toolset.contains(&tool))).cloned())
        .or_else(|| agents.last().cloned())
}

fn issue_outcomes(net: &AgentNetwork, target: &Target, candidates: &[CandidateRecord], cfg: &SolveConfig) -> Vec<AgentOutcome> {
    let mut issued: Vec<(String, Outcome)> = Vec::new();
    if let Some(best) = candidates.iter().find(|c| c.accepted) {
        let signature = shape_signature(&best.workflow);
        let reuse = net.solved_shapes.get(&signature).is_some_and(|ids| ids.iter().any(|id| *id != target.goal.id));
        let generalization = net.max_training_similarity(&target.goal) < 1.0;
        for id in dedup(&best.agents) {
            issued.push((
                id,
                Outcome { correct: true, reuse, generalization, redundancy: best.verdict.dead_node_ratio, ..Default::default() },
            ));
        }
    } else if let Some(first) = candidates.first() {
        if let Some(id) = blame(net, first) {
            let produced = first.workflow.produced_fields();
            let drifted = drift(&produced, &target.goal.output_schema, &net.backend) > net.config.drift_threshold;
            issued.push((
                id,
                Outcome { failure: true, drift: drifted, redundancy: first.verdict.dead_node_ratio, ..Default::default() },
            ));
        }
    }
    let life_cfg = &net.config;
    issued
        .into_iter()
        .filter_map(|(id, outcome)| {
            let agent = net.agent(&id)?;
            let life_after = if cfg.components.scale_control {
                (agent.life + outcome.reward(life_cfg) - outcome.penalty(life_cfg)).clamp(0.0, life_cfg.l_max)
            } else {
                agent.life
            };
            Some(AgentOutcome { agent_id: id, outcome, life_after })
        })
        .collect()
}
