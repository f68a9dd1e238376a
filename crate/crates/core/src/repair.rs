//! Structural repair of failed candidates: diagnose a verdict into
//! hypotheses, apply one structural operator per hypothesis and iterate
//! while the candidate keeps getting closer to passing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{compatibility, select, AgentNetwork, AtomicAgent, CompatWeights, Transition};
use crate::error::{Error, Result};
use crate::goal::Goal;
use crate::orchestrator::{verify, SolveConfig, Target, Verdict, VerifyMode, VerifyOptions};
use crate::workflow::{
    apply_script, normalize, scope_at, validate, Edit, EditScript, FieldSet, Node, Path, Predicate, StructMetrics, Workflow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    MissingStep,
    WrongOrder,
    MissingBranch,
    OverAbstraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Needed {
    Goal(Goal),
    Fields(FieldSet),
}

impl Needed {
    pub fn fields(&self) -> &FieldSet {
        match self {
            Needed::Goal(g) => &g.output_schema,
            Needed::Fields(f) => f,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Needed::Goal(g) => g.tokens.is_empty() && g.output_schema.is_empty(),
            Needed::Fields(f) => f.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureHypothesis {
    pub kind: HypothesisKind,
    pub location: Path,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needed: Option<Needed>,
    /// The verdict fragment this hypothesis was read from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Edit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RepairAction {
    Insert { path: Path, agent_id: String, node: Node },
    Branch { path: Path, agent_id: String, predicate: Predicate, node: Node },
    Nest { path: Path, len: usize, sub_goal: String },
    Reorder { path: Path, permutation: Vec<usize> },
}

impl RepairAction {
    pub fn agent_id(&self) -> Option<&str> {
        match self {
            RepairAction::Insert { agent_id, .. } | RepairAction::Branch { agent_id, .. } => Some(agent_id),
            _ => None,
        }
    }

    /// Whether this action is the operator a hypothesis kind calls for.
    pub fn matches(&self, kind: HypothesisKind) -> bool {
        matches!(
            (self, kind),
            (RepairAction::Insert { .. }, HypothesisKind::MissingStep)
                | (RepairAction::Branch { .. }, HypothesisKind::MissingBranch)
                | (RepairAction::Nest { .. }, HypothesisKind::OverAbstraction)
                | (RepairAction::Insert { .. }, HypothesisKind::OverAbstraction)
                | (RepairAction::Reorder { .. }, HypothesisKind::WrongOrder)
        )
    }
}

/// Reads a failed verdict as an ordered list of structural hypotheses.
pub fn diagnose(verdict: &Verdict, candidate: &Workflow, target: &Target) -> Result<Vec<FailureHypothesis>> {
    if verdict.passed {
        return Err(Error::NotAFailure);
    }
    let mut out = match verdict.mode {
        VerifyMode::Oracle => {
            let script = match &verdict.edit_script {
                Some(s) => s.clone(),
                None => crate::workflow::diff(candidate, target.expected.as_ref().ok_or(Error::MissingOracle)?),
            };
            script.iter().filter_map(from_edit).collect::<Vec<_>>()
        }
        VerifyMode::GoalAnchored => {
            let mut hs: Vec<FailureHypothesis> = verdict
                .unbound_inputs
                .iter()
                .filter_map(|v| {
                    let f = v.unbound_field()?;
                    Some(FailureHypothesis {
                        kind: HypothesisKind::MissingStep,
                        location: v.path.clone(),
                        needed: Some(Needed::Fields([f.to_string()].into())),
                        evidence: None,
                    })
                })
                .collect();
            let end = append_path(&normalize(&candidate.root));
            hs.extend(verdict.missing_outputs.iter().map(|f| FailureHypothesis {
                kind: HypothesisKind::MissingStep,
                location: end.clone(),
                needed: Some(Needed::Fields([f.clone()].into())),
                evidence: None,
            }));
            hs
        }
    };
    // Stable, so script order survives among equal paths.
    out.sort_by(|a, b| a.location.cmp(&b.location));
    Ok(out)
}

fn append_path(root: &Node) -> Path {
    match root {
        Node::Seq { children } => vec![children.len()],
        _ => vec![1],
    }
}

fn first_task_inputs(node: &Node) -> FieldSet {
    node.tasks().first().map(|t| t.input_schema.clone()).unwrap_or_default()
}

fn outputs(node: &Node) -> FieldSet {
    node.tasks().iter().flat_map(|t| t.output_schema.iter().cloned()).collect()
}

fn from_edit(edit: &Edit) -> Option<FailureHypothesis> {
    let (kind, needed) = match edit {
        Edit::InsertNode { node: Node::Branch { then, .. }, .. } => {
            let mut needed = first_task_inputs(then);
            if needed.is_empty() {
                needed = outputs(then);
            }
            (HypothesisKind::MissingBranch, Some(Needed::Fields(needed)))
        }
        Edit::InsertNode { node: n @ Node::Nest { .. }, .. } => {
            (HypothesisKind::OverAbstraction, Some(Needed::Fields(outputs(n))))
        }
        Edit::InsertNode { node, .. } => (HypothesisKind::MissingStep, Some(Needed::Fields(outputs(node)))),
        Edit::ReorderChildren { .. } => (HypothesisKind::WrongOrder, None),
        Edit::WrapNest { .. } => (HypothesisKind::OverAbstraction, None),
        Edit::DeleteNode { .. } | Edit::ReplaceSubtree { .. } => return None,
    };
    Some(FailureHypothesis { kind, location: edit.path().clone(), needed, evidence: Some(edit.clone()) })
}

/// Parameters for agent selection during repair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairOptions {
    pub theta: f64,
    pub weights: CompatWeights,
    pub life_weighted: bool,
}

impl RepairOptions {
    pub fn from_config(cfg: &SolveConfig) -> Self {
        RepairOptions { theta: cfg.theta, weights: cfg.compat_weights(), life_weighted: cfg.life_weighted() }
    }
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions::from_config(&SolveConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub workflow: Workflow,
    pub action: RepairAction,
}

/// Agents able to fill a slot: those whose procedure is exactly `shape`
/// when one is known, otherwise those producing every needed field, and
/// finally retrieval on a needed goal.
fn pool<'n>(net: &'n AgentNetwork, shape: Option<&Node>, needed: Option<&Needed>, theta: f64) -> Vec<&'n AtomicAgent> {
    if let Some(shape) = shape {
        let want = normalize(shape);
        let exact: Vec<_> = net.active.iter().filter(|a| normalize(&a.procedure.root) == want).collect();
        if !exact.is_empty() {
            return exact;
        }
    }
    let Some(needed) = needed else { return Vec::new() };
    let fields = needed.fields();
    if !fields.is_empty() {
        let producers: Vec<_> = net.active.iter().filter(|a| fields.is_subset(&a.goal.output_schema)).collect();
        if !producers.is_empty() {
            return producers;
        }
    }
    match needed {
        Needed::Goal(g) if !g.tokens.is_empty() => net.retrieve(g, theta).into_iter().map(|(a, _)| a).collect(),
        _ => Vec::new(),
    }
}

fn pick<'n, R: Rng + ?Sized>(
    net: &'n AgentNetwork,
    candidates: Vec<&'n AtomicAgent>,
    needed: Option<&Needed>,
    scope: &FieldSet,
    opts: &RepairOptions,
    rng: &mut R,
) -> Result<&'n AtomicAgent> {
    if candidates.is_empty() {
        return Err(Error::NoEligibleAgent);
    }
    let scored: Vec<_> = candidates
        .into_iter()
        .map(|a| {
            let subgoal = match needed {
                Some(Needed::Goal(g)) => g.clone(),
                _ => a.goal.clone(),
            };
            let t = Transition { subgoal, available_inputs: scope.clone(), shape_context: StructMetrics::default() };
            (a, compatibility(&net.backend, &opts.weights, a, &t))
        })
        .collect();
    let i = select(&scored, opts.life_weighted, rng)?;
    Ok(scored[i].0)
}

/// Applies one hypothesis to `candidate`. The result must not add
/// validation violations.
pub fn apply<R: Rng + ?Sized>(
    candidate: &Workflow,
    h: &FailureHypothesis,
    net: &AgentNetwork,
    opts: &RepairOptions,
    rng: &mut R,
) -> Result<Applied> {
    let current = candidate.normalized();
    let bad = || Error::BadPath(h.location.clone());
    let scope = scope_at(&current, &h.location).ok_or_else(bad)?;
    let needed = h.needed.as_ref();
    let (edit, action) = match (h.kind, &h.evidence) {
        (HypothesisKind::WrongOrder, Some(Edit::ReorderChildren { path, permutation })) => (
            Edit::ReorderChildren { path: path.clone(), permutation: permutation.clone() },
            RepairAction::Reorder { path: path.clone(), permutation: permutation.clone() },
        ),
        (HypothesisKind::OverAbstraction, Some(Edit::WrapNest { path, len, sub_goal })) => (
            Edit::WrapNest { path: path.clone(), len: *len, sub_goal: sub_goal.clone() },
            RepairAction::Nest { path: path.clone(), len: *len, sub_goal: sub_goal.clone() },
        ),
        (HypothesisKind::OverAbstraction, Some(Edit::InsertNode { node: Node::Nest { sub_goal, body }, .. })) => {
            let agent = pick(net, pool(net, Some(body), needed, opts.theta), needed, &scope, opts, rng)?;
            let node = Node::nest(sub_goal, normalize(&agent.procedure.root));
            (
                Edit::InsertNode { path: h.location.clone(), node: node.clone() },
                RepairAction::Insert { path: h.location.clone(), agent_id: agent.id.clone(), node },
            )
        }
        (HypothesisKind::MissingBranch, evidence) => {
            let arm = match evidence {
                Some(Edit::InsertNode { node: Node::Branch { then, .. }, .. }) => Some(then.as_ref()),
                _ => None,
            };
            let key = needed.and_then(|n| n.fields().iter().next().cloned()).ok_or_else(bad)?;
            let arm_needed = arm.map(|a| Needed::Fields(outputs(a)));
            let agent = pick(net, pool(net, arm, arm_needed.as_ref().or(needed), opts.theta), needed, &scope, opts, rng)?;
            let predicate = Predicate::exists(&key);
            let node = Node::branch(predicate.clone(), normalize(&agent.procedure.root), None);
            (
                Edit::InsertNode { path: h.location.clone(), node: node.clone() },
                RepairAction::Branch { path: h.location.clone(), agent_id: agent.id.clone(), predicate, node },
            )
        }
        (HypothesisKind::MissingStep, evidence) => {
            let shape = match evidence {
                Some(Edit::InsertNode { node, .. }) => Some(node),
                _ => None,
            };
            let agent = pick(net, pool(net, shape, needed, opts.theta), needed, &scope, opts, rng)?;
            let node = normalize(&agent.procedure.root);
            (
                Edit::InsertNode { path: h.location.clone(), node: node.clone() },
                RepairAction::Insert { path: h.location.clone(), agent_id: agent.id.clone(), node },
            )
        }
        _ => return Err(Error::RejectedRepair(format!("no operator for {:?} with this evidence", h.kind))),
    };
    let root = apply_script(&current.root, &EditScript(vec![edit]))?;
    let mut workflow = current.clone();
    workflow.root = root;
    workflow.declared_outputs.extend(outputs(&workflow.root));
    let before = validate(&current).violations.len();
    let after = validate(&workflow);
    if after.violations.len() > before || after.violations.iter().any(|v| v.unbound_field().is_none()) {
        return Err(Error::RejectedRepair(after.violations.first().map(|v| v.message.clone()).unwrap_or_default()));
    }
    Ok(Applied { workflow, action })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairStep {
    pub hypothesis: FailureHypothesis,
    pub action: RepairAction,
    pub score: f64,
    /// Distance to passing after this step (edit count or missing fields).
    pub distance: usize,
    /// False when the step made no progress and the loop stopped.
    pub kept: bool,
    pub workflow: Workflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RepairStatus {
    Passed,
    Stalled { reason: String },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairTrace {
    pub candidate: Workflow,
    pub verdict: Verdict,
    pub steps: Vec<RepairStep>,
    pub status: RepairStatus,
    pub agents_added: Vec<String>,
    pub incompatible_added: Vec<String>,
}

/// Diagnose, apply, verify until the candidate passes, stalls or the budget
/// runs out. Stalls and budget exhaustion are reported in the trace.
pub fn repair_loop_traced<R: Rng + ?Sized>(
    net: &AgentNetwork,
    target: &Target,
    candidate: Workflow,
    cfg: &SolveConfig,
    rng: &mut R,
) -> Result<RepairTrace> {
    if cfg.repair_budget == 0 {
        return Err(Error::Precondition("repair budget must be at least 1".into()));
    }
    let vopts = VerifyOptions { eta: cfg.eta, output_goal: cfg.components.output_goal };
    let ropts = RepairOptions::from_config(cfg);
    let mut current = candidate;
    let mut verdict = verify(&current, target, cfg.mode, vopts)?;
    let mut steps = Vec::new();
    let mut agents_added = Vec::new();
    let mut incompatible_added = Vec::new();
    let mut applied_count = 0;
    let status = loop {
        if verdict.passed {
            break RepairStatus::Passed;
        }
        if applied_count >= cfg.repair_budget {
            break RepairStatus::BudgetExhausted;
        }
        let hypotheses = diagnose(&verdict, &current, target)?;
        let mut chosen = None;
        let mut last_err = Error::StalledRepair;
        for h in hypotheses {
            let scope = scope_at(&current.normalized(), &h.location);
            match apply(&current, &h, net, &ropts, rng) {
                Ok(a) => {
                    chosen = Some((h, a, scope));
                    break;
                }
                Err(e @ (Error::NoEligibleAgent | Error::RejectedRepair(_) | Error::BadPath(_))) => last_err = e,
                Err(e) => return Err(e),
            }
        }
        let Some((h, applied, scope)) = chosen else {
            break RepairStatus::Stalled { reason: last_err.to_string() };
        };
        applied_count += 1;
        let next = verify(&applied.workflow, target, cfg.mode, vopts)?;
        let kept = next.passed || next.distance() < verdict.distance();
        steps.push(RepairStep {
            hypothesis: h,
            action: applied.action.clone(),
            score: next.score,
            distance: next.distance(),
            kept,
            workflow: applied.workflow.clone(),
        });
        if !kept {
            break RepairStatus::Stalled { reason: "no progress".into() };
        }
        if let Some(id) = applied.action.agent_id() {
            agents_added.push(id.to_string());
            let compatible = net.agent(id).is_some_and(|a| scope.as_ref().is_some_and(|s| a.goal.input_schema.is_subset(s)));
            if !compatible {
                incompatible_added.push(id.to_string());
            }
        }
        current = applied.workflow;
        verdict = next;
    };
    Ok(RepairTrace { candidate: current, verdict, steps, status, agents_added, incompatible_added })
}

/// Like [`repair_loop_traced`] but a loop that does not reach a passing
/// verdict is an error.
pub fn repair_loop<R: Rng + ?Sized>(
    net: &AgentNetwork,
    target: &Target,
    candidate: Workflow,
    cfg: &SolveConfig,
    rng: &mut R,
) -> Result<RepairTrace> {
    let trace = repair_loop_traced(net, target, candidate, cfg, rng)?;
    match trace.status {
        RepairStatus::Passed => Ok(trace),
        RepairStatus::Stalled { .. } => Err(Error::StalledRepair),
        RepairStatus::BudgetExhausted => Err(Error::BudgetExhausted),
    }
}
