//! Workflow trees: representation, well-formedness, structural metrics,
//! the composition operators, structural diff and subflow matching.
//!
//! A workflow is an ordered tree of `task`, `seq`, `branch` and `nest`
//! nodes. Structural equality is ordered-tree equality after
//! [`normalize`]: nested sequences are spliced into their parent, empty
//! sequences are dropped and single-element sequences collapse to the
//! element itself.

mod diff;
mod ops;
mod subflow;

pub use diff::{apply_script, diff, Edit, EditScript};
pub use ops::{branch, concat, nest};
pub use subflow::{find_subflows, SubflowMatch};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type FieldSet = BTreeSet<String>;
/// Child indices from the root. `seq` children are indexed positionally,
/// a `nest` body is child 0, a `branch` has `then` at 0 and `else` at 1.
pub type Path = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskNode {
    pub tool_id: String,
    pub input_schema: FieldSet,
    pub output_schema: FieldSet,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl TaskNode {
    pub fn new<I, O, S, T>(tool_id: &str, inputs: I, outputs: O) -> Self
    where
        I: IntoIterator<Item = S>,
        O: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        TaskNode {
            tool_id: tool_id.to_string(),
            input_schema: inputs.into_iter().map(Into::into).collect(),
            output_schema: outputs.into_iter().map(Into::into).collect(),
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    Equals,
    Exists,
    NotExists,
}

/// Condition guarding a branch arm, evaluated over context fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub key: String,
    pub op: PredicateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl Predicate {
    pub fn exists(key: &str) -> Self {
        Predicate { key: key.to_string(), op: PredicateOp::Exists, value: None }
    }

    pub fn not_exists(key: &str) -> Self {
        Predicate { key: key.to_string(), op: PredicateOp::NotExists, value: None }
    }

    pub fn equals(key: &str, value: &str) -> Self {
        Predicate { key: key.to_string(), op: PredicateOp::Equals, value: Some(value.to_string()) }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.op {
            PredicateOp::Equals => self.value.is_some(),
            PredicateOp::Exists | PredicateOp::NotExists => self.value.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Task(TaskNode),
    Seq {
        children: Vec<Node>,
    },
    Branch {
        cond: Predicate,
        then: Box<Node>,
        #[serde(rename = "else", default, skip_serializing_if = "Option::is_none")]
        otherwise: Option<Box<Node>>,
    },
    Nest {
        sub_goal: String,
        body: Box<Node>,
    },
}

impl Node {
    pub fn task(t: TaskNode) -> Self {
        Node::Task(t)
    }

    pub fn seq(children: Vec<Node>) -> Self {
        Node::Seq { children }
    }

    pub fn empty() -> Self {
        Node::Seq { children: Vec::new() }
    }

    pub fn branch(cond: Predicate, then: Node, otherwise: Option<Node>) -> Self {
        Node::Branch { cond, then: Box::new(then), otherwise: otherwise.map(Box::new) }
    }

    pub fn nest(sub_goal: &str, body: Node) -> Self {
        Node::Nest { sub_goal: sub_goal.to_string(), body: Box::new(body) }
    }

    pub fn is_empty_seq(&self) -> bool {
        matches!(self, Node::Seq { children } if children.is_empty())
    }

    pub fn child(&self, i: usize) -> Option<&Node> {
        match self {
            Node::Task(_) => None,
            Node::Seq { children } => children.get(i),
            Node::Nest { body, .. } => (i == 0).then_some(&**body),
            Node::Branch { then, otherwise, .. } => match i {
                0 => Some(then),
                1 => otherwise.as_deref(),
                _ => None,
            },
        }
    }

    pub fn child_mut(&mut self, i: usize) -> Option<&mut Node> {
        match self {
            Node::Task(_) => None,
            Node::Seq { children } => children.get_mut(i),
            Node::Nest { body, .. } => (i == 0).then_some(&mut **body),
            Node::Branch { then, otherwise, .. } => match i {
                0 => Some(then),
                1 => otherwise.as_deref_mut(),
                _ => None,
            },
        }
    }

    pub fn at(&self, path: &[usize]) -> Option<&Node> {
        path.iter().try_fold(self, |n, &i| n.child(i))
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut Node> {
        let mut cur = self;
        for &i in path {
            cur = cur.child_mut(i)?;
        }
        Some(cur)
    }

    /// Tasks in left-to-right execution order, including branch arms.
    pub fn tasks(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        self.collect_tasks(&mut out);
        out
    }

    fn collect_tasks<'a>(&'a self, out: &mut Vec<&'a TaskNode>) {
        match self {
            Node::Task(t) => out.push(t),
            Node::Seq { children } => children.iter().for_each(|c| c.collect_tasks(out)),
            Node::Branch { then, otherwise, .. } => {
                then.collect_tasks(out);
                if let Some(o) = otherwise {
                    o.collect_tasks(out);
                }
            }
            Node::Nest { body, .. } => body.collect_tasks(out),
        }
    }

    /// Children as a list, treating a non-sequence node as a singleton.
    pub fn as_items(&self) -> Vec<Node> {
        match self {
            Node::Seq { children } => children.clone(),
            other => vec![other.clone()],
        }
    }
}

/// A workflow document: a node tree plus its declared interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: String,
    pub goal_id: String,
    pub declared_inputs: FieldSet,
    pub declared_outputs: FieldSet,
    pub root: Node,
}

impl Workflow {
    pub fn new(id: &str, goal_id: &str, declared_inputs: FieldSet, declared_outputs: FieldSet, root: Node) -> Self {
        Workflow { id: id.to_string(), goal_id: goal_id.to_string(), declared_inputs, declared_outputs, root }
    }

    /// The empty workflow, identity element of [`concat`].
    pub fn empty(id: &str) -> Self {
        Workflow::new(id, id, FieldSet::new(), FieldSet::new(), Node::empty())
    }

    /// Single-task workflow whose interface mirrors the task's schemas.
    pub fn single(id: &str, goal_id: &str, task: TaskNode) -> Self {
        let inputs = task.input_schema.clone();
        let outputs = task.output_schema.clone();
        Workflow::new(id, goal_id, inputs, outputs, Node::Task(task))
    }

    pub fn tools(&self) -> BTreeSet<String> {
        self.root.tasks().into_iter().map(|t| t.tool_id.clone()).collect()
    }

    /// Union of every task's outputs, conditional arms included.
    pub fn produced_fields(&self) -> FieldSet {
        self.root.tasks().into_iter().flat_map(|t| t.output_schema.iter().cloned()).collect()
    }

    pub fn normalized(&self) -> Workflow {
        Workflow { root: normalize(&self.root), ..self.clone() }
    }

    /// Ordered-tree equality of the normalized roots.
    pub fn structurally_eq(&self, other: &Workflow) -> bool {
        normalize(&self.root) == normalize(&other.root)
    }

    /// Canonical JSON: sorted keys, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(s: &str) -> Result<Workflow> {
        serde_json::from_str(s).map_err(|e| Error::InvalidWorkflow(e.to_string()))
    }
}

/// Serializes any value with sorted object keys and no whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("json value")
}

pub fn normalize(node: &Node) -> Node {
    match node {
        Node::Task(t) => Node::Task(t.clone()),
        Node::Seq { children } => {
            let mut items = Vec::with_capacity(children.len());
            for c in children {
                match normalize(c) {
                    Node::Seq { children: inner } => items.extend(inner),
                    other => items.push(other),
                }
            }
            if items.len() == 1 {
                items.pop().unwrap()
            } else {
                Node::Seq { children: items }
            }
        }
        Node::Branch { cond, then, otherwise } => Node::Branch {
            cond: cond.clone(),
            then: Box::new(normalize(then)),
            otherwise: otherwise.as_ref().map(|o| Box::new(normalize(o))),
        },
        Node::Nest { sub_goal, body } => Node::Nest { sub_goal: sub_goal.clone(), body: Box::new(normalize(body)) },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: Path,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl Violation {
    /// Field named by an unbound-input violation.
    pub fn unbound_field(&self) -> Option<&str> {
        let rest = self.message.strip_prefix("unbound input `")?;
        rest.split('`').next()
    }
}

impl ValidationReport {
    pub fn unbound_inputs(&self) -> bool {
        self.violations.iter().any(|v| v.message.starts_with("unbound input"))
    }
}

/// Checks structural invariants and dataflow satisfiability.
///
/// Every task input must be declared or produced by an earlier node in
/// left-to-right order. Branch arms are checked independently and only
/// fields produced by both arms of a two-armed branch flow past it.
pub fn validate(w: &Workflow) -> ValidationReport {
    let mut violations = Vec::new();
    let mut scope = w.declared_inputs.clone();
    let mut path = Vec::new();
    check_node(&w.root, &mut scope, &mut path, &mut violations);
    ValidationReport { ok: violations.is_empty(), violations }
}

fn check_node(node: &Node, scope: &mut FieldSet, path: &mut Path, out: &mut Vec<Violation>) {
    match node {
        Node::Task(t) => {
            if t.tool_id.is_empty() {
                out.push(Violation { path: path.clone(), message: "empty tool id".into() });
            }
            for f in &t.input_schema {
                if !scope.contains(f) {
                    out.push(Violation { path: path.clone(), message: format!("unbound input `{f}` for tool `{}`", t.tool_id) });
                }
            }
            scope.extend(t.output_schema.iter().cloned());
        }
        Node::Seq { children } => {
            if children.is_empty() {
                out.push(Violation { path: path.clone(), message: "empty sequence".into() });
            }
            for (i, c) in children.iter().enumerate() {
                path.push(i);
                check_node(c, scope, path, out);
                path.pop();
            }
        }
        Node::Branch { cond, then, otherwise } => {
            if !cond.is_well_formed() {
                out.push(Violation { path: path.clone(), message: format!("malformed predicate on `{}`", cond.key) });
            }
            let mut then_scope = scope.clone();
            path.push(0);
            check_node(then, &mut then_scope, path, out);
            path.pop();
            if let Some(o) = otherwise {
                let mut else_scope = scope.clone();
                path.push(1);
                check_node(o, &mut else_scope, path, out);
                path.pop();
                let both: Vec<String> = then_scope.intersection(&else_scope).cloned().collect();
                scope.extend(both);
            }
        }
        Node::Nest { sub_goal, body } => {
            if sub_goal.is_empty() {
                out.push(Violation { path: path.clone(), message: "empty sub-goal id".into() });
            }
            path.push(0);
            check_node(body, scope, path, out);
            path.pop();
        }
    }
}

/// Fields bound just before the position `path` would occupy.
///
/// `path` may point one past the end of a sequence (an append position).
/// Returns `None` when the path does not resolve.
pub fn scope_at(w: &Workflow, path: &[usize]) -> Option<FieldSet> {
    let mut scope = w.declared_inputs.clone();
    let mut node = &w.root;
    for (depth, &i) in path.iter().enumerate() {
        let last = depth + 1 == path.len();
        match node {
            Node::Task(t) => {
                // Appending after a lone task promotes it to a sequence.
                if last && i <= 1 {
                    if i == 1 {
                        scope.extend(t.output_schema.iter().cloned());
                    }
                    return Some(scope);
                }
                return None;
            }
            Node::Seq { children } => {
                if i > children.len() || (!last && i == children.len()) {
                    return None;
                }
                for c in &children[..i] {
                    bind_outputs(c, &mut scope);
                }
                if i == children.len() {
                    return Some(scope);
                }
                node = &children[i];
            }
            Node::Nest { body, .. } => {
                if last && i == 1 {
                    bind_outputs(node, &mut scope);
                    return Some(scope);
                }
                if i != 0 {
                    return None;
                }
                node = body;
            }
            Node::Branch { then, otherwise, .. } => {
                node = match (i, otherwise.as_deref()) {
                    (0, _) => then,
                    (1, Some(o)) => o,
                    (1, None) if last => {
                        bind_outputs(node, &mut scope);
                        return Some(scope);
                    }
                    _ => return None,
                };
            }
        }
    }
    Some(scope)
}

fn bind_outputs(node: &Node, scope: &mut FieldSet) {
    let mut sink = Vec::new();
    let mut path = Vec::new();
    check_node(node, scope, &mut path, &mut sink);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructMetrics {
    pub length: usize,
    pub depth: usize,
    pub branch_count: usize,
}

/// Structural metrics of a valid workflow.
pub fn metrics(w: &Workflow) -> Result<StructMetrics> {
    let report = validate(w);
    if !report.ok {
        return Err(Error::InvalidWorkflow(report.violations[0].message.clone()));
    }
    Ok(node_metrics(&w.root))
}

/// Metrics without the validity precondition.
pub fn node_metrics(node: &Node) -> StructMetrics {
    match node {
        Node::Task(_) => StructMetrics { length: 1, depth: 0, branch_count: 0 },
        Node::Seq { children } => children.iter().map(node_metrics).fold(StructMetrics::default(), merge),
        Node::Branch { then, otherwise, .. } => {
            let mut m = node_metrics(then);
            if let Some(o) = otherwise {
                m = merge(m, node_metrics(o));
            }
            m.branch_count += 1;
            m
        }
        Node::Nest { body, .. } => {
            let mut m = node_metrics(body);
            m.depth += 1;
            m
        }
    }
}

fn merge(a: StructMetrics, b: StructMetrics) -> StructMetrics {
    StructMetrics { length: a.length + b.length, depth: a.depth.max(b.depth), branch_count: a.branch_count + b.branch_count }
}

/// Inlines every `nest` wrapper; the result has depth 0.
pub fn flatten(w: &Workflow) -> Workflow {
    Workflow { root: normalize(&flatten_node(&w.root)), ..w.clone() }
}

fn flatten_node(node: &Node) -> Node {
    match node {
        Node::Task(t) => Node::Task(t.clone()),
        Node::Seq { children } => Node::Seq { children: children.iter().map(flatten_node).collect() },
        Node::Branch { cond, then, otherwise } => Node::Branch {
            cond: cond.clone(),
            then: Box::new(flatten_node(then)),
            otherwise: otherwise.as_ref().map(|o| Box::new(flatten_node(o))),
        },
        Node::Nest { body, .. } => flatten_node(body),
    }
}

/// Share of tasks whose outputs never reach `required` through later live
/// tasks. Branch arms count as tasks like any other.
pub fn dead_node_ratio(root: &Node, required: &FieldSet) -> f64 {
    let tasks = root.tasks();
    if tasks.is_empty() {
        return 0.0;
    }
    let mut needed = required.clone();
    let mut dead = 0usize;
    for t in tasks.iter().rev() {
        if t.output_schema.iter().any(|f| needed.contains(f)) {
            needed.extend(t.input_schema.iter().cloned());
        } else {
            dead += 1;
        }
    }
    dead as f64 / tasks.len() as f64
}

/// Shape key: the flattened skeleton with tools erased plus the sorted tool
/// multiset. Two workflows with equal keys are structurally equivalent.
pub fn shape_signature(w: &Workflow) -> String {
    fn skeleton(n: &Node, out: &mut String) {
        match n {
            Node::Task(_) => out.push('t'),
            Node::Seq { children } => {
                out.push('(');
                children.iter().for_each(|c| skeleton(c, out));
                out.push(')');
            }
            Node::Branch { then, otherwise, .. } => {
                out.push_str("b[");
                skeleton(then, out);
                if let Some(o) = otherwise {
                    out.push('|');
                    skeleton(o, out);
                }
                out.push(']');
            }
            Node::Nest { body, .. } => skeleton(body, out),
        }
    }
    let flat = flatten(w);
    let mut s = String::new();
    skeleton(&flat.root, &mut s);
    let mut tools: Vec<&str> = flat.root.tasks().iter().map(|t| t.tool_id.as_str()).collect();
    tools.sort_unstable();
    s.push(':');
    s.push_str(&tools.join(","));
    s
}
