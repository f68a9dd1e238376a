use std::collections::BTreeSet;

use agentflow::agents::{build_agents, AgentNetwork, LifeConfig};
use agentflow::goal::Goal;
use agentflow::orchestrator::{SolveConfig, Target, VerifyMode};
use agentflow::repair::repair_loop;
use agentflow::rng::{derived_rng, seeded_rng};
use agentflow::workflow::{apply_script, normalize, Edit, EditScript, FieldSet, Node, Path, Predicate, TaskNode, Workflow};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::common::{free_task, wf};
use crate::{ensure, Ctx, Outcome};

const TOOLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Fault {
    DropTask,
    DropBranch,
    UnwrapNest,
    SwapAdjacent,
}

/// Guarded step as the repair operator builds it: the arm's own output is
/// the predicate key.
fn guarded(tool: &str) -> Node {
    Node::branch(Predicate::exists(&format!("{tool}.out")), free_task(tool), None)
}

fn size(n: &Node) -> usize {
    match n {
        Node::Task(_) => 1,
        Node::Seq { children } => children.iter().map(size).sum(),
        Node::Branch { then, otherwise, .. } => 1 + size(then) + otherwise.as_deref().map_or(0, size),
        Node::Nest { body, .. } => 1 + size(body),
    }
}

/// Sequence of 2-4 items, at most 6 nodes counting tasks, branches and nests.
fn expected_flow<R: Rng>(rng: &mut R) -> Node {
    let mut tools: Vec<String> = (0..TOOLS).map(|i| format!("t{i}")).collect();
    tools.shuffle(rng);
    let mut next = tools.into_iter();
    let mut nests = 0;
    let mut budget = rng.gen_range(3..=6);
    let mut items = Vec::new();
    while budget > 0 && items.len() < 4 {
        let roll = rng.gen_range(0..10);
        if roll < 5 || budget < 2 {
            items.push(free_task(&next.next().unwrap()));
            budget -= 1;
        } else if roll < 7 {
            items.push(guarded(&next.next().unwrap()));
            budget -= 2;
        } else {
            let inner = rng.gen_range(1..=(budget - 1).min(3));
            let body: Vec<Node> = (0..inner).map(|_| free_task(&next.next().unwrap())).collect();
            nests += 1;
            items.push(Node::nest(&format!("n{nests}"), Node::seq(body)));
            budget -= inner + 1;
        }
    }
    if items.len() < 2 {
        items.push(free_task(&next.next().unwrap()));
    }
    normalize(&Node::seq(items))
}

fn paths(n: &Node, here: &mut Path, out: &mut Vec<Path>) {
    out.push(here.clone());
    let kids: Vec<&Node> = match n {
        Node::Task(_) => vec![],
        Node::Seq { children } => children.iter().collect(),
        Node::Branch { then, otherwise, .. } => std::iter::once(then.as_ref()).chain(otherwise.as_deref()).collect(),
        Node::Nest { body, .. } => vec![body.as_ref()],
    };
    for (i, k) in kids.into_iter().enumerate() {
        here.push(i);
        paths(k, here, out);
        here.pop();
    }
}

fn all_paths(n: &Node) -> Vec<Path> {
    let mut out = Vec::new();
    paths(n, &mut Vec::new(), &mut out);
    out
}

/// Sites for one fault class on a normalized tree.
fn sites(root: &Node, fault: Fault) -> Vec<Path> {
    let mut out = Vec::new();
    for p in all_paths(root) {
        let Some(Node::Seq { children }) = root.at(&p) else { continue };
        for (i, c) in children.iter().enumerate() {
            let mut at = p.clone();
            at.push(i);
            let hit = match fault {
                Fault::DropTask => matches!(c, Node::Task(_)) && children.len() >= 2,
                Fault::DropBranch => matches!(c, Node::Branch { .. }) && children.len() >= 2,
                Fault::UnwrapNest => matches!(c, Node::Nest { .. }),
                Fault::SwapAdjacent => i + 1 < children.len() && children[i] != children[i + 1],
            };
            if hit {
                out.push(at);
            }
        }
    }
    out
}

fn inject(root: &Node, fault: Fault, at: &Path) -> Node {
    let mut r = root.clone();
    let (parent, i) = (&at[..at.len() - 1], at[at.len() - 1]);
    let Some(Node::Seq { children }) = r.at_mut(parent) else { unreachable!("sites are sequence children") };
    match fault {
        Fault::DropTask | Fault::DropBranch => {
            children.remove(i);
        }
        Fault::UnwrapNest => {
            let Node::Nest { body, .. } = children[i].clone() else { unreachable!() };
            children[i] = *body;
        }
        Fault::SwapAdjacent => children.swap(i, i + 1),
    }
    normalize(&r)
}

/// Every insert, delete, adjacent swap and wrap that one edit can make,
/// drawing inserted subtrees and nest ids from `expected`.
fn single_edits(faulty: &Node, expected: &Node) -> Vec<Edit> {
    let exp_paths = all_paths(expected);
    let subtrees: BTreeSet<String> =
        exp_paths.iter().filter_map(|p| expected.at(p)).map(|n| serde_json::to_string(n).unwrap()).collect();
    let subtrees: Vec<Node> = subtrees.iter().map(|s| serde_json::from_str(s).unwrap()).collect();
    let nest_ids: BTreeSet<String> = exp_paths
        .iter()
        .filter_map(|p| match expected.at(p) {
            Some(Node::Nest { sub_goal, .. }) => Some(sub_goal.clone()),
            _ => None,
        })
        .collect();
    let mut edits = Vec::new();
    for p in all_paths(faulty) {
        let node = faulty.at(&p).unwrap();
        if !p.is_empty() {
            edits.push(Edit::DeleteNode { path: p.clone() });
        }
        let slots = match node {
            Node::Seq { children } => children.len() + 1,
            _ => 2,
        };
        for i in 0..slots {
            let mut at = p.clone();
            at.push(i);
            for s in &subtrees {
                edits.push(Edit::InsertNode { path: at.clone(), node: s.clone() });
            }
        }
        for id in &nest_ids {
            edits.push(Edit::WrapNest { path: p.clone(), len: 1, sub_goal: id.clone() });
        }
        if let Node::Seq { children } = node {
            let n = children.len();
            for i in 0..n {
                if i + 1 < n {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.swap(i, i + 1);
                    edits.push(Edit::ReorderChildren { path: p.clone(), permutation: perm });
                }
                for len in 2..=n - i {
                    let mut at = p.clone();
                    at.push(i);
                    for id in &nest_ids {
                        edits.push(Edit::WrapNest { path: at.clone(), len, sub_goal: id.clone() });
                    }
                }
            }
        }
    }
    edits
}

fn one_edit_away(faulty: &Node, expected: &Node) -> bool {
    single_edits(faulty, expected)
        .into_iter()
        .any(|e| apply_script(faulty, &EditScript(vec![e])).is_ok_and(|n| normalize(&n) == *expected))
}

fn network() -> AgentNetwork {
    let data: Vec<(Goal, Workflow)> = (0..TOOLS)
        .map(|i| {
            let tool = format!("t{i}");
            let id = format!("agent-{tool}");
            let out: FieldSet = [format!("{tool}.out")].into();
            let goal = Goal::new(&id, [format!("{tool}.do")], FieldSet::new(), out.clone());
            let task = TaskNode::new(&tool, Vec::<String>::new(), out);
            (goal, Workflow::single(&id, &id, task))
        })
        .collect();
    build_agents(&data, LifeConfig::default()).expect("valid agents")
}

pub fn completeness(_: &mut Ctx) -> Outcome {
    let net = network();
    let cfg = SolveConfig { repair_budget: 3, mode: VerifyMode::Oracle, ..SolveConfig::default() };
    let classes = [Fault::DropTask, Fault::DropBranch, Fault::UnwrapNest, Fault::SwapAdjacent];
    let mut rng = seeded_rng(77);
    let mut per_class = [0usize; 4];
    let mut recovered = 0;
    let mut injected = 0;
    while injected < 1000 {
        let expected = expected_flow(&mut rng);
        ensure(size(&expected) <= 6, || format!("generator made {} nodes", size(&expected)))?;
        let k = rng.gen_range(0..classes.len());
        let options = sites(&expected, classes[k]);
        let Some(at) = options.choose(&mut rng) else { continue };
        let faulty = inject(&expected, classes[k], at);
        if faulty == expected {
            continue;
        }
        ensure(one_edit_away(&faulty, &expected), || format!("{:?} at {at:?} is not a single edit", classes[k]))?;
        injected += 1;
        per_class[k] += 1;
        let target_wf = wf(expected.clone());
        let target =
            Target { goal: Goal::new("g", ["g.0"], FieldSet::new(), FieldSet::new()), expected: Some(target_wf.clone()) };
        let mut r = derived_rng(77, "repair", injected as u64);
        match repair_loop(&net, &target, wf(faulty.clone()), &cfg, &mut r) {
            Ok(trace) if trace.candidate.structurally_eq(&target_wf) => recovered += 1,
            Ok(_) => return Err(format!("{:?} at {at:?}: passed without structural equality", classes[k])),
            Err(e) => {
                return Err(format!(
                    "{:?} at {at:?} not repaired ({e}); expected {}, faulty {}",
                    classes[k],
                    serde_json::to_string(&expected).unwrap(),
                    serde_json::to_string(&faulty).unwrap()
                ))
            }
        }
    }
    ensure(recovered == injected, || format!("{recovered}/{injected}"))?;
    Ok(format!(
        "{recovered}/{injected} recovered; drop-task {}, drop-branch {}, unwrap-nest {}, swap {}",
        per_class[0], per_class[1], per_class[2], per_class[3]
    ))
}
