#![allow(dead_code)]

use agentflow::agents::{build_agents, AgentNetwork, LifeConfig};
use agentflow::goal::Goal;
use agentflow::workflow::{normalize, FieldSet, Node, Predicate, TaskNode, Workflow};
use proptest::prelude::*;
use rand::Rng;

pub fn fs(xs: &[&str]) -> FieldSet {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Input-free task, so any arrangement of these validates.
pub fn free_task(tool: &str) -> Node {
    Node::Task(TaskNode::new(tool, Vec::<String>::new(), [format!("{tool}.out")]))
}

pub fn wf(root: Node) -> Workflow {
    Workflow::new("w", "g", FieldSet::new(), FieldSet::new(), root)
}

/// Random tree over input-free tasks drawn from `rng`.
pub fn random_tree<R: Rng>(rng: &mut R, budget: usize, nest_ids: &mut usize) -> Node {
    if budget <= 1 || rng.gen_bool(0.3) {
        return free_task(&format!("t{}", rng.gen_range(0..12)));
    }
    match rng.gen_range(0..10) {
        0..=5 => {
            let n = rng.gen_range(2..=4.min(budget));
            Node::seq((0..n).map(|_| random_tree(rng, budget / n, nest_ids)).collect())
        }
        6..=7 => {
            *nest_ids += 1;
            let id = format!("s{nest_ids}");
            Node::nest(&id, random_tree(rng, budget - 1, nest_ids))
        }
        _ => {
            let then = random_tree(rng, budget / 2, nest_ids);
            let otherwise = if rng.gen_bool(0.5) { Some(random_tree(rng, budget / 2, nest_ids)) } else { None };
            Node::branch(Predicate::exists(&format!("k{}", rng.gen_range(0..3))), then, otherwise)
        }
    }
}

pub fn random_workflow<R: Rng>(rng: &mut R, budget: usize) -> Workflow {
    let mut ids = 0;
    wf(normalize(&random_tree(rng, budget, &mut ids)))
}

/// Proptest strategy over the same tree family.
pub fn arb_node() -> impl Strategy<Value = Node> {
    let leaf = (0..12u8).prop_map(|i| free_task(&format!("t{i}")));
    leaf.prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            3 => prop::collection::vec(inner.clone(), 2..4).prop_map(Node::seq),
            1 => (0..4u8, inner.clone()).prop_map(|(i, b)| Node::nest(&format!("s{i}"), b)),
            1 => (0..3u8, inner.clone(), prop::option::of(inner)).prop_map(|(k, t, e)| {
                Node::branch(Predicate::exists(&format!("k{k}")), t, e)
            }),
        ]
    })
}

pub fn arb_workflow() -> impl Strategy<Value = Workflow> {
    arb_node().prop_map(|n| wf(normalize(&n)))
}

/// Dataflow chain `a: x->y`, `b: y->z`, `c: z->w` as atomic pairs.
pub fn chain_pairs() -> Vec<(Goal, Workflow)> {
    [("a", "x", "y"), ("b", "y", "z"), ("c", "z", "w")]
        .iter()
        .map(|(id, i, o)| {
            let goal = Goal::new(id, [format!("{id}.0"), format!("{id}.1"), format!("{id}.2")], fs(&[i]), fs(&[o]));
            let t = TaskNode::new(&format!("tool_{id}"), [i.to_string()], [o.to_string()]);
            (goal, Workflow::single(id, id, t))
        })
        .collect()
}

pub fn chain_network() -> AgentNetwork {
    build_agents(&chain_pairs(), LifeConfig::default()).unwrap()
}
