//! Composition operators: sequential splice, conditional attachment and
//! sub-workflow nesting. Insertion happens at the end of the root
//! sequence; a non-sequence root is promoted to a one-element sequence.

use super::{normalize, Node, Predicate, Workflow};
use crate::error::{Error, Result};

/// Runs `a` then `b`.
pub fn concat(a: &Workflow, b: &Workflow) -> Workflow {
    let a_root = normalize(&a.root);
    let b_root = normalize(&b.root);
    if b_root.is_empty_seq() {
        return Workflow { root: a_root, ..a.clone() };
    }
    if a_root.is_empty_seq() {
        return Workflow { root: b_root, ..b.clone() };
    }
    let mut declared_outputs = b.declared_outputs.clone();
    declared_outputs.extend(a.declared_outputs.iter().cloned());
    Workflow {
        id: format!("{}*{}", a.id, b.id),
        goal_id: a.goal_id.clone(),
        declared_inputs: a.declared_inputs.clone(),
        declared_outputs,
        root: normalize(&Node::seq(vec![a_root, b_root])),
    }
}

/// Appends `cond -> alt` after the host's main path, leaving that path as is.
pub fn branch(host: &Workflow, cond: Predicate, alt: &Workflow) -> Workflow {
    let mut items = normalize(&host.root).as_items();
    if items.len() == 1 && items[0].is_empty_seq() {
        items.clear();
    }
    items.push(Node::branch(cond, normalize(&alt.root), None));
    let mut declared_outputs = host.declared_outputs.clone();
    declared_outputs.extend(alt.declared_outputs.iter().cloned());
    Workflow { root: normalize(&Node::seq(items)), declared_outputs, ..host.clone() }
}

/// Replaces the node at `slot_path` with `Nest(sub_goal, body)`.
pub fn nest(host: &Workflow, slot_path: &[usize], sub_goal: &str, body: &Workflow) -> Result<Workflow> {
    let mut root = host.root.clone();
    let slot = root.at_mut(slot_path).ok_or_else(|| Error::BadPath(slot_path.to_vec()))?;
    *slot = Node::nest(sub_goal, normalize(&body.root));
    let mut declared_outputs = host.declared_outputs.clone();
    declared_outputs.extend(body.declared_outputs.iter().cloned());
    Ok(Workflow { root: normalize(&root), declared_outputs, ..host.clone() })
}
