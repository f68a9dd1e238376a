//! Reusable-subflow detection over flattened workflows.

use serde::{Deserialize, Serialize};

use super::{flatten, normalize, Node, Path, Workflow};

/// A pattern occurrence: the sequence at `path` (in the flattened tree)
/// holds the pattern's tools as a contiguous run starting at child `start`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubflowMatch {
    pub pattern_index: usize,
    pub path: Path,
    pub start: usize,
}

fn tool_sequence(w: &Workflow) -> Option<Vec<String>> {
    match normalize(&flatten(w).root) {
        Node::Seq { children } => children
            .iter()
            .map(|c| match c {
                Node::Task(t) => Some(t.tool_id.clone()),
                _ => None,
            })
            .collect(),
        Node::Task(t) => Some(vec![t.tool_id.clone()]),
        _ => None,
    }
}

/// Every position where a library pattern occurs as a run of tasks inside
/// some sequence of `flatten(w)`, ordered by pattern, path, then start.
pub fn find_subflows(w: &Workflow, library: &[Workflow]) -> Vec<SubflowMatch> {
    let flat = flatten(w);
    let mut seqs: Vec<(Path, Vec<Option<&str>>)> = Vec::new();
    collect_seqs(&flat.root, &mut Vec::new(), &mut seqs);
    let mut out = Vec::new();
    for (pattern_index, pattern) in library.iter().enumerate() {
        let Some(tools) = tool_sequence(pattern) else { continue };
        if tools.is_empty() {
            continue;
        }
        for (path, run) in &seqs {
            if run.len() < tools.len() {
                continue;
            }
            for start in 0..=run.len() - tools.len() {
                if run[start..start + tools.len()].iter().zip(&tools).all(|(a, b)| *a == Some(b.as_str())) {
                    out.push(SubflowMatch { pattern_index, path: path.clone(), start });
                }
            }
        }
    }
    out.sort();
    out
}

fn collect_seqs<'a>(node: &'a Node, path: &mut Path, out: &mut Vec<(Path, Vec<Option<&'a str>>)>) {
    match node {
        Node::Task(_) => {}
        Node::Seq { children } => {
            let run = children
                .iter()
                .map(|c| match c {
                    Node::Task(t) => Some(t.tool_id.as_str()),
                    _ => None,
                })
                .collect();
            out.push((path.clone(), run));
            for (i, c) in children.iter().enumerate() {
                path.push(i);
                collect_seqs(c, path, out);
                path.pop();
            }
        }
        Node::Branch { then, otherwise, .. } => {
            path.push(0);
            collect_seqs(then, path, out);
            path.pop();
            if let Some(o) = otherwise {
                path.push(1);
                collect_seqs(o, path, out);
                path.pop();
            }
        }
        Node::Nest { body, .. } => {
            path.push(0);
            collect_seqs(body, path, out);
            path.pop();
        }
    }
}
