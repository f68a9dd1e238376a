//! Structural diff between two workflow trees.
//!
//! Both trees are normalized first. Sequences are aligned by common
//! prefix/suffix, then by permutation, then by a longest-common-subsequence
//! alignment of their children. Single insertions, deletions, adjacent
//! transpositions and single nest unwraps always produce a one-edit script.
//!
//! Edit paths refer to the tree as it stands when that edit is applied, so
//! a script must be applied in order. Trees are normalized only after the
//! whole script has run.

use serde::{Deserialize, Serialize};

use super::{normalize, Node, Path, Workflow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    /// Insert `node` so that it ends up at `path`. Inserting under a
    /// non-sequence promotes it to a one-element sequence first.
    InsertNode {
        path: Path,
        node: Node,
    },
    DeleteNode {
        path: Path,
    },
    /// `new[i] = old[permutation[i]]` for the sequence at `path`.
    ReorderChildren {
        path: Path,
        permutation: Vec<usize>,
    },
    ReplaceSubtree {
        path: Path,
        node: Node,
    },
    /// Wrap `len` consecutive siblings starting at `path` into one nest
    /// (`len` is 1 when the node at `path` is not inside a sequence).
    WrapNest {
        path: Path,
        len: usize,
        sub_goal: String,
    },
}

impl Edit {
    pub fn path(&self) -> &Path {
        match self {
            Edit::InsertNode { path, .. }
            | Edit::DeleteNode { path }
            | Edit::ReorderChildren { path, .. }
            | Edit::ReplaceSubtree { path, .. }
            | Edit::WrapNest { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditScript(pub Vec<Edit>);

impl EditScript {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.0.iter()
    }
}

/// Edit script turning `source` into `target` (modulo normalization).
pub fn diff(source: &Workflow, target: &Workflow) -> EditScript {
    let s = normalize(&source.root);
    let t = normalize(&target.root);
    let mut out = Vec::new();
    diff_node(&s, &t, &mut Vec::new(), &mut out);
    EditScript(out)
}

fn diff_node(s: &Node, t: &Node, path: &mut Path, out: &mut Vec<Edit>) {
    if s == t {
        return;
    }
    match (s, t) {
        (Node::Nest { sub_goal: a, body: sb }, Node::Nest { sub_goal: b, body: tb }) if a == b => {
            path.push(0);
            diff_node(sb, tb, path, out);
            path.pop();
        }
        (Node::Branch { cond: c1, then: st, otherwise: so }, Node::Branch { cond: c2, then: tt, otherwise: to })
            if c1 == c2 && so.is_some() == to.is_some() =>
        {
            path.push(0);
            diff_node(st, tt, path, out);
            path.pop();
            if let (Some(so), Some(to)) = (so, to) {
                path.push(1);
                diff_node(so, to, path, out);
                path.pop();
            }
        }
        (_, Node::Nest { sub_goal, body }) if !matches!(s, Node::Nest { .. }) => {
            out.push(Edit::WrapNest { path: path.clone(), len: 1, sub_goal: sub_goal.clone() });
            path.push(0);
            diff_node(s, body, path, out);
            path.pop();
        }
        (Node::Seq { children: sc }, Node::Seq { children: tc }) => diff_items(sc, tc, path, out),
        (Node::Seq { children: sc }, _) => diff_items(sc, std::slice::from_ref(t), path, out),
        (_, Node::Seq { children: tc }) if tc.contains(s) => {
            // The lone source node survives; everything else is inserted
            // around it, promoting it to a sequence on the first insert.
            diff_items(std::slice::from_ref(s), tc, path, out)
        }
        _ => out.push(Edit::ReplaceSubtree { path: path.clone(), node: t.clone() }),
    }
}

enum Step {
    Keep,
    Del(usize),
    Ins(usize),
}

fn diff_items(s: &[Node], t: &[Node], path: &mut Path, out: &mut Vec<Edit>) {
    let mut p = 0;
    while p < s.len() && p < t.len() && s[p] == t[p] {
        p += 1;
    }
    let mut q = 0;
    while q < s.len() - p && q < t.len() - p && s[s.len() - 1 - q] == t[t.len() - 1 - q] {
        q += 1;
    }
    let sm = &s[p..s.len() - q];
    let tm = &t[p..t.len() - q];
    if sm.is_empty() && tm.is_empty() {
        return;
    }

    if sm.len() >= 2 && is_permutation(sm, tm) {
        let mut used = vec![false; sm.len()];
        let mut permutation: Vec<usize> = (0..s.len()).collect();
        for (i, node) in tm.iter().enumerate() {
            let j = (0..sm.len()).find(|&j| !used[j] && &sm[j] == node).expect("permutation");
            used[j] = true;
            permutation[p + i] = p + j;
        }
        out.push(Edit::ReorderChildren { path: path.clone(), permutation });
        return;
    }

    if let [Node::Nest { sub_goal, body }] = tm {
        if sm.len() >= 2 && body.as_items() == sm {
            let mut at = path.clone();
            at.push(p);
            out.push(Edit::WrapNest { path: at, len: sm.len(), sub_goal: sub_goal.clone() });
            return;
        }
    }

    let mut cur = p;
    let steps = align(sm, tm);
    let mut i = 0;
    while i < steps.len() {
        if let Step::Keep = steps[i] {
            cur += 1;
            i += 1;
            continue;
        }
        let mut dels = Vec::new();
        let mut inss = Vec::new();
        while i < steps.len() {
            match steps[i] {
                Step::Keep => break,
                Step::Del(a) => dels.push(a),
                Step::Ins(b) => inss.push(b),
            }
            i += 1;
        }
        let paired = dels.len().min(inss.len());
        for k in 0..paired {
            path.push(cur);
            diff_node(&sm[dels[k]], &tm[inss[k]], path, out);
            path.pop();
            cur += 1;
        }
        for _ in paired..dels.len() {
            let mut at = path.clone();
            at.push(cur);
            out.push(Edit::DeleteNode { path: at });
        }
        for &b in &inss[paired..] {
            let mut at = path.clone();
            at.push(cur);
            out.push(Edit::InsertNode { path: at, node: tm[b].clone() });
            cur += 1;
        }
    }
}

fn is_permutation(a: &[Node], b: &[Node]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| match (0..b.len()).find(|&j| !used[j] && &b[j] == x) {
        Some(j) => {
            used[j] = true;
            true
        }
        None => false,
    })
}

/// LCS alignment; deletions are emitted before insertions within a gap.
fn align(s: &[Node], t: &[Node]) -> Vec<Step> {
    let (n, m) = (s.len(), t.len());
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if s[i] == t[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && s[i] == t[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            steps.push(Step::Keep);
            i += 1;
            j += 1;
        } else if i < n && (j == m || lcs[i + 1][j] >= lcs[i][j + 1]) {
            steps.push(Step::Del(i));
            i += 1;
        } else {
            steps.push(Step::Ins(j));
            j += 1;
        }
    }
    // Regroup each gap so that deletions precede insertions.
    let mut grouped = Vec::with_capacity(steps.len());
    let mut gap_del = Vec::new();
    let mut gap_ins = Vec::new();
    for st in steps {
        match st {
            Step::Keep => {
                grouped.append(&mut gap_del);
                grouped.append(&mut gap_ins);
                grouped.push(Step::Keep);
            }
            Step::Del(_) => gap_del.push(st),
            Step::Ins(_) => gap_ins.push(st),
        }
    }
    grouped.append(&mut gap_del);
    grouped.append(&mut gap_ins);
    grouped
}

/// Applies `script` in order and normalizes the result.
pub fn apply_script(root: &Node, script: &EditScript) -> Result<Node> {
    let mut tree = normalize(root);
    for edit in script.iter() {
        apply_edit(&mut tree, edit)?;
    }
    Ok(normalize(&tree))
}

fn split_parent(path: &[usize]) -> Result<(&[usize], usize)> {
    match path.split_last() {
        Some((&last, parent)) => Ok((parent, last)),
        None => Err(Error::BadPath(path.to_vec())),
    }
}

fn apply_edit(tree: &mut Node, edit: &Edit) -> Result<()> {
    let bad = || Error::BadPath(edit.path().clone());
    match edit {
        Edit::InsertNode { path, node } => {
            let (parent, idx) = split_parent(path)?;
            let slot = tree.at_mut(parent).ok_or_else(bad)?;
            if !matches!(slot, Node::Seq { .. }) {
                let old = std::mem::replace(slot, Node::empty());
                *slot = Node::seq(vec![old]);
            }
            let Node::Seq { children } = slot else { unreachable!() };
            if idx > children.len() {
                return Err(bad());
            }
            children.insert(idx, node.clone());
        }
        Edit::DeleteNode { path } => {
            let (parent, idx) = split_parent(path)?;
            match tree.at_mut(parent) {
                Some(Node::Seq { children }) if idx < children.len() => {
                    children.remove(idx);
                }
                _ => return Err(bad()),
            }
        }
        Edit::ReorderChildren { path, permutation } => match tree.at_mut(path) {
            Some(Node::Seq { children }) if is_index_permutation(permutation, children.len()) => {
                let old = std::mem::take(children);
                *children = permutation.iter().map(|&j| old[j].clone()).collect();
            }
            _ => return Err(bad()),
        },
        Edit::ReplaceSubtree { path, node } => {
            *tree.at_mut(path).ok_or_else(bad)? = node.clone();
        }
        Edit::WrapNest { path, len, sub_goal } => {
            if let Some((&idx, parent)) = path.split_last() {
                if let Some(Node::Seq { children }) = tree.at_mut(parent) {
                    if *len == 0 || idx + len > children.len() {
                        return Err(bad());
                    }
                    let run: Vec<Node> = children.drain(idx..idx + len).collect();
                    let body = if run.len() == 1 { run.into_iter().next().unwrap() } else { Node::seq(run) };
                    children.insert(idx, Node::nest(sub_goal, body));
                    return Ok(());
                }
            }
            if *len != 1 {
                return Err(bad());
            }
            let slot = tree.at_mut(path).ok_or_else(bad)?;
            let old = std::mem::replace(slot, Node::empty());
            *slot = Node::nest(sub_goal, old);
        }
    }
    Ok(())
}

fn is_index_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    p.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}
