use std::collections::{BTreeMap, BTreeSet};

use agentflow::agents::{build_agents, LifeConfig};
use agentflow::corpus::{generate, pairs, pattern_library, planted_recall, CorpusProfile};
use agentflow::eval::reuse_efficiency;
use agentflow::orchestrator::{solve, CandidateRecord, EpisodeResult, SolveConfig, Verdict, VerifyMode};
use agentflow::workflow::{metrics, FieldSet, Node, TaskNode, Workflow};

use crate::{ensure, Ctx, Outcome};

pub fn exact_recall(_: &mut Ctx) -> Outcome {
    let records = generate(&CorpusProfile::reference(500), 1).map_err(|e| e.to_string())?;
    let mut net = build_agents(&pairs(&records), LifeConfig::default()).map_err(|e| e.to_string())?;
    let cfg = SolveConfig::default();
    let mut hits = 0;
    for r in &records {
        let e = solve(&mut net, &r.goal, Some(&r.workflow), &cfg).map_err(|e| format!("{}: {e}", r.goal.id))?;
        let same = e.candidates.first().is_some_and(|c| c.workflow.structurally_eq(&r.workflow) && c.repairs.is_empty());
        if e.first_correct_rank() == Some(1) && same {
            hits += 1;
        }
    }
    ensure(hits == records.len(), || format!("pass@1 {hits}/{}", records.len()))?;
    Ok(format!("pass@1 {hits}/{}", records.len()))
}

fn l1(target: &BTreeMap<usize, f64>, seen: &BTreeMap<usize, usize>, n: usize) -> f64 {
    let keys: BTreeSet<usize> = target.keys().chain(seen.keys()).copied().collect();
    keys.iter().map(|k| (target.get(k).copied().unwrap_or(0.0) - seen.get(k).copied().unwrap_or(0) as f64 / n as f64).abs()).sum()
}

pub fn corpus_fidelity(_: &mut Ctx) -> Outcome {
    let profile = CorpusProfile::reference(10_000);
    let records = generate(&profile, 42).map_err(|e| e.to_string())?;
    let (mut nodes, mut depths) = (BTreeMap::new(), BTreeMap::new());
    for r in &records {
        let m = metrics(&r.workflow).map_err(|e| e.to_string())?;
        *nodes.entry(m.length).or_insert(0) += 1;
        *depths.entry(m.depth).or_insert(0) += 1;
    }
    let dn = l1(&profile.node_histogram, &nodes, records.len());
    let dd = l1(&profile.depth_histogram, &depths, records.len());
    ensure(records.len() == 10_000 && dn <= 0.05 && dd <= 0.05, || format!("L1 node {dn:.4}, depth {dd:.4}"))?;
    Ok(format!("L1 node {dn:.4}, depth {dd:.4}"))
}

fn tool(name: &str) -> Node {
    Node::Task(TaskNode::new(name, Vec::<String>::new(), [format!("{name}.o")]))
}

fn episode(i: usize, root: Node, passed: bool) -> EpisodeResult {
    let workflow = Workflow::new(&format!("w{i}"), &format!("g{i}"), FieldSet::new(), FieldSet::new(), root);
    let verdict = Verdict {
        passed,
        score: if passed { 1.0 } else { 0.0 },
        mode: VerifyMode::Oracle,
        edit_script: None,
        missing_outputs: FieldSet::new(),
        unbound_inputs: Vec::new(),
        dead_node_ratio: 0.0,
    };
    let c = CandidateRecord {
        rank: 1,
        workflow,
        verdict,
        accepted: passed,
        correct: passed,
        agents: Vec::new(),
        schema_incompatible_agents: Vec::new(),
        repairs: Vec::new(),
        repair_status: None,
        note: None,
    };
    EpisodeResult {
        goal_id: format!("g{i}"),
        seed: 0,
        bucket: None,
        candidates: vec![c],
        outcomes: Vec::new(),
        steps: 0,
        failure: None,
    }
}

/// Contiguous run of tool ids inside one sequence, found the slow way.
fn naive_contains(node: &Node, pattern: &[&str]) -> bool {
    match node {
        Node::Task(_) => pattern.len() == 1 && node.tasks()[0].tool_id == pattern[0],
        Node::Seq { children } => {
            let ids: Vec<Option<&str>> =
                children.iter().map(|c| if let Node::Task(t) = c { Some(t.tool_id.as_str()) } else { None }).collect();
            let here = ids.windows(pattern.len()).any(|w| w.iter().zip(pattern).all(|(a, b)| *a == Some(*b)));
            here || children.iter().any(|c| naive_contains(c, pattern))
        }
        Node::Branch { then, otherwise, .. } => {
            naive_contains(then, pattern) || otherwise.as_deref().is_some_and(|o| naive_contains(o, pattern))
        }
        Node::Nest { body, .. } => naive_contains(body, pattern),
    }
}

/// 20 hand-built episodes: 16 pass, of which 11 carry the pattern
/// (directly, inside a nest, or inside a branch arm). Expected 68.75%.
fn fixture() -> (Vec<EpisodeResult>, Workflow, [&'static str; 3]) {
    let pat = ["p1", "p2", "p3"];
    let pattern =
        Workflow::new("lib0", "lib0", FieldSet::new(), FieldSet::new(), Node::seq(pat.iter().map(|t| tool(t)).collect()));
    let with = |pre: &str| Node::seq(vec![tool(pre), tool("p1"), tool("p2"), tool("p3")]);
    let nested = |pre: &str| Node::seq(vec![tool(pre), Node::nest("s", Node::seq(pat.iter().map(|t| tool(t)).collect()))]);
    let broken = |pre: &str| Node::seq(vec![tool("p1"), tool(pre), tool("p2"), tool("p3")]);
    let partial = |pre: &str| Node::seq(vec![tool(pre), tool("p1"), tool("p2")]);
    let mut eps = Vec::new();
    for i in 0..7 {
        eps.push(episode(eps.len(), with(&format!("a{i}")), true));
    }
    for i in 0..3 {
        eps.push(episode(eps.len(), nested(&format!("b{i}")), true));
    }
    let arm = Node::seq(vec![tool("c0"), Node::branch(agentflow::workflow::Predicate::exists("c0.o"), with("c1"), None)]);
    eps.push(episode(eps.len(), arm, true));
    for i in 0..3 {
        eps.push(episode(eps.len(), broken(&format!("d{i}")), true));
    }
    for i in 0..2 {
        eps.push(episode(eps.len(), partial(&format!("e{i}")), true));
    }
    for i in 0..4 {
        eps.push(episode(eps.len(), with(&format!("f{i}")), false));
    }
    (eps, pattern, pat)
}

pub fn reuse(_: &mut Ctx) -> Outcome {
    let mut recalls = Vec::new();
    for length in 2..=5 {
        let profile = CorpusProfile::reference(2000).with_planted(length, 0.03);
        let records = generate(&profile, 100 + length as u64).map_err(|e| e.to_string())?;
        let lib = pattern_library(&profile, 100 + length as u64).map_err(|e| e.to_string())?;
        let planted = records.iter().filter(|r| r.oracle.planted.is_some()).count();
        let recall = planted_recall(&records, &lib);
        ensure(planted > 0 && recall == 1.0, || format!("length {length}: recall {recall} over {planted} planted"))?;
        recalls.push(format!("{length}:{planted}"));
    }
    let (eps, lib, pat) = fixture();
    let passing: Vec<&Node> = eps.iter().filter(|e| e.candidates[0].correct).map(|e| &e.candidates[0].workflow.root).collect();
    let naive = 100.0 * passing.iter().filter(|n| naive_contains(n, &pat)).count() as f64 / passing.len() as f64;
    let got = reuse_efficiency(&eps, &[lib]);
    ensure(eps.len() == 20 && got == 68.75 && naive == 68.75, || format!("reuse {got}, naive {naive}, hand 68.75"))?;
    Ok(format!("recall 100% at lengths {}; reuse {got}% = hand count", recalls.join(" ")))
}
