//! Synthetic corpus: goal/workflow records whose size and nesting follow
//! target histograms, plus train/test splitting and novel composite goals.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::Goal;
use crate::rng::{derived_rng, seeded_rng};
use crate::workflow::{concat, find_subflows, node_metrics, normalize, FieldSet, Node, Path, Predicate, TaskNode, Workflow};

/// Node-count counts read off the reference distribution (the 20 empty
/// workflows are left out).
pub const NODE_COUNTS: [(usize, f64); 15] = [
    (1, 14508.0),
    (2, 2252.0),
    (3, 4496.0),
    (4, 1166.0),
    (5, 476.0),
    (6, 226.0),
    (7, 103.0),
    (8, 143.0),
    (9, 51.0),
    (10, 5.0),
    (11, 28.0),
    (12, 2.0),
    (13, 33.0),
    (14, 1.0),
    (16, 11.0),
];

pub const DEPTH_COUNTS: [(usize, f64); 7] = [(0, 16434.0), (1, 6425.0), (2, 451.0), (3, 121.0), (4, 56.0), (5, 18.0), (6, 16.0)];

const FIELD_COUNT: usize = 24;
const DOMAINS: usize = 8;
const VOCAB_SEED: u64 = 0x70_6f_6f_6c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    /// Pattern length, 2 to 5 tools.
    pub length: usize,
    /// Share of all records that carry the pattern.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub total: usize,
    pub node_histogram: BTreeMap<usize, f64>,
    pub depth_histogram: BTreeMap<usize, f64>,
    pub tool_vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_subflow: Option<PlantedSpec>,
    /// Chance that a task (other than the first) is guarded by a branch.
    #[serde(default = "default_branch_rate")]
    pub branch_rate: f64,
}

fn default_branch_rate() -> f64 {
    0.1
}

fn normalized(counts: &[(usize, f64)]) -> BTreeMap<usize, f64> {
    let total: f64 = counts.iter().map(|(_, c)| c).sum();
    counts.iter().map(|&(k, c)| (k, c / total)).collect()
}

fn cdf(h: &BTreeMap<usize, f64>, upto: usize) -> f64 {
    h.range(..=upto).map(|(_, p)| p).sum()
}

/// Smallest key whose cumulative mass exceeds `u`.
fn inverse_cdf(h: &BTreeMap<usize, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (&k, &p) in h {
        acc += p;
        if u < acc {
            return k;
        }
    }
    *h.keys().next_back().expect("histogram is non-empty")
}

impl CorpusProfile {
    /// The reference distribution with 64 tools.
    pub fn reference(total: usize) -> Self {
        CorpusProfile {
            total,
            node_histogram: normalized(&NODE_COUNTS),
            depth_histogram: normalized(&DEPTH_COUNTS),
            tool_vocab_size: 64,
            planted_subflow: None,
            branch_rate: default_branch_rate(),
        }
    }

    /// Every record a single task.
    pub fn atomic(total: usize) -> Self {
        CorpusProfile { node_histogram: [(1, 1.0)].into(), depth_histogram: [(0, 1.0)].into(), ..CorpusProfile::reference(total) }
    }

    pub fn with_planted(mut self, length: usize, rate: f64) -> Self {
        self.planted_subflow = Some(PlantedSpec { length, rate });
        self
    }

    fn infeasible(msg: String) -> Error {
        Error::InfeasibleProfile(msg)
    }

    pub fn check(&self) -> Result<()> {
        for (name, h) in [("node", &self.node_histogram), ("depth", &self.depth_histogram)] {
            if h.is_empty() {
                return Err(Error::Config(format!("{name} histogram is empty")));
            }
            if h.values().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Config(format!("{name} histogram has a negative or non-finite share")));
            }
            let sum: f64 = h.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} histogram sums to {sum}, not 1")));
            }
        }
        if self.node_histogram.contains_key(&0) {
            return Err(Error::Config("node counts start at 1".into()));
        }
        if self.tool_vocab_size < 16 {
            return Err(Error::Config("tool vocabulary needs at least 16 tools".into()));
        }
        if !(0.0..=1.0).contains(&self.branch_rate) {
            return Err(Error::Config("branch_rate must lie in [0, 1]".into()));
        }
        // Node count and depth are drawn from one shared uniform, so depth d
        // is only reachable when every node count paired with it can hold d
        // strictly shrinking nest levels, i.e. has at least d + 1 tasks.
        for (&d, &p) in &self.depth_histogram {
            if d == 0 || p == 0.0 {
                continue;
            }
            let lowest_u = cdf(&self.depth_histogram, d - 1);
            if cdf(&self.node_histogram, d) > lowest_u + 1e-12 {
                return Err(Self::infeasible(format!("depth {d} needs workflows of at least {} nodes", d + 1)));
            }
        }
        if let Some(p) = &self.planted_subflow {
            if !(2..=5).contains(&p.length) {
                return Err(Error::Config("planted pattern length must be 2..=5".into()));
            }
            let eligible = 1.0 - cdf(&self.node_histogram, p.length - 1);
            if !(0.0..=1.0).contains(&p.rate) || p.rate > eligible + 1e-12 {
                return Err(Self::infeasible(format!(
                    "planting rate {} exceeds the share {eligible:.3} of records with at least {} nodes",
                    p.rate, p.length
                )));
            }
        }
        Ok(())
    }

    /// (node count, depth) for one uniform draw.
    pub fn shape_for(&self, u: f64) -> (usize, usize) {
        let n = inverse_cdf(&self.node_histogram, u);
        let d = inverse_cdf(&self.depth_histogram, u);
        (n, d.min(n - 1))
    }

    fn eligible_share(&self, length: usize) -> f64 {
        1.0 - cdf(&self.node_histogram, length - 1)
    }
}

/// Tool catalogue shared by every generated record.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolVocab {
    pub tools: Vec<TaskNode>,
}

pub fn field_name(i: usize) -> String {
    format!("f{i:02}")
}

impl ToolVocab {
    /// Fixed catalogue of `size` tools over 24 fields. The first eighth of
    /// the tools take no inputs.
    pub fn new(size: usize) -> Self {
        let mut rng = seeded_rng(VOCAB_SEED);
        let sources = (size / 8).max(2);
        let tools = (0..size)
            .map(|i| {
                let n_in = if i < sources {
                    0
                } else if rng.gen_bool(0.6) {
                    1
                } else {
                    2
                };
                let n_out = if rng.gen_bool(0.6) { 1 } else { 2 };
                let mut fields: Vec<usize> = (0..FIELD_COUNT).collect();
                fields.shuffle(&mut rng);
                let ins: Vec<String> = fields[..n_in].iter().map(|&f| field_name(f)).collect();
                let outs: Vec<String> = fields[n_in..n_in + n_out].iter().map(|&f| field_name(f)).collect();
                TaskNode::new(&format!("tool{i:02}"), ins, outs)
            })
            .collect();
        ToolVocab { tools }
    }

    /// Tools runnable with `scope` bound.
    pub fn runnable<'a>(&'a self, scope: &'a FieldSet) -> impl Iterator<Item = &'a TaskNode> + 'a {
        self.tools.iter().filter(move |t| t.input_schema.is_subset(scope))
    }

    /// A self-contained chain of `length` tools: the first needs nothing and
    /// every later tool reads only fields produced earlier in the chain.
    /// Picked deterministically from `seed`.
    pub fn chain(&self, length: usize, seed: u64) -> Option<Vec<TaskNode>> {
        let mut rng = derived_rng(seed, "pattern", length as u64);
        let mut starts: Vec<&TaskNode> = self.tools.iter().filter(|t| t.input_schema.is_empty()).collect();
        starts.shuffle(&mut rng);
        for start in starts {
            let mut chain = vec![start.clone()];
            let mut scope: FieldSet = start.output_schema.clone();
            while chain.len() < length {
                let mut next: Vec<&TaskNode> = self
                    .tools
                    .iter()
                    .filter(|t| !t.input_schema.is_empty() && t.input_schema.is_subset(&scope) && !chain.contains(t))
                    .collect();
                next.sort_by(|a, b| a.tool_id.cmp(&b.tool_id));
                let Some(t) = next.choose(&mut rng) else { break };
                scope.extend(t.output_schema.iter().cloned());
                chain.push((*t).clone());
            }
            if chain.len() == length {
                return Some(chain);
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Linear,
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// A lone task.
    Single,
    Small,
    Medium,
    Large,
}

/// Structure/size bucket. Linear flows are sized by task count (2-3, 4-6,
/// 7+), nested flows by nesting depth (1-2, 3-4, 5+).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bucket {
    pub structure: Structure,
    pub size: SizeClass,
}

impl Bucket {
    pub fn of(root: &Node) -> Bucket {
        let m = node_metrics(root);
        if m.depth == 0 {
            let size = match m.length {
                0 | 1 => SizeClass::Single,
                2..=3 => SizeClass::Small,
                4..=6 => SizeClass::Medium,
                _ => SizeClass::Large,
            };
            Bucket { structure: Structure::Linear, size }
        } else {
            let size = match m.depth {
                1..=2 => SizeClass::Small,
                3..=4 => SizeClass::Medium,
                _ => SizeClass::Large,
            };
            Bucket { structure: Structure::Nested, size }
        }
    }

    pub fn label(&self) -> String {
        let range = match (self.structure, self.size) {
            (_, SizeClass::Single) => return "single".into(),
            (Structure::Linear, SizeClass::Small) => "2-3",
            (Structure::Linear, SizeClass::Medium) => "4-6",
            (Structure::Linear, SizeClass::Large) => "7+",
            (Structure::Nested, SizeClass::Small) => "1-2",
            (Structure::Nested, SizeClass::Medium) => "3-4",
            (Structure::Nested, SizeClass::Large) => "5+",
        };
        let s = match self.structure {
            Structure::Linear => "linear",
            Structure::Nested => "nested",
        };
        format!("{s}-{range}")
    }

    /// The six table buckets in display order.
    pub fn table() -> Vec<Bucket> {
        let mut out = Vec::new();
        for structure in [Structure::Linear, Structure::Nested] {
            for size in [SizeClass::Small, SizeClass::Medium, SizeClass::Large] {
                out.push(Bucket { structure, size });
            }
        }
        out
    }

    pub fn from_label(label: &str) -> Option<Bucket> {
        if label == "single" {
            return Some(Bucket { structure: Structure::Linear, size: SizeClass::Single });
        }
        Bucket::table().into_iter().find(|b| b.label() == label)
    }
}

/// Where a planted pattern sits in the flattened workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedAt {
    pub path: Path,
    pub start: usize,
    pub tools: Vec<String>,
}

/// Ground truth that the solver must never see.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordOracle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedAt>,
}

impl RecordOracle {
    fn is_empty(&self) -> bool {
        self.planted.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub goal: Goal,
    pub workflow: Workflow,
    pub bucket: Bucket,
    #[serde(default, skip_serializing_if = "RecordOracle::is_empty")]
    pub oracle: RecordOracle,
}

impl CorpusRecord {
    pub fn pair(&self) -> (Goal, Workflow) {
        (self.goal.stripped(), self.workflow.clone())
    }

    pub fn label(&self) -> String {
        self.bucket.label()
    }
}

pub fn pairs(records: &[CorpusRecord]) -> Vec<(Goal, Workflow)> {
    records.iter().map(CorpusRecord::pair).collect()
}

/// Outputs that are bound whatever the branch conditions evaluate to.
pub fn guaranteed_outputs(node: &Node) -> FieldSet {
    fn walk(n: &Node, out: &mut FieldSet) {
        match n {
            Node::Task(t) => out.extend(t.output_schema.iter().cloned()),
            Node::Seq { children } => children.iter().for_each(|c| walk(c, out)),
            Node::Nest { body, .. } => walk(body, out),
            Node::Branch { then, otherwise: Some(o), .. } => {
                let (mut a, mut b) = (FieldSet::new(), FieldSet::new());
                walk(then, &mut a);
                walk(o, &mut b);
                out.extend(a.intersection(&b).cloned());
            }
            Node::Branch { .. } => {}
        }
    }
    let mut out = FieldSet::new();
    walk(node, &mut out);
    out
}

/// Library of planted patterns for `profile`, one workflow per pattern.
pub fn pattern_library(profile: &CorpusProfile, seed: u64) -> Result<Vec<Workflow>> {
    let Some(spec) = &profile.planted_subflow else { return Ok(Vec::new()) };
    let vocab = ToolVocab::new(profile.tool_vocab_size);
    let chain = vocab
        .chain(spec.length, seed)
        .ok_or_else(|| Error::InfeasibleProfile(format!("no self-contained chain of {} tools", spec.length)))?;
    Ok(vec![chain_workflow(&format!("pattern-{}", spec.length), &chain)])
}

fn chain_workflow(id: &str, chain: &[TaskNode]) -> Workflow {
    let root = normalize(&Node::seq(chain.iter().cloned().map(Node::Task).collect()));
    let outs: FieldSet = chain.iter().flat_map(|t| t.output_schema.iter().cloned()).collect();
    Workflow::new(id, id, FieldSet::new(), outs, root)
}

/// Generates `profile.total` records. Deterministic in `seed`; record `i`
/// depends only on `(seed, i)`.
pub fn generate(profile: &CorpusProfile, seed: u64) -> Result<Vec<CorpusRecord>> {
    profile.check()?;
    let vocab = ToolVocab::new(profile.tool_vocab_size);
    let planted = match &profile.planted_subflow {
        Some(spec) => {
            let chain = vocab
                .chain(spec.length, seed)
                .ok_or_else(|| Error::InfeasibleProfile(format!("no self-contained chain of {} tools", spec.length)))?;
            let share = profile.eligible_share(spec.length);
            let q = if share > 0.0 { (spec.rate / share).min(1.0) } else { 0.0 };
            Some((chain, q))
        }
        None => None,
    };
    (0..profile.total)
        .map(|i| {
            let mut rng = derived_rng(seed, "record", i as u64);
            let (n, d) = profile.shape_for(rng.gen::<f64>());
            let plant = match &planted {
                Some((chain, q)) if n >= chain.len() && rng.gen_bool(*q) => Some(chain.as_slice()),
                _ => None,
            };
            Ok(build_record(&format!("s{seed}-{i:05}"), n, d, plant, &vocab, profile.branch_rate, &mut rng))
        })
        .collect()
}

fn build_record<R: Rng>(
    id: &str,
    n: usize,
    depth: usize,
    plant: Option<&[TaskNode]>,
    vocab: &ToolVocab,
    branch_rate: f64,
    rng: &mut R,
) -> CorpusRecord {
    let mut fields: Vec<usize> = (0..FIELD_COUNT).collect();
    fields.shuffle(rng);
    let available: FieldSet = fields[..2].iter().map(|&f| field_name(f)).collect();
    let plant_start = plant.map(|p| rng.gen_range(0..=n - p.len()));

    let mut scope = available.clone();
    let mut produced = FieldSet::new();
    let mut external = FieldSet::new();
    let mut items = Vec::with_capacity(n);
    for pos in 0..n {
        let planted = match (plant, plant_start) {
            (Some(p), Some(s)) if (s..s + p.len()).contains(&pos) => Some(p[pos - s].clone()),
            _ => None,
        };
        let mut guarded = planted.is_none() && pos > 0 && rng.gen_bool(branch_rate);
        let task = match planted {
            Some(t) => t,
            None => {
                let mut options: Vec<&TaskNode> =
                    vocab.runnable(&scope).filter(|t| !guarded || !t.input_schema.is_empty()).collect();
                if options.is_empty() {
                    guarded = false;
                    options = vocab.runnable(&scope).collect();
                }
                (*options.choose(rng).expect("source tools are always runnable")).clone()
            }
        };
        external.extend(task.input_schema.iter().filter(|f| !produced.contains(*f)).cloned());
        if guarded {
            let key = task.input_schema.iter().next().expect("guarded tasks read a field").clone();
            items.push(Node::branch(Predicate::exists(&key), Node::Task(task), None));
        } else {
            scope.extend(task.output_schema.iter().cloned());
            produced.extend(task.output_schema.iter().cloned());
            items.push(Node::Task(task));
        }
    }

    let root = normalize(&nest_levels(id, items, depth, rng));
    let outputs: FieldSet = root.tasks().iter().flat_map(|t| t.output_schema.iter().cloned()).collect();
    let workflow = Workflow::new(id, id, external.clone(), outputs.clone(), root);
    let domain = rng.gen_range(0..DOMAINS);
    let tokens = [format!("{id}.0"), format!("{id}.1"), format!("{id}.2"), format!("domain{domain}")];
    let goal = Goal::new(id, tokens, external, outputs);
    let oracle = RecordOracle {
        planted: plant.zip(plant_start).map(|(p, s)| PlantedAt {
            path: Vec::new(),
            start: s,
            tools: p.iter().map(|t| t.tool_id.clone()).collect(),
        }),
    };
    CorpusRecord { bucket: Bucket::of(&workflow.root), goal, workflow, oracle }
}

/// Wraps strictly shrinking contiguous runs of `items` into `depth` nest
/// levels. The outermost run never covers every item.
fn nest_levels<R: Rng>(id: &str, items: Vec<Node>, depth: usize, rng: &mut R) -> Node {
    let n = items.len();
    let mut spans = Vec::with_capacity(depth);
    let (mut lo, mut len) = (0usize, n);
    for k in 1..=depth {
        let min = depth - k + 1;
        let l = rng.gen_range(min..len);
        let s = rng.gen_range(lo..=lo + len - l);
        spans.push((s, l));
        lo = s;
        len = l;
    }
    fn build(id: &str, items: &[Node], lo: usize, hi: usize, level: usize, spans: &[(usize, usize)]) -> Vec<Node> {
        let mut out = Vec::new();
        let mut pos = lo;
        while pos < hi {
            match spans.get(level) {
                Some(&(s, l)) if s == pos => {
                    let body = build(id, items, s, s + l, level + 1, spans);
                    out.push(Node::nest(&format!("{id}/n{}", level + 1), Node::seq(body)));
                    pos += l;
                }
                _ => {
                    out.push(items[pos].clone());
                    pos += 1;
                }
            }
        }
        out
    }
    Node::seq(build(id, &items, 0, n, 0, &spans))
}

/// Share of planted records whose recorded pattern position is found by
/// [`find_subflows`]; 1.0 when nothing was planted.
pub fn planted_recall(records: &[CorpusRecord], library: &[Workflow]) -> f64 {
    let planted: Vec<_> = records.iter().filter_map(|r| r.oracle.planted.as_ref().map(|p| (r, p))).collect();
    if planted.is_empty() {
        return 1.0;
    }
    let found = planted
        .iter()
        .filter(|(r, p)| find_subflows(&r.workflow, library).iter().any(|m| m.path == p.path && m.start == p.start))
        .count();
    found as f64 / planted.len() as f64
}

/// Stratified seeded split. Each bucket is shuffled and cut at `fraction`;
/// leftover rounding goes to the buckets with the largest remainders so the
/// train size is `round(fraction * n)`. Both halves keep corpus order.
pub fn split(corpus: &[CorpusRecord], fraction: f64, seed: u64) -> Result<(Vec<CorpusRecord>, Vec<CorpusRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} is outside (0, 1)")));
    }
    let mut groups: BTreeMap<Bucket, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        groups.entry(r.bucket).or_default().push(i);
    }
    let target = (fraction * corpus.len() as f64).round() as usize;
    let mut quotas: Vec<(Bucket, usize, f64)> = groups
        .iter()
        .map(|(b, idx)| {
            let exact = fraction * idx.len() as f64;
            (*b, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut short = target.saturating_sub(quotas.iter().map(|q| q.1).sum());
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    for i in order {
        if short == 0 {
            break;
        }
        if quotas[i].1 < groups[&quotas[i].0].len() {
            quotas[i].1 += 1;
            short -= 1;
        }
    }
    let mut in_train = vec![false; corpus.len()];
    for (b, quota, _) in quotas {
        let mut idx = groups[&b].clone();
        let mut rng = derived_rng(seed, &b.label(), 0);
        idx.shuffle(&mut rng);
        for &i in &idx[..quota] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = corpus.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|(r, _)| r).collect(), test.into_iter().map(|(r, _)| r).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelSpec {
    pub count: usize,
    pub parts_min: usize,
    pub parts_max: usize,
    pub structure: Structure,
    /// Only keep goals landing in this bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<Bucket>,
}

impl NovelSpec {
    pub fn linear(count: usize, parts_min: usize, parts_max: usize) -> Self {
        NovelSpec { count, parts_min, parts_max, structure: Structure::Linear, bucket: None }
    }

    pub fn nested(count: usize, parts_min: usize, parts_max: usize) -> Self {
        NovelSpec { count, parts_min, parts_max, structure: Structure::Nested, bucket: None }
    }

    pub fn in_bucket(mut self, bucket: Bucket) -> Self {
        self.bucket = Some(bucket);
        self
    }
}

const NOVEL_ATTEMPTS: usize = 400;

/// Depth range of the parts that can produce a nested goal in `bucket`.
fn part_depths(bucket: Option<Bucket>) -> (usize, usize) {
    match bucket {
        Some(Bucket { structure: Structure::Nested, size: SizeClass::Small }) => (0, 1),
        Some(Bucket { structure: Structure::Nested, size: SizeClass::Medium }) => (2, 3),
        Some(Bucket { structure: Structure::Nested, size: SizeClass::Large }) => (4, usize::MAX),
        _ => (0, usize::MAX),
    }
}

/// Composite goals chained from trained records. A goal's tokens are the
/// union of its parts' tokens; its expected workflow concatenates the parts
/// (wrapped in one nest under the goal's id when nested).
pub fn make_novel_goals(train: &[CorpusRecord], seed: u64, spec: &NovelSpec) -> Result<Vec<CorpusRecord>> {
    if spec.parts_min < 2 || spec.parts_min > spec.parts_max || spec.parts_max > 7 {
        return Err(Error::Config(format!("parts range {}..={} must lie within 2..=7", spec.parts_min, spec.parts_max)));
    }
    if let Some(b) = spec.bucket {
        if b.structure != spec.structure || b.size == SizeClass::Single {
            return Err(Error::Config(format!("bucket {} does not fit a {:?} composite", b.label(), spec.structure)));
        }
    }
    let (lo, hi) = part_depths(spec.bucket);
    let pool: Vec<&CorpusRecord> = train
        .iter()
        .filter(|r| match spec.structure {
            Structure::Linear => r.bucket.structure == Structure::Linear,
            Structure::Nested => node_metrics(&r.workflow.root).depth <= hi,
        })
        .collect();
    let starts: Vec<&CorpusRecord> = pool
        .iter()
        .copied()
        .filter(|r| spec.structure == Structure::Linear || node_metrics(&r.workflow.root).depth >= lo)
        .collect();
    if pool.len() < spec.parts_max || starts.is_empty() {
        return Err(Error::Config("not enough trained records to build novel goals".into()));
    }
    let tag = match spec.structure {
        Structure::Linear => "linear",
        Structure::Nested => "nested",
    };
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.count);
    let mut attempt = 0u64;
    while out.len() < spec.count {
        if attempt as usize >= NOVEL_ATTEMPTS * spec.count.max(1) {
            return Err(Error::Config(format!("could only build {} of {} novel goals", out.len(), spec.count)));
        }
        let mut rng = derived_rng(seed, tag, attempt);
        attempt += 1;
        let p = rng.gen_range(spec.parts_min..=spec.parts_max);
        let Some(parts) = chain_parts(&pool, &starts, p, &mut rng) else { continue };
        let ids: Vec<String> = parts.iter().map(|r| r.goal.id.clone()).collect();
        if seen.contains(&ids) {
            continue;
        }
        let id = format!("novel-{tag}-{seed}-{:04}", out.len());
        let record = composite(&id, &parts, spec.structure);
        if spec.bucket.is_some_and(|b| b != record.bucket) {
            continue;
        }
        seen.insert(ids);
        out.push(record);
    }
    Ok(out)
}

/// Up to `p` distinct records, each reading only fields that the earlier
/// ones are sure to produce (plus the first one's inputs).
fn chain_parts<'a, R: Rng>(
    pool: &[&'a CorpusRecord],
    starts: &[&'a CorpusRecord],
    p: usize,
    rng: &mut R,
) -> Option<Vec<&'a CorpusRecord>> {
    let first = *starts.choose(rng)?;
    let mut parts = vec![first];
    let mut scope: FieldSet = first.workflow.declared_inputs.clone();
    scope.extend(guaranteed_outputs(&first.workflow.root));
    while parts.len() < p {
        let next: Vec<&&CorpusRecord> = pool
            .iter()
            .filter(|r| r.workflow.declared_inputs.is_subset(&scope) && !parts.iter().any(|q| q.goal.id == r.goal.id))
            .collect();
        let r = **next.choose(rng)?;
        scope.extend(guaranteed_outputs(&r.workflow.root));
        parts.push(r);
    }
    Some(parts)
}

fn composite(id: &str, parts: &[&CorpusRecord], structure: Structure) -> CorpusRecord {
    let mut expected = parts[0].workflow.clone();
    for r in &parts[1..] {
        expected = concat(&expected, &r.workflow);
    }
    expected.id = id.to_string();
    expected.goal_id = id.to_string();
    if structure == Structure::Nested {
        expected.root = normalize(&Node::nest(id, expected.root));
    }
    let mut tokens = BTreeSet::new();
    let mut outputs = FieldSet::new();
    for r in parts {
        tokens.extend(r.goal.tokens.iter().cloned());
        outputs.extend(r.goal.output_schema.iter().cloned());
    }
    let goal = Goal {
        id: id.to_string(),
        tokens,
        input_schema: parts[0].workflow.declared_inputs.clone(),
        output_schema: outputs,
        subgoal_template: Some(parts.iter().map(|r| r.goal.id.clone()).collect()),
    };
    CorpusRecord { bucket: Bucket::of(&expected.root), goal, workflow: expected, oracle: RecordOracle::default() }
}
