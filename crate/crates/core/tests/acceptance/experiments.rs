use agentflow::corpus::{
    generate, make_novel_goals, split, Bucket, CorpusProfile, CorpusRecord, NovelSpec, SizeClass, Structure,
};
use agentflow::eval::{build_network, check_monotone, run_experiment, Experiment, ExperimentConfig, OVERALL};
use agentflow::io::{to_jsonl, write_atomic};
use agentflow::orchestrator::EpisodeResult;

use crate::{ensure, Ctx, Outcome};

struct NovelSplit {
    train: Vec<CorpusRecord>,
    linear: Vec<CorpusRecord>,
    nested: Vec<CorpusRecord>,
}

fn novel_split(seed: u64) -> Result<NovelSplit, String> {
    let corpus = generate(&CorpusProfile::reference(4000), seed).map_err(|e| e.to_string())?;
    let (train, _) = split(&corpus, 0.75, seed).map_err(|e| e.to_string())?;
    let linear = make_novel_goals(&train, seed, &NovelSpec::linear(100, 2, 3)).map_err(|e| e.to_string())?;
    let nested = make_novel_goals(&train, seed, &NovelSpec::nested(100, 2, 3)).map_err(|e| e.to_string())?;
    Ok(NovelSplit { train, linear, nested })
}

fn run(
    ctx: &mut Ctx,
    name: &str,
    cfg: &ExperimentConfig,
    train: &[CorpusRecord],
    test: &[CorpusRecord],
) -> Result<Experiment, String> {
    let exp = run_experiment(cfg, train, test).map_err(|e| format!("{name}: {e}"))?;
    ctx.reports.push((name.to_string(), exp.report.clone()));
    Ok(exp)
}

fn rate(episodes: &[EpisodeResult], k: usize, keep: impl Fn(&EpisodeResult) -> bool) -> f64 {
    let chosen: Vec<_> = episodes.iter().filter(|e| keep(e)).collect();
    let hits = chosen.iter().filter(|e| e.first_correct_rank().is_some_and(|r| r <= k)).count();
    hits as f64 / chosen.len().max(1) as f64
}

pub fn hypothesis_zero(ctx: &mut Ctx) -> Outcome {
    let data = novel_split(1)?;
    let test: Vec<CorpusRecord> = data.linear.iter().chain(&data.nested).cloned().collect();
    let cfg = ExperimentConfig::default();
    let net = build_network(&cfg, &data.train).map_err(|e| e.to_string())?;
    let familiar = test.iter().filter(|r| net.max_training_similarity(&r.goal) > cfg.theta).count();
    ensure(test.len() == 200 && familiar == 0, || format!("{familiar} of {} goals are not novel", test.len()))?;

    let none = run(ctx, "no-hypothesis", &cfg.disabling("hypothesis").map_err(|e| e.to_string())?, &data.train, &test)?;
    let p5 = none.report.pass(OVERALL, 5).unwrap_or(f64::NAN);
    let full = run(ctx, "full", &cfg, &data.train, &test)?;
    let linear = rate(&full.episodes, 1, |e| e.goal_id.starts_with("novel-linear"));
    ensure(p5 == 0.0 && linear >= 0.9, || format!("no-hypothesis pass@5 {p5}, full linear pass@1 {linear}"))?;
    Ok(format!(
        "no-hypothesis pass@5 {:.1}%, full pass@1 linear {:.1}% nested {:.1}%",
        100.0 * p5,
        100.0 * linear,
        100.0 * rate(&full.episodes, 1, |e| e.goal_id.starts_with("novel-nested"))
    ))
}

pub fn ablation_ordering(ctx: &mut Ctx) -> Outcome {
    let data = novel_split(2)?;
    let test: Vec<CorpusRecord> = data.linear.iter().chain(&data.nested).cloned().collect();
    let cfg = ExperimentConfig::default();
    let mut p = Vec::new();
    for (name, c) in [
        ("full", cfg.clone()),
        ("no-scale-control", cfg.disabling("scale_control").map_err(|e| e.to_string())?),
        ("no-verification", cfg.disabling("verification").map_err(|e| e.to_string())?),
        ("no-hypothesis", cfg.disabling("hypothesis").map_err(|e| e.to_string())?),
    ] {
        let exp = run(ctx, name, &c, &data.train, &test)?;
        p.push((name, exp.report.pass(OVERALL, 1).unwrap_or(f64::NAN)));
    }
    let shown = p.iter().map(|(n, v)| format!("{n} {:.1}%", 100.0 * v)).collect::<Vec<_>>().join(" >= ");
    let ordered = p[0].1 >= p[1].1 && p[1].1 >= p[2].1 && p[2].1 > p[3].1 && p[3].1 == 0.0;
    ensure(ordered, || shown.clone())?;
    Ok(shown)
}

fn bucket_goals(train: &[CorpusRecord], structure: Structure, size: SizeClass, seed: u64) -> Result<Vec<CorpusRecord>, String> {
    let parts_max = match (structure, size) {
        (Structure::Linear, SizeClass::Small) => 3,
        (Structure::Linear, SizeClass::Medium) => 4,
        (Structure::Linear, _) => 7,
        _ => 3,
    };
    let spec = NovelSpec { count: 60, parts_min: 2, parts_max, structure, bucket: Some(Bucket { structure, size }) };
    make_novel_goals(train, seed, &spec).map_err(|e| format!("{}: {e}", Bucket { structure, size }.label()))
}

pub fn degradation(ctx: &mut Ctx) -> Outcome {
    let corpus = generate(&CorpusProfile::reference(8000), 3).map_err(|e| e.to_string())?;
    let (train, _) = split(&corpus, 0.75, 3).map_err(|e| e.to_string())?;
    let sizes = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];
    let mut test = Vec::new();
    for structure in [Structure::Linear, Structure::Nested] {
        for size in sizes {
            test.extend(bucket_goals(&train, structure, size, 3)?);
        }
    }
    let cfg = ExperimentConfig::default();
    let full = run(ctx, "full-buckets", &cfg, &train, &test)?.report;
    let bare = run(ctx, "no-repair-buckets", &ExperimentConfig { repair_budget: 0, ..cfg }, &train, &test)?.report;
    let mut notes = Vec::new();
    for structure in [Structure::Linear, Structure::Nested] {
        let label = |s: SizeClass| Bucket { structure, size: s }.label();
        let drop = |r: &agentflow::eval::MetricsReport| -> Result<(f64, f64, f64), String> {
            let at = |s| r.pass(&label(s), 1).ok_or_else(|| format!("bucket {} missing", label(s)));
            let (a, b, c) = (at(SizeClass::Small)?, at(SizeClass::Medium)?, at(SizeClass::Large)?);
            Ok((a, b, c))
        };
        let (f, n) = (drop(&full)?, drop(&bare)?);
        let (fd, nd) = (f.0 - f.2, n.0 - n.2);
        let line = format!(
            "{:?} full {:.0}/{:.0}/{:.0} no-repair {:.0}/{:.0}/{:.0}",
            structure,
            100.0 * f.0,
            100.0 * f.1,
            100.0 * f.2,
            100.0 * n.0,
            100.0 * n.1,
            100.0 * n.2
        );
        ensure(fd <= nd + 1e-12 && fd <= 0.10 + 1e-12, || line.clone())?;
        notes.push(line);
    }
    Ok(notes.join("; "))
}

pub fn determinism(ctx: &mut Ctx) -> Outcome {
    let data = novel_split(4)?;
    let test: Vec<CorpusRecord> = data.linear.iter().take(60).chain(data.nested.iter().take(40)).cloned().collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (i, mode) in
        [agentflow::orchestrator::VerifyMode::Oracle, agentflow::orchestrator::VerifyMode::GoalAnchored].into_iter().enumerate()
    {
        let cfg = ExperimentConfig { seed: 17, threads: 1, mode, ..ExperimentConfig::default() };
        let a = run(ctx, "determinism-a", &cfg, &data.train, &test)?;
        let b = run_experiment(&cfg, &data.train, &test).map_err(|e| e.to_string())?;
        for (tag, e) in [("a", &a), ("b", &b)] {
            let t = dir.path().join(format!("t{i}{tag}.jsonl"));
            let r = dir.path().join(format!("r{i}{tag}.json"));
            write_atomic(&t, to_jsonl(&e.episodes).as_bytes()).map_err(|e| e.to_string())?;
            write_atomic(&r, e.report.to_json().as_bytes()).map_err(|e| e.to_string())?;
            files.push((t, r));
        }
        let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| e.to_string());
        let n = files.len();
        ensure(read(&files[n - 2].0)? == read(&files[n - 1].0)?, || format!("{mode:?}: transcripts differ"))?;
        ensure(read(&files[n - 2].1)? == read(&files[n - 1].1)?, || format!("{mode:?}: reports differ"))?;

        let par = run(ctx, "determinism-par", &ExperimentConfig { threads: 4, ..cfg }, &data.train, &test)?;
        let same = par.report.pass_at_k == a.report.pass_at_k
            && par.report.episodes_per_bucket == a.report.episodes_per_bucket
            && par.report.runtime == a.report.runtime
            && par.report.life == a.report.life;
        ensure(same, || format!("{mode:?}: 4-thread aggregates differ"))?;
    }
    Ok(format!("{} goals, both verification modes, byte-identical single-thread, equal 4-thread aggregates", test.len()))
}

pub fn monotone(ctx: &mut Ctx) -> Outcome {
    ensure(!ctx.reports.is_empty(), || "no reports were produced".into())?;
    let mut rows = 0;
    for (name, r) in &ctx.reports {
        check_monotone(&r.pass_at_k).map_err(|e| format!("{name}: {e}"))?;
        for (bucket, row) in &r.pass_at_k {
            let v: Vec<f64> = [1, 3, 5].iter().map(|k| row.get(k).copied().unwrap_or(f64::NAN)).collect();
            ensure(v[0] <= v[1] && v[1] <= v[2], || format!("{name}/{bucket}: {v:?}"))?;
            rows += 1;
        }
    }
    Ok(format!("{} reports, {rows} bucket rows", ctx.reports.len()))
}
