use std::collections::BTreeSet;

use agentflow::agents::{
    build_agents, select, selection_probabilities, update_life, AtomicAgent, LifeConfig, Outcome as LifeOutcome,
};
use agentflow::goal::Goal;
use agentflow::rng::seeded_rng;
use agentflow::workflow::{FieldSet, TaskNode, Workflow};
use rand::Rng;

use crate::{ensure, Ctx, Outcome};

fn agent(i: usize, life: f64) -> AtomicAgent {
    let id = format!("a{i}");
    let goal = Goal::new(&id, [format!("{id}.t")], FieldSet::new(), FieldSet::new());
    let wf = Workflow::single(&id, &id, TaskNode::new(&format!("tool{i}"), Vec::<String>::new(), [format!("o{i}")]));
    AtomicAgent::new(&id, goal, wf, life)
}

fn random_outcome<R: Rng>(rng: &mut R) -> LifeOutcome {
    let correct = rng.gen_bool(0.4);
    LifeOutcome {
        correct,
        reuse: rng.gen_bool(0.3),
        generalization: rng.gen_bool(0.2),
        failure: !correct && rng.gen_bool(0.6),
        drift: rng.gen_bool(0.2),
        redundancy: rng.gen_range(0.0..=1.0),
    }
}

pub fn suite(_: &mut Ctx) -> Outcome {
    let cfg = LifeConfig::default();
    let mut rng = seeded_rng(2024);

    // Probabilities sum to one and zero-life agents never win.
    for trial in 0..2000 {
        let n = rng.gen_range(1..8);
        let agents: Vec<AtomicAgent> =
            (0..n).map(|i| agent(i, if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..cfg.l_max) })).collect();
        let cands: Vec<(&AtomicAgent, f64)> = agents.iter().map(|a| (a, rng.gen_range(0.0..1.0))).collect();
        match selection_probabilities(&cands, true) {
            Ok(p) => {
                let sum: f64 = p.iter().sum();
                ensure((sum - 1.0).abs() <= 1e-9, || format!("trial {trial}: probabilities sum to {sum}"))?;
                for _ in 0..20 {
                    let i = select(&cands, true, &mut rng).map_err(|e| e.to_string())?;
                    ensure(cands[i].0.life > 0.0 && cands[i].1 > 0.0, || format!("trial {trial}: zero-weight agent drawn"))?;
                }
            }
            Err(_) => ensure(cands.iter().all(|(a, g)| a.life * g <= 0.0), || format!("trial {trial}: spurious empty pool"))?,
        }
    }

    // Two-candidate closed form.
    let (a, b) = (agent(0, 10.0), agent(1, 30.0));
    let pair = [(&a, 0.5), (&b, 0.5)];
    let p = selection_probabilities(&pair, true).map_err(|e| e.to_string())?;
    ensure((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12, || format!("closed form {p:?}"))?;
    let mut draws = [0usize; 2];
    let mut r = seeded_rng(7);
    for _ in 0..100_000 {
        draws[select(&pair, true, &mut r).map_err(|e| e.to_string())?] += 1;
    }
    let f0 = draws[0] as f64 / 100_000.0;
    ensure((f0 - 0.25).abs() <= 0.01, || format!("empirical share {f0}"))?;

    // Lives stay in range; the active/archive split holds after every refresh.
    let data: Vec<(Goal, Workflow)> = (0..60).map(|i| agent(i, 0.0)).map(|a| (a.goal, a.procedure)).collect();
    let mut net = build_agents(&data, LifeConfig { refresh_period: 3, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let (mut archived, mut revived, mut spawned) = (0, 0, 0);
    for epoch in 0..300 {
        for i in 0..net.active.len() {
            let o = random_outcome(&mut rng);
            let l = update_life(&mut net.active[i], &o, &net.config.clone());
            ensure((0.0..=cfg.l_max).contains(&l), || format!("life {l} out of range"))?;
        }
        let log = net.eliminate_and_refresh();
        archived += log.archived.len();
        revived += log.revived.len();
        spawned += log.spawned.len();
        let active: BTreeSet<&str> = net.active.iter().map(|a| a.id.as_str()).collect();
        let archive: BTreeSet<&str> = net.archive.iter().map(|a| a.id.as_str()).collect();
        ensure(active.len() == net.active.len() && archive.len() == net.archive.len(), || {
            format!("epoch {epoch}: duplicate ids")
        })?;
        ensure(active.is_disjoint(&archive), || format!("epoch {epoch}: agent both active and archived"))?;
        ensure(net.active.iter().all(|a| a.life > 0.0), || format!("epoch {epoch}: exhausted agent left active"))?;
        ensure(net.archive.iter().all(|a| a.life <= 0.0), || format!("epoch {epoch}: live agent archived"))?;
        ensure(active.len() + archive.len() == 60 + spawned, || format!("epoch {epoch}: agents lost"))?;
    }
    ensure(archived > 0 && revived + spawned > 0, || "refresh never exercised".into())?;
    Ok(format!("100k draws share {f0:.4}; {archived} archived, {revived} revived, {spawned} spawned"))
}
