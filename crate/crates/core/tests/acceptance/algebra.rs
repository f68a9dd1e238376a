use agentflow::rng::seeded_rng;
use agentflow::workflow::{apply_script, concat, diff, flatten, nest, node_metrics, normalize, Workflow};

use crate::common::random_workflow;
use crate::{ensure, Ctx, Outcome};

fn tools(w: &Workflow) -> Vec<String> {
    w.root.tasks().iter().map(|t| t.tool_id.clone()).collect()
}

pub fn suite(_: &mut Ctx) -> Outcome {
    let mut rng = seeded_rng(8);
    let mut checks = 0usize;
    for i in 0..1000 {
        let a = random_workflow(&mut rng, 10);
        let b = random_workflow(&mut rng, 10);
        let c = random_workflow(&mut rng, 6);
        let (ma, mb) = (node_metrics(&a.root), node_metrics(&b.root));

        let ab = concat(&a, &b);
        ensure(node_metrics(&ab.root).length == ma.length + mb.length, || format!("pair {i}: concat length"))?;
        ensure(concat(&ab, &c).structurally_eq(&concat(&a, &concat(&b, &c))), || format!("pair {i}: associativity"))?;

        let n = nest(&a, &[], &format!("sub{i}"), &b).map_err(|e| format!("pair {i}: {e}"))?;
        ensure(node_metrics(&n.root).depth == 1 + mb.depth, || format!("pair {i}: nest depth"))?;

        for w in [&a, &b] {
            let f = flatten(w);
            ensure(flatten(&f) == f, || format!("pair {i}: flatten not idempotent"))?;
            ensure(tools(&f) == tools(w), || format!("pair {i}: flatten reordered tasks"))?;
        }

        let script = diff(&a, &b);
        let out = apply_script(&a.root, &script).map_err(|e| format!("pair {i}: {e}"))?;
        ensure(out == normalize(&b.root), || format!("pair {i}: diff/apply round trip"))?;
        checks += 6;
    }
    Ok(format!("1000 pairs, {checks} checks, 0 failures"))
}
