//! Acceptance run: one PASS/FAIL line per criterion, each under its own
//! wall-clock limit. Exits non-zero if any criterion fails.

#[path = "../common/mod.rs"]
mod common;

mod algebra;
mod experiments;
mod life;
mod mechanics;
mod repair;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use agentflow::eval::MetricsReport;

/// Reports produced along the way, checked for pass@k monotonicity at the end.
#[derive(Default)]
pub struct Ctx {
    pub reports: Vec<(String, MetricsReport)>,
}

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    id: u8,
    title: &'static str,
    limit: Duration,
    run: fn(&mut Ctx) -> Outcome,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn main() {
    let list = [
        Criterion { id: 1, title: "exact recall of trained goals", limit: secs(10), run: mechanics::exact_recall },
        Criterion {
            id: 2,
            title: "no split hypothesis scores zero on novel goals",
            limit: secs(60),
            run: experiments::hypothesis_zero,
        },
        Criterion { id: 3, title: "ablation ordering", limit: secs(120), run: experiments::ablation_ordering },
        Criterion { id: 4, title: "degradation across size buckets", limit: secs(180), run: experiments::degradation },
        Criterion { id: 6, title: "life dynamics", limit: secs(30), run: life::suite },
        Criterion { id: 7, title: "single-edit repair completeness", limit: secs(60), run: repair::completeness },
        Criterion { id: 8, title: "composition algebra", limit: secs(30), run: algebra::suite },
        Criterion { id: 9, title: "corpus histogram fidelity", limit: secs(30), run: mechanics::corpus_fidelity },
        Criterion { id: 10, title: "planted subflow recall and reuse efficiency", limit: secs(10), run: mechanics::reuse },
        Criterion { id: 11, title: "determinism", limit: secs(120), run: experiments::determinism },
        Criterion { id: 5, title: "pass@k monotone in every report", limit: secs(5), run: experiments::monotone },
    ];
    let filter: Option<u8> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut ctx = Ctx::default();
    let mut lines = Vec::new();
    let mut failed = 0;
    for c in list.iter().filter(|c| filter.is_none_or(|f| f == c.id)) {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut ctx))).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let res = match res {
            Ok(_) if took > c.limit => Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), c.limit.as_secs())),
            r => r,
        };
        let line = match res {
            Ok(detail) => format!("PASS criterion {}: {} ({detail}; {:.2}s)", c.id, c.title, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                format!("FAIL criterion {}: {} ({why}; {:.2}s)", c.id, c.title, took.as_secs_f64())
            }
        };
        lines.push((c.id, line));
    }
    lines.sort_by_key(|(id, _)| *id);

    for (_, l) in &lines {
        println!("{l}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
