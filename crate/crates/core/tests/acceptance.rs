//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=2,5` runs a subset.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use catgrad::bench::{self, BenchConfig};
use catgrad::checks::{self, bootstrap_upper};
use catgrad::dist::CategoryOrder;
use catgrad::oracle::OracleReport;
use catgrad::registry::EstimatorId;
use catgrad::rng::stream;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn summarize(reports: &[OracleReport]) -> (bool, usize, f64) {
    let failures = reports.iter().filter(|r| !r.pass).count();
    let worst = reports.iter().map(|r| r.error).fold(f64::NEG_INFINITY, f64::max);
    (failures == 0, failures, worst)
}

fn print_failures(reports: &[OracleReport]) {
    for r in reports.iter().filter(|r| !r.pass) {
        println!(
            "    failing: {} {} K={} C={} seed={} error={:.3e} threshold={:.3e}",
            r.check,
            r.estimator.as_deref().unwrap_or("-"),
            r.dims,
            r.categories,
            r.seed,
            r.error,
            r.threshold
        );
    }
}

fn from_reports(reports: catgrad::Result<Vec<OracleReport>>, limit: Option<(Duration, Instant)>) -> Outcome {
    let reports = match reports {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: format!("did not run: {e}") },
    };
    print_failures(&reports);
    let (mut pass, failures, worst) = summarize(&reports);
    let mut detail = format!("{} checks, {failures} failing, worst error {worst:.3e}", reports.len());
    if let Some((budget, start)) = limit {
        let took = start.elapsed();
        pass &= took <= budget;
        detail += &format!(", {:.1}s of {}s allowed", took.as_secs_f64(), budget.as_secs());
    }
    Outcome { pass, detail }
}

fn exact_unbiasedness() -> Outcome {
    let start = Instant::now();
    from_reports(checks::exact_unbiasedness(100, SEED), Some((Duration::from_secs(300), start)))
}

fn ars_family() -> Outcome {
    let start = Instant::now();
    from_reports(checks::ars_family_unbiasedness(20, 200_000, SEED), Some((Duration::from_secs(600), start)))
}

fn coupling() -> Outcome {
    from_reports(checks::coupling_correctness(50, SEED), None)
}

fn binary_collapse() -> Outcome {
    from_reports(checks::binary_collapse(50, SEED), None)
}

fn rao_blackwell() -> Outcome {
    from_reports(checks::rao_blackwell_dominance(10, 200_000, 2000, SEED), None)
}

fn replay_config(seed: u64) -> BenchConfig {
    BenchConfig { seed, ..BenchConfig::default() }
}

fn variance_ordering() -> Outcome {
    let seeds: Vec<u64> = (0..5).map(|s| SEED + s).collect();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        match bench::variance_replay_rows(&replay_config(seed)) {
            Ok((_, summary)) => per_seed.push(summary),
            Err(e) => return Outcome { pass: false, detail: format!("replay failed: {e}") },
        }
    }
    let mean_var = |seed: usize, id: EstimatorId| -> f64 {
        let name = id.to_string();
        per_seed[seed].iter().find(|s| s.estimator == name).map_or(f64::NAN, |s| s.mean_variance)
    };
    let mut rng = stream(SEED, "acceptance", "variance-bootstrap", 0);
    let mut pass = true;
    let mut parts = Vec::new();
    for id in [EstimatorId::DisarmIw, EstimatorId::DisarmSb(CategoryOrder::Ascending), EstimatorId::DisarmTree] {
        let diffs: Vec<f64> = (0..seeds.len()).map(|s| mean_var(s, id) - mean_var(s, EstimatorId::Rloo(2))).collect();
        let upper = bootstrap_upper(diffs.len(), 10_000, 0.95, &mut rng, |idx| {
            idx.iter().map(|&i| diffs[i]).sum::<f64>() / idx.len() as f64
        });
        pass &= upper <= 0.0;
        parts.push(format!("{id} - rloo-2 upper {upper:.3e}"));
    }
    for s in 0..seeds.len() {
        let row: Vec<String> = per_seed[s].iter().map(|e| format!("{}={:.3e}", e.estimator, e.mean_variance)).collect();
        println!("    seed {}: {}", seeds[s], row.join(" "));
    }
    for (id, matched) in [(EstimatorId::Ars, EstimatorId::Rloo(4)), (EstimatorId::Arsm, EstimatorId::Rloo(7))] {
        let above = (0..seeds.len()).filter(|&s| mean_var(s, id) > mean_var(s, matched)).count();
        println!("    {id} above {matched} on {above} of {} seeds", seeds.len());
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn vjp() -> Outcome {
    from_reports(checks::vjp_finite_differences(100, SEED), None)
}

fn interval_oracle() -> Outcome {
    let mut reports = match checks::interval_vs_rejection(20, 10_000, SEED) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: format!("did not run: {e}") },
    };
    match checks::interval_containment(10_000, SEED) {
        Ok(r) => reports.push(r),
        Err(e) => return Outcome { pass: false, detail: format!("containment did not run: {e}") },
    }
    from_reports(Ok(reports), None)
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read")))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let config =
        BenchConfig { steps: 300, estimators: EstimatorId::replay_defaults(), seed: SEED, ..BenchConfig::default() };
    let run = || -> catgrad::Result<Vec<(String, Vec<u8>)>> {
        let dir = tempfile::tempdir()?;
        bench::train(&config, dir.path())?;
        bench::variance_replay(&config, dir.path())?;
        Ok(read_outputs(dir.path()))
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
            Outcome { pass: !a.is_empty() && a == b, detail: format!("{} CSV files, {bytes} bytes compared", a.len()) }
        }
        (Err(e), _) | (_, Err(e)) => Outcome { pass: false, detail: format!("run failed: {e}") },
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exact unbiasedness by enumeration", exact_unbiasedness),
        ("ARS family Monte Carlo unbiasedness", ars_family),
        ("stick-breaking coupling marginals, support and weights", coupling),
        ("binary collapse at C=2", binary_collapse),
        ("Rao-Blackwell variance dominance", rao_blackwell),
        ("coupled estimators at or below RLOO-2 variance", variance_ordering),
        ("stick and tree VJPs against finite differences", vjp),
        ("conditional interval against rejection sampling", interval_oracle),
        ("bitwise-identical harness outputs", determinism),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {status}: {name} ({}; {:.1}s)", outcome.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!outcome.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
