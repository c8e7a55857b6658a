//! Runs the built-in Monte Carlo scenarios and prints every estimate with
//! its bound.
//!
//! ```text
//! cargo run --release --example simulation_lab                 # quick, reduced reps
//! cargo run --release --example simulation_lab -- --full seq-fdr power-one
//! ```

use alwaysvalid::simlab::{self, SimReport, SCENARIO_NAMES};

fn print_report(report: &SimReport) {
    println!(
        "{} ({} reps, horizon {}, {:.1}s): {}",
        report.scenario.name,
        report.scenario.reps,
        report.scenario.horizon,
        report.wall_time_secs,
        if report.passed { "PASS" } else { "FAIL" }
    );
    for e in &report.estimates {
        let x = e.x.map(|x| format!("@{x}")).unwrap_or_default();
        let verdict = match e.passed {
            Some(true) => "ok",
            Some(false) => "FAILED",
            None => "",
        };
        println!("  {:<46} {:>12.6} ± {:<10.6} {:?} {verdict}", format!("{}{x}", e.name), e.value, e.se, e.bound);
    }
}

/// Runs `names` (all scenarios when empty) with reps divided by `shrink`.
fn run_scenarios(names: &[String], shrink: u64) -> anyhow::Result<Vec<SimReport>> {
    let names: Vec<String> =
        if names.is_empty() { SCENARIO_NAMES.iter().map(|s| s.to_string()).collect() } else { names.to_vec() };
    let mut reports = Vec::new();
    for name in names {
        let mut scenario = simlab::scenario(&name)
            .ok_or_else(|| anyhow::anyhow!("unknown scenario {name}; known: {}", SCENARIO_NAMES.join(", ")))?;
        scenario.reps = (scenario.reps / shrink).max(1);
        let report = simlab::run(&scenario)?;
        print_report(&report);
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_example() -> anyhow::Result<()> {
    // Cheap scenarios at a twentieth of their default size.
    let quick: Vec<String> = ["av-validity", "power-one", "seq-fdr", "bandit-martingale", "runtime-leading"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let reports = run_scenarios(&quick, 20)?;
    anyhow::ensure!(reports.iter().all(|r| !r.estimates.is_empty()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    args.retain(|a| a != "--full");
    if !full && args.is_empty() {
        return run_example();
    }
    run_scenarios(&args, if full { 1 } else { 20 })?;
    Ok(())
}
