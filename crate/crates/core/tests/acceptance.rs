//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Runs under `cargo test`; use `cargo test --test acceptance` to run it
//! alone.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use poincare_lab::selftest::{criterion_name, run_criterion, Outcome, SelftestOptions, CRITERIA};

const SEED: u64 = 20_240_917;

fn budget(id: usize) -> Option<Duration> {
    match id {
        1 => Some(Duration::from_secs(1)),
        3 | 6 => Some(Duration::from_secs(30)),
        4 | 9 => Some(Duration::from_secs(60)),
        _ => None,
    }
}

/// Runs the `selftest` subcommand twice with a fixed seed and compares the
/// report bytes, then checks the in-process parallel/sequential replay.
fn determinism(opts: &SelftestOptions) -> Outcome {
    let run = || {
        let out = Command::new(env!("CARGO_BIN_EXE_poincare-lab"))
            .args(["selftest", "--seed", &SEED.to_string()])
            .output()
            .expect("selftest binary runs");
        (out.status.code(), out.stdout)
    };
    let (code_a, first) = run();
    let (code_b, second) = run();
    let mut out = run_criterion(10, opts);
    let problems: Vec<String> = [
        (code_a != Some(0), format!("selftest exit code {code_a:?}")),
        (code_b != Some(0), format!("selftest exit code {code_b:?}")),
        (first.is_empty(), "empty report".to_string()),
        (first != second, "repeated selftest reports differ".to_string()),
    ]
    .into_iter()
    .filter_map(|(bad, msg)| bad.then_some(msg))
    .collect();
    if !problems.is_empty() {
        out.passed = false;
        if !out.detail.is_empty() {
            out.detail.push_str("; ");
        }
        out.detail.push_str(&problems.join("; "));
    }
    out
}

fn main() -> ExitCode {
    let opts = SelftestOptions {
        seed: SEED,
        tolerance_scale: 1.0,
    };
    let mut failures = 0;
    println!();
    for id in CRITERIA {
        let start = Instant::now();
        let mut out = if id == 10 { determinism(&opts) } else { run_criterion(id, &opts) };
        let elapsed = start.elapsed();
        if let Some(limit) = budget(id) {
            if elapsed > limit {
                out.passed = false;
                out.detail = format!("runtime {:.2?} over budget {limit:?}; {}", elapsed, out.detail);
            }
        }
        let verdict = if out.passed { "PASS" } else { "FAIL" };
        let detail = if out.passed { String::new() } else { format!("  {}", out.detail) };
        println!(
            "criterion {id:>2} {:<22} {verdict} {:>8.2}s{detail}",
            criterion_name(id),
            elapsed.as_secs_f64()
        );
        failures += usize::from(!out.passed);
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failures, CRITERIA.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
