//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs the same checks as `dfsim validate`.

use std::process::ExitCode;
use std::time::Instant;

use dataflow_sim::harness::validate::cmd_validate;
use dataflow_sim::harness::{Config, ValidateOptions};

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let start = Instant::now();
    let outcomes = cmd_validate(&Config::default(), &ValidateOptions::default());
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "acceptance: {} of {} checks passed in {:.0} s",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
