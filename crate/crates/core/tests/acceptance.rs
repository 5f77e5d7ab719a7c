//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! `cargo test --test acceptance -- 3 9` runs only criteria 3 and 9.

use std::process::ExitCode;
use std::sync::OnceLock;

use eoslab::harness::checks::{self, SharedRun};
use eoslab::harness::report::CheckOutcome;

const SEED: u64 = 0;

struct Runs {
    example3d: OnceLock<SharedRun>,
    linreg: OnceLock<SharedRun>,
    matcom: OnceLock<SharedRun>,
}

impl Runs {
    fn example3d(&self) -> &SharedRun {
        self.example3d.get_or_init(|| checks::example3d_run(SEED))
    }
    fn linreg(&self) -> &SharedRun {
        self.linreg.get_or_init(|| checks::linreg_run(SEED))
    }
    fn matcom(&self) -> &SharedRun {
        self.matcom.get_or_init(|| checks::matcom_run(SEED))
    }
}

fn criterion(id: u32, runs: &Runs) -> CheckOutcome {
    match id {
        1 => checks::scale_invariance(SEED),
        2 => checks::scheduler_equivalence(SEED),
        3 => checks::lanczos_oracle(SEED),
        4 => checks::linreg_hessian(SEED),
        5 => checks::example3d_target(runs.example3d()),
        6 => checks::linreg_dynamics(runs.linreg()),
        7 => checks::flow_tracking(SEED),
        8 => checks::min_norm_target(SEED),
        9 => checks::drift_energy(),
        10 => checks::average_oscillation(),
        11 => checks::matcom_dynamics(runs.matcom()),
        12 => checks::descent_lemma(SEED),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    eoslab::exec::init_thread_pool_from_env();
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u32> = (1..=12).filter(|i| picked.is_empty() || picked.contains(i)).collect();
    let runs = Runs { example3d: OnceLock::new(), linreg: OnceLock::new(), matcom: OnceLock::new() };
    let mut failed = Vec::new();
    for id in ids {
        let c = criterion(id, &runs);
        println!("{}", c.line());
        if !c.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
