use eoslab::harness::checks::linreg_run;
use eoslab::harness::detect::period2_fraction;

#[test]
fn linreg_default_run_enters_near_one_thousand() {
    let run = linreg_run(0).out.unwrap();
    let entry = run.report.eos_entry_step.expect("EoS entry");
    assert!((500..=1500).contains(&entry), "entry at {entry}");
    assert!(period2_fraction(&run.trace, entry).unwrap() >= 0.95);
}
