use eoslab::exec::Exec;
use eoslab::harness::experiment::{run_experiment, simulate, ExperimentConfig, ExperimentKind, OutputFormat};
use eoslab::harness::data::gen_linreg;
use eoslab::harness::report::Report;
use eoslab::harness::trace::Trace;
use eoslab::linalg::{gaussian_vector, sub_rng};
use eoslab::silo::fd::dense_hessian;

fn short(kind: ExperimentKind, steps: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default_for(kind);
    c.steps = steps;
    c.dense_until = c.dense_until.min(steps);
    c
}

#[test]
fn identical_configs_give_identical_trace_bytes() {
    for c in [short(ExperimentKind::Linreg, 1500), short(ExperimentKind::Example3d, 2000), short(ExperimentKind::Matcom, 300)] {
        let a = simulate(&c).unwrap().trace.to_csv_string().unwrap();
        let b = simulate(&c).unwrap().trace.to_csv_string().unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{:?}", c.kind);
    }
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        let mut c = short(ExperimentKind::Example3d, 500);
        c.format = format;
        c.out = Some(dir.path().join(format!("{format:?}")));
        let out = run_experiment(&c).unwrap();
        let base = c.out.as_ref().unwrap();
        let trace = match format {
            OutputFormat::Csv => Trace::read_csv(std::fs::File::open(base.join("trace.csv")).unwrap()).unwrap(),
            OutputFormat::Json => Trace::read_json(std::fs::File::open(base.join("trace.json")).unwrap()).unwrap(),
        };
        assert_eq!(trace, out.trace);
        let report = Report::read_json(std::fs::File::open(base.join("report.json")).unwrap()).unwrap();
        assert_eq!(report, out.report);
    }
    let mut c = short(ExperimentKind::Driftsim, 200);
    c.out = Some(dir.path().join("drift"));
    run_experiment(&c).unwrap();
    let text = std::fs::read_to_string(dir.path().join("drift/drift.csv")).unwrap();
    assert_eq!(text.lines().count(), 202);
}

#[test]
fn parallel_and_sequential_paths_agree_bitwise() {
    let p = gen_linreg(3).unwrap();
    let w = gaussian_vector(&mut sub_rng(3, 9), 40);
    assert_eq!(dense_hessian(&p, &w, Exec::Sequential).unwrap(), dense_hessian(&p, &w, Exec::Parallel).unwrap());
}
