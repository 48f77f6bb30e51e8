use std::process::Command;

use hiergibbs::experiment::{
    emit_csv, parse_csv, run_experiment, to_csv_string, ExperimentConfig, ExperimentKind, RowType,
};

fn small_fig1(extra: &[&str]) -> ExperimentConfig {
    let mut overrides: Vec<String> =
        ["m_grid=3", "J_grid=25,50", "replications=3", "iters=1500", "burn_in=200"].map(String::from).to_vec();
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load(ExperimentKind::Fig1, None, &overrides).unwrap()
}

#[test]
fn emitted_csv_round_trips() {
    let res = run_experiment(&small_fig1(&[]), 1).unwrap();
    let text = to_csv_string(&res).unwrap();
    let (meta, rows) = parse_csv(&text).unwrap();
    assert_eq!(meta, res.metadata_line());
    assert_eq!(rows.len(), res.rows.len());
    let again = hiergibbs::experiment::ExperimentResult { rows, ..res.clone() };
    assert_eq!(to_csv_string(&again).unwrap(), text);
    // replicates then five summary rows per J
    assert_eq!(res.rows.iter().filter(|r| r.row_type == RowType::Replicate).count(), 6);
    assert_eq!(res.rows.iter().filter(|r| r.row_type == RowType::Summary).count(), 10);
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fig1(&[]);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    emit_csv(&run_experiment(&cfg, 1).unwrap(), &a).unwrap();
    emit_csv(&run_experiment(&cfg, 2).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let other = run_experiment(&small_fig1(&["base_seed=9"]), 1).unwrap();
    assert_ne!(to_csv_string(&other).unwrap(), std::fs::read_to_string(&a).unwrap());
}

#[test]
fn replicates_do_not_depend_on_each_other() {
    let fewer = run_experiment(&small_fig1(&["replications=2"]), 1).unwrap();
    let more = run_experiment(&small_fig1(&[]), 1).unwrap();
    let reps = |rows: &[hiergibbs::experiment::ResultRow]| -> Vec<_> {
        rows.iter().filter(|r| r.row_type == RowType::Replicate && r.replicate.unwrap() < 2).cloned().collect()
    };
    assert_eq!(reps(&fewer.rows), reps(&more.rows));
}

#[test]
fn emit_reports_the_path_on_failure() {
    let res = run_experiment(&ExperimentConfig::preset(ExperimentKind::Gap), 1).unwrap();
    let err = emit_csv(&res, std::path::Path::new("/nonexistent-dir/out.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/out.csv"), "{err}");
}

fn cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_hiergibbs")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn cli_gap_routes_agree() {
    let (_, rows) = parse_csv(&cli(&["gap", "--set", "m_grid=2,3,4,7"])).unwrap();
    let mut compared = 0;
    for closed in rows.iter().filter(|r| r.row_type == RowType::ClosedForm) {
        let matrix = rows
            .iter()
            .find(|r| r.row_type == RowType::Matrix && r.m == closed.m && r.variant == closed.variant)
            .unwrap();
        let (a, b) = (closed.gamma.unwrap(), matrix.gamma.unwrap());
        assert!((a - b).abs() < 1e-10, "{:?} m={:?}: {a} vs {b}", closed.variant, closed.m);
        compared += 1;
    }
    assert_eq!(compared, 12);
}

#[test]
fn cli_writes_to_the_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bound.csv");
    let stdout = cli(&["bound", "--seed", "4", "--out", path.to_str().unwrap()]);
    assert!(stdout.is_empty());
    let (meta, rows) = parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(meta.contains("seed=4"), "{meta}");
    let bound = rows.iter().find(|r| r.row_type == RowType::Bound).unwrap();
    assert!((bound.bound_t.unwrap() - 2.160_964_047_44).abs() < 1e-9);
}

#[test]
fn cli_rejects_unknown_keys() {
    let out = Command::new(env!("CARGO_BIN_EXE_hiergibbs")).args(["gap", "--set", "nonsense=1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
}
