use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadic-testing"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dyadic-testing-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

const QUICK: [&str; 4] = ["--starts", "4", "--max-iter", "300"];

fn single_cube(block: &str) -> String {
    format!(
        r#"{{"depth": 0, "branching": 2,
            "weights": {{"sigma": [1.0], "omega": [1.0]}},
            "kernel": {{"cubes": [{block}],
                       "domain": {{"dim": 1, "norm": {{"kind": "ell_s", "s": 2}}}},
                       "range": {{"dim": 1, "norm": {{"kind": "ell_s", "s": 2}}}}}},
            "p": 3, "q": 3, "t": "inf"}}"#
    )
}

#[test]
fn single_cube_tree_gives_unit_constants() {
    let path = scratch("unit.json");
    std::fs::write(&path, single_cube(r#"{"id": "0:0", "block": [[1.0]]}"#)).unwrap();
    let mut args = vec!["constants", "--input", path.to_str().unwrap(), "--out", "csv"];
    args.extend(QUICK);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("instance,constant,value,method"));
    for line in lines {
        assert_eq!(line.split(',').nth(2), Some("1"), "{line}");
    }
}

#[test]
fn zero_kernel_gives_zero_testing_constants() {
    let path = scratch("zero.json");
    std::fs::write(&path, single_cube("")).unwrap();
    let mut args = vec!["compare", "--input", path.to_str().unwrap()];
    args.extend(QUICK);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for key in ["\"norm\": 0.0", "\"direct\": 0.0", "\"dual\": 0.0", "\"pairing\": 0.0"] {
        assert!(text.contains(key), "{key} missing");
    }
}

#[test]
fn same_seed_same_bytes() {
    let args = ["compare", "--seed", "11", "--instances", "3", "--dim", "2", "--kernel", "dense-nonneg", "--exponents", "2,3"];
    let mut all: Vec<&str> = args.to_vec();
    all.extend(QUICK);
    let a = run(&all);
    let b = run(&all);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let mut other = all.clone();
    other[2] = "12";
    assert_ne!(run(&other).stdout, a.stdout);
}

#[test]
fn generated_instances_feed_back_in() {
    let path = scratch("gen.json");
    let out = run(&["gen", "--seed", "3", "--instances", "2", "--kernel", "diagonal", "--dim", "2", "--output", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let mut from_file = vec!["constants", "--seed", "3", "--input", path.to_str().unwrap()];
    from_file.extend(QUICK);
    let mut generated = vec!["constants", "--seed", "3", "--instances", "2", "--kernel", "diagonal", "--dim", "2"];
    generated.extend(QUICK);
    let a = run(&from_file);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, run(&generated).stdout);
}

#[test]
fn usage_and_input_errors_exit_one() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["compare", "--p", "0.5"]).status.code(), Some(1));
    assert_eq!(run(&["compare", "--input", "/nonexistent/instances.json"]).status.code(), Some(1));
    assert_eq!(run(&["bellman", "--bellman-grid", "2x1"]).status.code(), Some(1));

    let path = scratch("bad.json");
    std::fs::write(&path, single_cube(r#"{"id": "1:0", "block": [[1.0]]}"#)).unwrap();
    let out = run(&["constants", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn failed_check_exits_two_with_diagnostics() {
    // A coarse grid cannot resolve the telescoping steps.
    let out = run(&[
        "bellman", "--bellman-grid", "16x7", "--depth", "3", "--instances", "12", "--sequence-depth", "3",
        "--samples", "500", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"failures\"") && err.contains("telescoping steps"), "{err}");
    assert!(stdout(&out).contains("\"passed\": false"));
}

#[test]
fn gap_search_prints_ratios_without_verdict() {
    let out = run(&["gap-search", "--dim", "1,2", "--depth", "2", "--iterations", "30", "--out", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("dim,depth,norm_ratio,form_ratio"));
    assert_eq!(text.lines().count(), 3);
    let json = stdout(&run(&["gap-search", "--dim", "1", "--depth", "2", "--iterations", "30"]));
    assert!(!json.contains("verdict"));
}

#[test]
fn maximal_testing_and_corollaries_run() {
    let mut args = vec!["maximal-testing", "--dim", "2", "--s", "inf", "--p", "1.5,4", "--out", "csv"];
    args.extend(QUICK);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 3);

    let mut args = vec!["corollaries", "--instances", "2"];
    args.extend(QUICK);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"depolarisation\""));
}

#[test]
fn bellman_writes_table() {
    let path = scratch("table.json");
    let out = run(&[
        "bellman", "--bellman-grid", "24x9", "--depth", "2", "--instances", "4", "--sequence-depth", "1",
        "--samples", "200", "--table", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::metadata(&path).unwrap().len() > 0);
}
