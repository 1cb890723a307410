use std::path::Path;
use std::process::{Command, Output};

use lts_core::io::{parse_csv, parse_run_record, parse_truth, read_csv, RunRecord};
use lts_core::ols_fit;

fn lts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lts")).args(args).output().expect("binary runs")
}

fn gen(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["gen", "--out-dir", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    lts(&all)
}

fn fit(path: &Path, args: &[&str]) -> RunRecord {
    let mut all = vec!["fit", path.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = lts(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    parse_run_record(&String::from_utf8(out.stdout).unwrap()).unwrap()
}

#[test]
fn gen_writes_data_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        gen(dir.path(), &["--n", "30", "--d", "12", "--type", "high-leverage", "--outliers", "10", "--seed", "7"]);
    assert!(out.status.success());
    let data = read_csv(&dir.path().join("data.csv")).unwrap();
    assert_eq!((data.n(), data.d()), (30, 12));
    let truth = parse_truth(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth.outliers.len(), 10);
    assert!(truth.outliers.iter().all(|&i| i < 30));
}

#[test]
fn gen_clean_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert!(gen(dir.path(), &["--n", "5", "--d", "1", "--outliers", "0", "--seed", "1"]).status.success());
    }
    for file in ["data.csv", "truth.json"] {
        assert_eq!(std::fs::read(a.path().join(file)).unwrap(), std::fs::read(b.path().join(file)).unwrap());
    }
    let text = std::fs::read_to_string(a.path().join("data.csv")).unwrap();
    assert_eq!(parse_csv(&text).unwrap().n(), 5);
    assert!(parse_truth(&std::fs::read_to_string(a.path().join("truth.json")).unwrap()).unwrap().outliers.is_empty());
}

#[test]
fn gen_rejects_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gen(dir.path(), &["--n", "5", "--d", "2", "--outliers", "6"]).status.code(), Some(2));
    assert_eq!(gen(dir.path(), &["--n", "5", "--d", "2", "--laplace-scale", "-1"]).status.code(), Some(2));
}

#[test]
fn fit_echoes_default_coverage() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--n", "30", "--d", "12", "--outliers", "0", "--seed", "3"]);
    let rec = fit(&dir.path().join("data.csv"), &["--mode", "bba"]);
    assert_eq!(rec.config.h, 21);
    assert_eq!(rec.subset.len(), 21);
    assert!(rec.subset.iter().all(|&i| (1..=30).contains(&i)));
    assert_eq!(rec.beta.len(), 12);
}

#[test]
fn brute_and_bba_agree() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--n", "12", "--d", "2", "--outliers", "3", "--seed", "11"]);
    let path = dir.path().join("data.csv");
    let brute = fit(&path, &["--mode", "brute"]);
    let bba = fit(&path, &["--mode", "bba"]);
    assert_eq!(brute.objective, bba.objective);
    assert_eq!(brute.subset, bba.subset);
    assert_eq!(brute.dataset_digest, bba.dataset_digest);
}

#[test]
fn full_coverage_gives_ols() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--n", "9", "--d", "3", "--outliers", "2", "--seed", "4"]);
    let path = dir.path().join("data.csv");
    let rec = fit(&path, &["--h", "9"]);
    let data = read_csv(&path).unwrap();
    let ols = ols_fit(&data, &(0..9).collect::<Vec<_>>()).unwrap();
    assert!((rec.objective - ols.rss()).abs() <= 1e-10 * ols.rss());
    assert_eq!(rec.subset, (1..=9).collect::<Vec<_>>());
}

#[test]
fn record_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &["--n", "11", "--d", "2", "--outliers", "2", "--seed", "5"]);
    let out = lts(&["fit", dir.path().join("data.csv").to_str().unwrap(), "--threshold", "0"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rec = parse_run_record(&text).unwrap();
    assert_eq!(rec.to_json(), text.trim_end());
    assert_eq!(rec.config.socp_leaf_threshold, Some(0));
    assert!(rec.pi.is_some());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,oops\n").unwrap();
    assert_eq!(lts(&["fit", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lts(&["fit", dir.path().join("missing.csv").to_str().unwrap()]).status.code(), Some(2));

    let good = dir.path().join("good.csv");
    std::fs::write(&good, "1,0,1\n1,1,2\n1,2,2.9\n1,3,4.2\n1,4,5\n").unwrap();
    assert_eq!(lts(&["fit", good.to_str().unwrap(), "--h", "1"]).status.code(), Some(3));
    assert_eq!(lts(&["fit", good.to_str().unwrap(), "--h", "6"]).status.code(), Some(3));

    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "1,2,1\n1,2,2\n1,2,3\n1,2,4\n").unwrap();
    assert_eq!(lts(&["fit", flat.to_str().unwrap(), "--mode", "bba"]).status.code(), Some(4));
}

#[test]
fn bench_single_cell() {
    let out = lts(&["bench", "--n", "10", "--d", "2", "--types", "vertical", "--reps", "1", "--outliers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(header.len(), row.len());
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(col("brute_runs"), "1");
    assert_eq!(col("bba_success"), "1");
}

#[test]
fn bench_is_deterministic_and_validates() {
    let args = ["bench", "--n", "10,11", "--d", "2", "--reps", "3", "--outliers", "2", "--threshold", "0"];
    let strip = |o: Output| -> Vec<String> {
        // Drop the two timing columns before comparing.
        String::from_utf8(o.stdout)
            .unwrap()
            .lines()
            .map(|l| {
                l.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 10 && *i != 11)
                    .map(|(_, f)| f)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    let a = strip(lts(&args));
    assert_eq!(a.len(), 5);
    assert_eq!(a, strip(lts(&args)));
    assert_eq!(lts(&["bench", "--n", "10", "--d", "2", "--reps", "0"]).status.code(), Some(2));
}
