use std::path::Path;
use std::process::{Command, Output};

use rank_breaking::io::read_dataset;

fn rankbreak(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankbreak")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn generate_writes_requested_users_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["generate", "--scenario", "canonical", "--d", "256", "--kappa", "32", "--blocks", "1,2,3,4,5"];
    let mut a = base.to_vec();
    a.extend(["--n", "10000", "--seed", "7", "--output", "a.jsonl"]);
    let out = rankbreak(dir.path(), &a);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10000);
    assert!(String::from_utf8_lossy(&out.stdout).contains("m=5:10000"));
    assert!(dir.path().join("a.jsonl.truth.json").exists());

    let mut b = base.to_vec();
    b.extend(["--n", "10000", "--seed", "7", "--output", "b.jsonl"]);
    assert_eq!(code(&rankbreak(dir.path(), &b)), 0);
    assert_eq!(std::fs::read(dir.path().join("b.jsonl")).unwrap().as_slice(), text.as_bytes());
}

#[test]
fn oversized_blocks_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        rankbreak(dir.path(), &["generate", "--d", "10", "--kappa", "5", "--blocks", "3,2", "--n", "3", "--output", "x"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rankbreak(dir.path(), &["fit", "--input", "absent.jsonl"])), 3);
}

#[test]
fn unknown_flag_and_protocol_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rankbreak(dir.path(), &["fit", "--bogus"])), 2);
    std::fs::write(dir.path().join("r.csv"), "a,b,c\n").unwrap();
    let out = rankbreak(dir.path(), &["ingest", "--input", "r.csv", "--m", "1", "--protocol", "median", "--output", "o"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ingest_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let row: Vec<String> = (0..10).map(|i| format!("item{i}")).collect();
    std::fs::write(dir.path().join("r.csv"), row.join(",") + "\n").unwrap();

    let out = rankbreak(dir.path(), &["ingest", "--input", "r.csv", "--m", "4", "--protocol", "split", "--output", "s.jsonl"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ds = read_dataset(&dir.path().join("s.jsonl"), None).unwrap();
    let edges = ds.observations()[0].edges();
    assert_eq!(edges.len(), 1);
    assert_eq!((edges[0].m(), edges[0].r()), (4, 10));
    let labels = std::fs::read_to_string(dir.path().join("s.jsonl.labels.json")).unwrap();
    assert!(labels.contains("item9"));

    let out = rankbreak(dir.path(), &["ingest", "--input", "r.csv", "--m", "3", "--protocol", "blocks", "--output", "b.jsonl"]);
    assert_eq!(code(&out), 0);
    let ds = read_dataset(&dir.path().join("b.jsonl"), None).unwrap().with_order(3);
    let sizes: Vec<usize> = ds.observations()[0].partition().blocks().iter().rev().map(Vec::len).collect();
    assert_eq!(sizes, vec![3, 3, 3, 1]);
    assert_eq!(ds.num_retained_edges(), 3);

    std::fs::write(dir.path().join("dup.csv"), "a,b,a\n").unwrap();
    let out = rankbreak(dir.path(), &["ingest", "--input", "dup.csv", "--m", "1", "--output", "d.jsonl"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn fit_and_diagnose_reports() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["generate", "--d", "6", "--blocks", "1,2", "--n", "400", "--seed", "3", "--output", "g.jsonl", "--orderings", "g.ord"];
    assert_eq!(code(&rankbreak(dir.path(), &gen)), 0);
    for est in ["grb", "prb", "full_mle"] {
        let out = rankbreak(
            dir.path(),
            &["fit", "--input", "g.jsonl", "--estimator", est, "--M", "2", "--truth", "g.jsonl.truth.json", "--output", "f.json"],
        );
        assert_eq!(code(&out), 0, "{est}: {}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("f.json")).unwrap()).unwrap();
        assert_eq!(report["theta_hat"].as_array().unwrap().len(), 6);
        assert!(report["squared_error"].as_f64().unwrap().is_finite());
    }
    let out = rankbreak(dir.path(), &["fit", "--input", "g.jsonl", "--estimator", "oracle", "--orderings", "g.ord"]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&rankbreak(dir.path(), &["fit", "--input", "g.jsonl", "--estimator", "oracle"])), 2);

    let out = rankbreak(dir.path(), &["diagnose", "--input", "g.jsonl", "--M", "2"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["alpha"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(report["effective_sample_size"].as_u64().unwrap(), 400 * 3);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "d = 12\nblocks = [1, 1]\nn = 5\nseed = 2\n").unwrap();
    let out = rankbreak(dir.path(), &["generate", "--config", "c.toml", "--n", "7", "--output", "c.jsonl"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ds = read_dataset(&dir.path().join("c.jsonl"), Some(12)).unwrap();
    assert_eq!(ds.n(), 7);
    std::fs::write(dir.path().join("bad.toml"), "colour = 3\n").unwrap();
    assert_eq!(code(&rankbreak(dir.path(), &["generate", "--config", "bad.toml", "--output", "z"])), 2);
}

#[test]
fn experiment_csv_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "experiment", "--d", "6", "--blocks", "1,2", "--M", "1,2", "--n", "50,100", "--trials", "2", "--estimators",
        "grb,prb,oracle,full_mle", "--seed", "11", "--timing", "off", "--output", "e.csv",
    ];
    let out = rankbreak(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "estimator,M,n,trial,mse,mse_over_d2,seconds,permutation_terms");
    assert_eq!(body.len(), 1 + 2 * 2 * 5);
    for line in &body[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 8);
        for cell in &cells[1..] {
            assert!(cell.parse::<f64>().unwrap().is_finite(), "{line}");
        }
    }

    let bad_n = ["experiment", "--d", "6", "--blocks", "1", "--n", "0", "--trials", "1", "--output", "x.csv"];
    assert_eq!(code(&rankbreak(dir.path(), &bad_n)), 2);
    let wide = ["experiment", "--d", "12", "--blocks", "1", "--n", "10", "--estimators", "full_mle", "--output", "y.csv"];
    assert_eq!(code(&rankbreak(dir.path(), &wide)), 2);
}
