use std::path::Path;
use std::process::Command;

fn dam(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dam")).args(args).current_dir(dir).output().unwrap()
}

const QUICK: [&str; 12] = [
    "--set",
    "dataset.n_source=200",
    "--set",
    "dataset.n_target=150",
    "--set",
    "source_training.epochs=5",
    "--set",
    "dfs.epochs=5",
    "--set",
    "adl.epochs=3",
    "--seeds",
    "0,1",
];

fn with_quick<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(QUICK).collect()
}

#[test]
fn stepwise_commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |out: std::process::Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(dam(&with_quick(&["gen-data", "--seed", "3", "--out", "data"]), d));
    for f in ["source.csv", "target.csv", "foundation.csv"] {
        assert!(d.join("data").join(f).is_file(), "missing {f}");
    }
    ok(dam(&with_quick(&["train-source", "--data", "data/source.csv", "--out", "source.txt"]), d));
    let q = ok(dam(&with_quick(&["query", "--model", "source.txt", "--target", "data/target.csv", "--out", "query.json"]), d));
    assert!(q.contains("queried 7 of 150"), "{q}");
    let a = ok(dam(
        &with_quick(&[
            "adapt", "--model", "source.txt", "--target", "data/target.csv", "--query", "query.json", "--foundation",
            "data/foundation.csv", "--out", "adapted",
        ]),
        d,
    ));
    assert!(a.contains("full: target accuracy"), "{a}");
    for f in ["target_model.txt", "surrogate.txt", "epochs.json", "dfs_history.json"] {
        assert!(d.join("adapted").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn ablate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = dam(&with_quick(&["ablate", "--variants", "full,source_only", "--output-dir", "runs"]), d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(d.join("runs/summary.txt")).unwrap();
    assert!(summary.contains("ordering:"), "{summary}");
    assert_eq!(std::fs::read_dir(d.join("runs/records")).unwrap().count(), 4);

    let again = dam(&["report", "--input", "runs", "--out", "again"], d);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(d.join("again/summary.csv")).unwrap(), std::fs::read_to_string(d.join("runs/summary.csv")).unwrap());
}

#[test]
fn bad_input_exits_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dam(&["run", "--set", "rho=1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
    let out = dam(&["train-source", "--data", "missing.csv", "--out", "m.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
}
