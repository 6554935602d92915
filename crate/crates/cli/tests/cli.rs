use std::path::Path;
use std::process::{Command, Output};

fn spirit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spirit")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spirit(dir.path(), &[])), 1);
    assert_eq!(code(&spirit(dir.path(), &["bogus"])), 1);
    assert_eq!(code(&spirit(dir.path(), &["synth", "--out", "A", "--preset", "nowhere"])), 1);
    assert_eq!(code(&spirit(dir.path(), &["--help"])), 0);
}

#[test]
fn missing_site_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spirit(dir.path(), &["features", "--site", "absent", "--out", "f.csv"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"pipeline": {"gbdt": {"n_trees": 5}}}"#).unwrap();
    let out = spirit(dir.path(), &["--config", "c.json", "synth", "--out", "A", "--days", "2"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("A").exists());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["A", "B"] {
        let o = spirit(dir.path(), &["--seed", "3", "synth", "--out", out, "--days", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("A")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let a = std::fs::read(dir.path().join("A").join(&n)).unwrap();
        let b = std::fs::read(dir.path().join("B").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}
