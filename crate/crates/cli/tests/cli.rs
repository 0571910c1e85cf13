use std::path::Path;
use std::process::Command;

use gensr_core::corpus::{compute_stats, read_corpus, CorpusStats, STATS_FILE};

fn gensr(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gensr"))
        .args(args)
        .args(["--out", out.to_str().unwrap(), "--users", "8"])
        .output()
        .unwrap()
}

#[test]
fn gen_data_is_repeatable_and_stats_match_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = gensr(dir, &["gen-data"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["items.jsonl", "queries.jsonl", "interactions.jsonl", STATS_FILE, "manifest.json"] {
        let (x, y) = (std::fs::read(a.join("data").join(name)).unwrap(), std::fs::read(b.join("data").join(name)).unwrap());
        assert_eq!(x, y, "{name} differs between runs");
    }
    let corpus = read_corpus(&a.join("data")).unwrap();
    let written: CorpusStats = serde_json::from_slice(&std::fs::read(a.join("data").join(STATS_FILE)).unwrap()).unwrap();
    assert_eq!(written, compute_stats(&corpus));
}

#[test]
fn missing_prerequisite_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gensr(tmp.path(), &["analyze", "gradients"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_key_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gensr(tmp.path(), &["gen-data", "--no-such-key", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
