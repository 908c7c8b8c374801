use std::process::Command;
use std::time::Instant;

fn mlt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlt"))
}

#[test]
fn verify_passes_quickly_on_small_instances() {
    let start = Instant::now();
    let out = mlt().args(["verify", "--max-T", "4", "--max-U", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn perturbed_beta_fails_and_writes_the_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlt().args(["verify", "--perturb-beta", "--lattices", "20", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let case = std::fs::read_to_string(dir.path().join("failing_case.json")).unwrap();
    assert!(case.contains("log_p_blank"));
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlt().args(["train", "--method", "mlt", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = mlt().args(["train", "--method", "fastemit", "--lambda-fe", "-1", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = mlt().args(["sweep", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_decode() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = mlt()
            .args(["train", "--method", "mlt", "--lambda-mlt", "0.03", "--count", "8", "--epochs", "40", "--seed", "5", "--out"])
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join(name).join("trace.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
    for f in ["config.json", "checkpoint.json"] {
        assert!(dir.path().join("a").join(f).exists());
    }
    let a = dir.path().join("a");
    let out = mlt()
        .args(["decode", "--beam", "10", "--frame-period-ms", "60", "--checkpoint"])
        .arg(a.join("checkpoint.json"))
        .arg("--config")
        .arg(a.join("config.json"))
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let latency = std::fs::read_to_string(a.join("latency.json")).unwrap();
    assert!(latency.contains("\"pr50_ms\"") && latency.contains("\"pr90_ms\""));
    for line in std::fs::read_to_string(a.join("decode.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let (Some(f), Some(ms)) = (v["latency_frames"].as_i64(), v["latency_ms"].as_f64()) {
            assert_eq!(ms, f as f64 * 60.0);
        }
    }
}

#[test]
fn gen_corpus_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlt().args(["gen-corpus", "--count", "5", "--seed", "3", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
}
