use std::path::Path;
use std::process::{Command, Output};

fn varmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varmt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = varmt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bpe_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("corpus.txt");
    std::fs::write(&text, "ловит рыбу в реке\nрыбак ловит рыбу\nрека широкая\n").unwrap();
    let codes = dir.path().join("codes");
    let seg = dir.path().join("seg");
    let back = dir.path().join("back");
    ok(&["learn-bpe", "--input", p(&text), "--merges", "20", "--out", p(&codes)]);
    ok(&["apply-bpe", "--codes", p(&codes), "--input", p(&text), "--out", p(&seg)]);
    ok(&["restore-bpe", "--input", p(&seg), "--out", p(&back)]);
    assert_eq!(std::fs::read_to_string(&back).unwrap(), std::fs::read_to_string(&text).unwrap());
}

#[test]
fn evaluate_reports_bleu() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("ref");
    std::fs::write(&r, "the cat sat on the mat\na b c d e\n").unwrap();
    let out = ok(&["evaluate", "--hyp", p(&r), "--ref", p(&r)]);
    assert!(out.starts_with("BLEU = 100.00"), "{out}");
}

#[test]
fn fairness_report_prints_measures() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores");
    let pops = dir.path().join("pops");
    std::fs::write(&scores, "ru\t30.0\nuk\t20.0\nbe\t10.0\n").unwrap();
    std::fs::write(&pops, "ru\t150\nuk\t40\nbe\t5\n").unwrap();
    let out = ok(&["fairness-report", "--scores", p(&scores), "--pops", p(&pops), "--avg-groups", "uk,be"]);
    assert!(out.contains("avg_L\t15.0"), "{out}");
    assert!(out.contains("max_min\t20.0"), "{out}");
    let missing = varmt(&["fairness-report", "--scores", p(&scores), "--pops", p(&scores), "--avg-groups", "xx"]);
    assert!(!missing.status.success());
}

#[test]
fn vmf_check_passes() {
    let out = ok(&["vmf-check", "--dims", "3,20", "--pairs", "5"]);
    assert!(!out.is_empty());
}

#[test]
fn pipeline_names_the_stage_with_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ok(&["synth", "--out", p(dir.path()), "--pairs", "200", "--tgt-mono", "50"]);
    let out = varmt(&["pipeline", "--config", cfg.trim(), "--stage", "e"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage (e)") && err.contains("missing dependency"), "{err}");
    let bad = varmt(&["pipeline", "--config", cfg.trim(), "--ablation", "dropout"]);
    assert!(!bad.status.success());
}
