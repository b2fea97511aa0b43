mod common;

use std::path::Path;
use std::process::{Command, Output};

use alguide::corpus::{load_jsonl, Origin, Taxonomy};
use serde_json::Value;

fn alguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alguide"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = alguide(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "-o", p(dir), "--unlabeled", "400", "--dev", "40", "--test", "120", "--seed", "2"]);
}

#[test]
fn run_produces_the_expected_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("run");
    let stdout = ok(&[
        "run", "--unlabeled", p(&data.join("unlabeled.jsonl")), "--bootstrap", p(&data.join("bootstrap.jsonl")),
        "--answers", p(&data.join("answers.jsonl")), "--monitor", p(&data.join("dev.jsonl")),
        "--mock-llm", "-o", p(&out),
    ]);
    assert!(stdout.contains("100 human + 500 generated = 600 acquired"), "{stdout}");
    let split = load_jsonl(out.join("cluster_al.jsonl"), &Taxonomy::safety_default()).unwrap();
    assert_eq!(split.len(), 600);
    assert_eq!(split.iter().filter(|i| i.origin == Origin::Human).count(), 100);
    assert!(out.join("events.jsonl").is_file());

    let report = tmp.path().join("report.json");
    let md = tmp.path().join("report.md");
    let said = ok(&[
        "report", "--checkpoint", p(&out.join("checkpoint.json")), "--test", p(&data.join("test.jsonl")),
        "-o", p(&report), "--markdown", p(&md),
    ]);
    assert!(said.contains("over 120 test instances"));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["trajectory"].as_array().unwrap().len(), 6);
    assert!(std::fs::read_to_string(&md).unwrap().contains("iteration 5"));

    let eval_out = tmp.path().join("eval");
    let table = ok(&[
        "evaluate", "--split", p(&out.join("cluster_al.jsonl")), "--split", p(&data.join("bootstrap.jsonl")),
        "--test", p(&data.join("test.jsonl")), "--transfer", "http://127.0.0.1:9", "--retries", "0",
        "-o", p(&eval_out),
    ]);
    assert!(table.contains("| native | cluster_al |"), "{table}");
    assert!(table.contains("failed:"), "{table}");
    let cells: Value = serde_json::from_str(&std::fs::read_to_string(eval_out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 4);
}

#[test]
fn zero_variations_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("run");
    let (u, b, ans) = (data.join("unlabeled.jsonl"), data.join("bootstrap.jsonl"), data.join("answers.jsonl"));
    let base = ["run", "--unlabeled", p(&u), "--bootstrap", p(&b), "--answers", p(&ans), "-o", p(&out)];
    let mut args = base.to_vec();
    args.extend(["--variations", "0", "--strategy", "random"]);
    let stdout = ok(&args);
    assert!(stdout.contains("100 human + 0 generated = 100 acquired"), "{stdout}");
    assert_eq!(load_jsonl(out.join("random.jsonl"), &Taxonomy::safety_default()).unwrap().len(), 100);

    let mut args = base.to_vec();
    args.extend(["--strategy", "uncertainty"]);
    let bad = alguide(&args);
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    for name in ["random", "topn", "coreset", "cluster_al"] {
        assert!(err.contains(name), "{err}");
    }

    let mut args = base.to_vec();
    args.extend(["--batch", "200", "--mock-llm"]);
    assert!(!alguide(&args).status.success());
}

#[test]
fn partial_run_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("run");
    let answers = data.join("answers.jsonl");
    let stdout = ok(&[
        "run", "--unlabeled", p(&data.join("unlabeled.jsonl")), "--bootstrap", p(&data.join("bootstrap.jsonl")),
        "--answers", p(&answers), "--mock-llm", "--max-iterations", "2", "-o", p(&out),
    ]);
    assert!(stdout.contains("2 iterations, 40 human"), "{stdout}");
    let stdout = ok(&["run", "--resume", p(&out.join("checkpoint.json")), "--answers", p(&answers), "-o", p(&out)]);
    assert!(stdout.contains("5 iterations, 100 human + 500 generated"), "{stdout}");
}

#[test]
fn ingest_deduplicates_and_rejects_bad_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.txt");
    std::fs::write(&raw, "I need a lawyer\n\ni NEED   a lawyer \nmy chest hurts\n").unwrap();
    let jsonl = tmp.path().join("more.jsonl");
    std::fs::write(&jsonl, "{\"id\":\"m1\",\"text\":\"can I sue my boss\",\"label\":\"Legal-Advice\"}\n").unwrap();
    let out = tmp.path().join("corpus.jsonl");
    let answers = tmp.path().join("answers.jsonl");
    let said = ok(&["ingest", p(&raw), p(&jsonl), "-o", p(&out), "--answers", p(&answers)]);
    assert!(said.contains("ingested 3 instances (1 duplicates dropped)"), "{said}");
    let pool = load_jsonl(&out, &Taxonomy::safety_default()).unwrap();
    assert!(pool.get("raw-000001").is_some());
    assert!(pool.get("m1").is_some());
    assert_eq!(std::fs::read_to_string(&answers).unwrap().lines().count(), 1);

    let said = ok(&["ingest", p(&raw), "-o", p(&out), "--keep-duplicates"]);
    assert!(said.contains("ingested 3 instances (1 duplicates kept)"), "{said}");

    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, b"fine\n\xff\xfe broken\n").unwrap();
    let res = alguide(&["ingest", p(&bad), "-o", p(&out)]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 2") && err.contains("UTF-8"), "{err}");
}

#[test]
fn bootstrap_split_is_disjoint_and_checks_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("splits");
    let corpus = p(&data.join("unlabeled.jsonl")).to_string();
    let labels = p(&data.join("answers.jsonl")).to_string();
    let said = ok(&[
        "bootstrap-split", "--corpus", &corpus, "--labels", &labels, "--bootstrap", "20", "--dev", "20", "--test",
        "60", "-o", p(&out),
    ]);
    assert!(said.contains("bootstrap 20 dev 20 test 60 unlabeled 300"), "{said}");
    let tax = Taxonomy::safety_default();
    let set = alguide::corpus::SplitSet {
        bootstrap: load_jsonl(out.join("bootstrap.jsonl"), &tax).unwrap(),
        dev: load_jsonl(out.join("dev.jsonl"), &tax).unwrap(),
        test: load_jsonl(out.join("test.jsonl"), &tax).unwrap(),
        train: Default::default(),
    };
    set.check_disjoint().unwrap();
    let rest = load_jsonl(out.join("unlabeled.jsonl"), &tax).unwrap();
    assert!(set.bootstrap.ids().all(|id| rest.get(id).is_none()));

    let res = alguide(&[
        "bootstrap-split", "--corpus", &corpus, "--labels", &labels, "--test", "1000", "-o", p(&out),
    ]);
    assert!(!res.status.success());
}

#[test]
fn matrix_writes_cells_and_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("matrix");
    let said = ok(&[
        "matrix", "--unlabeled", p(&data.join("unlabeled.jsonl")), "--bootstrap", p(&data.join("bootstrap.jsonl")),
        "--answers", p(&data.join("answers.jsonl")), "--test", p(&data.join("test.jsonl")),
        "--strategies", "random,cluster_al", "--seeds", "0,1", "--budget", "20", "--batch", "10", "--mock-llm",
        "-o", p(&out),
    ]);
    assert!(said.contains("cluster_al") && said.contains("completed 2 failed 0"), "{said}");
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("cells.csv")).unwrap().lines().count(), 5);
    assert!(out.join("random_seed1").join("random.jsonl").is_file());
}

#[test]
fn kappa_over_shared_items() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    std::fs::write(&a, "{\"id\":\"1\",\"label\":\"x\"}\n{\"id\":\"2\",\"label\":\"y\"}\n{\"id\":\"3\",\"label\":\"x\"}\n").unwrap();
    std::fs::write(&b, "{\"id\":\"1\",\"label\":\"x\"}\n{\"id\":\"2\",\"label\":\"y\"}\n{\"id\":\"4\",\"label\":\"y\"}\n").unwrap();
    assert!(ok(&["kappa", p(&a), p(&b)]).contains("kappa 1.0000 over 2 shared items"));
}

#[test]
fn config_file_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"budget": "lots"}"#).unwrap();
    let res = alguide(&["--config", p(&cfg), "kappa", "a", "b"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("budget"));
}
