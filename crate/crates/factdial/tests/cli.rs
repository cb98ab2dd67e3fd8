use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use factdial::formats;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_factdial"));
    c.env_remove("FACTDIAL_LOG");
    c
}

struct Serve(Child, String);

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(script: &Path) -> Serve {
    let mut child = bin()
        .args(["mock-serve", "--port", "0", "--mock-script"])
        .arg(script)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    Serve(child, line.trim().to_string())
}

fn factdial(url: &str, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(fixtures().join("config.json"))
        .args(["--base-url", url, "--out-dir"])
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_1() {
    let o = bin().arg("--no-such-flag").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = bin().args(["select", "--n", "many"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("run-all"));
}

#[test]
fn missing_inputs_exit_2_with_path() {
    let o = bin().args(["--corpus", "/nowhere/corpus.jsonl", "run-all"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nowhere/corpus.jsonl"));
    let o = bin().args(["--config", "/nowhere/cfg.json", "select"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nowhere/cfg.json"));
}

#[test]
fn unreachable_gateway_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = factdial("http://127.0.0.1:1/v1", dir.path(), &["run-all"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unreachable"));
}

#[test]
fn variant_r_selection_needs_reformulations() {
    let dir = tempfile::tempdir().unwrap();
    let o = factdial("http://127.0.0.1:1/v1", dir.path(), &["--variant", "r", "select"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reformulations.jsonl"));
}

#[test]
fn run_all_equals_composed_subcommands() {
    let s = serve(&fixtures().join("mock_script.json"));
    let dir = tempfile::tempdir().unwrap();
    let (whole, parts) = (dir.path().join("whole"), dir.path().join("parts"));
    ok(&factdial(&s.1, &whole, &["run-all"]));
    for step in ["reformulate", "select", "generate", "factscore", "evaluate"] {
        ok(&factdial(&s.1, &parts, &[step]));
    }
    let mut names: Vec<_> = std::fs::read_dir(&whole).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in names {
        let a = std::fs::read(whole.join(&name)).unwrap();
        let b = std::fs::read(parts.join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(whole.join("factscore_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["fact"], 75.0);
    assert_eq!(summary["neip"], 20.0);
}

#[test]
fn variants_differ_only_where_reformulation_changes_the_prompt() {
    let s = serve(&fixtures().join("mock_script.json"));
    let dir = tempfile::tempdir().unwrap();
    let (nr, r) = (dir.path().join("nr"), dir.path().join("r"));
    ok(&factdial(&s.1, &nr, &["--variant", "nr", "run-all"]));
    ok(&factdial(&s.1, &r, &["--variant", "r", "run-all"]));
    let a = formats::load_responses(&nr.join("responses.jsonl")).unwrap();
    let b = formats::load_responses(&r.join("responses.jsonl")).unwrap();
    assert_eq!(a.len(), 10);
    let ids: Vec<&str> = a.iter().map(|x| x.dialogue_id.as_str()).collect();
    assert_eq!(ids, ["d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7", "d8", "d9"]);
    let differing: Vec<&str> =
        a.iter().zip(&b).filter(|(x, y)| x.text != y.text).map(|(x, _)| x.dialogue_id.as_str()).collect();
    assert_eq!(differing, ["d0", "d3"]);
    assert!(a.iter().all(|x| x.method == "tg-drg-nr"));
    assert!(!nr.join("reformulations.jsonl").exists());
}

#[test]
fn failing_generation_is_collected() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"{"rules": [{"template": "Generate", "status": 500}]}"#).unwrap();
    let corpus = dir.path().join("one.jsonl");
    std::fs::write(&corpus, "{\"id\": \"solo\", \"turns\": [{\"speaker\": \"A\", \"text\": \"Hello there.\"}]}\n")
        .unwrap();
    let s = serve(&script);
    let step = |name: &str| {
        bin()
            .args(["--base-url", &s.1, "--max-retries", "1", "--variant", "nr", "--corpus"])
            .arg(&corpus)
            .arg("--out-dir")
            .arg(dir.path().join("out"))
            .arg(name)
            .output()
            .unwrap()
    };
    ok(&step("select"));
    let o = step("generate");
    assert_eq!(o.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("1 item(s) failed") && stderr.contains("solo"), "{stderr}");
    let responses = formats::load_responses(&dir.path().join("out/responses.jsonl")).unwrap();
    assert!(responses.is_empty());
}

#[test]
fn subgraph_emits_pool_triples() {
    let s = serve(&fixtures().join("mock_script.json"));
    let dir = tempfile::tempdir().unwrap();
    ok(&factdial(&s.1, dir.path(), &["--variant", "nr", "select"]));
    ok(&factdial(&s.1, dir.path(), &["subgraph", "--k", "3"]));
    let corpus = formats::load_corpus(&fixtures().join("corpus.jsonl")).unwrap();
    let graphs = formats::load_sense_graphs(&dir.path().join("pcst_graphs.jsonl")).unwrap();
    assert_eq!(graphs.len(), corpus.len());
    for (g, d) in graphs.iter().zip(&corpus) {
        assert_eq!(g.dialogue_id, d.id);
        assert_eq!(g.triples.is_empty(), d.triples.is_empty());
        for t in &g.triples {
            assert!(d.triples.contains(&t.triple));
        }
    }
    let graphs = dir.path().join("pcst_graphs.jsonl");
    ok(&factdial(&s.1, dir.path(), &["--variant", "nr", "generate", "--graphs", graphs.to_str().unwrap()]));
}

#[test]
fn agreement_prints_raw_and_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    std::fs::write(&a, "yes\nyes\nno\nno\n").unwrap();
    std::fs::write(&b, "yes\nno\nno\nno\n\n").unwrap();
    let o = bin().arg("agreement").arg(&a).arg(&b).output().unwrap();
    ok(&o);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["raw"], 0.75);
    assert_eq!(v["kappa"], 0.5);
    std::fs::write(&b, "yes\n").unwrap();
    let o = bin().arg("agreement").arg(&a).arg(&b).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
