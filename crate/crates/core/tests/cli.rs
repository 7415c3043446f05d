//! End-to-end checks of the installed binary: exit codes, file and stdout
//! output, transcript record/replay, and the eval round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SERVLET: &str = r#"public class SmokeServlet {
    public void doGet(HttpServletRequest request, HttpServletResponse response) {
        String name = request.getParameter("name");
        String data = read(name);
        response.getWriter().write(data);
    }

    public String read(String name) throws IOException {
        if (name.contains("..")) {
            throw new IllegalArgumentException("traversal attempt");
        }
        return Files.readString(Paths.get("/srv/docs/" + name));
    }
}
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chainsolver"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "exit {:?}, stderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn write_servlet(dir: &Path) -> PathBuf {
    let path = dir.join("smoke.mj");
    fs::write(&path, SERVLET).unwrap();
    path
}

#[test]
fn version_flag_succeeds() {
    let output = run(&["--version"]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("chainsolver"));
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let output = run(&["analyze", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gen_summary_writes_one_chain_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_servlet(dir.path());
    let summary = stdout_json(&run(&["gen-summary", source.to_str().unwrap()]));
    let chains = summary["chains"].as_array().unwrap();
    assert_eq!(chains.len(), 1);
    assert_eq!(chains[0]["rule"], "path-traversal");
    assert_eq!(chains[0]["methods"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_summary_walks_directories_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    write_servlet(dir.path());
    let second = SERVLET.replace("SmokeServlet", "OtherServlet");
    fs::write(dir.path().join("other.mj"), second).unwrap();
    let summary = stdout_json(&run(&["gen-summary", dir.path().to_str().unwrap()]));
    let ids: Vec<&str> = summary["chains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 2);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted, "chains are emitted in id order");
}

#[test]
fn analyze_reports_the_guarded_chain_as_clear() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_servlet(dir.path());
    let summary_path = dir.path().join("summary.json");
    let output = run(&[
        "gen-summary",
        source.to_str().unwrap(),
        "-o",
        summary_path.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let report = stdout_json(&run(&["analyze", summary_path.to_str().unwrap()]));
    assert_eq!(report["backend"], "oracle");
    let verdicts = report["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 1);
    assert_eq!(verdicts[0]["exploitable"], false);
    assert_eq!(verdicts[0]["reason"], "triggerUnsatisfied");
    assert!(report["errors"].as_array().unwrap().is_empty());
}

#[test]
fn analyze_rejects_a_corrupt_summary_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\"chains\": [{\"id\": 5}]}").unwrap();
    let output = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error:"));
}

#[test]
fn llm_backend_requires_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_servlet(dir.path());
    let summary_path = dir.path().join("summary.json");
    run(&[
        "gen-summary",
        source.to_str().unwrap(),
        "-o",
        summary_path.to_str().unwrap(),
    ]);
    let output = run(&[
        "analyze",
        summary_path.to_str().unwrap(),
        "--backend",
        "llm",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("endpoint"));
}

#[test]
fn recorded_transcripts_replay_to_the_same_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let source = write_servlet(dir.path());
    let summary_path = dir.path().join("summary.json");
    run(&[
        "gen-summary",
        source.to_str().unwrap(),
        "-o",
        summary_path.to_str().unwrap(),
    ]);
    let transcript = dir.path().join("transcript.jsonl");
    let recorded = stdout_json(&run(&[
        "analyze",
        summary_path.to_str().unwrap(),
        "--record-transcript",
        transcript.to_str().unwrap(),
    ]));
    assert!(transcript.exists());
    let replayed = stdout_json(&run(&[
        "replay",
        summary_path.to_str().unwrap(),
        "--transcript",
        transcript.to_str().unwrap(),
    ]));
    assert_eq!(recorded["verdicts"], replayed["verdicts"]);
    assert_eq!(replayed["backend"], "replay");
}

#[test]
fn eval_scores_the_shipped_corpus_perfectly() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/manifest.json");
    let report = stdout_json(&run(&["eval", manifest.to_str().unwrap()]));
    assert_eq!(report["overall"]["counts"]["fn"], 0);
    assert_eq!(report["overall"]["recall"], 100.0);
    assert_eq!(report["overall"]["accuracy"], 100.0);
    assert_eq!(report["perRule"].as_object().unwrap().len(), 3);
    assert!(report["missing"].as_array().unwrap().is_empty());
    assert!(report["unlabeled"].as_array().unwrap().is_empty());
}
