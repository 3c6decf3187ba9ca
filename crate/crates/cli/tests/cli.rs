use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOPICS: [&str; 4] = ["harbor", "glacier", "orchard", "canyon"];

fn relevancy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relevancy"))
        .current_dir(dir)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env("RELEVANCY_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn project(dir: &Path, backend: &str) -> PathBuf {
    let rows: String = (0..20)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            format!(
                "{{\"id\":\"w{i:02}\",\"image_url\":\"https://img.example.org/{i}.jpg\",\"category\":\"{topic}\",\
                 \"section_text\":\"A {topic} seen from the north, entry {i}.\",\
                 \"page_description\":\"Overview article {i}.\",\"split\":\"{}\"}}\n",
                if i % 4 == 0 { "test" } else { "train" }
            )
        })
        .collect();
    std::fs::write(dir.join("wiki.jsonl"), rows).unwrap();
    let config = dir.join("project.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 3\noutput_dir = \"out\"\ntasks = [\"wiki\"]\n\n\
             [sources.wiki]\npath = \"wiki.jsonl\"\nadapter = \"wit\"\n\n[backend]\n{backend}\n"
        ),
    )
    .unwrap();
    config
}

const RULE_BASED: &str = "kind = \"mock\"\nmode = \"rule_based\"";

#[test]
fn build_eval_report_validate() {
    let dir = tempfile::tempdir().unwrap();
    project(dir.path(), RULE_BASED);

    let out = relevancy(dir.path(), &["build", "--config", "project.toml"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wiki: 20 positives, 20 negatives"), "{}", stdout(&out));

    let out = relevancy(dir.path(), &["eval", "--config", "project.toml", "--shots", "0,2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.starts_with("| model | shot | wiki |"), "{table}");
    assert!(table.contains("| mock-rule-based | 0 | 100.0 |"), "{table}");
    assert!(table.contains("| mock-rule-based | 2 | 100.0 |"), "{table}");

    let runs: Vec<PathBuf> =
        std::fs::read_dir(dir.path().join("out/runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let predictions = runs[0].join("predictions.jsonl");
    let out = relevancy(dir.path(), &["report", predictions.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("model,shots,task,"), "{}", stdout(&out));

    let out = relevancy(dir.path(), &["validate", "--config", "project.toml"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("40 samples"), "{}", stdout(&out));
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = \"three\"\n").unwrap();
    assert_eq!(relevancy(dir.path(), &["build", "--config", "bad.toml"]).status.code(), Some(1));
    assert_eq!(relevancy(dir.path(), &["build", "--config", "missing.toml"]).status.code(), Some(1));
    assert_eq!(relevancy(dir.path(), &["frobnicate"]).status.code(), Some(1));

    project(dir.path(), RULE_BASED);
    let out = relevancy(dir.path(), &["build", "--config", "project.toml", "--task", "recipe"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    assert_eq!(relevancy(dir.path(), &["report", "empty.jsonl"]).status.code(), Some(2));

    project(dir.path(), RULE_BASED);
    let out = relevancy(dir.path(), &["eval", "--config", "project.toml"]);
    assert_eq!(out.status.code(), Some(2), "eval before build");
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = format!(
        "kind = \"http\"\nendpoint_url = \"http://127.0.0.1:{port}/v1/chat/completions\"\n\
         model_name = \"llava-local\"\nmax_retries = 0\ntimeout_ms = 2000"
    );
    project(dir.path(), &http);
    assert_eq!(relevancy(dir.path(), &["build", "--config", "project.toml"]).status.code(), Some(0));
    let out = relevancy(dir.path(), &["eval", "--config", "project.toml", "--shots", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
