use std::fs;
use std::path::Path;
use std::process::Command;

use divrank::corpus::{self, Interaction, InteractionLog, Item, ItemCatalog, LogRole};
use divrank::ids::{ItemId, UserId};
use divrank::llm::mock::{self, MockServer};

/// 40 users over 24 items in 4 genres; each user rates 12 items.
fn write_dataset(dir: &Path) {
    let genres = ["Drama", "Comedy", "Horror", "Fantasy"];
    let catalog = ItemCatalog::new((0..24u64).map(|i| Item {
        id: ItemId(i + 1),
        title: format!("Volume {} of {}", i + 1, genres[i as usize % 4]),
        genres: [genres[i as usize % 4].to_string()].into(),
        description: None,
    }));
    let mut rows = Vec::new();
    for u in 0..40u64 {
        for j in 0..12u64 {
            let item = (u * 5 + j * 7) % 24;
            let rating = if item % 4 == u % 4 { 5.0 } else { 1.0 + ((u + j) % 3) as f64 };
            rows.push(Interaction { user: UserId(u + 1), item: ItemId(item + 1), rating });
        }
    }
    let log = InteractionLog::new(rows, LogRole::Raw, 5.0);
    corpus::write_interactions(&dir.join("ratings.csv"), &log).unwrap();
    corpus::write_catalog(&dir.join("items.csv"), &catalog).unwrap();
}

fn write_config(dir: &Path, url: &str, model: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
seed = 5
output_dir = "out"

[data]
interactions = "ratings.csv"
items = "items.csv"
min_user_interactions = 5

[split]
test_users = 20

[mf]
factors = 4
iterations = 5

[rerank]
n = 5

[[rerankers]]
reranker = "mmr"
[[rerankers]]
reranker = "llm"
templates = ["T1", "T7"]

[llm]
base_url = "{url}"
model = "{model}"
api_key_env = "DIVRANK_CLI_TEST_UNSET_KEY"

[llm.prices.mock-model]
input_per_million = 1.0
output_per_million = 2.0
"#
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn divrank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_divrank"))
}

#[test]
fn run_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let server = MockServer::start(mock::permutation(1, 0.0)).unwrap();
    let config = write_config(dir.path(), server.url(), "mock-model");
    let out = divrank().arg("--config").arg(&config).arg("run").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("runs evaluated"), "{stdout}");
    let tsv = fs::read_to_string(dir.path().join("out/report/metrics.tsv")).unwrap();
    assert!(tsv.starts_with("run\trow\t"));
    assert!(tsv.contains("\nT7\tpct_diff"));
    assert!(server.calls() > 0);
}

#[test]
fn stages_can_be_run_one_by_one_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let server = MockServer::start(mock::permutation(1, 0.0)).unwrap();
    let config = write_config(dir.path(), server.url(), "mock-model");
    let output = dir.path().join("elsewhere");
    for stage in ["prepare", "train", "candidates", "calibrate-m", "describe-items", "rerank", "evaluate", "report"] {
        let out = divrank()
            .args(["--seed", "9", "--output-dir"])
            .arg(&output)
            .arg("--config")
            .arg(&config)
            .arg(stage)
            .output()
            .unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(output.join("report/report.txt").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_exits_with_failure_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    // No price is configured for this model.
    let config = write_config(dir.path(), "http://127.0.0.1:9/v1", "unpriced-model");
    let output = dir.path().join("out");
    let out = divrank()
        .arg("--config")
        .arg(&config)
        .arg("--output-dir")
        .arg(&output)
        .arg("run")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(output.join("failure.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["command"], "run");
}

#[test]
fn missing_artifact_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let config = write_config(dir.path(), "http://127.0.0.1:9/v1", "mock-model");
    let out = divrank().arg("--config").arg(&config).arg("evaluate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/failure.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
}
