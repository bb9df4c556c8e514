mod common;

use std::fs;
use std::path::Path;

use divrank::experiment::{Experiment, ExperimentConfig, ExperimentError, Layout, Stage};
use divrank::greedy::RecList;
use divrank::llm::mock::{self, MockServer};
use divrank::mf::CandidateList;

use common::{synth, write_config, write_dataset, SynthSpec, ALL_RERANKERS};

fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (log, catalog) = synth(&SynthSpec::fixture());
    write_dataset(dir.path(), &log, &catalog);
    dir
}

fn config(dir: &Path, data: &Path, url: &str, seed: u64, rerankers: &str) -> ExperimentConfig {
    ExperimentConfig::load(&write_config(dir, data, url, seed, rerankers)).unwrap()
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn full_run_writes_every_artifact() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(mock::permutation(5, 0.1)).unwrap();
    let cfg = config(dir.path(), data.path(), server.url(), 3, ALL_RERANKERS);
    let summary = Experiment::new(cfg).unwrap().run().unwrap();
    let layout = Layout::new(dir.path().join("out"));

    for path in [
        layout.train(),
        layout.test(),
        layout.eval_users(),
        layout.model(),
        layout.candidates(),
        layout.calibration(),
        layout.descriptions(),
        layout.runs_index(),
        layout.ledger(),
        layout.cost_summary(),
        layout.metrics_index(),
        layout.report_dir().join("metrics.tsv"),
        layout.report_dir().join("report.txt"),
    ] {
        assert!(path.exists(), "missing {}", path.display());
    }
    // MF, MMR, xQuAD, RxQuAD, Random, T1..T8 and the LLM average.
    assert_eq!(summary.reports.len(), 14);
    assert!(summary.m >= 10);
    assert!(summary.telemetry.cost.total > 0.0);

    let lists: Vec<CandidateList> = read_lines(&layout.candidates());
    for run in ["MMR", "T7", "Random"] {
        let rls: Vec<RecList> = read_lines(&layout.run(run));
        assert_eq!(rls.len(), lists.len());
        for (rl, cl) in rls.iter().zip(&lists) {
            assert_eq!(rl.user, cl.user);
            assert_eq!(rl.len(), 10);
            let pool: Vec<_> = cl.items().take(summary.m).collect();
            assert!(rl.items().iter().all(|i| pool.contains(i)), "{run} drew outside the top-m");
        }
    }
    let t1 = summary.telemetry.runs.iter().find(|r| r.run == "T1").unwrap();
    assert!((t1.fill_percentage() - 10.0).abs() < 1e-9);
}

#[test]
fn random_only_run_never_calls_the_endpoint() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(mock::permutation(5, 0.0)).unwrap();
    let rerankers = "[[rerankers]]\nreranker = \"random\"\n";
    let summary = Experiment::new(config(dir.path(), data.path(), server.url(), 3, rerankers))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(server.calls(), 0);
    assert_eq!(summary.telemetry.cost.total, 0.0);
    let ledger = Layout::new(dir.path().join("out")).ledger();
    assert!(!ledger.exists() || fs::read_to_string(ledger).unwrap().trim().is_empty());
}

#[test]
fn global_seed_changes_random_lists_but_not_fixed_candidates() {
    let data = dataset();
    let server = MockServer::start(mock::permutation(5, 0.0)).unwrap();
    let rerankers = "[[rerankers]]\nreranker = \"random\"\n";
    let mut outputs = Vec::new();
    for seed in [1, 2] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), data.path(), server.url(), seed, rerankers);
        cfg.split.seed = Some(77);
        cfg.mf.seed = Some(78);
        Experiment::new(cfg).unwrap().run().unwrap();
        let layout = Layout::new(dir.path().join("out"));
        let cls: Vec<CandidateList> = read_lines(&layout.candidates());
        let rls: Vec<RecList> = read_lines(&layout.run("Random"));
        outputs.push((cls, rls, dir));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_ne!(outputs[0].1, outputs[1].1);
}

#[test]
fn stages_resume_from_disk() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(mock::permutation(5, 0.0)).unwrap();
    let rerankers = "[[rerankers]]\nreranker = \"mmr\"\n";
    let cfg = config(dir.path(), data.path(), server.url(), 3, rerankers);

    let err = Experiment::new(cfg.clone()).unwrap().run_stage(Stage::Train).unwrap_err();
    assert!(matches!(err, ExperimentError::MissingArtifact { .. }), "{err}");

    for stage in [
        Stage::Prepare,
        Stage::Train,
        Stage::Candidates,
        Stage::CalibrateM,
        Stage::Rerank,
        Stage::Evaluate,
        Stage::Report,
    ] {
        Experiment::new(cfg.clone()).unwrap().run_stage(stage).unwrap();
    }
    let report = fs::read_to_string(dir.path().join("out/report/metrics.tsv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("MMR\tpct_diff")));
}

#[test]
fn failing_endpoint_is_recorded_per_user() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    let inner = mock::permutation(5, 0.0);
    let server = MockServer::start(mock::failing_when(|req| req.prompt.contains("genre-based"), 400, inner)).unwrap();
    let rerankers = "[[rerankers]]\nreranker = \"llm\"\ntemplates = [\"T1\", \"T3\"]\n";
    let summary = Experiment::new(config(dir.path(), data.path(), server.url(), 3, rerankers))
        .unwrap()
        .run()
        .unwrap();
    assert!(!summary.failures.rerank.is_empty());
    assert!(summary.failures.rerank.iter().all(|f| f.run == "T3"));
    assert!(Layout::new(dir.path().join("out")).failures().exists());
}

#[test]
fn example_config_is_valid() {
    let text = include_str!("../../../experiment.example.toml");
    let config = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(config.rerankers.len(), 5);
    assert!(config.uses_llm());
}
