//! Config-driven experiment pipeline.
//!
//! Stages communicate only through files under the output directory, so each
//! one can be run on its own once its inputs exist:
//!
//! | stage          | writes                                             |
//! |----------------|----------------------------------------------------|
//! | prepare        | `prepared/{train,test,items}.csv`, eval users, stats |
//! | train          | `model/model.txt`, `model/selection.json`          |
//! | candidates     | `candidates/candidates.jsonl`, `candidates/meta.json` |
//! | calibrate-m    | `calibration/calibration.json`                     |
//! | describe-items | `descriptions/*`                                   |
//! | rerank         | `runs/*`, `raw/*`, `cost/*`, `failures.json`       |
//! | evaluate       | `metrics/*.json`                                   |
//! | report         | `report/*`                                         |

pub mod calibrate;
pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, ColumnSpec, CorpusError, CorpusStats, InteractionLog, ItemCatalog, LogRole,
    PreprocessOptions, SplitSpec,
};
use crate::greedy::{self, Mmr, RecList, RerankError, RerankParams, RxQuad, XQuad};
use crate::ids::{ItemId, UserId};
use crate::llm::{
    self, ChatEndpoint, CostLedger, FeatureMode, HttpChatClient, LlmError,
    PromptTemplate, UsageRecord,
};
use crate::metrics::{self, MetricReport, RelevanceJudgments};
use crate::mf::{self, CandidateList, MfConfig, MfError, MfModel};
use crate::seed;

pub use calibrate::{calibrate_m, CalibrationError, CalibrationStats};
pub use config::{ExperimentConfig, RerankerKind, RerankerSpec};
pub use report::{emit_report, RunTelemetry, Telemetry};

/// Run name of the unmodified top-n of each candidate list.
pub const BASELINE_RUN: &str = "MF";
/// Run name of the cross-template average of LLM runs.
pub const LLM_AVERAGE_RUN: &str = "LLM-avg";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Mf(#[from] MfError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    Train,
    Candidates,
    CalibrateM,
    DescribeItems,
    Rerank,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prepare,
        Stage::Train,
        Stage::Candidates,
        Stage::CalibrateM,
        Stage::DescribeItems,
        Stage::Rerank,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Candidates => "candidates",
            Stage::CalibrateM => "calibrate-m",
            Stage::DescribeItems => "describe-items",
            Stage::Rerank => "rerank",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Paths of every artifact below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("prepared/train.csv")
    }
    pub fn test(&self) -> PathBuf {
        self.root.join("prepared/test.csv")
    }
    pub fn items(&self) -> PathBuf {
        self.root.join("prepared/items.csv")
    }
    pub fn eval_users(&self) -> PathBuf {
        self.root.join("prepared/eval_users.txt")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("prepared/stats.json")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model/model.txt")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("model/selection.json")
    }
    pub fn candidates(&self) -> PathBuf {
        self.root.join("candidates/candidates.jsonl")
    }
    pub fn candidates_meta(&self) -> PathBuf {
        self.root.join("candidates/meta.json")
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration/calibration.json")
    }
    pub fn descriptions(&self) -> PathBuf {
        self.root.join("descriptions/descriptions.csv")
    }
    pub fn description_failures(&self) -> PathBuf {
        self.root.join("descriptions/failures.json")
    }
    pub fn description_usage(&self) -> PathBuf {
        self.root.join("descriptions/usage.jsonl")
    }
    pub fn runs_index(&self) -> PathBuf {
        self.root.join("runs/index.json")
    }
    pub fn run(&self, name: &str) -> PathBuf {
        self.root.join(format!("runs/{name}.jsonl"))
    }
    pub fn telemetry(&self) -> PathBuf {
        self.root.join("runs/telemetry.json")
    }
    pub fn raw(&self, run: &str, user: UserId) -> PathBuf {
        self.root.join(format!("raw/{run}/{user}.txt"))
    }
    pub fn ledger(&self) -> PathBuf {
        self.root.join("cost/ledger.jsonl")
    }
    pub fn cost_summary(&self) -> PathBuf {
        self.root.join("cost/summary.json")
    }
    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.json")
    }
    pub fn metrics(&self, run: &str) -> PathBuf {
        self.root.join(format!("metrics/{run}.json"))
    }
    pub fn metrics_index(&self) -> PathBuf {
        self.root.join("metrics/index.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| ExperimentError::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(ExperimentError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T> {
    require(path, stage)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<Vec<T>> {
    require(path, stage)?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExperimentError::Artifact {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Dataset statistics before and after preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub raw: CorpusStats,
    pub prepared: CorpusStats,
    pub duplicates_collapsed: usize,
    pub train_ratings: usize,
    pub test_ratings: usize,
    pub eval_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesMeta {
    /// Length of every stored candidate list.
    pub length: usize,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerCalibration {
    pub reranker: String,
    pub samples: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `config` when m was fixed, `calibrated` otherwise.
    pub source: String,
    pub bootstrap_m: usize,
    pub m: usize,
    pub rerankers: Vec<RerankerCalibration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub reranker: String,
    pub template: Option<PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFailure {
    pub run: String,
    pub user: UserId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: ItemId,
    pub error: String,
}

/// Per-user and per-item problems that did not stop the run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureManifest {
    pub rerank: Vec<UserFailure>,
    pub describe: Vec<ItemFailure>,
}

impl FailureManifest {
    pub fn is_empty(&self) -> bool {
        self.rerank.is_empty() && self.describe.is_empty()
    }
}

/// What `run` produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub m: usize,
    pub reports: Vec<MetricReport>,
    pub telemetry: Telemetry,
    pub failures: FailureManifest,
}

pub struct Experiment {
    config: ExperimentConfig,
    layout: Layout,
    endpoint: Option<Arc<dyn ChatEndpoint>>,
    pool: rayon::ThreadPool,
}

struct Prepared {
    train: InteractionLog,
    test: InteractionLog,
    catalog: ItemCatalog,
    eval_users: Vec<UserId>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ExperimentError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            layout: Layout::new(&config.output_dir),
            config,
            endpoint: None,
            pool,
        })
    }

    /// Uses `endpoint` instead of an HTTP client built from the config.
    pub fn with_endpoint(mut self, endpoint: Arc<dyn ChatEndpoint>) -> Self {
        self.endpoint = Some(endpoint);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn endpoint(&mut self) -> Arc<dyn ChatEndpoint> {
        self.endpoint
            .get_or_insert_with(|| {
                Arc::new(HttpChatClient::new(self.config.llm.endpoint.clone())) as Arc<dyn ChatEndpoint>
            })
            .clone()
    }

    fn split_seed(&self) -> u64 {
        self.config
            .split
            .seed
            .unwrap_or_else(|| seed::stage_seed(self.config.seed, "split"))
    }

    fn mf_config(&self, factors: usize) -> MfConfig {
        MfConfig {
            factors,
            regularization: self.config.mf.regularization,
            iterations: self.config.mf.iterations,
            seed: self
                .config
                .mf
                .seed
                .unwrap_or_else(|| seed::stage_seed(self.config.seed, "mf")),
        }
    }

    fn run_stage_seed(&self, stage: &str, run: &str) -> u64 {
        seed::stage_seed(self.config.seed, &format!("{stage}/{run}"))
    }

    // ---- prepare ------------------------------------------------------

    pub fn prepare(&self) -> Result<PrepareSummary> {
        let data = &self.config.data;
        let loaded = corpus::load_interactions(&data.interactions, &data.columns)?;
        let catalog = corpus::load_catalog(&data.items)?;
        let raw_stats = corpus::stats(&loaded.log, &catalog);
        let mut opts = PreprocessOptions {
            min_user_interactions: data.min_user_interactions,
            max_user_interactions: data.max_user_interactions,
            item_filters: Vec::new(),
        };
        if data.require_roman_titles {
            opts.item_filters.push(Arc::new(corpus::roman_title));
        }
        let (log, catalog) = corpus::preprocess(&loaded.log, &catalog, &opts)?;
        let split_seed = self.split_seed();
        let spec = SplitSpec {
            train_fraction: self.config.split.train_fraction,
            seed: split_seed,
            test_user_sample: self.config.split.test_users,
        };
        let (train, test) = corpus::split(&log, &spec)?;
        let sample_spec = SplitSpec {
            seed: seed::stage_seed(split_seed, "sample"),
            ..spec
        };
        let eval_users = corpus::sample_test_users(&test, &sample_spec);

        for p in [self.layout.train(), self.layout.eval_users()] {
            create_parent(&p)?;
        }
        corpus::write_interactions(&self.layout.train(), &train)?;
        corpus::write_interactions(&self.layout.test(), &test)?;
        corpus::write_catalog(&self.layout.items(), &catalog)?;
        let users: String = eval_users.iter().map(|u| format!("{u}\n")).collect();
        fs::write(self.layout.eval_users(), users).map_err(io_err(&self.layout.eval_users()))?;

        let summary = PrepareSummary {
            raw: raw_stats,
            prepared: corpus::stats(&log, &catalog),
            duplicates_collapsed: loaded.duplicates_collapsed,
            train_ratings: train.len(),
            test_ratings: test.len(),
            eval_users: eval_users.len(),
        };
        write_json(&self.layout.stats(), &summary)?;
        log::info!(
            "prepared {} ratings from {} users over {} items; {} evaluation users",
            summary.prepared.ratings,
            summary.prepared.users,
            summary.prepared.items,
            summary.eval_users
        );
        Ok(summary)
    }

    fn load_prepared(&self) -> Result<Prepared> {
        let columns = ColumnSpec::default();
        let load = |path: PathBuf, role: LogRole| -> Result<InteractionLog> {
            require(&path, Stage::Prepare)?;
            let mut log = corpus::load_interactions(&path, &columns)?.log;
            log.role = role;
            Ok(log)
        };
        let train = load(self.layout.train(), LogRole::Train)?;
        let test = load(self.layout.test(), LogRole::Test)?;
        require(&self.layout.items(), Stage::Prepare)?;
        let catalog = corpus::load_catalog(&self.layout.items())?;
        let path = self.layout.eval_users();
        require(&path, Stage::Prepare)?;
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let eval_users = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.parse().map_err(|e| ExperimentError::Artifact {
                    path: path.clone(),
                    message: format!("bad user id `{l}`: {e}"),
                })
            })
            .collect::<Result<Vec<UserId>>>()?;
        Ok(Prepared {
            train,
            test,
            catalog,
            eval_users,
        })
    }

    // ---- train --------------------------------------------------------

    pub fn train(&self) -> Result<MfModel> {
        let p = self.load_prepared()?;
        let mf_cfg = &self.config.mf;
        let factors = if mf_cfg.factor_grid.is_empty() {
            mf_cfg.factors
        } else {
            let spec = SplitSpec {
                train_fraction: self.config.split.train_fraction,
                seed: seed::stage_seed(self.split_seed(), "validation"),
                test_user_sample: 0,
            };
            let (fit, validation) = corpus::holdout(&p.train, &spec, LogRole::Validation)?;
            let selection = self.pool.install(|| {
                mf::select_k(
                    &fit,
                    &validation,
                    &mf_cfg.factor_grid,
                    &self.mf_config(mf_cfg.factors),
                    self.config.metrics.relevance_threshold,
                )
            })?;
            write_json(&self.layout.selection(), &selection)?;
            selection.chosen
        };
        let model = self
            .pool
            .install(|| mf::train_mf(&p.train, &self.mf_config(factors)))?;
        create_parent(&self.layout.model())?;
        model.save(&self.layout.model())?;
        log::info!("trained MF with k = {factors}");
        Ok(model)
    }

    fn load_model(&self) -> Result<MfModel> {
        require(&self.layout.model(), Stage::Train)?;
        Ok(MfModel::load(&self.layout.model())?)
    }

    // ---- candidates ---------------------------------------------------

    pub fn candidates(&self) -> Result<CandidatesMeta> {
        let p = self.load_prepared()?;
        let model = self.load_model()?;
        let n = self.config.rerank.n;
        let seen = p.train.user_items();
        let empty = BTreeSet::new();
        let model_items: BTreeSet<ItemId> = model.items().iter().copied().collect();
        let min_available = p
            .eval_users
            .iter()
            .map(|u| {
                let s = seen.get(u).unwrap_or(&empty);
                model_items.len() - s.iter().filter(|i| model_items.contains(i)).count()
            })
            .min()
            .unwrap_or(0);
        let length = match self.config.rerank.m {
            Some(m) => m,
            None => {
                let boot = self.config.rerank.bootstrap_m;
                if boot > min_available {
                    log::warn!(
                        "bootstrap m = {boot} exceeds the {min_available} unseen items some users have; using {min_available}"
                    );
                }
                boot.min(min_available)
            }
        };
        if length < n {
            return Err(ExperimentError::Config(format!(
                "candidate lists of length {length} cannot hold n = {n} items"
            )));
        }
        let lists = self.pool.install(|| {
            p.eval_users
                .par_iter()
                .map(|u| mf::top_candidates(&model, *u, length, seen.get(u).unwrap_or(&empty)))
                .collect::<std::result::Result<Vec<_>, _>>()
        })?;
        write_jsonl(&self.layout.candidates(), &lists)?;
        let meta = CandidatesMeta {
            length,
            users: lists.len(),
        };
        write_json(&self.layout.candidates_meta(), &meta)?;
        Ok(meta)
    }

    fn load_candidates(&self) -> Result<Vec<CandidateList>> {
        read_jsonl(&self.layout.candidates(), Stage::Candidates)
    }

    // ---- calibrate-m --------------------------------------------------

    /// Greedy re-rankers used for calibration: the configured ones, or all three at λ = 0.5.
    fn calibration_rerankers(&self) -> Result<Vec<(String, RerankerKind, f64)>> {
        let mut out = Vec::new();
        for spec in &self.config.rerankers {
            let kind = spec.kind()?;
            if kind.is_greedy() {
                out.push((spec.run_name()?, kind, spec.lambda));
            }
        }
        if out.is_empty() {
            for kind in [RerankerKind::Mmr, RerankerKind::Xquad, RerankerKind::Rxquad] {
                out.push((kind.label().to_string(), kind, 0.5));
            }
        }
        Ok(out)
    }

    pub fn calibrate(&self) -> Result<CalibrationReport> {
        let meta: CandidatesMeta = read_json(&self.layout.candidates_meta(), Stage::Candidates)?;
        let report = if let Some(m) = self.config.rerank.m {
            CalibrationReport {
                source: "config".into(),
                bootstrap_m: meta.length,
                m,
                rerankers: Vec::new(),
            }
        } else {
            let p = self.load_prepared()?;
            let lists = self.load_candidates()?;
            let aspects = greedy::build_aspect_model(&p.train, &p.catalog);
            let mut stats = Vec::new();
            for (name, kind, lambda) in self.calibration_rerankers()? {
                let params = RerankParams {
                    lambda,
                    n: self.config.rerank.n,
                    m: meta.length,
                };
                let rls = self.pool.install(|| {
                    lists
                        .par_iter()
                        .map(|cl| self.greedy_list(kind, cl, &params, &p.catalog, &aspects))
                        .collect::<Result<Vec<RecList>>>()
                })?;
                stats.push(CalibrationStats {
                    reranker: name,
                    greatest_ranks: rls.iter().filter_map(RecList::lowest_rank).collect(),
                });
            }
            let m = calibrate_m(&stats)?.clamp(self.config.rerank.n, meta.length);
            CalibrationReport {
                source: "calibrated".into(),
                bootstrap_m: meta.length,
                m,
                rerankers: stats
                    .iter()
                    .map(|s| RerankerCalibration {
                        reranker: s.reranker.clone(),
                        samples: s.greatest_ranks.len(),
                        mean: s.mean(),
                        std_dev: s.std_dev(),
                        bound: s.bound(),
                    })
                    .collect(),
            }
        };
        if report.m > meta.length {
            return Err(ExperimentError::Config(format!(
                "m = {} exceeds the stored candidate length {}",
                report.m, meta.length
            )));
        }
        write_json(&self.layout.calibration(), &report)?;
        log::info!("candidate list length m = {} ({})", report.m, report.source);
        Ok(report)
    }

    fn calibrated_m(&self) -> Result<usize> {
        let report: CalibrationReport = read_json(&self.layout.calibration(), Stage::CalibrateM)?;
        Ok(report.m)
    }

    fn greedy_list(
        &self,
        kind: RerankerKind,
        cl: &CandidateList,
        params: &RerankParams,
        catalog: &ItemCatalog,
        aspects: &greedy::AspectModel,
    ) -> Result<RecList> {
        let rl = match kind {
            RerankerKind::Mmr => greedy::greedy_rerank(cl, params, &mut Mmr::new(catalog))?,
            RerankerKind::Xquad => {
                greedy::greedy_rerank(cl, params, &mut XQuad::new(aspects, cl.user)?)?
            }
            RerankerKind::Rxquad => {
                let mut obj = RxQuad::new(aspects, cl, &self.config.rerank.relevance)?;
                greedy::greedy_rerank(cl, params, &mut obj)?
            }
            RerankerKind::Random | RerankerKind::Llm => {
                unreachable!("{kind} is not a greedy re-ranker")
            }
        };
        Ok(rl)
    }

    // ---- describe-items -----------------------------------------------

    fn needs_descriptions(&self) -> Result<bool> {
        for spec in &self.config.rerankers {
            if spec.kind()? == RerankerKind::Llm
                && spec
                    .templates()?
                    .iter()
                    .any(|t| t.feature_mode() == FeatureMode::Description)
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn known_descriptions(&self) -> Result<BTreeMap<ItemId, String>> {
        let mut known = BTreeMap::new();
        if let Some(path) = &self.config.data.descriptions {
            known.extend(corpus::load_descriptions(path)?);
        }
        if self.layout.descriptions().exists() {
            known.extend(corpus::load_descriptions(&self.layout.descriptions())?);
        }
        Ok(known)
    }

    /// Describes every item appearing in the (length-m) candidate lists.
    pub fn describe_items(&mut self) -> Result<Vec<ItemFailure>> {
        let p = self.load_prepared()?;
        let m = self.calibrated_m()?;
        let lists = self.load_candidates()?;
        let wanted: BTreeSet<ItemId> = lists
            .iter()
            .flat_map(|cl| cl.entries.iter().take(m).map(|e| e.item))
            .collect();
        let cache = llm::DescriptionCache::from_map(self.known_descriptions()?);
        let items: Vec<&corpus::Item> = wanted.iter().filter_map(|id| p.catalog.get(*id)).collect();
        let endpoint = self.endpoint();
        let ledger = CostLedger::new(self.config.llm.prices.clone());
        let batch = self.pool.install(|| {
            llm::describe_items(
                endpoint.as_ref(),
                &items,
                &cache,
                Some(&ledger),
                &self.config.llm.sampling,
            )
        });
        let mut descriptions = cache.snapshot();
        descriptions.retain(|id, _| p.catalog.contains(*id));
        // Calls finish in any order; sorting keeps the usage file reproducible.
        let mut usage = ledger.records();
        usage.sort_by(|a, b| a.label.cmp(&b.label));
        let failures: Vec<ItemFailure> = batch
            .errors
            .iter()
            .map(|(item, e)| ItemFailure {
                item: *item,
                error: e.to_string(),
            })
            .collect();
        create_parent(&self.layout.descriptions())?;
        corpus::write_descriptions(&self.layout.descriptions(), &descriptions)?;
        write_json(&self.layout.description_failures(), &failures)?;
        write_jsonl(&self.layout.description_usage(), &usage)?;
        log::info!(
            "{} item descriptions available, {} failed",
            descriptions.len(),
            failures.len()
        );
        Ok(failures)
    }

    // ---- rerank -------------------------------------------------------

    fn planned_runs(&self) -> Result<Vec<(RunInfo, RerankerSpec)>> {
        let mut runs = Vec::new();
        for spec in &self.config.rerankers {
            let kind = spec.kind()?;
            if kind == RerankerKind::Llm {
                for t in spec.templates()? {
                    runs.push((
                        RunInfo {
                            name: t.id().to_string(),
                            reranker: kind.label().to_string(),
                            template: Some(t),
                        },
                        spec.clone(),
                    ));
                }
            } else {
                runs.push((
                    RunInfo {
                        name: spec.run_name()?,
                        reranker: kind.label().to_string(),
                        template: None,
                    },
                    spec.clone(),
                ));
            }
        }
        Ok(runs)
    }

    pub fn rerank(&mut self) -> Result<(Telemetry, FailureManifest)> {
        let p = self.load_prepared()?;
        let m = self.calibrated_m()?;
        let n = self.config.rerank.n;
        let lists: Vec<CandidateList> = self
            .load_candidates()?
            .iter()
            .map(|cl| cl.truncated(m))
            .collect();
        let mut catalog = p.catalog.clone();
        if self.needs_descriptions()? {
            catalog.set_descriptions(&self.known_descriptions()?);
        }
        let aspects = greedy::build_aspect_model(&p.train, &catalog);
        let ledger = CostLedger::new(self.config.llm.prices.clone());
        if self.layout.description_usage().exists() {
            for rec in read_jsonl::<UsageRecord>(&self.layout.description_usage(), Stage::DescribeItems)? {
                ledger.push(rec);
            }
        }
        let mut failures = FailureManifest::default();
        if self.layout.description_failures().exists() {
            failures.describe = read_json(&self.layout.description_failures(), Stage::DescribeItems)?;
        }

        let mut index = vec![RunInfo {
            name: BASELINE_RUN.into(),
            reranker: BASELINE_RUN.into(),
            template: None,
        }];
        let mut telemetry = Vec::new();
        let baseline: Vec<RecList> = lists.iter().map(|cl| RecList::prefix(cl, n)).collect();
        telemetry.push(run_telemetry(BASELINE_RUN, BASELINE_RUN, n, &baseline, 0));
        write_jsonl(&self.layout.run(BASELINE_RUN), &baseline)?;

        for (info, spec) in self.planned_runs()? {
            let kind = spec.kind()?;
            let params = RerankParams {
                lambda: spec.lambda,
                n,
                m,
            };
            let (rls, failed) = match kind {
                RerankerKind::Random => {
                    let stage = self.run_stage_seed("random-rerank", &info.name);
                    let rls = lists
                        .iter()
                        .map(|cl| greedy::random_rerank(cl, &params, seed::keyed_seed(stage, cl.user.0)))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    (rls, 0)
                }
                RerankerKind::Llm => {
                    let template = info.template.expect("llm runs carry a template");
                    let (rls, run_failures) =
                        self.llm_run(&info.name, template, &lists, &catalog, &ledger)?;
                    let count = run_failures.len();
                    failures.rerank.extend(run_failures);
                    (rls, count)
                }
                greedy_kind => {
                    let rls = self.pool.install(|| {
                        lists
                            .par_iter()
                            .map(|cl| self.greedy_list(greedy_kind, cl, &params, &catalog, &aspects))
                            .collect::<Result<Vec<RecList>>>()
                    })?;
                    (rls, 0)
                }
            };
            write_jsonl(&self.layout.run(&info.name), &rls)?;
            telemetry.push(run_telemetry(&info.name, &info.reranker, n, &rls, failed));
            index.push(info);
        }

        write_json(&self.layout.runs_index(), &index)?;
        write_jsonl(&self.layout.ledger(), &ledger.records())?;
        let cost = ledger.total()?;
        write_json(&self.layout.cost_summary(), &cost)?;
        let telemetry = Telemetry {
            runs: telemetry,
            cost,
        };
        write_json(&self.layout.telemetry(), &telemetry)?;
        write_json(&self.layout.failures(), &failures)?;
        if !failures.rerank.is_empty() {
            log::warn!("{} user re-rankings failed; see failures.json", failures.rerank.len());
        }
        Ok((telemetry, failures))
    }

    fn llm_run(
        &mut self,
        run: &str,
        template: PromptTemplate,
        lists: &[CandidateList],
        catalog: &ItemCatalog,
        ledger: &CostLedger,
    ) -> Result<(Vec<RecList>, Vec<UserFailure>)> {
        let endpoint = self.endpoint();
        let params = self.config.llm.rerank_params(self.config.rerank.n);
        let stage = self.run_stage_seed("repair", run);
        let outcomes: Vec<std::result::Result<llm::RerankOutcome, LlmError>> = self.pool.install(|| {
            lists
                .par_iter()
                .map(|cl| {
                    llm::rerank_llm(
                        endpoint.as_ref(),
                        template,
                        cl,
                        catalog,
                        &params,
                        seed::keyed_seed(stage, cl.user.0),
                        None,
                    )
                })
                .collect()
        });
        let mut rls = Vec::new();
        let mut failures = Vec::new();
        for (cl, outcome) in lists.iter().zip(outcomes) {
            match outcome {
                Ok(o) => {
                    ledger.record(endpoint.model(), format!("{run}/user {}", cl.user), o.usage);
                    let path = self.layout.raw(run, cl.user);
                    create_parent(&path)?;
                    fs::write(&path, &o.raw_response).map_err(io_err(&path))?;
                    rls.push(o.rec_list);
                }
                Err(e) => failures.push(UserFailure {
                    run: run.to_string(),
                    user: cl.user,
                    error: e.to_string(),
                }),
            }
        }
        log::info!("{run}: {} users re-ranked, {} failed", rls.len(), failures.len());
        Ok((rls, failures))
    }

    // ---- evaluate -----------------------------------------------------

    pub fn evaluate(&self) -> Result<Vec<MetricReport>> {
        let p = self.load_prepared()?;
        let judgments = RelevanceJudgments::from_test(&p.test, self.config.metrics.relevance_threshold);
        let index: Vec<RunInfo> = read_json(&self.layout.runs_index(), Stage::Rerank)?;
        let mut reports = Vec::new();
        let mut llm_reports = Vec::new();
        for info in &index {
            let rls: Vec<RecList> = read_jsonl(&self.layout.run(&info.name), Stage::Rerank)?;
            let run: BTreeMap<UserId, Vec<ItemId>> = rls.iter().map(|rl| (rl.user, rl.items())).collect();
            let report = self.pool.install(|| {
                metrics::evaluate(&info.name, &run, &judgments, &p.catalog, &self.config.metrics)
            });
            for w in &report.warnings {
                log::warn!("{}: {w}", info.name);
            }
            write_json(&self.layout.metrics(&info.name), &report)?;
            if info.template.is_some() {
                llm_reports.push(report.clone());
            }
            reports.push(report);
        }
        let mut names: Vec<String> = index.iter().map(|i| i.name.clone()).collect();
        if llm_reports.len() > 1 {
            let refs: Vec<&MetricReport> = llm_reports.iter().collect();
            let avg = metrics::average_reports(LLM_AVERAGE_RUN, &refs);
            write_json(&self.layout.metrics(LLM_AVERAGE_RUN), &avg)?;
            names.push(LLM_AVERAGE_RUN.into());
            reports.push(avg);
        }
        write_json(&self.layout.metrics_index(), &names)?;
        Ok(reports)
    }

    // ---- report -------------------------------------------------------

    pub fn report(&self) -> Result<Vec<PathBuf>> {
        let names: Vec<String> = read_json(&self.layout.metrics_index(), Stage::Evaluate)?;
        let reports = names
            .iter()
            .map(|n| read_json(&self.layout.metrics(n), Stage::Evaluate))
            .collect::<Result<Vec<MetricReport>>>()?;
        let telemetry: Telemetry = read_json(&self.layout.telemetry(), Stage::Rerank)?;
        let dir = self.layout.report_dir();
        emit_report(&dir, &reports, BASELINE_RUN, &telemetry).map_err(io_err(&dir))
    }

    // ---- everything ---------------------------------------------------

    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Prepare => self.prepare().map(drop),
            Stage::Train => self.train().map(drop),
            Stage::Candidates => self.candidates().map(drop),
            Stage::CalibrateM => self.calibrate().map(drop),
            Stage::DescribeItems => self.describe_items().map(drop),
            Stage::Rerank => self.rerank().map(drop),
            Stage::Evaluate => self.evaluate().map(drop),
            Stage::Report => self.report().map(drop),
        }
    }

    pub fn run(&mut self) -> Result<RunSummary> {
        self.prepare()?;
        self.train()?;
        self.candidates()?;
        let calibration = self.calibrate()?;
        if self.needs_descriptions()? {
            self.describe_items()?;
        }
        let (telemetry, failures) = self.rerank()?;
        let reports = self.evaluate()?;
        self.report()?;
        Ok(RunSummary {
            output_dir: self.layout.root().to_path_buf(),
            m: calibration.m,
            reports,
            telemetry,
            failures,
        })
    }
}

fn run_telemetry(run: &str, reranker: &str, n: usize, rls: &[RecList], failures: usize) -> RunTelemetry {
    let lowest: Vec<f64> = rls
        .iter()
        .filter_map(RecList::lowest_rank)
        .map(|r| r as f64)
        .collect();
    RunTelemetry {
        run: run.to_string(),
        reranker: reranker.to_string(),
        users: rls.len(),
        n,
        fills: rls.iter().map(RecList::fill_count).sum(),
        failures,
        mean_lowest_rank: (!lowest.is_empty()).then(|| lowest.iter().sum::<f64>() / lowest.len() as f64),
    }
}

/// Runs every stage for `config` and returns the summary.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunSummary> {
    Experiment::new(config)?.run()
}
