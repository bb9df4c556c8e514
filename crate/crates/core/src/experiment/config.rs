//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::corpus::ColumnSpec;
use crate::greedy::RelevanceCalibration;
use crate::llm::{EndpointConfig, LlmRerankParams, MatchOptions, Price, PromptTemplate, SamplingParams};
use crate::metrics::MetricConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for per-user work; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub mf: MfSection,
    #[serde(default)]
    pub rerank: RerankSection,
    #[serde(default)]
    pub rerankers: Vec<RerankerSpec>,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub metrics: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub interactions: PathBuf,
    pub items: PathBuf,
    /// Pre-computed `item_id,description` file; missing entries are requested from the endpoint.
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    #[serde(default)]
    pub columns: ColumnSpec,
    #[serde(default = "default_min_user")]
    pub min_user_interactions: usize,
    #[serde(default = "default_max_user")]
    pub max_user_interactions: usize,
    /// Keep only items whose titles use Latin script.
    #[serde(default)]
    pub require_roman_titles: bool,
}

fn default_min_user() -> usize {
    70
}

fn default_max_user() -> usize {
    300
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub test_users: usize,
    /// Overrides the seed derived from the global one.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            test_users: 500,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfSection {
    pub factors: usize,
    /// When non-empty, the factor count is chosen from this grid on a validation holdout.
    pub factor_grid: Vec<usize>,
    pub regularization: f64,
    pub iterations: usize,
    pub seed: Option<u64>,
}

impl Default for MfSection {
    fn default() -> Self {
        Self {
            factors: 20,
            factor_grid: Vec::new(),
            regularization: 0.1,
            iterations: 20,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub n: usize,
    /// Fixed candidate-list length; calibrated from the greedy re-rankers when absent.
    pub m: Option<usize>,
    /// Candidate-list length used while calibrating.
    pub bootstrap_m: usize,
    pub relevance: RelevanceCalibration,
}

impl Default for RerankSection {
    fn default() -> Self {
        Self {
            n: 10,
            m: None,
            bootstrap_m: 100,
            relevance: RelevanceCalibration::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankerKind {
    Mmr,
    Xquad,
    Rxquad,
    Random,
    Llm,
}

impl RerankerKind {
    pub fn label(self) -> &'static str {
        match self {
            RerankerKind::Mmr => "MMR",
            RerankerKind::Xquad => "xQuAD",
            RerankerKind::Rxquad => "RxQuAD",
            RerankerKind::Random => "Random",
            RerankerKind::Llm => "LLM",
        }
    }

    pub fn is_greedy(self) -> bool {
        matches!(self, RerankerKind::Mmr | RerankerKind::Xquad | RerankerKind::Rxquad)
    }
}

impl fmt::Display for RerankerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RerankerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmr" => Ok(RerankerKind::Mmr),
            "xquad" => Ok(RerankerKind::Xquad),
            "rxquad" => Ok(RerankerKind::Rxquad),
            "random" => Ok(RerankerKind::Random),
            "llm" => Ok(RerankerKind::Llm),
            other => Err(format!("unknown re-ranker `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerSpec {
    /// One of mmr, xquad, rxquad, random, llm.
    pub reranker: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Prompt templates for `llm`; all eight when empty.
    #[serde(default)]
    pub templates: Vec<String>,
}

fn default_lambda() -> f64 {
    0.5
}

impl RerankerSpec {
    pub fn kind(&self) -> Result<RerankerKind, ExperimentError> {
        self.reranker.parse().map_err(ExperimentError::Config)
    }

    pub fn templates(&self) -> Result<Vec<PromptTemplate>, ExperimentError> {
        if self.templates.is_empty() {
            return Ok(PromptTemplate::ALL.to_vec());
        }
        self.templates
            .iter()
            .map(|t| t.parse().map_err(ExperimentError::Config))
            .collect()
    }

    /// Run name used for artifacts: the explicit name or the re-ranker label.
    pub fn run_name(&self) -> Result<String, ExperimentError> {
        Ok(self.name.clone().unwrap_or_else(|| match self.kind() {
            Ok(k) => k.label().to_string(),
            Err(_) => self.reranker.clone(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub sampling: SamplingParams,
    pub matching: MatchOptions,
    pub item_noun: String,
    pub regenerate_on_invalid: u32,
    /// Dollars per million tokens, keyed by model name.
    pub prices: BTreeMap<String, Price>,
}

impl Default for LlmSection {
    fn default() -> Self {
        let endpoint = EndpointConfig::default();
        let prices = BTreeMap::from([(
            endpoint.model.clone(),
            Price {
                input_per_million: 0.5,
                output_per_million: 1.5,
            },
        )]);
        Self {
            endpoint,
            sampling: SamplingParams::default(),
            matching: MatchOptions::default(),
            item_noun: "item".into(),
            regenerate_on_invalid: 0,
            prices,
        }
    }
}

impl LlmSection {
    pub fn rerank_params(&self, n: usize) -> LlmRerankParams {
        LlmRerankParams {
            n,
            sampling: self.sampling,
            matching: self.matching,
            item_noun: self.item_noun.clone(),
            regenerate_on_invalid: self.regenerate_on_invalid,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: Self =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.interactions);
        fix(&mut self.data.items);
        if let Some(d) = &mut self.data.descriptions {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.rerank.n == 0 {
            return bad("rerank.n must be positive".into());
        }
        if let Some(m) = self.rerank.m {
            if m < self.rerank.n {
                return bad(format!("rerank.m = {m} is smaller than n = {}", self.rerank.n));
            }
        }
        if self.rerank.bootstrap_m < self.rerank.n {
            return bad("rerank.bootstrap_m must be at least n".into());
        }
        if !(0.0..1.0).contains(&self.split.train_fraction) || self.split.train_fraction == 0.0 {
            return bad("split.train_fraction must lie in (0, 1)".into());
        }
        if self.data.min_user_interactions > self.data.max_user_interactions {
            return bad("data.min_user_interactions exceeds max_user_interactions".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for spec in &self.rerankers {
            let kind = spec.kind()?;
            if !(0.0..=1.0).contains(&spec.lambda) {
                return bad(format!("lambda {} outside [0, 1]", spec.lambda));
            }
            let runs = if kind == RerankerKind::Llm {
                spec.templates()?
                    .into_iter()
                    .map(|t| t.id().to_string())
                    .collect()
            } else {
                if !spec.templates.is_empty() {
                    return bad(format!("templates are only valid for llm, not {kind}"));
                }
                vec![spec.run_name()?]
            };
            for run in runs {
                if run.is_empty()
                    || !run
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                {
                    return bad(format!("run name `{run}` may only use letters, digits, `-`, `_`, `.`"));
                }
                if run == super::BASELINE_RUN || !names.insert(run.clone()) {
                    return bad(format!("duplicate run name `{run}`"));
                }
            }
        }
        if self.rerankers.iter().any(|s| s.kind().ok() == Some(RerankerKind::Llm))
            && !self.llm.prices.contains_key(&self.llm.endpoint.model)
        {
            return bad(format!("no price configured for model `{}`", self.llm.endpoint.model));
        }
        Ok(())
    }

    pub fn uses_llm(&self) -> bool {
        self.rerankers
            .iter()
            .any(|s| s.kind().ok() == Some(RerankerKind::Llm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[data]
interactions = "r.csv"
items = "i.csv"
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.rerank.n, 10);
        assert_eq!(c.rerank.bootstrap_m, 100);
        assert_eq!(c.metrics.cutoff, 10);
        assert_eq!(c.data.min_user_interactions, 70);
        assert!(!c.uses_llm());
    }

    #[test]
    fn rejects_unknown_templates_and_rerankers() {
        let t9 = format!("{MINIMAL}\n[[rerankers]]\nreranker = \"llm\"\ntemplates = [\"T9\"]\n");
        assert!(matches!(ExperimentConfig::from_toml(&t9), Err(ExperimentError::Config(_))));
        let bogus = format!("{MINIMAL}\n[[rerankers]]\nreranker = \"bogus\"\n");
        assert!(matches!(ExperimentConfig::from_toml(&bogus), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn llm_endpoint_settings_are_flat() {
        let text = format!(
            "{MINIMAL}\n[[rerankers]]\nreranker = \"llm\"\ntemplates = [\"t1\", \"T5\"]\n\
             [llm]\nbase_url = \"http://x/v1\"\nmodel = \"m\"\nmin_delay_ms = 5\n\
             [llm.prices.m]\ninput_per_million = 1.0\noutput_per_million = 2.0\n"
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.llm.endpoint.base_url, "http://x/v1");
        assert_eq!(c.llm.endpoint.min_delay_ms, 5);
        assert_eq!(
            c.rerankers[0].templates().unwrap(),
            vec![PromptTemplate::T1, PromptTemplate::T5]
        );
    }

    #[test]
    fn duplicate_run_names_are_rejected() {
        let text = format!("{MINIMAL}\n[[rerankers]]\nreranker = \"mmr\"\n[[rerankers]]\nreranker = \"mmr\"\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
