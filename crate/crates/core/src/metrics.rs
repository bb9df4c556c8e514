//! Relevance and diversity metrics at a cutoff, with confidence intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionLog, ItemCatalog};
use crate::greedy::jaccard_distance;
use crate::ids::{ItemId, UserId};

/// Relevant-set sizes up to which the alpha-NDCG ideal is searched exactly.
pub const EXACT_IDEAL_LIMIT: usize = 12;

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SRecallDenominator {
    /// Every genre in the catalog.
    CatalogGenres,
    /// Genres carried by the user's relevant items.
    UserRelevantGenres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub cutoff: usize,
    pub alpha: f64,
    pub relevance_threshold: f64,
    pub srecall_denominator: SRecallDenominator,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            cutoff: 10,
            alpha: 0.5,
            relevance_threshold: 4.0,
            srecall_denominator: SRecallDenominator::CatalogGenres,
        }
    }
}

/// Per-user relevant items: test ratings at or above a threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    relevant: BTreeMap<UserId, BTreeSet<ItemId>>,
}

impl RelevanceJudgments {
    /// Every test user gets an entry, possibly empty.
    pub fn from_test(test: &InteractionLog, threshold: f64) -> Self {
        let mut relevant: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
        for it in &test.interactions {
            let set = relevant.entry(it.user).or_default();
            if it.rating >= threshold {
                set.insert(it.item);
            }
        }
        Self { relevant }
    }

    pub fn from_sets(relevant: BTreeMap<UserId, BTreeSet<ItemId>>) -> Self {
        Self { relevant }
    }

    pub fn get(&self, user: UserId) -> Option<&BTreeSet<ItemId>> {
        self.relevant.get(&user)
    }
}

fn prefix(ranked: &[ItemId], cutoff: usize) -> &[ItemId] {
    &ranked[..cutoff.min(ranked.len())]
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

pub fn precision_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, cutoff: usize) -> f64 {
    if cutoff == 0 {
        return 0.0;
    }
    let hits = prefix(ranked, cutoff).iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / cutoff as f64
}

pub fn recall_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, cutoff: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = prefix(ranked, cutoff).iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG with log2 discount.
pub fn ndcg_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, cutoff: usize) -> f64 {
    let ideal: f64 = (0..relevant.len().min(cutoff)).map(discount).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = prefix(ranked, cutoff)
        .iter()
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| discount(r))
        .sum();
    dcg / ideal
}

fn mean_pairwise_distance(items: &[ItemId], catalog: &ItemCatalog) -> f64 {
    if items.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in items.iter().enumerate() {
        for &j in &items[a + 1..] {
            total += jaccard_distance(catalog.genres(i), catalog.genres(j));
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Intra-list diversity: mean genre-Jaccard distance over all pairs.
pub fn ild(ranked: &[ItemId], catalog: &ItemCatalog, cutoff: usize) -> f64 {
    mean_pairwise_distance(prefix(ranked, cutoff), catalog)
}

/// ILD over the relevant items of the prefix.
pub fn eild(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    cutoff: usize,
) -> f64 {
    let rel: Vec<ItemId> = prefix(ranked, cutoff)
        .iter()
        .copied()
        .filter(|i| relevant.contains(i))
        .collect();
    mean_pairwise_distance(&rel, catalog)
}

fn genre_coverage<'a>(
    items: impl Iterator<Item = &'a ItemId>,
    catalog: &'a ItemCatalog,
) -> BTreeSet<&'a str> {
    items
        .flat_map(|&i| catalog.genres(i).iter().map(String::as_str))
        .collect()
}

fn srecall_denominator(
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    config: &MetricConfig,
) -> usize {
    match config.srecall_denominator {
        SRecallDenominator::CatalogGenres => catalog.genre_universe().len(),
        SRecallDenominator::UserRelevantGenres => genre_coverage(relevant.iter(), catalog).len(),
    }
}

/// Fraction of genres covered by the prefix.
pub fn srecall(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    config: &MetricConfig,
    cutoff: usize,
) -> f64 {
    let denom = srecall_denominator(relevant, catalog, config);
    if denom == 0 {
        return 0.0;
    }
    let covered = genre_coverage(prefix(ranked, cutoff).iter(), catalog).len();
    (covered as f64 / denom as f64).min(1.0)
}

/// SRecall over the relevant items of the prefix.
pub fn rsrecall(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    config: &MetricConfig,
    cutoff: usize,
) -> f64 {
    let denom = srecall_denominator(relevant, catalog, config);
    if denom == 0 {
        return 0.0;
    }
    let covered = genre_coverage(
        prefix(ranked, cutoff).iter().filter(|i| relevant.contains(i)),
        catalog,
    )
    .len();
    (covered as f64 / denom as f64).min(1.0)
}

/// Novelty-discounted gains of a ranking: each genre's gain decays by (1 - alpha)
/// for every earlier relevant item carrying it.
pub fn alpha_gains(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    alpha: f64,
) -> Vec<f64> {
    let mut seen: BTreeMap<&str, i32> = BTreeMap::new();
    ranked
        .iter()
        .map(|item| {
            if !relevant.contains(item) {
                return 0.0;
            }
            let mut gain = 0.0;
            for g in catalog.genres(*item) {
                let c = seen.entry(g.as_str()).or_insert(0);
                gain += (1.0 - alpha).powi(*c);
                *c += 1;
            }
            gain
        })
        .collect()
}

fn alpha_dcg(gains: &[f64]) -> f64 {
    gains.iter().enumerate().map(|(r, g)| g * discount(r)).sum()
}

/// Best achievable alpha-DCG over orderings of the relevant items.
///
/// Exact (dynamic programming over subsets) up to [`EXACT_IDEAL_LIMIT`]
/// relevant items, greedy beyond that.
pub fn alpha_ideal_dcg(
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    alpha: f64,
    cutoff: usize,
) -> f64 {
    let items: Vec<ItemId> = relevant.iter().copied().collect();
    let depth = items.len().min(cutoff);
    if depth == 0 {
        return 0.0;
    }
    let genre_index: BTreeMap<&str, usize> = genre_coverage(items.iter(), catalog)
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g, i))
        .collect();
    let genres: Vec<Vec<usize>> = items
        .iter()
        .map(|&i| catalog.genres(i).iter().map(|g| genre_index[g.as_str()]).collect())
        .collect();
    let decay = 1.0 - alpha;
    let gain = |item: usize, counts: &[i32]| -> f64 {
        genres[item].iter().map(|&g| decay.powi(counts[g])).sum()
    };

    if items.len() <= EXACT_IDEAL_LIMIT {
        let mut memo = vec![f64::NAN; 1 << items.len()];
        fn best(
            mask: usize,
            depth: usize,
            n: usize,
            genres: &[Vec<usize>],
            n_genres: usize,
            gain: &dyn Fn(usize, &[i32]) -> f64,
            memo: &mut [f64],
        ) -> f64 {
            let pos = mask.count_ones() as usize;
            if pos == depth {
                return 0.0;
            }
            if !memo[mask].is_nan() {
                return memo[mask];
            }
            let mut counts = vec![0i32; n_genres];
            for (i, gs) in genres.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    gs.iter().for_each(|&g| counts[g] += 1);
                }
            }
            let mut out = f64::NEG_INFINITY;
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    let v = gain(i, &counts) * discount(pos)
                        + best(mask | (1 << i), depth, n, genres, n_genres, gain, memo);
                    out = out.max(v);
                }
            }
            memo[mask] = out;
            out
        }
        return best(0, depth, items.len(), &genres, genre_index.len(), &gain, &mut memo);
    }

    let mut counts = vec![0i32; genre_index.len()];
    let mut used = vec![false; items.len()];
    let mut total = 0.0;
    for pos in 0..depth {
        let (pick, g) = (0..items.len())
            .filter(|&i| !used[i])
            .map(|i| (i, gain(i, &counts)))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        used[pick] = true;
        genres[pick].iter().for_each(|&g| counts[g] += 1);
        total += g * discount(pos);
    }
    total
}

pub fn alpha_ndcg(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    alpha: f64,
    cutoff: usize,
) -> f64 {
    let ideal = alpha_ideal_dcg(relevant, catalog, alpha, cutoff);
    if ideal <= 0.0 {
        return 0.0;
    }
    let gains = alpha_gains(prefix(ranked, cutoff), relevant, catalog, alpha);
    (alpha_dcg(&gains) / ideal).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "Precision")]
    Precision,
    #[serde(rename = "Recall")]
    Recall,
    #[serde(rename = "NDCG")]
    Ndcg,
    #[serde(rename = "alpha-NDCG")]
    AlphaNdcg,
    #[serde(rename = "EILD")]
    Eild,
    #[serde(rename = "ILD")]
    Ild,
    #[serde(rename = "rSRecall")]
    RSRecall,
    #[serde(rename = "SRecall")]
    SRecall,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Precision,
        Metric::Recall,
        Metric::Ndcg,
        Metric::AlphaNdcg,
        Metric::Eild,
        Metric::Ild,
        Metric::RSRecall,
        Metric::SRecall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
            Metric::AlphaNdcg => "alpha-NDCG",
            Metric::Eild => "EILD",
            Metric::Ild => "ILD",
            Metric::RSRecall => "rSRecall",
            Metric::SRecall => "SRecall",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type MetricValues = BTreeMap<Metric, f64>;

/// All metrics for one ranked list.
pub fn user_metrics(
    ranked: &[ItemId],
    relevant: &BTreeSet<ItemId>,
    catalog: &ItemCatalog,
    config: &MetricConfig,
) -> MetricValues {
    let k = config.cutoff;
    MetricValues::from([
        (Metric::Precision, precision_at(ranked, relevant, k)),
        (Metric::Recall, recall_at(ranked, relevant, k)),
        (Metric::Ndcg, ndcg_at(ranked, relevant, k)),
        (Metric::AlphaNdcg, alpha_ndcg(ranked, relevant, catalog, config.alpha, k)),
        (Metric::Eild, eild(ranked, relevant, catalog, k)),
        (Metric::Ild, ild(ranked, catalog, k)),
        (Metric::RSRecall, rsrecall(ranked, relevant, catalog, config, k)),
        (Metric::SRecall, srecall(ranked, relevant, catalog, config, k)),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub half_width: f64,
    pub count: usize,
}

/// Mean and 95% half-width (sample standard deviation) of `values`.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: 0.0,
            half_width: 0.0,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z_95 * var.sqrt() / (n as f64).sqrt()
    };
    Summary {
        mean,
        half_width,
        count: n,
    }
}

/// Percentage difference of `value` against `baseline`; `None` when the baseline is 0.
pub fn pct_diff(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (value - baseline) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub per_user: BTreeMap<UserId, MetricValues>,
    pub summary: BTreeMap<Metric, Summary>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn mean(&self, metric: Metric) -> f64 {
        self.summary.get(&metric).map_or(0.0, |s| s.mean)
    }

    /// Percentage difference of each metric mean against `baseline`.
    pub fn pct_vs(&self, baseline: &MetricReport) -> BTreeMap<Metric, Option<f64>> {
        Metric::ALL
            .iter()
            .map(|&m| (m, pct_diff(self.mean(m), baseline.mean(m))))
            .collect()
    }
}

/// Scores every user's list and aggregates the results.
pub fn evaluate(
    name: &str,
    run: &BTreeMap<UserId, Vec<ItemId>>,
    judgments: &RelevanceJudgments,
    catalog: &ItemCatalog,
    config: &MetricConfig,
) -> MetricReport {
    let mut warnings = Vec::new();
    let scored: Vec<(UserId, Option<MetricValues>)> = run
        .par_iter()
        .map(|(&user, ranked)| {
            let values = judgments
                .get(user)
                .map(|rel| user_metrics(ranked, rel, catalog, config));
            (user, values)
        })
        .collect();

    let mut per_user = BTreeMap::new();
    for (user, values) in scored {
        match values {
            Some(v) => {
                if run[&user].len() < config.cutoff {
                    warnings.push(format!(
                        "user {user}: list of length {} is shorter than cutoff {}",
                        run[&user].len(),
                        config.cutoff
                    ));
                }
                per_user.insert(user, v);
            }
            None => warnings.push(format!("user {user}: no relevance judgments, excluded")),
        }
    }
    let summary = Metric::ALL
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = per_user.values().map(|v: &MetricValues| v[&m]).collect();
            (m, summarize(&vals))
        })
        .collect();
    MetricReport {
        name: name.to_string(),
        per_user,
        summary,
        warnings,
    }
}

/// Averages several reports metric by metric (e.g. across prompt templates).
pub fn average_reports(name: &str, reports: &[&MetricReport]) -> MetricReport {
    let summary = Metric::ALL
        .iter()
        .map(|&m| {
            let means: Vec<f64> = reports.iter().map(|r| r.mean(m)).collect();
            let mut s = summarize(&means);
            s.half_width = if reports.is_empty() {
                0.0
            } else {
                reports
                    .iter()
                    .map(|r| r.summary.get(&m).map_or(0.0, |s| s.half_width))
                    .sum::<f64>()
                    / reports.len() as f64
            };
            (m, s)
        })
        .collect();
    MetricReport {
        name: name.to_string(),
        per_user: BTreeMap::new(),
        summary,
        warnings: Vec::new(),
    }
}
