//! Greedy relevance/diversity re-ranking.
//!
//! Items are moved from the candidate list into the result one at a time,
//! each time taking the candidate that maximizes
//! `lambda * rel(i) + (1 - lambda) * div(i, selected)`. `rel` is the
//! candidate's relevance score min-max normalized within its list; `div` is
//! supplied by a [`Diversity`] implementation (MMR, xQuAD or RxQuAD).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{InteractionLog, ItemCatalog};
use crate::ids::{ItemId, UserId};
use crate::mf::CandidateList;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("output length n = {n} exceeds candidate length m = {m}")]
    TooLong { n: usize, m: usize },
    #[error("lambda = {0} is outside [0, 1]")]
    Lambda(f64),
    #[error("user {0} has no training profile")]
    MissingProfile(UserId),
    #[error("objective returned a non-finite score for item {0}")]
    NonFinite(ItemId),
}

pub type Result<T> = std::result::Result<T, RerankError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            n: 10,
            m: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Reranked,
    RandomFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecEntry {
    pub item: ItemId,
    /// 1-based rank of the item in the candidate list it came from.
    pub cl_rank: usize,
    pub origin: Origin,
}

/// Final top-n list for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecList {
    pub user: UserId,
    pub entries: Vec<RecEntry>,
}

impl RecList {
    /// The first `n` candidates, unchanged.
    pub fn prefix(cl: &CandidateList, n: usize) -> Self {
        Self {
            user: cl.user,
            entries: cl
                .entries
                .iter()
                .take(n)
                .map(|e| RecEntry {
                    item: e.item,
                    cl_rank: e.rank,
                    origin: Origin::Reranked,
                })
                .collect(),
        }
    }

    pub fn items(&self) -> Vec<ItemId> {
        self.entries.iter().map(|e| e.item).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fill_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.origin == Origin::RandomFill)
            .count()
    }

    /// Deepest candidate rank among non-fill entries.
    pub fn lowest_rank(&self) -> Option<usize> {
        self.entries
            .iter()
            .filter(|e| e.origin != Origin::RandomFill)
            .map(|e| e.cl_rank)
            .max()
    }
}

/// Complement of the Jaccard similarity of two genre sets.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Diversity term of the greedy objective.
pub trait Diversity {
    fn div(&mut self, candidate: ItemId, selected: &[ItemId]) -> f64;
}

impl<F: FnMut(ItemId, &[ItemId]) -> f64> Diversity for F {
    fn div(&mut self, candidate: ItemId, selected: &[ItemId]) -> f64 {
        self(candidate, selected)
    }
}

/// Runs the greedy selection. Ties go to the candidate ranked higher in `cl`.
pub fn greedy_rerank(
    cl: &CandidateList,
    params: &RerankParams,
    objective: &mut dyn Diversity,
) -> Result<RecList> {
    let m = cl.len();
    if params.n > m {
        return Err(RerankError::TooLong { n: params.n, m });
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(RerankError::Lambda(params.lambda));
    }
    let rel = cl.normalized_scores();
    let lambda = params.lambda;
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut selected: Vec<ItemId> = Vec::with_capacity(params.n);
    let mut entries = Vec::with_capacity(params.n);

    while entries.len() < params.n {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &c) in remaining.iter().enumerate() {
            let item = cl.entries[c].item;
            let score = lambda * rel[c] + (1.0 - lambda) * objective.div(item, &selected);
            if !score.is_finite() {
                return Err(RerankError::NonFinite(item));
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((pos, score));
            }
        }
        let (pos, _) = best.expect("n <= m leaves a candidate");
        let c = remaining.remove(pos);
        let e = cl.entries[c];
        selected.push(e.item);
        entries.push(RecEntry {
            item: e.item,
            cl_rank: e.rank,
            origin: Origin::Reranked,
        });
    }
    Ok(RecList {
        user: cl.user,
        entries,
    })
}

/// MMR diversity: minus the largest similarity (1 - distance) to a selected item.
pub fn mmr_div(
    candidate: ItemId,
    selected: &[ItemId],
    mut dist: impl FnMut(ItemId, ItemId) -> f64,
) -> f64 {
    selected
        .iter()
        .map(|&j| 1.0 - dist(candidate, j))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .map_or(0.0, |s| -s)
}

/// MMR objective over catalog genres with a per-pair distance cache.
pub struct Mmr<'a> {
    catalog: &'a ItemCatalog,
    cache: HashMap<(ItemId, ItemId), f64>,
}

impl<'a> Mmr<'a> {
    pub fn new(catalog: &'a ItemCatalog) -> Self {
        Self {
            catalog,
            cache: HashMap::new(),
        }
    }
}

impl Diversity for Mmr<'_> {
    fn div(&mut self, candidate: ItemId, selected: &[ItemId]) -> f64 {
        let catalog = self.catalog;
        let cache = &mut self.cache;
        mmr_div(candidate, selected, |a, b| {
            let key = if a <= b { (a, b) } else { (b, a) };
            *cache
                .entry(key)
                .or_insert_with(|| jaccard_distance(catalog.genres(a), catalog.genres(b)))
        })
    }
}

/// Genre ("aspect") probabilities estimated from training profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectModel {
    user_aspects: BTreeMap<UserId, BTreeMap<String, f64>>,
    membership: BTreeMap<ItemId, BTreeSet<String>>,
    aspect_sizes: BTreeMap<String, usize>,
}

impl AspectModel {
    /// P(g|u) for every genre in the user's profile.
    pub fn user_aspects(&self, user: UserId) -> Option<&BTreeMap<String, f64>> {
        self.user_aspects.get(&user)
    }

    pub fn user_aspect_prob(&self, user: UserId, genre: &str) -> f64 {
        self.user_aspects
            .get(&user)
            .and_then(|m| m.get(genre))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn is_member(&self, item: ItemId, genre: &str) -> bool {
        self.membership
            .get(&item)
            .is_some_and(|gs| gs.contains(genre))
    }

    /// P(i|g), uniform over the items carrying `g`.
    pub fn aspect_item_prob(&self, genre: &str, item: ItemId) -> f64 {
        if self.is_member(item, genre) {
            1.0 / self.aspect_sizes[genre] as f64
        } else {
            0.0
        }
    }
}

/// P(g|u) from genre counts over the user's training items; P(i|g) uniform per genre.
pub fn build_aspect_model(train: &InteractionLog, catalog: &ItemCatalog) -> AspectModel {
    let mut user_aspects = BTreeMap::new();
    for (user, items) in train.user_items() {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for item in items {
            for g in catalog.genres(item) {
                *counts.entry(g.clone()).or_default() += 1.0;
            }
        }
        let total: f64 = counts.values().sum();
        if total > 0.0 {
            counts.values_mut().for_each(|c| *c /= total);
            user_aspects.insert(user, counts);
        }
    }
    let mut aspect_sizes: BTreeMap<String, usize> = BTreeMap::new();
    let mut membership = BTreeMap::new();
    for item in catalog.items() {
        for g in &item.genres {
            *aspect_sizes.entry(g.clone()).or_default() += 1;
        }
        membership.insert(item.id, item.genres.clone());
    }
    AspectModel {
        user_aspects,
        membership,
        aspect_sizes,
    }
}

/// xQuAD novelty: sum over genres of P(g|u) P(i|g) prod_{j selected} (1 - P(j|g)).
pub fn xquad_div(candidate: ItemId, selected: &[ItemId], aspects: &AspectModel, user: UserId) -> f64 {
    let Some(profile) = aspects.user_aspects(user) else {
        return 0.0;
    };
    profile
        .iter()
        .map(|(g, p_gu)| {
            let p_ig = aspects.aspect_item_prob(g, candidate);
            let uncovered: f64 = selected
                .iter()
                .map(|&j| 1.0 - aspects.aspect_item_prob(g, j))
                .product();
            p_gu * p_ig * uncovered
        })
        .sum()
}

/// RxQuAD novelty: xQuAD with P(i|g) replaced by membership(i, g) * relprob(i).
pub fn rxquad_div(
    candidate: ItemId,
    selected: &[ItemId],
    aspects: &AspectModel,
    user: UserId,
    relprob: &dyn Fn(ItemId) -> f64,
) -> f64 {
    let Some(profile) = aspects.user_aspects(user) else {
        return 0.0;
    };
    let weight = |item: ItemId, g: &str| {
        if aspects.is_member(item, g) {
            relprob(item)
        } else {
            0.0
        }
    };
    profile
        .iter()
        .map(|(g, p_gu)| {
            let uncovered: f64 = selected.iter().map(|&j| 1.0 - weight(j, g)).product();
            p_gu * weight(candidate, g) * uncovered
        })
        .sum()
}

pub struct XQuad<'a> {
    aspects: &'a AspectModel,
    user: UserId,
}

impl<'a> XQuad<'a> {
    pub fn new(aspects: &'a AspectModel, user: UserId) -> Result<Self> {
        aspects
            .user_aspects(user)
            .ok_or(RerankError::MissingProfile(user))?;
        Ok(Self { aspects, user })
    }
}

impl Diversity for XQuad<'_> {
    fn div(&mut self, candidate: ItemId, selected: &[ItemId]) -> f64 {
        xquad_div(candidate, selected, self.aspects, self.user)
    }
}

/// Logistic map of a normalized relevance score onto (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCalibration {
    pub steepness: f64,
}

impl Default for RelevanceCalibration {
    fn default() -> Self {
        Self { steepness: 6.0 }
    }
}

impl RelevanceCalibration {
    pub fn probability(&self, normalized: f64) -> f64 {
        1.0 / (1.0 + (-self.steepness * (normalized - 0.5)).exp())
    }

    /// Relevance probability of every candidate, from its min-max normalized score.
    pub fn for_list(&self, cl: &CandidateList) -> BTreeMap<ItemId, f64> {
        cl.items()
            .zip(cl.normalized_scores())
            .map(|(item, x)| (item, self.probability(x)))
            .collect()
    }
}

pub struct RxQuad<'a> {
    aspects: &'a AspectModel,
    user: UserId,
    relprob: BTreeMap<ItemId, f64>,
}

impl<'a> RxQuad<'a> {
    pub fn new(
        aspects: &'a AspectModel,
        cl: &CandidateList,
        calibration: &RelevanceCalibration,
    ) -> Result<Self> {
        aspects
            .user_aspects(cl.user)
            .ok_or(RerankError::MissingProfile(cl.user))?;
        Ok(Self {
            aspects,
            user: cl.user,
            relprob: calibration.for_list(cl),
        })
    }
}

impl Diversity for RxQuad<'_> {
    fn div(&mut self, candidate: ItemId, selected: &[ItemId]) -> f64 {
        let relprob = &self.relprob;
        rxquad_div(candidate, selected, self.aspects, self.user, &|i| {
            relprob.get(&i).copied().unwrap_or(0.0)
        })
    }
}

/// Uniform draw of `n` candidates without replacement, kept in draw order.
pub fn random_rerank(cl: &CandidateList, params: &RerankParams, seed: u64) -> Result<RecList> {
    let m = cl.len();
    if params.n > m {
        return Err(RerankError::TooLong { n: params.n, m });
    }
    let mut rng = seed::rng(seed);
    let entries = index::sample(&mut rng, m, params.n)
        .into_iter()
        .map(|i| {
            let e = cl.entries[i];
            RecEntry {
                item: e.item,
                cl_rank: e.rank,
                origin: Origin::Reranked,
            }
        })
        .collect();
    Ok(RecList {
        user: cl.user,
        entries,
    })
}
