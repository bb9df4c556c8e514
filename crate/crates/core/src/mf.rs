//! Matrix-factorization relevance baseline and candidate-list generation.
//!
//! The model is the usual biased factorization
//! `r(u, i) = mu + b_u + b_i + p_u . q_i`, fitted by alternating least
//! squares. Each half-step solves every user (or item) row exactly, with the
//! bias folded into the row as an extra coordinate, so the regularized loss
//! never increases between iterations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Interaction, InteractionLog};
use crate::ids::{ItemId, UserId};
use crate::metrics;
use crate::seed;

const FORMAT_HEADER: &str = "divrank-mf v1";

#[derive(Debug, Error)]
pub enum MfError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training log is empty")]
    EmptyTraining,
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("user {user}: requested {requested} candidates but only {available} items are eligible")]
    ShortCatalog {
        user: UserId,
        requested: usize,
        available: usize,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, MfError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub factors: usize,
    pub regularization: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            factors: 20,
            regularization: 0.1,
            iterations: 20,
            seed: 0,
        }
    }
}

/// Grid searched when the factor count is tuned.
pub const DEFAULT_K_GRID: [usize; 4] = [20, 50, 100, 150];

/// One block of the factorization: ids, biases and row-major factors.
#[derive(Debug, Clone, PartialEq)]
struct Side<Id> {
    ids: Vec<Id>,
    index: BTreeMap<Id, usize>,
    bias: Vec<f64>,
    factors: Vec<f64>,
}

impl<Id: Ord + Copy> Side<Id> {
    fn new(ids: Vec<Id>, k: usize) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let n = ids.len();
        Self {
            ids,
            index,
            bias: vec![0.0; n],
            factors: vec![0.0; n * k],
        }
    }
}

impl<Id> Side<Id> {
    fn row(&self, idx: usize, k: usize) -> &[f64] {
        &self.factors[idx * k..(idx + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    k: usize,
    global_bias: f64,
    users: Side<UserId>,
    items: Side<ItemId>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MfModel {
    pub fn factors(&self) -> usize {
        self.k
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn users(&self) -> &[UserId] {
        &self.users.ids
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items.ids
    }

    pub fn user_factors(&self, user: UserId) -> Option<&[f64]> {
        self.users.index.get(&user).map(|&i| self.users.row(i, self.k))
    }

    pub fn item_factors(&self, item: ItemId) -> Option<&[f64]> {
        self.items.index.get(&item).map(|&i| self.items.row(i, self.k))
    }

    pub fn user_bias(&self, user: UserId) -> Option<f64> {
        self.users.index.get(&user).map(|&i| self.users.bias[i])
    }

    pub fn item_bias(&self, item: ItemId) -> Option<f64> {
        self.items.index.get(&item).map(|&i| self.items.bias[i])
    }

    /// Builds a model from explicit parameters; factor vectors must all have length `k`.
    pub fn from_parts(
        k: usize,
        global_bias: f64,
        users: Vec<(UserId, f64, Vec<f64>)>,
        items: Vec<(ItemId, f64, Vec<f64>)>,
    ) -> Result<Self> {
        fn side<Id: Ord + Copy>(k: usize, rows: Vec<(Id, f64, Vec<f64>)>) -> Result<Side<Id>> {
            let mut s = Side::new(rows.iter().map(|r| r.0).collect(), k);
            if s.index.len() != s.ids.len() {
                return Err(MfError::Config("duplicate id in factor table".into()));
            }
            for (i, (_, b, f)) in rows.into_iter().enumerate() {
                if f.len() != k {
                    return Err(MfError::Config(format!(
                        "factor vector of length {} for k = {k}",
                        f.len()
                    )));
                }
                s.bias[i] = b;
                s.factors[i * k..(i + 1) * k].copy_from_slice(&f);
            }
            Ok(s)
        }
        Ok(Self {
            k,
            global_bias,
            users: side(k, users)?,
            items: side(k, items)?,
        })
    }

    fn score_idx(&self, u: usize, i: usize) -> f64 {
        self.global_bias
            + self.users.bias[u]
            + self.items.bias[i]
            + dot(self.users.row(u, self.k), self.items.row(i, self.k))
    }

    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64> {
        let u = *self.users.index.get(&user).ok_or(MfError::UnknownUser(user))?;
        let i = *self.items.index.get(&item).ok_or(MfError::UnknownItem(item))?;
        Ok(self.score_idx(u, i))
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && [&self.users.bias, &self.users.factors, &self.items.bias, &self.items.factors]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Text dump: a version header followed by one row per user and per item.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "global_bias {}", self.global_bias);
        fn rows<Id: std::fmt::Display + Ord + Copy>(
            out: &mut String,
            label: &str,
            side: &Side<Id>,
            k: usize,
        ) {
            let _ = writeln!(out, "{label} {}", side.ids.len());
            for (i, id) in side.ids.iter().enumerate() {
                let _ = write!(out, "{id} {}", side.bias[i]);
                for v in side.row(i, k) {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        rows(&mut out, "users", &self.users, self.k);
        rows(&mut out, "items", &self.items, self.k);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, message: &str| MfError::Format {
            line,
            message: message.to_string(),
        };
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, &format!("missing {what}")));

        let (ln, header) = next("header")?;
        if header.trim() != FORMAT_HEADER {
            return Err(bad(ln, "unsupported model header"));
        }
        let keyed = |(ln, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(ln, &format!("expected `{key}`")))
        };
        let k: usize = keyed(next("k")?, "k ")?
            .parse()
            .map_err(|_| bad(2, "bad k"))?;
        let global_bias: f64 = keyed(next("global_bias")?, "global_bias ")?
            .parse()
            .map_err(|_| bad(3, "bad global bias"))?;

        let mut read_side = |label: &str| -> Result<Vec<(u64, f64, Vec<f64>)>> {
            let (ln, line) = next(label)?;
            let count: usize = line
                .strip_prefix(label)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(ln, &format!("expected `{label} <count>`")))?;
            let mut rows = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, line) = next("factor row")?;
                let mut parts = line.split_whitespace();
                let id: u64 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(ln, "bad id"))?;
                let vals: Vec<f64> = parts
                    .map(|v| v.parse::<f64>().map_err(|_| bad(ln, "bad number")))
                    .collect::<Result<_>>()?;
                if vals.len() != k + 1 {
                    return Err(bad(ln, "wrong number of values"));
                }
                rows.push((id, vals[0], vals[1..].to_vec()));
            }
            Ok(rows)
        };
        let users = read_side("users")?
            .into_iter()
            .map(|(id, b, f)| (UserId(id), b, f))
            .collect();
        let items = read_side("items")?
            .into_iter()
            .map(|(id, b, f)| (ItemId(id), b, f))
            .collect();
        Self::from_parts(k, global_bias, users, items)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Regularized squared error of `model` on `log`.
pub fn objective(model: &MfModel, log: &InteractionLog, regularization: f64) -> f64 {
    let sq: f64 = log
        .interactions
        .iter()
        .map(|it| {
            let p = model.predict(it.user, it.item).unwrap_or(f64::NAN);
            (it.rating - p).powi(2)
        })
        .sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    sq + regularization
        * (norm(&model.users.factors)
            + norm(&model.users.bias)
            + norm(&model.items.factors)
            + norm(&model.items.bias))
}

/// Solves `(Z'Z + reg I) x = Z't` for one row; `z` holds `(features, target)` pairs.
fn solve_row(dim: usize, rows: &[(&[f64], f64)], reg: f64) -> Vec<f64> {
    let mut a = DMatrix::<f64>::identity(dim, dim) * reg;
    let mut b = DVector::<f64>::zeros(dim);
    for (z, t) in rows {
        for r in 0..dim {
            let zr = if r < dim - 1 { z[r] } else { 1.0 };
            b[r] += zr * t;
            for c in 0..dim {
                let zc = if c < dim - 1 { z[c] } else { 1.0 };
                a[(r, c)] += zr * zc;
            }
        }
    }
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(dim)),
    };
    x.iter().copied().collect()
}

/// Fits the model, returning it with the loss before training and after each iteration.
pub fn train_mf_traced(train: &InteractionLog, config: &MfConfig) -> Result<(MfModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(MfError::EmptyTraining);
    }
    let k = config.factors;
    if k == 0 || config.iterations == 0 {
        return Err(MfError::Config("factors and iterations must be positive".into()));
    }
    if config.regularization < 0.0 || !config.regularization.is_finite() {
        return Err(MfError::Config("regularization must be nonnegative".into()));
    }
    let user_ids: Vec<UserId> = train.users().into_iter().collect();
    let item_ids: Vec<ItemId> = train.items().into_iter().collect();
    if k > user_ids.len().min(item_ids.len()) {
        return Err(MfError::Config(format!(
            "k = {k} exceeds min(#users = {}, #items = {})",
            user_ids.len(),
            item_ids.len()
        )));
    }

    let global_bias =
        train.interactions.iter().map(|it| it.rating).sum::<f64>() / train.len() as f64;
    let mut model = MfModel {
        k,
        global_bias,
        users: Side::new(user_ids, k),
        items: Side::new(item_ids, k),
    };
    let mut rng = seed::rng(config.seed);
    let scale = 0.1 / (k as f64).sqrt();
    for v in model.users.factors.iter_mut().chain(model.items.factors.iter_mut()) {
        *v = rng.random_range(-1.0..1.0) * scale;
    }

    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.users.ids.len()];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.items.ids.len()];
    for Interaction { user, item, rating } in &train.interactions {
        let u = model.users.index[user];
        let i = model.items.index[item];
        by_user[u].push((i, *rating));
        by_item[i].push((u, *rating));
    }

    let reg = config.regularization;
    let mut history = vec![objective(&model, train, reg)];
    for _ in 0..config.iterations {
        half_step(&mut model.users, &model.items, &by_user, global_bias, k, reg);
        half_step(&mut model.items, &model.users, &by_item, global_bias, k, reg);
        history.push(objective(&model, train, reg));
    }
    if !model.is_finite() {
        return Err(MfError::Config("training diverged to non-finite factors".into()));
    }
    Ok((model, history))
}

/// Re-solves every row of `target` with `fixed` held constant.
fn half_step<A: Sync + Send, B: Sync>(
    target: &mut Side<A>,
    fixed: &Side<B>,
    ratings: &[Vec<(usize, f64)>],
    global_bias: f64,
    k: usize,
    reg: f64,
) {
    let solved: Vec<Vec<f64>> = ratings
        .par_iter()
        .map(|obs| {
            let rows: Vec<(&[f64], f64)> = obs
                .iter()
                .map(|&(j, r)| (fixed.row(j, k), r - global_bias - fixed.bias[j]))
                .collect();
            solve_row(k + 1, &rows, reg)
        })
        .collect();
    for (idx, x) in solved.into_iter().enumerate() {
        target.factors[idx * k..(idx + 1) * k].copy_from_slice(&x[..k]);
        target.bias[idx] = x[k];
    }
}

pub fn train_mf(train: &InteractionLog, config: &MfConfig) -> Result<MfModel> {
    train_mf_traced(train, config).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub item: ItemId,
    pub score: f64,
    /// 1-based position in the candidate list.
    pub rank: usize,
}

/// Relevance-ranked candidates for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user: UserId,
    pub entries: Vec<CandidateEntry>,
}

impl CandidateList {
    /// Builds a list from already-ordered `(item, score)` pairs.
    pub fn from_ranked(user: UserId, ranked: impl IntoIterator<Item = (ItemId, f64)>) -> Self {
        let entries = ranked
            .into_iter()
            .enumerate()
            .map(|(i, (item, score))| CandidateEntry {
                item,
                score,
                rank: i + 1,
            })
            .collect();
        Self { user, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|e| e.item)
    }

    /// The first `m` entries.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            user: self.user,
            entries: self.entries.iter().take(m).copied().collect(),
        }
    }

    /// Scores min-max normalized to [0, 1]; a constant list maps to 1.
    pub fn normalized_scores(&self) -> Vec<f64> {
        let (lo, hi) = self
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.score), hi.max(e.score))
            });
        self.entries
            .iter()
            .map(|e| if hi > lo { (e.score - lo) / (hi - lo) } else { 1.0 })
            .collect()
    }
}

/// The `m` highest-scoring items outside `exclude`; equal scores go to the smaller item id.
pub fn top_candidates(
    model: &MfModel,
    user: UserId,
    m: usize,
    exclude: &BTreeSet<ItemId>,
) -> Result<CandidateList> {
    let u = *model.users.index.get(&user).ok_or(MfError::UnknownUser(user))?;
    let mut scored: Vec<(ItemId, f64)> = model
        .items
        .ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !exclude.contains(id))
        .map(|(i, id)| (*id, model.score_idx(u, i)))
        .collect();
    if scored.len() < m {
        return Err(MfError::ShortCatalog {
            user,
            requested: m,
            available: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(m);
    Ok(CandidateList::from_ranked(user, scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub chosen: usize,
    /// Mean validation NDCG for each grid value, in grid order.
    pub scores: Vec<(usize, f64)>,
}

/// Mean NDCG@`cutoff` of `model` on held-out `validation` ratings.
pub fn validation_ndcg(
    model: &MfModel,
    train: &InteractionLog,
    validation: &InteractionLog,
    cutoff: usize,
    relevance_threshold: f64,
) -> Result<f64> {
    let seen = train.user_items();
    let mut total = 0.0;
    let mut count = 0usize;
    for (user, rows) in validation.by_user() {
        let Some(seen) = seen.get(&user) else { continue };
        let relevant: BTreeSet<ItemId> = rows
            .iter()
            .filter(|it| it.rating >= relevance_threshold)
            .map(|it| it.item)
            .collect();
        let available = model.items().len()
            - seen.iter().filter(|i| model.item_factors(**i).is_some()).count();
        let cl = top_candidates(model, user, cutoff.min(available), seen)?;
        let ranked: Vec<ItemId> = cl.items().collect();
        total += metrics::ndcg_at(&ranked, &relevant, cutoff);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Picks the factor count maximizing validation NDCG@10; ties go to the smaller k.
pub fn select_k(
    train: &InteractionLog,
    validation: &InteractionLog,
    grid: &[usize],
    base: &MfConfig,
    relevance_threshold: f64,
) -> Result<KSelection> {
    if grid.is_empty() {
        return Err(MfError::Config("empty factor grid".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &k in grid {
        let model = train_mf(train, &MfConfig { factors: k, ..*base })?;
        let ndcg = validation_ndcg(&model, train, validation, 10, relevance_threshold)?;
        log::info!("k = {k}: validation NDCG@10 = {ndcg:.4}");
        scores.push((k, ndcg));
    }
    let chosen = scores
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .expect("grid is nonempty");
    Ok(KSelection { chosen, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LogRole;

    fn log(rows: &[(u64, u64, f64)]) -> InteractionLog {
        InteractionLog::new(
            rows.iter()
                .map(|&(u, i, r)| Interaction {
                    user: UserId(u),
                    item: ItemId(i),
                    rating: r,
                })
                .collect(),
            LogRole::Train,
            5.0,
        )
    }

    #[test]
    fn predict_is_biases_plus_dot() {
        let m = MfModel::from_parts(
            2,
            0.0,
            vec![(UserId(1), 0.0, vec![0.0, 0.0]), (UserId(2), 0.0, vec![1.0, 0.0])],
            vec![(ItemId(1), 0.0, vec![0.0, 0.0]), (ItemId(2), 0.0, vec![2.0, 3.0])],
        )
        .unwrap();
        assert_eq!(m.predict(UserId(1), ItemId(1)).unwrap(), 0.0);
        assert_eq!(m.predict(UserId(2), ItemId(2)).unwrap(), 2.0);
        assert!(matches!(m.predict(UserId(9), ItemId(1)), Err(MfError::UnknownUser(_))));
        assert!(matches!(m.predict(UserId(1), ItemId(9)), Err(MfError::UnknownItem(_))));
    }

    #[test]
    fn single_cell_is_fitted_exactly() {
        let train = log(&[(1, 1, 5.0)]);
        let cfg = MfConfig {
            factors: 1,
            ..Default::default()
        };
        let model = train_mf(&train, &cfg).unwrap();
        assert!((model.predict(UserId(1), ItemId(1)).unwrap() - 5.0).abs() < 0.01);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let train = log(&[(1, 1, 5.0), (2, 1, 3.0)]);
        let cfg = MfConfig {
            factors: 2,
            ..Default::default()
        };
        assert!(matches!(train_mf(&train, &cfg), Err(MfError::Config(_))));
    }

    #[test]
    fn more_iterations_never_raise_the_loss() {
        let rows: Vec<(u64, u64, f64)> = (0..12)
            .flat_map(|u| (0..9).filter(move |i| (u + i) % 3 != 0).map(move |i| (u, i, ((u * i) % 5 + 1) as f64)))
            .collect();
        let train = log(&rows);
        let cfg = |iterations| MfConfig {
            factors: 3,
            iterations,
            seed: 5,
            ..Default::default()
        };
        let (m2, _) = train_mf_traced(&train, &cfg(2)).unwrap();
        let (m10, hist) = train_mf_traced(&train, &cfg(10)).unwrap();
        assert!(objective(&m10, &train, 0.1) <= objective(&m2, &train, 0.1));
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
    }

    #[test]
    fn training_is_deterministic() {
        let rows: Vec<(u64, u64, f64)> = (0..6).flat_map(|u| (0..5).map(move |i| (u, i, ((u + 2 * i) % 5 + 1) as f64))).collect();
        let train = log(&rows);
        let cfg = MfConfig {
            factors: 2,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(train_mf(&train, &cfg).unwrap(), train_mf(&train, &cfg).unwrap());
    }

    fn hand_model() -> MfModel {
        MfModel::from_parts(
            1,
            0.0,
            vec![(UserId(1), 0.0, vec![1.0])],
            [0.3, 0.9, 0.1, 0.9, 0.5]
                .iter()
                .enumerate()
                .map(|(i, s)| (ItemId(i as u64 + 1), 0.0, vec![*s]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn top_candidates_matches_exhaustive_sort() {
        let model = hand_model();
        let cl = top_candidates(&model, UserId(1), 3, &BTreeSet::new()).unwrap();
        // exhaustive: scores 1:.3 2:.9 3:.1 4:.9 5:.5 -> 2,4 tie broken by id, then 5
        let items: Vec<u64> = cl.items().map(|i| i.0).collect();
        assert_eq!(items, vec![2, 4, 5]);
        assert_eq!(cl.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn excluded_items_never_appear() {
        let model = hand_model();
        let exclude: BTreeSet<ItemId> = [ItemId(2), ItemId(5)].into();
        let cl = top_candidates(&model, UserId(1), 3, &exclude).unwrap();
        assert_eq!(cl.items().map(|i| i.0).collect::<Vec<_>>(), vec![4, 1, 3]);
        assert!(matches!(
            top_candidates(&model, UserId(1), 4, &exclude),
            Err(MfError::ShortCatalog { available: 3, .. })
        ));
    }

    #[test]
    fn text_dump_round_trips() {
        let rows: Vec<(u64, u64, f64)> = (0..5).flat_map(|u| (0..4).map(move |i| (u, i, ((u + i) % 5 + 1) as f64))).collect();
        let model = train_mf(&log(&rows), &MfConfig { factors: 2, ..Default::default() }).unwrap();
        let back = MfModel::from_text(&model.to_text()).unwrap();
        assert_eq!(model, back);
        assert!(MfModel::from_text("something else\n").is_err());
    }

    #[test]
    fn normalized_scores_span_unit_interval() {
        let cl = CandidateList::from_ranked(UserId(1), [(ItemId(1), 4.0), (ItemId(2), 3.0), (ItemId(3), 2.0)]);
        assert_eq!(cl.normalized_scores(), vec![1.0, 0.5, 0.0]);
        let flat = CandidateList::from_ranked(UserId(1), [(ItemId(1), 2.0), (ItemId(2), 2.0)]);
        assert_eq!(flat.normalized_scores(), vec![1.0, 1.0]);
    }

    #[test]
    fn select_k_with_single_value() {
        let rows: Vec<(u64, u64, f64)> = (0..6).flat_map(|u| (0..12).map(move |i| (u, i, ((u + i) % 5 + 1) as f64))).collect();
        let all = log(&rows);
        let (tr, va) = crate::corpus::holdout(&all, &Default::default(), LogRole::Validation).unwrap();
        let sel = select_k(&tr, &va, &[3], &MfConfig::default(), 4.0).unwrap();
        assert_eq!(sel.chosen, 3);
        assert!(matches!(select_k(&tr, &va, &[], &MfConfig::default(), 4.0), Err(MfError::Config(_))));
    }
}
