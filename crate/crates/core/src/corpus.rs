//! Rating logs and item catalogs: loading, preprocessing and splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ItemId, UserId};
use crate::seed;

/// Highest value of the normalized rating scale.
pub const NORMALIZED_SCALE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{0}: no data rows")]
    EmptyLog(PathBuf),
    #[error("preprocessing removed every user")]
    EmptyResult,
    #[error("user {0} has fewer than 2 interactions and cannot be split")]
    Unsplittable(UserId),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogRole {
    Raw,
    Train,
    Validation,
    Test,
}

/// A list of interactions together with the rating scale they are expressed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    pub role: LogRole,
    /// Maximum value of the rating scale (5 once preprocessed).
    pub rating_scale: f64,
}

impl InteractionLog {
    pub fn new(interactions: Vec<Interaction>, role: LogRole, rating_scale: f64) -> Self {
        Self {
            interactions,
            role,
            rating_scale,
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Interactions grouped per user, users in ascending id order.
    pub fn by_user(&self) -> BTreeMap<UserId, Vec<Interaction>> {
        let mut out: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
        for it in &self.interactions {
            out.entry(it.user).or_default().push(*it);
        }
        out
    }

    pub fn users(&self) -> BTreeSet<UserId> {
        self.interactions.iter().map(|it| it.user).collect()
    }

    pub fn items(&self) -> BTreeSet<ItemId> {
        self.interactions.iter().map(|it| it.item).collect()
    }

    /// Items each user interacted with.
    pub fn user_items(&self) -> BTreeMap<UserId, BTreeSet<ItemId>> {
        let mut out: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
        for it in &self.interactions {
            out.entry(it.user).or_default().insert(it.item);
        }
        out
    }

    fn sorted(mut self) -> Self {
        self.interactions.sort_by_key(|it| (it.user, it.item));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    pub genres: BTreeSet<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCatalog {
    items: BTreeMap<ItemId, Item>,
    genre_universe: BTreeSet<String>,
}

impl ItemCatalog {
    pub fn new(items: impl IntoIterator<Item = Item>) -> Self {
        let items: BTreeMap<ItemId, Item> = items.into_iter().map(|it| (it.id, it)).collect();
        let genre_universe = items
            .values()
            .flat_map(|it| it.genres.iter().cloned())
            .collect();
        Self {
            items,
            genre_universe,
        }
    }

    pub fn get(&self, id: ItemId) -> Option<&Item> {
        self.items.get(&id)
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.items.contains_key(&id)
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn genre_universe(&self) -> &BTreeSet<String> {
        &self.genre_universe
    }

    /// Genre set of an item; empty for unknown items.
    pub fn genres(&self, id: ItemId) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.items.get(&id).map_or(&EMPTY, |it| &it.genres)
    }

    /// Attaches descriptions; ids missing from the catalog are ignored.
    pub fn set_descriptions(&mut self, descriptions: &BTreeMap<ItemId, String>) {
        for (id, text) in descriptions {
            if let Some(item) = self.items.get_mut(id) {
                item.description = Some(text.clone());
            }
        }
    }

    /// Keeps only items accepted by `keep` and recomputes the genre universe.
    pub fn retain(self, mut keep: impl FnMut(&Item) -> bool) -> Self {
        Self::new(self.items.into_values().filter(|it| keep(it)))
    }
}

/// Column names and rating scale of an interactions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub user_column: String,
    pub item_column: String,
    pub rating_column: String,
    pub delimiter: char,
    /// Maximum value of the source rating scale.
    pub rating_scale: f64,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            user_column: "user_id".into(),
            item_column: "item_id".into(),
            rating_column: "rating".into(),
            delimiter: ',',
            rating_scale: NORMALIZED_SCALE,
        }
    }
}

/// Result of [`load_interactions`].
#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub log: InteractionLog,
    /// Rows dropped because a later row had the same (user, item) pair.
    pub duplicates_collapsed: usize,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader(path: &Path, delimiter: char) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
}

fn records<'a>(
    rdr: &'a mut csv::Reader<File>,
    path: &Path,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let path = path.to_path_buf();
    rdr.records().map(move |rec| match rec {
        Ok(rec) => Ok((rec.position().map_or(0, |p| p.line()), rec)),
        Err(e) => {
            let line = e.position().map_or(0, |p| p.line());
            Err(parse_err(&path, line, e.to_string()))
        }
    })
}

/// Reads a delimited `user,item,rating` file. Later duplicates replace earlier ones.
pub fn load_interactions(path: &Path, schema: &ColumnSpec) -> Result<LoadedLog> {
    let mut rdr = reader(path, schema.delimiter)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let (uc, ic, rc) = (
        column(&headers, &schema.user_column, path)?,
        column(&headers, &schema.item_column, path)?,
        column(&headers, &schema.rating_column, path)?,
    );

    let mut slots: BTreeMap<(UserId, ItemId), usize> = BTreeMap::new();
    let mut rows: Vec<Option<Interaction>> = Vec::new();
    let mut duplicates = 0;
    for rec in records(&mut rdr, path) {
        let (line, rec) = rec?;
        let field = |idx: usize, name: &str| {
            rec.get(idx)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| parse_err(path, line, format!("missing {name}")))
        };
        let user: UserId = field(uc, "user")?
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad user id: {e}")))?;
        let item: ItemId = field(ic, "item")?
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad item id: {e}")))?;
        let rating: f64 = field(rc, "rating")?
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad rating: {e}")))?;
        if !rating.is_finite() {
            return Err(parse_err(path, line, "rating is not finite"));
        }
        let row = Interaction { user, item, rating };
        if let Some(&prev) = slots.get(&(user, item)) {
            rows[prev] = None;
            duplicates += 1;
        }
        slots.insert((user, item), rows.len());
        rows.push(Some(row));
    }
    if rows.is_empty() {
        return Err(CorpusError::EmptyLog(path.to_path_buf()));
    }
    Ok(LoadedLog {
        log: InteractionLog::new(
            rows.into_iter().flatten().collect(),
            LogRole::Raw,
            schema.rating_scale,
        ),
        duplicates_collapsed: duplicates,
    })
}

/// Reads an `item_id,title,genres` file (genres separated by `|`).
pub fn load_catalog(path: &Path) -> Result<ItemCatalog> {
    let mut rdr = reader(path, ',')?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let (ic, tc, gc) = (
        column(&headers, "item_id", path)?,
        column(&headers, "title", path)?,
        column(&headers, "genres", path)?,
    );
    let mut items = Vec::new();
    for rec in records(&mut rdr, path) {
        let (line, rec) = rec?;
        let id: ItemId = rec
            .get(ic)
            .ok_or_else(|| parse_err(path, line, "missing item id"))?
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad item id: {e}")))?;
        let title = rec
            .get(tc)
            .ok_or_else(|| parse_err(path, line, "missing title"))?
            .to_string();
        let genres = rec
            .get(gc)
            .unwrap_or("")
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(String::from)
            .collect();
        items.push(Item {
            id,
            title,
            genres,
            description: None,
        });
    }
    Ok(ItemCatalog::new(items))
}

/// Reads an `item_id,description` file.
pub fn load_descriptions(path: &Path) -> Result<BTreeMap<ItemId, String>> {
    let mut rdr = reader(path, ',')?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let (ic, dc) = (
        column(&headers, "item_id", path)?,
        column(&headers, "description", path)?,
    );
    let mut out = BTreeMap::new();
    for rec in records(&mut rdr, path) {
        let (line, rec) = rec?;
        let id: ItemId = rec
            .get(ic)
            .ok_or_else(|| parse_err(path, line, "missing item id"))?
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad item id: {e}")))?;
        let text = rec.get(dc).unwrap_or("").to_string();
        if !text.is_empty() {
            out.insert(id, text);
        }
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CorpusError + '_ {
    move |e| CorpusError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

pub fn write_interactions(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["user_id", "item_id", "rating"])
        .map_err(csv_io(path))?;
    for it in &log.interactions {
        w.write_record([it.user.to_string(), it.item.to_string(), it.rating.to_string()])
            .map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_catalog(path: &Path, catalog: &ItemCatalog) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["item_id", "title", "genres"])
        .map_err(csv_io(path))?;
    for item in catalog.items() {
        let genres = item.genres.iter().cloned().collect::<Vec<_>>().join("|");
        w.write_record([item.id.to_string(), item.title.clone(), genres])
            .map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_descriptions(path: &Path, descriptions: &BTreeMap<ItemId, String>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["item_id", "description"])
        .map_err(csv_io(path))?;
    for (id, text) in descriptions {
        w.write_record([id.to_string(), text.clone()])
            .map_err(csv_io(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Maps a rating from a `1..=scale` source scale onto 1..=5.
pub fn normalize_rating(rating: f64, scale: f64) -> f64 {
    (rating * NORMALIZED_SCALE / scale)
        .ceil()
        .clamp(1.0, NORMALIZED_SCALE)
}

/// True when every alphabetic character of the title is Latin script.
pub fn roman_title(item: &Item) -> bool {
    item.title
        .chars()
        .filter(|c| c.is_alphabetic())
        .all(|c| c.is_ascii_alphabetic() || ('\u{00C0}'..='\u{024F}').contains(&c))
}

pub type ItemPredicate = Arc<dyn Fn(&Item) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct PreprocessOptions {
    pub min_user_interactions: usize,
    pub max_user_interactions: usize,
    /// Dataset-specific item filters (title script, release date, ...).
    pub item_filters: Vec<ItemPredicate>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            min_user_interactions: 70,
            max_user_interactions: 300,
            item_filters: Vec::new(),
        }
    }
}

impl fmt::Debug for PreprocessOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreprocessOptions")
            .field("min_user_interactions", &self.min_user_interactions)
            .field("max_user_interactions", &self.max_user_interactions)
            .field("item_filters", &self.item_filters.len())
            .finish()
    }
}

/// Drops unusable items, normalizes ratings and filters users by activity.
pub fn preprocess(
    log: &InteractionLog,
    catalog: &ItemCatalog,
    opts: &PreprocessOptions,
) -> Result<(InteractionLog, ItemCatalog)> {
    let usable = catalog.clone().retain(|it| {
        !it.genres.is_empty()
            && !it.title.trim().is_empty()
            && opts.item_filters.iter().all(|keep| keep(it))
    });

    let kept: Vec<Interaction> = log
        .interactions
        .iter()
        .filter(|it| usable.contains(it.item))
        .map(|it| Interaction {
            rating: normalize_rating(it.rating, log.rating_scale),
            ..*it
        })
        .collect();

    let mut counts: BTreeMap<UserId, usize> = BTreeMap::new();
    for it in &kept {
        *counts.entry(it.user).or_default() += 1;
    }
    let active = |u: &UserId| {
        let c = counts[u];
        c >= opts.min_user_interactions && c <= opts.max_user_interactions
    };
    let kept: Vec<Interaction> = kept.into_iter().filter(|it| active(&it.user)).collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyResult);
    }

    let rated: BTreeSet<ItemId> = kept.iter().map(|it| it.item).collect();
    let catalog = usable.retain(|it| rated.contains(&it.id));
    let log = InteractionLog::new(kept, log.role, NORMALIZED_SCALE).sorted();
    Ok((log, catalog))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub test_user_sample: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            test_user_sample: 500,
        }
    }
}

/// Number of a user's `n` interactions that go to the training side.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Per-user random holdout: `train_fraction` of each user's ratings to train.
pub fn split(log: &InteractionLog, spec: &SplitSpec) -> Result<(InteractionLog, InteractionLog)> {
    holdout(log, spec, LogRole::Test)
}

/// Same as [`split`] but labels the held-out side with `held_role`.
pub fn holdout(
    log: &InteractionLog,
    spec: &SplitSpec,
    held_role: LogRole,
) -> Result<(InteractionLog, InteractionLog)> {
    let mut train = Vec::with_capacity(log.len());
    let mut held = Vec::new();
    for (user, mut rows) in log.by_user() {
        if rows.len() < 2 {
            return Err(CorpusError::Unsplittable(user));
        }
        rows.sort_by_key(|it| it.item);
        let mut rng = seed::rng(seed::keyed_seed(spec.seed, user.0));
        rows.shuffle(&mut rng);
        let cut = train_count(rows.len(), spec.train_fraction);
        held.extend_from_slice(&rows[cut..]);
        train.extend_from_slice(&rows[..cut]);
    }
    Ok((
        InteractionLog::new(train, LogRole::Train, log.rating_scale).sorted(),
        InteractionLog::new(held, held_role, log.rating_scale).sorted(),
    ))
}

/// Uniform sample (without replacement) of test users.
pub fn sample_test_users(test: &InteractionLog, spec: &SplitSpec) -> BTreeSet<UserId> {
    let users: Vec<UserId> = test.users().into_iter().collect();
    let amount = spec.test_user_sample.min(users.len());
    let mut rng = seed::rng(spec.seed);
    index::sample(&mut rng, users.len(), amount)
        .into_iter()
        .map(|i| users[i])
        .collect()
}

/// Summary counts matching the usual dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub ratings: usize,
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub avg_ratings_per_user: f64,
    pub avg_ratings_per_item: f64,
    pub avg_title_length: f64,
    pub sparsity: f64,
}

pub fn stats(log: &InteractionLog, catalog: &ItemCatalog) -> CorpusStats {
    let users = log.users().len();
    let items = log.items().len();
    let ratings = log.len();
    let per = |d: usize| if d == 0 { 0.0 } else { ratings as f64 / d as f64 };
    let title_chars: usize = catalog.items().map(|it| it.title.chars().count()).sum();
    let cells = users as f64 * items as f64;
    CorpusStats {
        ratings,
        users,
        items,
        genres: catalog.genre_universe().len(),
        avg_ratings_per_user: per(users),
        avg_ratings_per_item: per(items),
        avg_title_length: if catalog.is_empty() {
            0.0
        } else {
            title_chars as f64 / catalog.len() as f64
        },
        sparsity: if cells == 0.0 {
            0.0
        } else {
            1.0 - ratings as f64 / cells
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn item(id: u64, title: &str, genres: &[&str]) -> Item {
        Item {
            id: ItemId(id),
            title: title.into(),
            genres: genres.iter().map(|g| g.to_string()).collect(),
            description: None,
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn rows(user: u64, n: u64, rating: f64) -> Vec<Interaction> {
        (0..n)
            .map(|i| Interaction {
                user: UserId(user),
                item: ItemId(i),
                rating,
            })
            .collect()
    }

    fn catalog_of(n: u64) -> ItemCatalog {
        ItemCatalog::new((0..n).map(|i| item(i, &format!("Title {i}"), &["g"])))
    }

    #[test]
    fn loads_valid_rows() {
        let f = write_tmp("user_id,item_id,rating\n1,10,3\n1,11,4\n2,10,5\n");
        let loaded = load_interactions(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(loaded.log.len(), 3);
        assert_eq!(loaded.duplicates_collapsed, 0);
        assert_eq!(loaded.log.role, LogRole::Raw);
    }

    #[test]
    fn duplicate_rows_keep_last() {
        let f = write_tmp("user_id,item_id,rating\n1,1,3\n1,1,5\n");
        let loaded = load_interactions(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(
            loaded.log.interactions,
            vec![Interaction {
                user: UserId(1),
                item: ItemId(1),
                rating: 5.0
            }]
        );
        assert_eq!(loaded.duplicates_collapsed, 1);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let mut body = String::from("user_id,item_id,rating\n");
        for i in 0..10 {
            if i == 6 {
                body.push_str("7,x,3\n");
            } else {
                body.push_str(&format!("{i},{i},3\n"));
            }
        }
        let f = write_tmp(&body);
        match load_interactions(f.path(), &ColumnSpec::default()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("user_id,item_id,rating\n");
        assert!(matches!(
            load_interactions(f.path(), &ColumnSpec::default()),
            Err(CorpusError::EmptyLog(_))
        ));
    }

    #[test]
    fn catalog_parses_pipe_genres() {
        let f = write_tmp("item_id,title,genres\n1,\"Fate; Stay\",Action|Drama\n2,Empty,\n");
        let cat = load_catalog(f.path()).unwrap();
        assert_eq!(cat.get(ItemId(1)).unwrap().title, "Fate; Stay");
        assert_eq!(cat.genres(ItemId(1)).len(), 2);
        assert!(cat.genres(ItemId(2)).is_empty());
        assert_eq!(cat.genre_universe().len(), 2);
    }

    #[test]
    fn ten_point_scale_maps_by_ceiling_of_half() {
        let mapped: Vec<f64> = (1..=10).map(|r| normalize_rating(r as f64, 10.0)).collect();
        let oracle: Vec<f64> = (1..=10).map(|r: i32| ((r + 1) / 2) as f64).collect();
        assert_eq!(mapped, oracle);
        assert_eq!(normalize_rating(7.0, 10.0), 4.0);
        assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(mapped.first(), Some(&1.0));
        assert_eq!(mapped.last(), Some(&5.0));
    }

    #[test]
    fn activity_bounds_are_inclusive() {
        let mut inter = rows(1, 69, 4.0);
        inter.extend(rows(2, 70, 4.0));
        inter.extend(rows(3, 300, 4.0));
        inter.extend(rows(4, 301, 4.0));
        let log = InteractionLog::new(inter, LogRole::Raw, 5.0);
        let (out, cat) = preprocess(&log, &catalog_of(301), &PreprocessOptions::default()).unwrap();
        let users: Vec<u64> = out.users().into_iter().map(|u| u.0).collect();
        assert_eq!(users, vec![2, 3]);
        assert_eq!(cat.len(), 300);
    }

    #[test]
    fn genreless_items_are_removed_with_their_ratings() {
        let mut items: Vec<Item> = (0..80).map(|i| item(i, "t", &["a"])).collect();
        items.push(item(80, "no genre", &[]));
        let mut inter = rows(1, 81, 3.0);
        inter.extend(rows(2, 70, 3.0));
        let log = InteractionLog::new(inter, LogRole::Raw, 5.0);
        let (out, cat) = preprocess(&log, &ItemCatalog::new(items), &PreprocessOptions::default())
            .unwrap();
        assert!(!cat.contains(ItemId(80)));
        assert!(out.interactions.iter().all(|it| it.item != ItemId(80)));
        assert_eq!(out.by_user()[&UserId(1)].len(), 80);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let log = InteractionLog::new(rows(1, 5, 3.0), LogRole::Raw, 5.0);
        assert!(matches!(
            preprocess(&log, &catalog_of(5), &PreprocessOptions::default()),
            Err(CorpusError::EmptyResult)
        ));
    }

    #[test]
    fn preprocess_is_idempotent() {
        let mut items: Vec<Item> = (0..120).map(|i| item(i, "t", &["a", "b"])).collect();
        items.push(item(120, "日本語", &["c"]));
        let mut inter = rows(1, 121, 8.0);
        inter.extend(rows(2, 70, 3.0));
        inter.extend(rows(3, 10, 10.0));
        let log = InteractionLog::new(inter, LogRole::Raw, 10.0);
        let opts = PreprocessOptions {
            item_filters: vec![Arc::new(roman_title)],
            ..Default::default()
        };
        let once = preprocess(&log, &ItemCatalog::new(items), &opts).unwrap();
        let twice = preprocess(&once.0, &once.1, &opts).unwrap();
        assert_eq!(once, twice);
        assert!(!once.1.contains(ItemId(120)));
        assert!(once.0.interactions.iter().all(|it| (1.0..=5.0).contains(&it.rating)));
    }

    #[test]
    fn train_count_rounds_half_up() {
        assert_eq!(train_count(100, 0.8), 80);
        assert_eq!(train_count(71, 0.8), 57);
        assert_eq!(train_count(2, 0.8), 1);
    }

    #[test]
    fn split_is_exact_and_deterministic() {
        let mut inter = rows(1, 100, 4.0);
        inter.extend(rows(2, 71, 4.0));
        let log = InteractionLog::new(inter, LogRole::Raw, 5.0);
        let spec = SplitSpec {
            seed: 11,
            ..Default::default()
        };
        let (train, test) = split(&log, &spec).unwrap();
        assert_eq!(train.by_user()[&UserId(1)].len(), 80);
        assert_eq!(test.by_user()[&UserId(1)].len(), 20);
        assert_eq!(train.by_user()[&UserId(2)].len(), 57);
        assert_eq!(test.by_user()[&UserId(2)].len(), 14);
        assert_eq!(split(&log, &spec).unwrap(), (train.clone(), test.clone()));

        let tr: BTreeSet<_> = train.interactions.iter().map(|i| (i.user, i.item)).collect();
        let te: BTreeSet<_> = test.interactions.iter().map(|i| (i.user, i.item)).collect();
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.len() + te.len(), log.len());
        assert!(test.users().is_subset(&train.users()));
    }

    #[test]
    fn single_interaction_user_cannot_be_split() {
        let log = InteractionLog::new(rows(1, 1, 4.0), LogRole::Raw, 5.0);
        assert!(matches!(
            split(&log, &SplitSpec::default()),
            Err(CorpusError::Unsplittable(_))
        ));
    }

    #[test]
    fn test_user_sampling_clamps_and_repeats() {
        let inter: Vec<Interaction> = (0..1000).flat_map(|u| rows(u, 1, 3.0)).collect();
        let log = InteractionLog::new(inter, LogRole::Test, 5.0);
        let spec = SplitSpec {
            seed: 3,
            ..Default::default()
        };
        let a = sample_test_users(&log, &spec);
        assert_eq!(a.len(), 500);
        assert_eq!(a, sample_test_users(&log, &spec));

        let small: Vec<Interaction> = (0..300).flat_map(|u| rows(u, 1, 3.0)).collect();
        let small = InteractionLog::new(small, LogRole::Test, 5.0);
        assert_eq!(sample_test_users(&small, &spec).len(), 300);
    }
}
