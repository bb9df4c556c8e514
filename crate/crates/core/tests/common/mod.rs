//! Synthetic corpora shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use divrank::corpus::{self, Interaction, InteractionLog, Item, ItemCatalog, LogRole};
use divrank::ids::{ItemId, UserId};
use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    /// Genres each user favours.
    pub liked_genres: usize,
    pub ratings_per_user: usize,
    /// Chance that a rated item is drawn from the user's favoured genres.
    pub affinity: f64,
    /// Chance that an item carries a second genre.
    pub second_genre: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 500 users, 40 items, 8 genres.
    pub fn directional() -> Self {
        Self {
            users: 500,
            items: 40,
            genres: 8,
            liked_genres: 2,
            ratings_per_user: 20,
            affinity: 0.75,
            second_genre: 0.5,
            seed: 7,
        }
    }

    /// 50 users, 30 items.
    pub fn fixture() -> Self {
        Self {
            users: 50,
            items: 30,
            genres: 6,
            liked_genres: 2,
            ratings_per_user: 14,
            affinity: 0.75,
            second_genre: 0.4,
            seed: 11,
        }
    }
}

pub const GENRE_NAMES: [&str; 10] = [
    "Action", "Comedy", "Drama", "Fantasy", "Horror", "Mystery", "Romance", "SciFi", "Sports",
    "Thriller",
];

pub fn synth_catalog(spec: &SynthSpec) -> ItemCatalog {
    let mut rng = divrank::seed::rng(spec.seed ^ 0xC0FFEE);
    ItemCatalog::new((0..spec.items).map(|i| {
        let mut genres = BTreeSet::from([GENRE_NAMES[i % spec.genres].to_string()]);
        if rng.random_bool(spec.second_genre) {
            genres.insert(GENRE_NAMES[rng.random_range(0..spec.genres)].to_string());
        }
        Item {
            id: ItemId(i as u64 + 1),
            title: format!("Chronicle {} of {}", i + 1, GENRE_NAMES[i % spec.genres]),
            genres,
            description: None,
        }
    }))
}

/// Users favour a few genres: items from them are rated 4 or 5, the rest 1 to 3.
pub fn synth_log(spec: &SynthSpec, catalog: &ItemCatalog) -> InteractionLog {
    let mut rng = divrank::seed::rng(spec.seed);
    let items: Vec<&Item> = catalog.items().collect();
    let mut rows = Vec::new();
    for u in 0..spec.users {
        let liked: BTreeSet<String> = index::sample(&mut rng, spec.genres, spec.liked_genres)
            .into_iter()
            .map(|g| GENRE_NAMES[g].to_string())
            .collect();
        let is_liked = |it: &Item| it.genres.iter().any(|g| liked.contains(g));
        let (fav, other): (Vec<&Item>, Vec<&Item>) = items.iter().partition(|it| is_liked(it));
        let mut chosen = BTreeSet::new();
        while chosen.len() < spec.ratings_per_user.min(items.len()) {
            let pool = if rng.random_bool(spec.affinity) && !fav.is_empty() { &fav } else { &other };
            let pool = if pool.is_empty() { &fav } else { pool };
            chosen.insert(pool[rng.random_range(0..pool.len())].id);
        }
        for id in chosen {
            let it = catalog.get(id).unwrap();
            let rating = if is_liked(it) {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=3)
            };
            rows.push(Interaction {
                user: UserId(u as u64 + 1),
                item: id,
                rating: rating as f64,
            });
        }
    }
    InteractionLog::new(rows, LogRole::Raw, 5.0)
}

pub fn synth(spec: &SynthSpec) -> (InteractionLog, ItemCatalog) {
    let catalog = synth_catalog(spec);
    let log = synth_log(spec, &catalog);
    (log, catalog)
}

/// Writes `ratings.csv` and `items.csv` into `dir`.
pub fn write_dataset(dir: &Path, log: &InteractionLog, catalog: &ItemCatalog) {
    corpus::write_interactions(&dir.join("ratings.csv"), log).unwrap();
    corpus::write_catalog(&dir.join("items.csv"), catalog).unwrap();
}

pub const ALL_RERANKERS: &str = r#"
[[rerankers]]
reranker = "mmr"
[[rerankers]]
reranker = "xquad"
[[rerankers]]
reranker = "rxquad"
[[rerankers]]
reranker = "random"
[[rerankers]]
reranker = "llm"
"#;

/// Writes `experiment.toml` into `dir` for the dataset in `data` and returns its path.
pub fn write_config(dir: &Path, data: &Path, url: &str, seed: u64, rerankers: &str) -> PathBuf {
    let text = format!(
        r#"
seed = {seed}
output_dir = "out"
workers = 4

[data]
interactions = "{ratings}"
items = "{items}"
min_user_interactions = 5
max_user_interactions = 300

[split]
train_fraction = 0.8
test_users = 50

[mf]
factors = 8
iterations = 10

[rerank]
n = 10
bootstrap_m = 100

{rerankers}
[llm]
base_url = "{url}"
model = "mock-model"
api_key_env = "DIVRANK_ACCEPTANCE_UNSET_KEY"
max_in_flight = 4

[llm.prices.mock-model]
input_per_million = 0.5
output_per_million = 1.5
"#,
        ratings = data.join("ratings.csv").display(),
        items = data.join("items.csv").display(),
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}
