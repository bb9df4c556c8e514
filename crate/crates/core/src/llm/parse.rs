//! Extraction of a ranked list from free-form model output, and repair of
//! incomplete lists with random candidates.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemCatalog;
use crate::greedy::{Origin, RecEntry, RecList};
use crate::ids::ItemId;
use crate::mf::CandidateList;
use crate::seed;

/// Similarity above which an unmatched title is reported as a near miss.
pub const NEAR_MISS_SIMILARITY: f64 = 0.8;

static RANKED_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:[-*•>]+\s*)?(?:\*\*)?\s*(\d{1,4})\s*(?:-+\s*>|→|=>|\.|\)|:)\s*(?:\*\*)?\s*(.*?)\s*$")
        .unwrap()
});
static TRAILING_GROUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*[\[\(\{][^\[\]\(\)\{\}]*[\]\)\}]\s*$").unwrap());
static TRAILING_DASH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s+[-–—]\s+.*$").unwrap());
static TRAILING_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\s,]+\(?(?:19|20)\d{2}\)?\s*$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotInCl,
    Duplicate,
    Unparseable,
    TitleMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedItem {
    pub item: ItemId,
    pub cl_rank: usize,
    /// Title text as it appeared in the output.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRanking {
    pub matched: Vec<MatchedItem>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchOptions {
    /// Accept the closest candidate title when its normalized edit similarity
    /// reaches this value. Exact matching only when `None`.
    pub fuzzy_threshold: Option<f64>,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '–' | '—' | '…' | '·' | '・')
}

/// Case-folds, unifies quotes, collapses whitespace and drops spaces next to punctuation.
pub fn normalize_title(title: &str) -> String {
    let folded: String = title
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '’' | '‘' | '`' | '´' => '\'',
            '“' | '”' => '"',
            c if c.is_whitespace() => ' ',
            c => c,
        })
        .collect();
    let words: Vec<char> = folded
        .split(' ')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect();
    words
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            c != ' '
                || !(i > 0 && is_punct(words[i - 1]) || words.get(i + 1).is_some_and(|&n| is_punct(n)))
        })
        .map(|(_, &c)| c)
        .collect()
}

fn unwrap_title(raw: &str) -> &str {
    raw.trim()
        .trim_matches(|c| matches!(c, '*' | '_'))
        .trim()
        .trim_matches(|c| matches!(c, '"' | '“' | '”'))
        .trim()
}

/// The raw title followed by progressively de-decorated variants.
fn title_variants(raw: &str) -> Vec<String> {
    let mut out = vec![unwrap_title(raw).to_string()];
    let mut cur = out[0].clone();
    loop {
        let next = TRAILING_GROUP.replace(&cur, "").trim().to_string();
        if next == cur || next.is_empty() {
            break;
        }
        out.push(next.clone());
        cur = next;
    }
    for re in [&*TRAILING_YEAR, &*TRAILING_DASH] {
        let stripped = re.replace(&cur, "").trim().to_string();
        if !stripped.is_empty() && stripped != cur {
            out.push(stripped.clone());
            cur = stripped;
        }
    }
    out
}

/// Normalized candidate titles mapped to their position in the list.
struct TitleIndex {
    exact: HashMap<String, usize>,
    titles: Vec<String>,
}

impl TitleIndex {
    fn new(cl: &CandidateList, catalog: &ItemCatalog) -> Self {
        let titles: Vec<String> = cl
            .entries
            .iter()
            .map(|e| catalog.get(e.item).map_or_else(String::new, |it| normalize_title(&it.title)))
            .collect();
        let mut exact = HashMap::new();
        for (i, t) in titles.iter().enumerate() {
            exact.entry(t.clone()).or_insert(i);
        }
        Self { exact, titles }
    }

    fn closest(&self, title: &str) -> Option<(usize, f64)> {
        self.titles
            .iter()
            .enumerate()
            .map(|(i, t)| (i, strsim::normalized_levenshtein(title, t)))
            .fold(None, |best: Option<(usize, f64)>, x| match best {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            })
    }
}

enum Lookup {
    Found(usize),
    NearMiss,
    Missing,
}

fn lookup(index: &TitleIndex, raw: &str, opts: &MatchOptions) -> Lookup {
    let variants: Vec<String> = title_variants(raw)
        .iter()
        .map(|v| normalize_title(unwrap_title(v)))
        .collect();
    if let Some(&i) = variants.iter().find_map(|v| index.exact.get(v)) {
        return Lookup::Found(i);
    }
    let best = variants
        .iter()
        .filter_map(|v| index.closest(v))
        .fold(None, |best: Option<(usize, f64)>, x| match best {
            Some(b) if b.1 >= x.1 => Some(b),
            _ => Some(x),
        });
    match (best, opts.fuzzy_threshold) {
        (Some((i, sim)), Some(th)) if sim >= th => Lookup::Found(i),
        (Some((_, sim)), _) if sim >= NEAR_MISS_SIMILARITY => Lookup::NearMiss,
        _ => Lookup::Missing,
    }
}

/// Extracts up to `n` candidate items from model output, in the order given.
pub fn parse_output(
    raw: &str,
    cl: &CandidateList,
    catalog: &ItemCatalog,
    n: usize,
    opts: &MatchOptions,
) -> ParsedRanking {
    let index = TitleIndex::new(cl, catalog);
    let mut parsed = ParsedRanking::default();
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    for line in raw.lines() {
        if parsed.matched.len() >= n {
            break;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("```") || trimmed.chars().all(|c| c == '.') {
            continue;
        }
        let reject = |reason| Rejection {
            line: line.to_string(),
            reason,
        };
        let Some(title) = RANKED_LINE
            .captures(line)
            .map(|c| c[2].to_string())
            .filter(|t| !unwrap_title(t).is_empty())
        else {
            parsed.rejected.push(reject(RejectReason::Unparseable));
            continue;
        };
        match lookup(&index, &title, opts) {
            Lookup::Found(i) if !taken.insert(i) => {
                parsed.rejected.push(reject(RejectReason::Duplicate))
            }
            Lookup::Found(i) => parsed.matched.push(MatchedItem {
                item: cl.entries[i].item,
                cl_rank: cl.entries[i].rank,
                text: unwrap_title(&title).to_string(),
            }),
            Lookup::NearMiss => parsed.rejected.push(reject(RejectReason::TitleMismatch)),
            Lookup::Missing => parsed.rejected.push(reject(RejectReason::NotInCl)),
        }
    }
    parsed
}

/// Keeps the matched items and tops the list up to `n` with random candidates.
pub fn repair(parsed: &ParsedRanking, cl: &CandidateList, n: usize, seed: u64) -> RecList {
    let mut entries: Vec<RecEntry> = parsed
        .matched
        .iter()
        .take(n)
        .map(|m| RecEntry {
            item: m.item,
            cl_rank: m.cl_rank,
            origin: Origin::Reranked,
        })
        .collect();
    let used: BTreeSet<ItemId> = entries.iter().map(|e| e.item).collect();
    let mut pool: Vec<usize> = (0..cl.len())
        .filter(|&i| !used.contains(&cl.entries[i].item))
        .collect();
    pool.shuffle(&mut seed::rng(seed));
    let need = n.saturating_sub(entries.len());
    entries.extend(pool.into_iter().take(need).map(|i| RecEntry {
        item: cl.entries[i].item,
        cl_rank: cl.entries[i].rank,
        origin: Origin::RandomFill,
    }));
    RecList {
        user: cl.user,
        entries,
    }
}
