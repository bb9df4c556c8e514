//! One-sentence item descriptions obtained from the chat endpoint.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rayon::prelude::*;

use super::client::{ChatEndpoint, SamplingParams};
use super::ledger::CostLedger;
use super::prompt::description_prompt;
use super::LlmError;
use crate::corpus::Item;
use crate::ids::ItemId;

/// At most one stored description per item; later requests reuse it.
#[derive(Debug, Default)]
pub struct DescriptionCache {
    entries: Mutex<BTreeMap<ItemId, String>>,
}

impl DescriptionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(entries: BTreeMap<ItemId, String>) -> Self {
        Self {
            entries: Mutex::new(entries),
        }
    }

    pub fn get(&self, item: ItemId) -> Option<String> {
        self.entries.lock().unwrap().get(&item).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> BTreeMap<ItemId, String> {
        self.entries.lock().unwrap().clone()
    }

    fn insert(&self, item: ItemId, text: String) -> String {
        self.entries
            .lock()
            .unwrap()
            .entry(item)
            .or_insert(text)
            .clone()
    }
}

/// Single-line form of a completion: whitespace runs collapse to one space.
pub fn clean_description(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn describe_item(
    client: &dyn ChatEndpoint,
    item: &Item,
    cache: &DescriptionCache,
    ledger: Option<&CostLedger>,
    sampling: &SamplingParams,
) -> Result<String, LlmError> {
    if let Some(hit) = cache.get(item.id) {
        return Ok(hit);
    }
    let completion = client.complete(&description_prompt(&item.title), sampling)?;
    if let Some(ledger) = ledger {
        ledger.record(client.model(), format!("describe/item {}", item.id), completion.usage);
    }
    let text = clean_description(&completion.text);
    if text.is_empty() {
        return Err(LlmError::EmptyDescription(item.id));
    }
    Ok(cache.insert(item.id, text))
}

#[derive(Debug, Default)]
pub struct DescribeBatch {
    pub descriptions: BTreeMap<ItemId, String>,
    pub errors: Vec<(ItemId, LlmError)>,
}

/// Describes every item, collecting per-item failures instead of stopping.
pub fn describe_items(
    client: &dyn ChatEndpoint,
    items: &[&Item],
    cache: &DescriptionCache,
    ledger: Option<&CostLedger>,
    sampling: &SamplingParams,
) -> DescribeBatch {
    let results: Vec<(ItemId, Result<String, LlmError>)> = items
        .par_iter()
        .map(|item| (item.id, describe_item(client, item, cache, ledger, sampling)))
        .collect();
    let mut batch = DescribeBatch::default();
    for (id, res) in results {
        match res {
            Ok(text) => {
                batch.descriptions.insert(id, text);
            }
            Err(e) => batch.errors.push((id, e)),
        }
    }
    batch
}
