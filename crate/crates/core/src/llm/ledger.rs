//! Token usage records and their monetary cost.
//!
//! Amounts are accumulated as integer picodollars (token count times the
//! per-million price in microdollars) so totals are exact sums.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::Usage;
use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    /// Dollars per one million input tokens.
    pub input_per_million: f64,
    /// Dollars per one million output tokens.
    pub output_per_million: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub model: String,
    /// What the call was for, e.g. `T3/user 42` or `describe/item 7`.
    pub label: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated: bool,
}

#[derive(Debug, Default)]
pub struct CostLedger {
    records: Mutex<Vec<UsageRecord>>,
    prices: BTreeMap<String, Price>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_calls: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub per_model: BTreeMap<String, ModelCost>,
    pub total: f64,
}

fn micros(dollars: f64) -> u128 {
    (dollars * 1e6).round().max(0.0) as u128
}

fn picos_to_dollars(picos: u128) -> f64 {
    picos as f64 / 1e12
}

impl CostLedger {
    pub fn new(prices: BTreeMap<String, Price>) -> Self {
        Self {
            records: Mutex::new(Vec::new()),
            prices,
        }
    }

    pub fn prices(&self) -> &BTreeMap<String, Price> {
        &self.prices
    }

    pub fn record(&self, model: &str, label: impl Into<String>, usage: Usage) {
        self.push(UsageRecord {
            model: model.to_string(),
            label: label.into(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            estimated: usage.estimated,
        });
    }

    pub fn push(&self, record: UsageRecord) {
        self.records.lock().unwrap().push(record);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn is_empty(&self) -> bool {
        self.records.lock().unwrap().is_empty()
    }

    pub fn total(&self) -> Result<CostSummary, LlmError> {
        ledger_total(self)
    }
}

/// Cost per model and overall: input tokens times input price plus output tokens times output price.
pub fn ledger_total(ledger: &CostLedger) -> Result<CostSummary, LlmError> {
    let mut picos: BTreeMap<String, (u128, ModelCost)> = BTreeMap::new();
    for rec in ledger.records.lock().unwrap().iter() {
        let price = ledger
            .prices
            .get(&rec.model)
            .ok_or_else(|| LlmError::Accounting(format!("no price for model `{}`", rec.model)))?;
        let (sum, entry) = picos.entry(rec.model.clone()).or_insert_with(|| {
            (
                0,
                ModelCost {
                    calls: 0,
                    input_tokens: 0,
                    output_tokens: 0,
                    estimated_calls: 0,
                    cost: 0.0,
                },
            )
        });
        *sum += u128::from(rec.input_tokens) * micros(price.input_per_million)
            + u128::from(rec.output_tokens) * micros(price.output_per_million);
        entry.calls += 1;
        entry.input_tokens += rec.input_tokens;
        entry.output_tokens += rec.output_tokens;
        entry.estimated_calls += usize::from(rec.estimated);
    }
    let grand: u128 = picos.values().map(|(p, _)| p).sum();
    let per_model = picos
        .into_iter()
        .map(|(model, (p, mut cost))| {
            cost.cost = picos_to_dollars(p);
            (model, cost)
        })
        .collect();
    Ok(CostSummary {
        per_model,
        total: picos_to_dollars(grand),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> CostLedger {
        CostLedger::new(BTreeMap::from([(
            "m".to_string(),
            Price {
                input_per_million: 0.5,
                output_per_million: 1.5,
            },
        )]))
    }

    fn usage(i: u64, o: u64) -> Usage {
        Usage {
            input_tokens: i,
            output_tokens: o,
            estimated: false,
        }
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        assert_eq!(ledger().total().unwrap().total, 0.0);
    }

    #[test]
    fn unknown_model_is_an_accounting_error() {
        let l = ledger();
        l.record("other", "x", usage(1, 1));
        assert!(matches!(l.total(), Err(LlmError::Accounting(_))));
    }

    #[test]
    fn splitting_a_record_preserves_cost() {
        let one = ledger();
        one.record("m", "a", usage(1_000_001, 333));
        let two = ledger();
        two.record("m", "a", usage(600_000, 300));
        two.record("m", "b", usage(400_001, 33));
        assert_eq!(one.total().unwrap().total, two.total().unwrap().total);
    }
}
