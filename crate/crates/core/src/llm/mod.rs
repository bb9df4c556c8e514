//! Zero-shot listwise re-ranking through a chat-completion endpoint.
//!
//! A candidate list is rendered into one of the eight prompt templates, the
//! completion is parsed back into candidate items, and any shortfall is
//! filled with random candidates so every user ends up with `n` items.

pub mod client;
pub mod describe;
pub mod ledger;
pub mod mock;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ItemCatalog;
use crate::greedy::RecList;
use crate::ids::{ItemId, UserId};
use crate::mf::CandidateList;

pub use client::{ChatEndpoint, Completion, EndpointConfig, HttpChatClient, SamplingParams, Usage};
pub use describe::{describe_item, describe_items, DescribeBatch, DescriptionCache};
pub use ledger::{ledger_total, CostLedger, CostSummary, Price, UsageRecord};
pub use parse::{parse_output, repair, MatchOptions, ParsedRanking, RejectReason, Rejection};
pub use prompt::{build_prompt, build_prompt_for, FeatureMode, PromptTemplate, PromptText};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("rate limited and out of retries")]
    RateLimited,
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("empty description for item {0}")]
    EmptyDescription(ItemId),
    #[error("candidate items lack the features the template needs: {0:?}")]
    FeatureMissing(Vec<ItemId>),
    #[error("cost accounting: {0}")]
    Accounting(String),
    #[error("n = {n} exceeds candidate length m = {m}")]
    TooLong { n: usize, m: usize },
    #[error("user {user}: {source}")]
    ForUser {
        user: UserId,
        #[source]
        source: Box<LlmError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmRerankParams {
    pub n: usize,
    pub sampling: SamplingParams,
    pub matching: MatchOptions,
    /// Noun used in the output-format lines.
    pub item_noun: String,
    /// Extra requests allowed when a response yields fewer than `n` valid items.
    pub regenerate_on_invalid: u32,
}

impl Default for LlmRerankParams {
    fn default() -> Self {
        Self {
            n: 10,
            sampling: SamplingParams::default(),
            matching: MatchOptions::default(),
            item_noun: "item".into(),
            regenerate_on_invalid: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub template: PromptTemplate,
    pub rec_list: RecList,
    pub fill_count: usize,
    /// Deepest candidate rank the model itself chose; `None` if it chose nothing valid.
    pub lowest_rank: Option<usize>,
    pub raw_response: String,
    pub parsed: ParsedRanking,
    /// Summed over every request made for this user.
    pub usage: Usage,
    pub requests: u32,
}

/// Re-ranks one candidate list; `fill_seed` drives the random top-up.
pub fn rerank_llm(
    client: &dyn ChatEndpoint,
    template: PromptTemplate,
    cl: &CandidateList,
    catalog: &ItemCatalog,
    params: &LlmRerankParams,
    fill_seed: u64,
    ledger: Option<&CostLedger>,
) -> Result<RerankOutcome, LlmError> {
    let wrap = |e: LlmError| LlmError::ForUser {
        user: cl.user,
        source: Box::new(e),
    };
    if params.n > cl.len() {
        return Err(wrap(LlmError::TooLong {
            n: params.n,
            m: cl.len(),
        }));
    }
    let prompt = build_prompt_for(template, cl, params.n, catalog, &params.item_noun).map_err(wrap)?;
    let mut usage = Usage::default();
    let mut best: Option<(String, ParsedRanking)> = None;
    let mut requests = 0;
    for _ in 0..=params.regenerate_on_invalid {
        let completion = client.complete(&prompt.body, &params.sampling).map_err(wrap)?;
        requests += 1;
        usage.add(completion.usage);
        if let Some(ledger) = ledger {
            ledger.record(
                client.model(),
                format!("{}/user {}", template, cl.user),
                completion.usage,
            );
        }
        let parsed = parse_output(&completion.text, cl, catalog, params.n, &params.matching);
        let complete = parsed.matched.len() >= params.n;
        if best
            .as_ref()
            .is_none_or(|(_, b)| parsed.matched.len() > b.matched.len())
        {
            best = Some((completion.text, parsed));
        }
        if complete {
            break;
        }
    }
    let (raw_response, parsed) = best.expect("at least one request is made");
    let rec_list = repair(&parsed, cl, params.n, fill_seed);
    Ok(RerankOutcome {
        template,
        fill_count: rec_list.fill_count(),
        lowest_rank: rec_list.lowest_rank(),
        rec_list,
        raw_response,
        parsed,
        usage,
        requests,
    })
}
