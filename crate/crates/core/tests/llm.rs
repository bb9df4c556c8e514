mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use divrank::corpus::Item;
use divrank::llm::mock::{self, MockReply, MockServer};
use divrank::llm::{
    describe_items, ledger_total, rerank_llm, ChatEndpoint, CostLedger, DescriptionCache,
    EndpointConfig, HttpChatClient, LlmError, LlmRerankParams, Price, PromptTemplate,
    SamplingParams,
};
use divrank::mf::CandidateList;
use divrank::ids::{ItemId, UserId};

use common::{synth_catalog, SynthSpec};

fn endpoint(server: &MockServer) -> EndpointConfig {
    EndpointConfig {
        base_url: server.url().to_string(),
        model: "mock-model".into(),
        api_key_env: "DIVRANK_TEST_UNSET_KEY".into(),
        min_delay_ms: 0,
        max_retries: 0,
        backoff_ms: 1,
        timeout_secs: 10,
        max_in_flight: 1,
    }
}

#[test]
fn requests_are_spaced_by_the_minimum_delay() {
    let server = MockServer::start(mock::sequence(vec![MockReply::ok("fine")])).unwrap();
    let client = HttpChatClient::new(EndpointConfig { min_delay_ms: 60, ..endpoint(&server) });
    for _ in 0..4 {
        client.complete("hello", &SamplingParams::default()).unwrap();
    }
    let reqs = server.requests();
    assert_eq!(reqs.len(), 4);
    for pair in reqs.windows(2) {
        let gap = pair[1].received - pair[0].received;
        assert!(gap >= Duration::from_millis(55), "gap {gap:?}");
    }
}

#[test]
fn rate_limited_request_is_retried() {
    let server = MockServer::start(mock::sequence(vec![
        MockReply::status(429),
        MockReply::status(503),
        MockReply::ok("recovered"),
    ]))
    .unwrap();
    let client = HttpChatClient::new(EndpointConfig { max_retries: 3, ..endpoint(&server) });
    let out = client.complete("hello", &SamplingParams::default()).unwrap();
    assert_eq!(out.text, "recovered");
    assert_eq!(server.calls(), 3);
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let server = MockServer::start(mock::sequence(vec![MockReply::status(429)])).unwrap();
    let client = HttpChatClient::new(EndpointConfig { max_retries: 2, ..endpoint(&server) });
    let err = client.complete("hello", &SamplingParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::RateLimited), "{err:?}");
    assert_eq!(server.calls(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(mock::sequence(vec![MockReply::status(400)])).unwrap();
    let client = HttpChatClient::new(EndpointConfig { max_retries: 3, ..endpoint(&server) });
    let err = client.complete("hello", &SamplingParams::default()).unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 400, .. }), "{err:?}");
    assert_eq!(server.calls(), 1);
}

#[test]
fn missing_usage_is_estimated() {
    let server = MockServer::start(mock::sequence(vec![MockReply::ok("abcdefgh").without_usage()])).unwrap();
    let client = HttpChatClient::new(endpoint(&server));
    let out = client.complete("twelve chars", &SamplingParams::default()).unwrap();
    assert!(out.usage.estimated);
    assert_eq!(out.usage.output_tokens, 2);
}

#[test]
fn describe_batch_reports_each_failed_item() {
    let items: Vec<Item> = (1..=100)
        .map(|i| Item {
            id: ItemId(i),
            title: format!("Tale Number {i}"),
            genres: BTreeSet::from(["Drama".to_string()]),
            description: None,
        })
        .collect();
    let broken = ["Tale Number 7", "Tale Number 42", "Tale Number 99"];
    let server = MockServer::start(mock::failing_when(
        move |req| broken.iter().any(|t| mock::described_title(&req.prompt) == Some(*t)),
        400,
        mock::permutation(1, 0.0),
    ))
    .unwrap();
    let client = HttpChatClient::new(EndpointConfig { max_in_flight: 8, ..endpoint(&server) });
    let prices = [("mock-model".to_string(), Price { input_per_million: 1.0, output_per_million: 1.0 })];
    let ledger = CostLedger::new(prices.into_iter().collect());
    let cache = DescriptionCache::new();
    let refs: Vec<&Item> = items.iter().collect();
    let batch = describe_items(&client, &refs, &cache, Some(&ledger), &SamplingParams::default());

    let mut failed: Vec<u64> = batch.errors.iter().map(|(id, _)| id.0).collect();
    failed.sort();
    assert_eq!(failed, vec![7, 42, 99]);
    assert_eq!(batch.descriptions.len(), 97);
    assert_eq!(batch.descriptions[&ItemId(1)], mock::description_text("Tale Number 1"));
    assert_eq!(ledger.records().len(), 97);
    assert!(ledger_total(&ledger).unwrap().total > 0.0);

    // A second pass hits the cache for the successes.
    let before = server.calls();
    let again = describe_items(&client, &refs, &cache, None, &SamplingParams::default());
    assert_eq!(again.descriptions.len(), 97);
    assert_eq!(server.calls() - before, 3);
}

#[test]
fn unparseable_response_falls_back_to_random_fill() {
    let catalog = synth_catalog(&SynthSpec::fixture());
    let cl = CandidateList::from_ranked(UserId(1), catalog.ids().take(20).map(|i| (i, -(i.0 as f64))));
    let server = MockServer::start(mock::sequence(vec![MockReply::ok("I cannot help with that.")])).unwrap();
    let client = HttpChatClient::new(endpoint(&server));
    let params = LlmRerankParams::default();
    let out = rerank_llm(&client, PromptTemplate::T3, &cl, &catalog, &params, 4, None).unwrap();
    assert_eq!(out.fill_count, params.n);
    assert_eq!(out.lowest_rank, None);
    assert_eq!(out.rec_list.len(), params.n);
    let distinct: BTreeSet<ItemId> = out.rec_list.items().into_iter().collect();
    assert_eq!(distinct.len(), params.n);
}

#[test]
fn reverse_responder_yields_reversed_prefix() {
    let catalog = synth_catalog(&SynthSpec::fixture());
    let cl = CandidateList::from_ranked(UserId(1), catalog.ids().take(20).map(|i| (i, -(i.0 as f64))));
    let server = MockServer::start(mock::reverse_top_n()).unwrap();
    let client = HttpChatClient::new(endpoint(&server));
    let params = LlmRerankParams { n: 5, ..LlmRerankParams::default() };
    let out = rerank_llm(&client, PromptTemplate::T1, &cl, &catalog, &params, 0, None).unwrap();
    let want: Vec<ItemId> = cl.items().take(5).collect::<Vec<_>>().into_iter().rev().collect();
    assert_eq!(out.rec_list.items(), want);
    assert_eq!(out.lowest_rank, Some(5));
}
