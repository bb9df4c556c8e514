//! In-process chat-completion server for tests and offline dry runs.
//!
//! Replies are produced by a [`Responder`] closure; the helpers below build
//! the scripted behaviours used across the test suites.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::seq::index;
use regex::Regex;
use serde_json::{json, Value};

use super::prompt::estimate_tokens;
use crate::seed;

#[derive(Debug, Clone)]
pub struct MockRequest {
    /// 0-based arrival order.
    pub index: usize,
    pub path: String,
    pub model: String,
    pub prompt: String,
    pub authorization: Option<String>,
    pub received: Instant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub status: u16,
    pub content: String,
    /// Include a `usage` object; otherwise the client must estimate.
    pub report_usage: bool,
    pub delay: Option<Duration>,
}

impl MockReply {
    pub fn ok(content: impl Into<String>) -> Self {
        Self {
            status: 200,
            content: content.into(),
            report_usage: true,
            delay: None,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            content: String::new(),
            report_usage: false,
            delay: None,
        }
    }

    pub fn without_usage(mut self) -> Self {
        self.report_usage = false;
        self
    }
}

pub type Responder = Arc<dyn Fn(&MockRequest) -> MockReply + Send + Sync>;

pub struct MockServer {
    url: String,
    server: Arc<tiny_http::Server>,
    requests: Arc<Mutex<Vec<MockRequest>>>,
    calls: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(responder: Responder) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let server = Arc::new(server);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let calls = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            let calls = Arc::clone(&calls);
            thread::spawn(move || {
                for req in server.incoming_requests() {
                    let responder = Arc::clone(&responder);
                    let requests = Arc::clone(&requests);
                    let index = calls.fetch_add(1, Ordering::SeqCst);
                    thread::spawn(move || serve(req, index, &responder, &requests));
                }
            })
        };
        Ok(Self {
            url: format!("http://{addr}/v1"),
            server,
            requests,
            calls,
            handle: Some(handle),
        })
    }

    /// Base URL to configure the client with.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests seen so far, in arrival order.
    pub fn requests(&self) -> Vec<MockRequest> {
        let mut reqs = self.requests.lock().unwrap().clone();
        reqs.sort_by_key(|r| r.index);
        reqs
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(
    mut req: tiny_http::Request,
    index: usize,
    responder: &Responder,
    log: &Mutex<Vec<MockRequest>>,
) {
    let received = Instant::now();
    let mut body = String::new();
    let _ = req.as_reader().read_to_string(&mut body);
    let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
    let request = MockRequest {
        index,
        path: req.url().to_string(),
        model: parsed["model"].as_str().unwrap_or_default().to_string(),
        prompt: parsed
            .pointer("/messages/0/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        authorization: req
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
            .map(|h| h.value.to_string()),
        received,
    };
    log.lock().unwrap().push(request.clone());
    let reply = responder(&request);
    if let Some(d) = reply.delay {
        thread::sleep(d);
    }
    let payload = if reply.status == 200 {
        let mut v = json!({
            "id": format!("mock-{index}"),
            "object": "chat.completion",
            "model": request.model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": reply.content},
                "finish_reason": "stop",
            }],
        });
        if reply.report_usage {
            let input = estimate_tokens(&request.prompt);
            let output = estimate_tokens(&reply.content);
            v["usage"] = json!({
                "prompt_tokens": input,
                "completion_tokens": output,
                "total_tokens": input + output,
            });
        }
        v.to_string()
    } else {
        json!({"error": {"message": format!("mock status {}", reply.status)}}).to_string()
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(reply.status)
        .with_header(header);
    let _ = req.respond(response);
}

static TOP_N: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"final top-(\d+) ").unwrap());
static CL_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+\. (.*)$").unwrap());
static FEATURES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r" (?:\[[^\[\]]*\]|\{.*\})$").unwrap());
const DESCRIBE_PREFIX: &str = "Please provide a one-sentence description of the following item: ";

/// What a re-ranking prompt asks for, as recovered from its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankRequest {
    pub n: usize,
    /// Candidate titles in list order, without appended features.
    pub titles: Vec<String>,
}

pub fn parse_rerank_prompt(prompt: &str) -> Option<RerankRequest> {
    let n = TOP_N.captures(prompt)?[1].parse().ok()?;
    let start = prompt.find("```\n")? + 4;
    let end = prompt[start..].find("\n```")? + start;
    let titles = prompt[start..end]
        .lines()
        .filter_map(|l| CL_LINE.captures(l).map(|c| c[1].to_string()))
        .map(|t| FEATURES.replace(&t, "").into_owned())
        .collect();
    Some(RerankRequest { n, titles })
}

/// Title a description prompt asks about.
pub fn described_title(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(DESCRIBE_PREFIX)
}

fn format_ranking(titles: &[String]) -> String {
    titles
        .iter()
        .enumerate()
        .map(|(k, t)| format!("{}-> {t}", k + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Echoes a fixed sentence for description prompts.
pub fn description_text(title: &str) -> String {
    format!("A story about {title}.")
}

/// Returns the first `n` candidates in reverse order; describes items on request.
pub fn reverse_top_n() -> Responder {
    Arc::new(|req| {
        if let Some(title) = described_title(&req.prompt) {
            return MockReply::ok(description_text(title));
        }
        match parse_rerank_prompt(&req.prompt) {
            Some(r) => {
                let mut top: Vec<String> = r.titles.into_iter().take(r.n).collect();
                top.reverse();
                MockReply::ok(format_ranking(&top))
            }
            None => MockReply::status(400),
        }
    })
}

/// Fabricated titles returned in place of a corrupted position.
pub fn fabricated_title(prompt_key: u64, slot: usize) -> String {
    format!("Imaginary Saga {prompt_key:016x} Volume {slot}")
}

/// Number of positions out of `n` that [`permutation`] fabricates at `rate`.
pub fn hallucinated_slots(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// A seeded selection of `n` distinct candidates in shuffled order, with
/// `round(rate * n)` of them swapped for fabricated titles. The choice is a
/// function of `seed` and the prompt text only.
pub fn permutation(seed: u64, rate: f64) -> Responder {
    Arc::new(move |req| {
        if let Some(title) = described_title(&req.prompt) {
            return MockReply::ok(description_text(title));
        }
        let Some(r) = parse_rerank_prompt(&req.prompt) else {
            return MockReply::status(400);
        };
        let key = seed::stage_seed(seed, &req.prompt);
        let mut rng = seed::rng(key);
        let n = r.n.min(r.titles.len());
        let mut picked: Vec<String> = index::sample(&mut rng, r.titles.len(), n)
            .into_iter()
            .map(|i| r.titles[i].clone())
            .collect();
        for slot in index::sample(&mut rng, n, hallucinated_slots(n, rate)) {
            picked[slot] = fabricated_title(key, slot);
        }
        MockReply::ok(format_ranking(&picked))
    })
}

/// Plays `replies` in arrival order, repeating the last one when exhausted.
pub fn sequence(replies: Vec<MockReply>) -> Responder {
    assert!(!replies.is_empty(), "sequence needs at least one reply");
    Arc::new(move |req| replies[req.index.min(replies.len() - 1)].clone())
}

/// Answers with `status` when `fails` holds for the request, otherwise defers to `inner`.
pub fn failing_when(
    fails: impl Fn(&MockRequest) -> bool + Send + Sync + 'static,
    status: u16,
    inner: Responder,
) -> Responder {
    Arc::new(move |req| {
        if fails(req) {
            MockReply::status(status)
        } else {
            inner(req)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROMPT: &str = "You are given a ranked recommendation list of 3 items for a user, delimited by triple backticks.\nYour task is to re-rank this candidate list and provide a final top-2 recommendation list where the goal is to x. Strictly use the following format for the output, and don't provide additional information.\n\n1-> <item name>\n2-> <item name>\n\n```\n1. Alpha [Drama]\n2. Beta (2001) [Action, Comedy]\n3. Gamma\n```";

    #[test]
    fn recovers_candidates_from_prompt() {
        let r = parse_rerank_prompt(PROMPT).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.titles, vec!["Alpha", "Beta (2001)", "Gamma"]);
    }

    #[test]
    fn hallucination_count_is_exact() {
        let responder = permutation(7, 0.5);
        let req = MockRequest {
            index: 0,
            path: String::new(),
            model: String::new(),
            prompt: PROMPT.into(),
            authorization: None,
            received: Instant::now(),
        };
        let reply = responder(&req);
        let fake = reply.content.lines().filter(|l| l.contains("Imaginary Saga")).count();
        assert_eq!(fake, 1);
        assert_eq!(reply, responder(&req));
    }
}
