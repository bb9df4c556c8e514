//! Blocking chat-completion client with pacing and bounded retries.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::estimate_tokens;
use super::LlmError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the counts are character-based estimates rather than reported by the endpoint.
    pub estimated: bool,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.estimated |= other.estimated;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

/// Anything that turns a single user prompt into a completion.
pub trait ChatEndpoint: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Completion, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Prefix of the API, e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    pub min_delay_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0613".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            min_delay_ms: 0,
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 120,
            max_in_flight: 1,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpChatClient {
    config: EndpointConfig,
    url: String,
    credential: Option<String>,
    agent: ureq::Agent,
    last_call: Mutex<Option<Instant>>,
    slots: Slots,
}

enum Attempt {
    Done(Completion),
    Retry(LlmError, Option<Duration>),
    Fail(LlmError),
}

impl HttpChatClient {
    pub fn new(config: EndpointConfig) -> Self {
        let credential = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if credential.is_none() {
            log::warn!("{} is not set; sending requests without a credential", config.api_key_env);
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let slots = Slots {
            free: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Self {
            config,
            url,
            credential,
            agent,
            last_call: Mutex::new(None),
            slots,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Blocks until at least `min_delay_ms` has passed since the previous request started.
    fn pace(&self) {
        let mut last = self.last_call.lock().unwrap();
        let gap = Duration::from_millis(self.config.min_delay_ms);
        if let Some(prev) = *last {
            let due = prev + gap;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        *last = Some(Instant::now());
    }

    fn attempt(&self, body: &Value, prompt: &str) -> Attempt {
        self.pace();
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.credential {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string()), None),
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string()), None),
        };
        match status {
            200..=299 => match parse_completion(&text, prompt) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fail(e),
            },
            429 => Attempt::Retry(LlmError::RateLimited, retry_after),
            500..=599 => Attempt::Retry(LlmError::Http { status, body: text }, retry_after),
            _ => Attempt::Fail(LlmError::Http { status, body: text }),
        }
    }
}

/// Reads completion text and token usage from a chat-completion response body.
pub fn parse_completion(body: &str, prompt: &str) -> Result<Completion, LlmError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| LlmError::BadResponse(format!("invalid JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::BadResponse("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadResponse("no completion text".into()))?
        .to_string();
    let count = |keys: [&str; 2]| {
        keys.iter()
            .find_map(|k| v.get("usage").and_then(|u| u.get(*k)).and_then(Value::as_u64))
    };
    let usage = match (
        count(["prompt_tokens", "input_tokens"]),
        count(["completion_tokens", "output_tokens"]),
    ) {
        (Some(input_tokens), Some(output_tokens)) => Usage {
            input_tokens,
            output_tokens,
            estimated: false,
        },
        _ => Usage {
            input_tokens: estimate_tokens(prompt),
            output_tokens: estimate_tokens(&text),
            estimated: true,
        },
    };
    Ok(Completion { text, usage })
}

impl ChatEndpoint for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Completion, LlmError> {
        let _slot = self.slots.acquire();
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        });
        if let Some(max) = params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let mut attempt = 0;
        loop {
            match self.attempt(&body, prompt) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e, _) if attempt >= self.config.max_retries => return Err(e),
                Attempt::Retry(e, hint) => {
                    let backoff = Duration::from_millis(self.config.backoff_ms << attempt.min(16));
                    let wait = hint.map_or(backoff, |h| h.max(backoff));
                    log::debug!("request failed ({e}); retrying in {wait:?}");
                    thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}
