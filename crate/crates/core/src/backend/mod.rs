//! HTTP client for remote actor and reward models speaking the common
//! chat-completions protocol, plus prompt templates and response parsing.
//! A scripted mock server keeps every code path testable offline.

pub mod mock;
pub mod parse;
pub mod templates;

pub use parse::{extract_permutation, token_id};
pub use templates::{
    render_actor_prompt, render_listwise_prompt, render_pointwise_prompt, TEMPLATE_VERSION,
};

use crate::domain::{Rollout, LISTWISE_ARITY};
use parse::{ChatCompletionRequest, ChatCompletionResponse, ChatMessage};
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

/// Environment variable holding the bearer secret; never read from config
/// files so tokens stay out of committed artifacts.
pub const AUTH_TOKEN_ENV: &str = "SYNOPSIS_API_KEY";

/// Alternatives requested per scored token when the caller does not say.
pub const DEFAULT_TOP_LOGPROBS: u32 = 20;

/// Completion budget for ranking responses; generous enough for models that
/// reason before the final bracketed answer.
pub const LISTWISE_MAX_TOKENS: u32 = 256;

const RETRY_BASE_MS: u64 = 100;
const RETRY_CAP_MS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt rejected: {0}")]
    EmptyPrompt(String),
    #[error("expected {expected} jobs, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure against {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("HTTP {status} from {endpoint}")]
    Http { endpoint: String, status: u16 },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("unparseable completion: {0}")]
    Parse(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Where and how to reach one served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Filled from the environment, never serialized.
    #[serde(skip)]
    pub auth_token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        BackendEndpoint {
            base_url: base_url.into(),
            model: model.into(),
            timeout_secs: 30.0,
            max_retries: 2,
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "timeout_secs must be positive (got {})",
                self.timeout_secs
            )));
        }
        if self.base_url.trim().is_empty() {
            return Err(BackendError::InvalidRequest("base_url is empty".into()));
        }
        Ok(())
    }

    /// Pull the bearer secret from the environment if present.
    pub fn with_env_auth(mut self) -> Self {
        self.auth_token = std::env::var(AUTH_TOKEN_ENV).ok();
        self
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Pointwise score extracted from a one-token completion: the top surface
/// form plus the best log-probabilities found for "yes" and "no" (missing
/// form: negative infinity).
#[derive(Debug, Clone)]
pub struct ScoredPointwiseResponse {
    pub predicted_word: String,
    pub logp_yes: f64,
    pub logp_no: f64,
    pub raw_payload: String,
}

/// Backoff delay before retry number `attempt` (0-based). Doubles from the
/// base and saturates at the cap, so the sequence never decreases.
pub fn backoff_delay(attempt: u32) -> Duration {
    let ms = RETRY_BASE_MS.checked_shl(attempt).unwrap_or(u64::MAX).min(RETRY_CAP_MS);
    Duration::from_millis(ms)
}

/// Blocking client for one endpoint. Cheap to clone; safe to share across
/// threads, each request is matched to its response by the call itself.
#[derive(Debug, Clone)]
pub struct BackendClient {
    endpoint: BackendEndpoint,
    http: reqwest::blocking::Client,
    top_logprobs: u32,
}

impl BackendClient {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        endpoint.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                endpoint: endpoint.base_url.clone(),
                message: e.to_string(),
            })?;
        Ok(BackendClient { endpoint, http, top_logprobs: DEFAULT_TOP_LOGPROBS })
    }

    pub fn with_top_logprobs(mut self, k: u32) -> Self {
        self.top_logprobs = k;
        self
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn messages_for(prompt: &str) -> Vec<ChatMessage> {
        templates::split_chat_blocks(prompt)
            .into_iter()
            .map(|(role, content)| ChatMessage { role, content })
            .collect()
    }

    /// POST one request, retrying transport failures and 5xx responses with
    /// exponential backoff until the retry budget runs out.
    fn post_chat(&self, request: &ChatCompletionRequest) -> Result<(ChatCompletionResponse, String), BackendError> {
        let mut attempt: u32 = 0;
        loop {
            match self.post_once(request) {
                Ok(parsed) => return Ok(parsed),
                Err(e) if e.retryable() && attempt < self.endpoint.max_retries => {
                    std::thread::sleep(backoff_delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once(&self, request: &ChatCompletionRequest) -> Result<(ChatCompletionResponse, String), BackendError> {
        let url = self.endpoint.completions_url();
        let mut builder = self.http.post(&url).json(request);
        if let Some(token) = &self.endpoint.auth_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| BackendError::Transport {
            endpoint: self.endpoint.base_url.clone(),
            message: e.to_string(),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { endpoint: self.endpoint.base_url.clone(), status });
        }
        let text = response.text().map_err(|e| BackendError::Transport {
            endpoint: self.endpoint.base_url.clone(),
            message: e.to_string(),
        })?;
        let parsed: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Malformed(format!("{e} in body {text:.120}")))?;
        Ok((parsed, text))
    }

    /// Sample `n` completions with per-token logprobs. Each completion is its
    /// own request so a single transport failure costs one rollout's retries,
    /// not the whole group.
    pub fn sample_actor(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Vec<Rollout>, BackendError> {
        if n == 0 {
            return Err(BackendError::InvalidRequest("n must be at least 1".into()));
        }
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt("actor prompt is empty".into()));
        }
        let request = ChatCompletionRequest {
            model: self.endpoint.model.clone(),
            messages: Self::messages_for(prompt),
            temperature,
            max_tokens,
            logprobs: true,
            top_logprobs: None,
        };
        let mut rollouts = Vec::with_capacity(n);
        for _ in 0..n {
            let (response, _) = self.post_chat(&request)?;
            rollouts.push(rollout_from_response(&response)?);
        }
        Ok(rollouts)
    }

    /// Score a yes/no prompt: one completion token, top alternatives scanned
    /// case-insensitively (leading/trailing whitespace ignored) for the two
    /// answer surface forms. A form that never appears scores negative
    /// infinity; the caller decides what a missing answer means.
    pub fn score_pointwise(&self, prompt: &str) -> Result<ScoredPointwiseResponse, BackendError> {
        let request = ChatCompletionRequest {
            model: self.endpoint.model.clone(),
            messages: Self::messages_for(prompt),
            temperature: 0.0,
            max_tokens: 1,
            logprobs: true,
            top_logprobs: Some(self.top_logprobs),
        };
        let (response, raw) = self.post_chat(&request)?;
        let choice = response
            .choices
            .first()
            .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
        let payload = choice
            .logprobs
            .as_ref()
            .ok_or_else(|| BackendError::Malformed("response has no logprobs".into()))?;
        let first = payload
            .content
            .first()
            .ok_or_else(|| BackendError::Malformed("logprob content is empty".into()))?;

        let mut candidates: Vec<(&str, f64)> = vec![(first.token.as_str(), first.logprob)];
        candidates.extend(first.top_logprobs.iter().map(|alt| (alt.token.as_str(), alt.logprob)));
        for (surface, logprob) in &candidates {
            if logprob.is_finite() && *logprob > 0.0 {
                return Err(BackendError::Malformed(format!(
                    "positive log-probability {logprob} for token {surface:?}"
                )));
            }
        }

        let mut logp_yes = f64::NEG_INFINITY;
        let mut logp_no = f64::NEG_INFINITY;
        let mut predicted: (&str, f64) = candidates[0];
        for (surface, logprob) in &candidates {
            match surface.trim().to_ascii_lowercase().as_str() {
                "yes" => logp_yes = logp_yes.max(*logprob),
                "no" => logp_no = logp_no.max(*logprob),
                _ => {}
            }
            if *logprob > predicted.1 {
                predicted = (surface, *logprob);
            }
        }
        Ok(ScoredPointwiseResponse {
            predicted_word: predicted.0.trim().to_string(),
            logp_yes,
            logp_no,
            raw_payload: raw,
        })
    }

    /// Score a ranking prompt: take the last bracketed integer list in the
    /// completion and validate it as a permutation of the five indices. One
    /// fresh completion is requested if the first fails validation.
    pub fn score_listwise(&self, prompt: &str) -> Result<Vec<usize>, BackendError> {
        let request = ChatCompletionRequest {
            model: self.endpoint.model.clone(),
            messages: Self::messages_for(prompt),
            temperature: 0.0,
            max_tokens: LISTWISE_MAX_TOKENS,
            logprobs: false,
            top_logprobs: None,
        };
        let mut last_error = None;
        for _ in 0..2 {
            let (response, _) = self.post_chat(&request)?;
            let choice = response
                .choices
                .first()
                .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
            match extract_permutation(&choice.message.content, LISTWISE_ARITY) {
                Ok(permutation) => return Ok(permutation),
                Err(e) => last_error = Some(e),
            }
        }
        Err(last_error.expect("two attempts always set an error"))
    }
}

/// Convert one completion into a Rollout: token ids hashed from surface
/// forms, logprobs copied through, and the service's own token accounting
/// cross-checked against the logprob stream.
fn rollout_from_response(response: &ChatCompletionResponse) -> Result<Rollout, BackendError> {
    let choice = response
        .choices
        .first()
        .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
    let payload = choice
        .logprobs
        .as_ref()
        .ok_or_else(|| BackendError::Malformed("completion lacks logprobs".into()))?;
    let usage = response
        .usage
        .as_ref()
        .ok_or_else(|| BackendError::Malformed("completion lacks usage".into()))?;
    if usage.completion_tokens as usize != payload.content.len() {
        return Err(BackendError::Malformed(format!(
            "usage reports {} completion tokens but {} logprobs arrived",
            usage.completion_tokens,
            payload.content.len()
        )));
    }
    let tokens: Vec<u32> = payload.content.iter().map(|t| token_id(&t.token)).collect();
    let logprobs: Vec<f64> = payload.content.iter().map(|t| t.logprob).collect();
    Rollout::new(tokens, choice.message.content.clone(), logprobs)
        .map_err(|e| BackendError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mock::{completion_body, single_token_body, MockResponse, MockServer};

    fn client_for(server: &MockServer, retries: u32) -> BackendClient {
        let mut endpoint = BackendEndpoint::new(server.base_url(), "mock-model");
        endpoint.max_retries = retries;
        endpoint.timeout_secs = 5.0;
        BackendClient::new(endpoint).unwrap()
    }

    #[test]
    fn sample_actor_round_trip() {
        let body = completion_body(
            "a concise member summary",
            &[("a", -0.05), (" concise", -0.8), (" member", -0.3), (" summary", -0.2)],
        );
        let server = MockServer::start(vec![MockResponse::ok(body)]);
        let client = client_for(&server, 0);

        let rollouts = client.sample_actor("<|im_start|>user\nwrite\n<|im_end|>", 1, 0.9, 64).unwrap();
        assert_eq!(rollouts.len(), 1);
        let r = &rollouts[0];
        assert_eq!(r.text, "a concise member summary");
        assert_eq!(r.token_count, 4);
        assert_eq!(r.token_logprobs, vec![-0.05, -0.8, -0.3, -0.2]);
        assert_eq!(r.tokens[0], token_id("a"));
        assert_eq!(r.tokens[1], token_id(" concise"));

        // The request carried the logprobs flag and the model name.
        let sent = server.received();
        assert_eq!(sent.len(), 1);
        assert!(sent[0].body.contains("\"logprobs\":true"));
        assert!(sent[0].body.contains("\"model\":\"mock-model\""));
    }

    #[test]
    fn sample_actor_rejects_usage_mismatch() {
        // Usage says 2 tokens, stream carries 1.
        let body = serde_json::json!({
            "choices": [{
                "message": {"role": "assistant", "content": "hi"},
                "logprobs": {"content": [{"token": "hi", "logprob": -0.5}]}
            }],
            "usage": {"prompt_tokens": 1, "completion_tokens": 2, "total_tokens": 3}
        })
        .to_string();
        let server = MockServer::start(vec![MockResponse::ok(body)]);
        let client = client_for(&server, 0);
        let err = client.sample_actor("p", 1, 0.9, 64).unwrap_err();
        assert!(matches!(err, BackendError::Malformed(_)), "{err}");
        assert!(err.to_string().contains("usage"));
    }

    #[test]
    fn retries_survive_two_500s() {
        let body = completion_body("ok", &[("ok", -0.1)]);
        let server = MockServer::start(vec![
            MockResponse::error(500),
            MockResponse::error(503),
            MockResponse::ok(body),
        ]);
        let client = client_for(&server, 2);
        let rollouts = client.sample_actor("p", 1, 0.0, 8).unwrap();
        assert_eq!(rollouts[0].text, "ok");
        assert_eq!(server.received().len(), 3);
    }

    #[test]
    fn retries_exhausted_surface_http_error() {
        let server = MockServer::start(vec![
            MockResponse::error(500),
            MockResponse::error(500),
            MockResponse::error(500),
        ]);
        let client = client_for(&server, 2);
        let err = client.sample_actor("p", 1, 0.0, 8).unwrap_err();
        match err {
            BackendError::Http { status, endpoint } => {
                assert_eq!(status, 500);
                assert!(endpoint.contains("127.0.0.1"));
            }
            other => panic!("expected Http error, got {other:?}"),
        }
        assert_eq!(server.received().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(vec![MockResponse::error(400)]);
        let client = client_for(&server, 3);
        let err = client.sample_actor("p", 1, 0.0, 8).unwrap_err();
        assert!(matches!(err, BackendError::Http { status: 400, .. }));
        assert_eq!(server.received().len(), 1);
    }

    #[test]
    fn transport_error_names_the_endpoint() {
        // Bind a port, then drop the listener so connections are refused.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut endpoint = BackendEndpoint::new(format!("http://{addr}"), "mock-model");
        endpoint.max_retries = 0;
        endpoint.timeout_secs = 2.0;
        let client = BackendClient::new(endpoint).unwrap();
        let err = client.sample_actor("p", 1, 0.0, 8).unwrap_err();
        match err {
            BackendError::Transport { endpoint, .. } => assert!(endpoint.contains("127.0.0.1")),
            other => panic!("expected Transport, got {other:?}"),
        }
    }

    #[test]
    fn score_pointwise_reads_both_answers() {
        let server = MockServer::start(vec![MockResponse::ok(single_token_body(&[
            (" yes", -0.2),
            (" no", -1.8),
            (" maybe", -3.0),
        ]))]);
        let client = client_for(&server, 0);
        let scored = client.score_pointwise("prompt").unwrap();
        assert_eq!(scored.predicted_word, "yes");
        assert_eq!(scored.logp_yes, -0.2);
        assert_eq!(scored.logp_no, -1.8);
        assert!(scored.raw_payload.contains("maybe"));

        // Request shape: one token, alternatives included.
        let sent = server.received();
        assert!(sent[0].body.contains("\"max_tokens\":1"));
        assert!(sent[0].body.contains(&format!("\"top_logprobs\":{DEFAULT_TOP_LOGPROBS}")));
    }

    #[test]
    fn score_pointwise_missing_forms_become_negative_infinity() {
        let server = MockServer::start(vec![
            MockResponse::ok(single_token_body(&[(" yes", -0.2), (" perhaps", -2.0)])),
            MockResponse::ok(single_token_body(&[("Sure", -0.4), (" ok", -1.0)])),
        ]);
        let client = client_for(&server, 0);

        let missing_no = client.score_pointwise("prompt").unwrap();
        assert_eq!(missing_no.logp_yes, -0.2);
        assert!(missing_no.logp_no.is_infinite() && missing_no.logp_no < 0.0);

        let missing_both = client.score_pointwise("prompt").unwrap();
        assert!(missing_both.logp_yes.is_infinite());
        assert!(missing_both.logp_no.is_infinite());
        assert_eq!(missing_both.predicted_word, "Sure");
    }

    #[test]
    fn score_pointwise_matches_case_variants_and_keeps_the_best() {
        let server = MockServer::start(vec![MockResponse::ok(single_token_body(&[
            ("Yes", -0.9),
            (" yes", -0.3),
            ("YES", -2.5),
            ("no", -1.1),
        ]))]);
        let client = client_for(&server, 0);
        let scored = client.score_pointwise("prompt").unwrap();
        assert_eq!(scored.logp_yes, -0.3);
        assert_eq!(scored.logp_no, -1.1);
    }

    #[test]
    fn score_listwise_retries_parse_once() {
        let bad = completion_body("[0, 0, 1, 2, 3]", &[]);
        let good = completion_body("Ranking the jobs... final answer: [2, 0, 1, 4, 3]", &[]);
        let server = MockServer::start(vec![MockResponse::ok(bad), MockResponse::ok(good)]);
        let client = client_for(&server, 0);
        let permutation = client.score_listwise("prompt").unwrap();
        assert_eq!(permutation, vec![2, 0, 1, 4, 3]);
        assert_eq!(server.received().len(), 2);
    }

    #[test]
    fn score_listwise_fails_after_second_bad_answer() {
        let bad = completion_body("[0, 1, 2, 3]", &[]);
        let server = MockServer::start(vec![
            MockResponse::ok(bad.clone()),
            MockResponse::ok(bad),
        ]);
        let client = client_for(&server, 0);
        let err = client.score_listwise("prompt").unwrap_err();
        assert!(matches!(err, BackendError::Parse(_)));
        assert_eq!(server.received().len(), 2);
    }

    #[test]
    fn auth_token_travels_as_bearer_header() {
        let body = completion_body("ok", &[("ok", -0.1)]);
        let server = MockServer::start(vec![MockResponse::ok(body)]);
        let mut endpoint = BackendEndpoint::new(server.base_url(), "mock-model");
        endpoint.auth_token = Some("secret-token".into());
        let client = BackendClient::new(endpoint).unwrap();
        client.sample_actor("p", 1, 0.0, 8).unwrap();
        let headers = server.received()[0].headers.to_ascii_lowercase();
        assert!(headers.contains("authorization: bearer secret-token"));
    }

    #[test]
    fn backoff_is_monotone_and_capped() {
        let delays: Vec<Duration> = (0..16).map(backoff_delay).collect();
        assert_eq!(delays[0], Duration::from_millis(100));
        assert_eq!(delays[1], Duration::from_millis(200));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), Duration::from_millis(5_000));
    }

    #[test]
    fn endpoint_validation() {
        let mut endpoint = BackendEndpoint::new("http://localhost:9", "m");
        endpoint.timeout_secs = 0.0;
        assert!(endpoint.validate().is_err());
        endpoint.timeout_secs = 1.0;
        assert!(endpoint.validate().is_ok());
        endpoint.base_url = "  ".into();
        assert!(endpoint.validate().is_err());
    }
}
