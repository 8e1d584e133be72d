//! OpenAI-style `/completions` HTTP backend.
//!
//! Speaks the classic completions protocol: prompt in, per-token logprobs
//! back via the `logprobs` field, scoring via `echo=true, max_tokens=0`.
//! Endpoints that return no logprobs (GPT-4-style) still work for
//! generation: the completion text is pseudo-tokenized on whitespace into
//! steps without probabilities, and callers should run them at temperature 0.
//!
//! Transport failures, HTTP 429, and 5xx responses are retried with
//! exponential backoff plus jitter, up to a configurable attempt budget.
//! Credentials are read from a named environment variable and never persisted.

use super::{Backend, BackendError, Completion, CompletionRequest, FinishReason, TokenStep};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL up to but excluding `/completions`, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "http://localhost:8000/v1".to_string(),
            api_key_env: None,
            max_attempts: 5,
            backoff_base_ms: 250,
            timeout_secs: 60,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

// Wire structures for the completions response.
#[derive(Debug, Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Debug, Deserialize)]
struct ApiChoice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ApiLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ApiLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

fn parse_finish(reason: Option<&str>) -> FinishReason {
    match reason {
        Some("length") => FinishReason::Length,
        Some("stop") => FinishReason::Stop,
        _ => FinishReason::Other,
    }
}

/// Split text into whitespace-led chunks whose concatenation reproduces the
/// input exactly: `"  New York"` → `["  New", " York"]`.
fn pseudo_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if in_word {
                tokens.push(std::mem::take(&mut current));
                in_word = false;
            }
            current.push(ch);
        } else {
            in_word = true;
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .new_agent();
        Ok(HttpBackend {
            config,
            agent,
            api_key,
        })
    }

    fn completions_url(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// POST with bounded retries on transport errors, 429, and 5xx.
    fn post_with_retry(&self, body: &serde_json::Value) -> Result<ApiResponse, BackendError> {
        let url = self.completions_url();
        let mut last_err = String::new();
        for attempt in 1..=self.config.max_attempts.max(1) {
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("authorization", format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<ApiResponse>()
                        .map_err(|e| BackendError::Protocol(e.to_string()));
                }
                Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                    last_err = format!("HTTP {code}");
                }
                Err(ureq::Error::StatusCode(code)) => {
                    return Err(BackendError::Protocol(format!(
                        "endpoint returned HTTP {code}"
                    )));
                }
                Err(e) => {
                    last_err = e.to_string();
                }
            }
            if attempt < self.config.max_attempts {
                let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                let jitter = rand::random::<u64>() % (self.config.backoff_base_ms / 2 + 1);
                std::thread::sleep(Duration::from_millis(backoff + jitter));
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.max_attempts,
            msg: last_err,
        })
    }

    fn steps_from_logprobs(lp: &ApiLogprobs, skip_before_offset: usize) -> Vec<TokenStep> {
        let mut steps = Vec::new();
        for (i, token) in lp.tokens.iter().enumerate() {
            if let Some(&offset) = lp.text_offset.get(i) {
                if offset < skip_before_offset {
                    continue;
                }
            }
            let alternatives = lp
                .top_logprobs
                .as_ref()
                .and_then(|tl| tl.get(i))
                .and_then(|m| m.clone())
                .unwrap_or_default();
            steps.push(TokenStep {
                token: token.clone(),
                logprob: lp.token_logprobs.get(i).copied().flatten(),
                alternatives,
            });
        }
        steps
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let mut body = serde_json::json!({
            "model": request.model_id,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "seed": request.seed,
        });
        if request.top_k_alternatives > 0 {
            body["logprobs"] = serde_json::json!(request.top_k_alternatives);
        }
        let resp = self.post_with_retry(&body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".to_string()))?;
        let finish = parse_finish(choice.finish_reason.as_deref());
        match choice.logprobs {
            Some(lp) => {
                let steps = Self::steps_from_logprobs(&lp, 0);
                Ok(Completion::from_steps(steps, finish))
            }
            None => {
                let steps = pseudo_tokenize(&choice.text)
                    .into_iter()
                    .map(|token| TokenStep {
                        token,
                        logprob: None,
                        alternatives: BTreeMap::new(),
                    })
                    .collect();
                Ok(Completion::from_steps(steps, finish))
            }
        }
    }

    fn score_text(&self, context: &str, continuation: &str) -> Result<Vec<TokenStep>, BackendError> {
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::json!({
            "prompt": format!("{context}{continuation}"),
            "max_tokens": 0,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 1,
        });
        let resp = self.post_with_retry(&body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".to_string()))?;
        let lp = choice
            .logprobs
            .ok_or(BackendError::Unsupported("score_text"))?;
        if lp.text_offset.len() != lp.tokens.len() {
            return Err(BackendError::Protocol(
                "echo response lacks text offsets".to_string(),
            ));
        }
        Ok(Self::steps_from_logprobs(&lp, context.len()))
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_tokenize_roundtrips_exactly() {
        for text in ["  New York", "Paris", " a  b ", "", "\n\tx"] {
            let tokens = pseudo_tokenize(text);
            assert_eq!(tokens.concat(), text);
            assert!(tokens.iter().all(|t| !t.is_empty()));
        }
        assert_eq!(pseudo_tokenize("  New York"), ["  New", " York"]);
    }

    #[test]
    fn finish_reason_mapping() {
        assert_eq!(parse_finish(Some("length")), FinishReason::Length);
        assert_eq!(parse_finish(Some("stop")), FinishReason::Stop);
        assert_eq!(parse_finish(Some("weird")), FinishReason::Other);
        assert_eq!(parse_finish(None), FinishReason::Other);
    }

    #[test]
    fn logprob_steps_filter_by_offset() {
        let lp = ApiLogprobs {
            tokens: vec!["Q".to_string(), ":".to_string(), " I".to_string()],
            token_logprobs: vec![None, Some(-0.5), Some(-1.0)],
            top_logprobs: None,
            text_offset: vec![0, 1, 2],
        };
        let all = HttpBackend::steps_from_logprobs(&lp, 0);
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].logprob, None);
        let tail = HttpBackend::steps_from_logprobs(&lp, 2);
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].token, " I");
        assert_eq!(tail[0].logprob, Some(-1.0));
    }

    #[test]
    fn missing_credential_is_reported_by_name() {
        let config = HttpBackendConfig {
            api_key_env: Some("EPIPROBE_TEST_KEY_THAT_IS_UNSET".to_string()),
            ..Default::default()
        };
        match HttpBackend::new(config) {
            Err(BackendError::MissingCredential(var)) => {
                assert_eq!(var, "EPIPROBE_TEST_KEY_THAT_IS_UNSET")
            }
            Err(other) => panic!("expected missing credential, got {other:?}"),
            Ok(_) => panic!("expected missing credential, got a backend"),
        }
    }
}
