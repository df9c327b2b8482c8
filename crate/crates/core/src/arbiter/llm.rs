//! Chat-completions backends: a live OpenAI-compatible client and a
//! recorded-response stub for offline runs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::PromptBundle;
use crate::error::{Error, Result};

/// Environment variable holding the endpoint's API key.
pub const API_KEY_ENV: &str = "FAULTARB_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Initial retry delay; doubles on each attempt.
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Maximum requests in flight at once.
    pub max_concurrency: usize,
    /// When set, every request and response is written here as JSON.
    pub audit_dir: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            base_url: "http://localhost:8000/v1".into(),
            model: "Qwen2.5-VL-32B-Instruct".into(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            temperature: 0.7,
            max_tokens: 1024,
            max_concurrency: 4,
            audit_dir: None,
        }
    }
}

impl LlmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::config("llm.base_url must be an http(s) URL"));
        }
        if self.timeout_secs == 0 || self.max_concurrency == 0 {
            return Err(Error::config(
                "llm.timeout_secs and llm.max_concurrency must be positive",
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::config("llm.temperature must lie in [0, 2]"));
        }
        Ok(())
    }
}

/// Produces one sampled completion for a prompt. `sample` is the index of the
/// self-consistency sample, `0..k`.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &PromptBundle, sample: usize) -> Result<String>;
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct LlmBackend {
    settings: LlmSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl LlmBackend {
    /// Reads the API key from [`API_KEY_ENV`]; a missing key is allowed for
    /// local endpoints that do not authenticate.
    pub fn new(settings: LlmSettings) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, api_key)
    }

    pub fn with_key(settings: LlmSettings, api_key: Option<String>) -> Result<Self> {
        settings.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(LlmBackend {
            settings,
            api_key,
            agent: config.into(),
        })
    }

    fn request_body(&self, prompt: &PromptBundle) -> Value {
        let mut content = vec![json!({"type": "text", "text": prompt.user})];
        if let Some(png) = &prompt.image_png {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": content},
            ],
        })
    }

    /// One HTTP attempt. `Ok(Err(..))` marks a failure worth retrying.
    fn attempt(&self, url: &str, body: &Value) -> Result<std::result::Result<Value, String>> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Ok(Err(format!("transport error: {e}"))),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
        match status {
            200..=299 => Ok(serde_json::from_str(&text)
                .map_err(|e| format!("malformed response JSON: {e}"))),
            429 | 500..=599 => Ok(Err(format!("HTTP {status}: {text}"))),
            _ => Err(Error::ArbiterUnavailable(format!("HTTP {status}: {text}"))),
        }
    }

    fn audit(&self, prompt: &PromptBundle, sample: usize, record: &Value) {
        let Some(dir) = &self.settings.audit_dir else {
            return;
        };
        let path = dir.join(format!("{}_{sample}.json", prompt.case_id));
        let written = std::fs::create_dir_all(dir).and_then(|_| {
            std::fs::write(&path, serde_json::to_string_pretty(record).unwrap_or_default())
        });
        if let Err(e) = written {
            eprintln!("warning: could not write audit log {}: {e}", path.display());
        }
    }
}

impl CompletionBackend for LlmBackend {
    fn complete(&self, prompt: &PromptBundle, sample: usize) -> Result<String> {
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let body = self.request_body(prompt);
        let mut failures = Vec::new();
        for attempt in 0..=self.settings.max_retries {
            if attempt > 0 {
                let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&url, &body)? {
                Ok(resp) => {
                    let content = resp["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string);
                    let mut logged = body.clone();
                    // keep audit logs readable: drop the image payload
                    if let Some(parts) = logged["messages"][1]["content"].as_array_mut() {
                        parts.retain(|p| p["type"] != "image_url");
                    }
                    self.audit(prompt, sample, &json!({"request": logged, "response": resp}));
                    return content.ok_or_else(|| {
                        Error::ArbiterUnavailable("response has no message content".into())
                    });
                }
                Err(why) => failures.push(why),
            }
        }
        Err(Error::ArbiterUnavailable(format!(
            "{} attempts failed; last: {}",
            failures.len(),
            failures.last().map(String::as_str).unwrap_or("unknown")
        )))
    }
}

/// Replays canned responses instead of calling a model.
///
/// Responses registered for a case id are used for that case; other cases
/// use the fallback list. Sample `i` gets response `i % len`.
#[derive(Debug, Default)]
pub struct RecordedBackend {
    by_case: HashMap<String, Vec<String>>,
    fallback: Vec<String>,
    calls: AtomicUsize,
}

impl RecordedBackend {
    pub fn new(fallback: Vec<String>) -> Self {
        RecordedBackend {
            fallback,
            ..Default::default()
        }
    }

    pub fn with_case(mut self, case_id: impl Into<String>, responses: Vec<String>) -> Self {
        self.by_case.insert(case_id.into(), responses);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for RecordedBackend {
    fn complete(&self, prompt: &PromptBundle, sample: usize) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let list = self.by_case.get(&prompt.case_id).unwrap_or(&self.fallback);
        if list.is_empty() {
            return Err(Error::ArbiterUnavailable(format!(
                "no recorded response for case {}",
                prompt.case_id
            )));
        }
        Ok(list[sample % list.len()].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt() -> PromptBundle {
        PromptBundle {
            case_id: "case".into(),
            system: "sys".into(),
            user: "user".into(),
            image_png: Some(vec![0x89, b'P', b'N', b'G']),
        }
    }

    #[test]
    fn request_embeds_image_as_data_url() {
        let b = LlmBackend::with_key(LlmSettings::default(), None).unwrap();
        let body = b.request_body(&prompt());
        let parts = body["messages"][1]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], "user");
        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        assert_eq!(url, "data:image/png;base64,iVBORw==");
        assert_eq!(body["temperature"], 0.7);
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let settings = LlmSettings {
            // reserved port on the loopback interface; nothing listens there
            base_url: "http://127.0.0.1:9/v1".into(),
            max_retries: 1,
            backoff_ms: 1,
            timeout_secs: 2,
            ..Default::default()
        };
        let b = LlmBackend::with_key(settings, None).unwrap();
        assert!(matches!(b.complete(&prompt(), 0), Err(Error::ArbiterUnavailable(_))));
    }

    #[test]
    fn recorded_backend_cycles() {
        let r = RecordedBackend::new(vec!["a".into(), "b".into()])
            .with_case("special", vec!["z".into()]);
        assert_eq!(r.complete(&prompt(), 0).unwrap(), "a");
        assert_eq!(r.complete(&prompt(), 3).unwrap(), "b");
        let mut p = prompt();
        p.case_id = "special".into();
        assert_eq!(r.complete(&p, 4).unwrap(), "z");
        assert_eq!(r.calls(), 3);
        assert!(RecordedBackend::new(vec![]).complete(&prompt(), 0).is_err());
    }

    #[test]
    fn settings_validation() {
        let mut s = LlmSettings::default();
        assert!(s.validate().is_ok());
        s.base_url = "ftp://x".into();
        assert!(s.validate().is_err());
    }
}
