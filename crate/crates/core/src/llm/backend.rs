//! Completion backends: an OpenAI-style chat endpoint, an offline mock that
//! answers from a case set, and a scripted stub for tests.

use std::collections::VecDeque;
use std::time::Duration;

use serde_json::json;

use super::cases::CaseSet;
use super::parse;
use super::prompt::{render_matrix, STATE_LABEL};
use super::LlmError;

pub trait CompletionBackend {
    fn name(&self) -> String;
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError>;
    /// Whether identical prompts always produce identical completions.
    fn deterministic(&self) -> bool;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
}

/// Finds the query state (the last `state:` block) in the prompt and answers
/// with the action of the nearest stored case. Values are written at full
/// precision so a replayed action survives the text round trip exactly.
#[derive(Debug, Clone)]
pub struct MockBackend {
    cases: CaseSet,
}

impl MockBackend {
    pub fn new(cases: CaseSet) -> Result<Self, LlmError> {
        if cases.is_empty() {
            return Err(LlmError::EmptyCaseSet);
        }
        Ok(Self { cases })
    }

    pub fn query_state(prompt: &str) -> Result<Vec<Vec<f64>>, LlmError> {
        let at = prompt
            .rfind(STATE_LABEL)
            .ok_or_else(|| LlmError::Mock("prompt has no state block".into()))?;
        parse::first_matrix(&prompt[at + STATE_LABEL.len()..])
            .ok_or_else(|| LlmError::Mock("state block holds no matrix".into()))
    }
}

impl CompletionBackend for MockBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        let state = Self::query_state(prompt)?;
        let case = self
            .cases
            .nearest(&state)
            .ok_or_else(|| LlmError::Mock("no stored case has the query's shape".into()))?;
        Ok(render_matrix(&case.action, None))
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Replies with canned completions in order; errors once they run out.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub replies: VecDeque<String>,
    pub calls: usize,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: 0,
        }
    }
}

impl CompletionBackend for ScriptedBackend {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn complete(&mut self, _prompt: &str) -> Result<String, LlmError> {
        self.calls += 1;
        self.replies
            .pop_front()
            .ok_or_else(|| LlmError::Backend("script exhausted".into()))
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Chat-completion endpoint; URL and key come from `LLM_ENDPOINT` and
/// `LLM_API_KEY`. Temperature is fixed at 0.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: String, api_key: Option<String>, model: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self {
            endpoint,
            api_key,
            model,
            timeout,
            agent,
        }
    }

    pub fn from_env(model: String, timeout: Duration) -> Result<Self, LlmError> {
        let endpoint =
            std::env::var("LLM_ENDPOINT").map_err(|_| LlmError::Backend("LLM_ENDPOINT is not set".into()))?;
        Ok(Self::new(endpoint, std::env::var("LLM_API_KEY").ok(), model, timeout))
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }
}

/// `choices[0].message.content` of a chat-completion response.
pub fn completion_text(response: &serde_json::Value) -> Result<String, LlmError> {
    response["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| LlmError::Backend("response has no choices[0].message.content".into()))
}

impl CompletionBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&mut self, prompt: &str) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        completion_text(&v)
    }

    fn deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::cases::CaseRecord;
    use crate::llm::prompt::build_prompt;

    fn set() -> CaseSet {
        let mut s = CaseSet::new();
        for (i, x) in [0.1, 0.4, 0.8].into_iter().enumerate() {
            s.push(CaseRecord {
                state: vec![vec![x, 0.5]],
                action: vec![vec![x, 0.1 / 3.0]],
                outcome: None,
                ts: i as u64,
            });
        }
        s
    }

    #[test]
    fn mock_echoes_nearest_action_exactly() {
        let mut m = MockBackend::new(set()).unwrap();
        let p = build_prompt(&set(), &[vec![0.4, 0.5]], 6000, false).unwrap();
        let out = m.complete(&p.text).unwrap();
        assert_eq!(out, render_matrix(&[vec![0.4, 0.1 / 3.0]], None));
        assert_eq!(out, m.complete(&p.text).unwrap());
        assert_eq!(parse::first_matrix(&out).unwrap(), vec![vec![0.4, 0.1 / 3.0]]);
    }

    #[test]
    fn mock_reads_the_query_not_the_cases() {
        let mut m = MockBackend::new(set()).unwrap();
        let p = build_prompt(&set(), &[vec![0.75, 0.5]], 6000, false).unwrap();
        assert_eq!(parse::first_matrix(&m.complete(&p.text).unwrap()).unwrap()[0][0], 0.8);
    }

    #[test]
    fn mock_rejects_prompts_without_state() {
        let mut m = MockBackend::new(set()).unwrap();
        assert!(matches!(m.complete("hello"), Err(LlmError::Mock(_))));
        assert!(matches!(MockBackend::new(CaseSet::new()), Err(LlmError::EmptyCaseSet)));
    }

    #[test]
    fn chat_wire_format() {
        let b = HttpBackend::new("http://127.0.0.1:9".into(), None, "m".into(), Duration::from_millis(200));
        let body = b.request_body("hi");
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["content"], "hi");
        let resp = json!({"choices": [{"message": {"role": "assistant", "content": "[[0.5, 0.1]]"}}]});
        assert_eq!(completion_text(&resp).unwrap(), "[[0.5, 0.1]]");
        assert!(completion_text(&json!({})).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_backend_error() {
        let mut b = HttpBackend::new("http://127.0.0.1:9/v1".into(), None, "m".into(), Duration::from_millis(500));
        assert!(matches!(b.complete("x"), Err(LlmError::Backend(_))));
    }
}
