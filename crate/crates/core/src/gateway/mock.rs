use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest};
use crate::prompting::Stage;

/// Selects requests by prompt content or fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Prompt text contains the needle.
    Contains(String),
    /// Prompt text contains every needle.
    AllOf(Vec<String>),
    /// Exact request fingerprint.
    Fingerprint(String),
    /// Prompts rendered for this product id.
    QueryId(String),
}

impl Matcher {
    pub fn substring(needle: impl Into<String>) -> Self {
        Matcher::Contains(needle.into())
    }

    pub fn all_of<I, S>(needles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Matcher::AllOf(needles.into_iter().map(Into::into).collect())
    }

    fn matches(&self, request: &ChatRequest<'_>, text: &str) -> bool {
        match self {
            Matcher::Contains(n) => text.contains(n.as_str()),
            Matcher::AllOf(ns) => ns.iter().all(|n| text.contains(n.as_str())),
            Matcher::Fingerprint(f) => f == request.fingerprint,
            Matcher::QueryId(id) => *id == request.bundle.query_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    Transient(String),
    Rejected { status: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub matcher: Matcher,
    #[serde(default)]
    pub stage: Option<Stage>,
    pub reply: MockReply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub fingerprint: String,
    pub stage: Stage,
    pub query_id: String,
    pub rule: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Script {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    rules: Vec<MockRule>,
}

/// Scripted backend for offline runs and tests. Rules are tried in order;
/// the first whose matcher and stage agree wins. Unmatched requests get the
/// default reply, or fail when the mock is strict.
#[derive(Debug, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    default: Option<String>,
    calls: Mutex<Vec<CallRecord>>,
}

impl MockBackend {
    /// A strict mock with no rules.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(self, matcher: Matcher, response: impl Into<String>) -> Self {
        self.push(MockRule {
            matcher,
            stage: None,
            reply: MockReply::Text(response.into()),
        })
    }

    pub fn stage_rule(self, stage: Stage, matcher: Matcher, response: impl Into<String>) -> Self {
        self.push(MockRule {
            matcher,
            stage: Some(stage),
            reply: MockReply::Text(response.into()),
        })
    }

    pub fn push(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn lenient(mut self, default: impl Into<String>) -> Self {
        self.default = Some(default.into());
        self
    }

    pub fn strict(mut self) -> Self {
        self.default = None;
        self
    }

    /// Load a JSON script: `{"default": "...", "rules": [{"matcher":
    /// {"contains": "..."}, "stage": "attr_id", "reply": {"text": "..."}}]}`.
    pub fn from_script(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: Script = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(MockBackend {
            rules: script.rules,
            default: script.default,
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let text = request.bundle.text();
        let stage = request.bundle.stage;
        let hit = self.rules.iter().position(|r| {
            r.stage.is_none_or(|s| s == stage) && r.matcher.matches(request, &text)
        });
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).push(CallRecord {
            fingerprint: request.fingerprint.to_string(),
            stage,
            query_id: request.bundle.query_id.clone(),
            rule: hit,
        });
        match hit.map(|i| &self.rules[i].reply) {
            Some(MockReply::Text(t)) => Ok(t.clone()),
            Some(MockReply::Transient(m)) => Err(BackendError::Transient(m.clone())),
            Some(MockReply::Rejected { status, message }) => Err(BackendError::Rejected {
                status: *status,
                message: message.clone(),
            }),
            None => self.default.clone().ok_or(BackendError::ScriptedMiss),
        }
    }
}
