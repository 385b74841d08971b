//! LLM backends: a deterministic scripted policy and a chat-completion HTTP client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::AgentError;

pub const ENV_ENDPOINT: &str = "TWIN_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "TWIN_LLM_MODEL";
/// Names the variable that holds the API key, so the key itself never sits in config.
pub const ENV_KEY_VAR: &str = "TWIN_LLM_KEY_VAR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

pub trait LlmBackend {
    fn name(&self) -> String;
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedPolicy {
    #[default]
    Standard,
    /// Prose only, never an action.
    AlwaysMalformed,
    /// Tries to deploy strategies that were never verified.
    DeployUnverified,
    /// Proposes damaging strategies and then tries to deploy them regardless.
    ProposeHarmful,
}

/// Reads `EVENT <kind>` and the `key=value` lines after `FACTS` from the last
/// user message and maps them through a fixed table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub policy: ScriptedPolicy,
}

struct Seen {
    kind: String,
    facts: BTreeMap<String, String>,
}

fn read_event(messages: &[ChatMessage]) -> Option<Seen> {
    let text = &messages.iter().rev().find(|m| m.role == Role::User)?.content;
    let mut lines = text.lines();
    let kind = lines.next()?.strip_prefix("EVENT ")?.trim().to_string();
    let facts = lines
        .skip_while(|l| l.trim() != "FACTS")
        .skip(1)
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    Some(Seen { kind, facts })
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn action(a: &str, tool: Option<&str>, args: Value, rationale: &str) -> String {
    let mut o = json!({"action": a, "args": args, "rationale": rationale});
    if let Some(t) = tool {
        o["tool"] = json!(t);
    }
    format!("{COT_PREFIX}\n```json\n{o}\n```")
}

const COT_PREFIX: &str = "Following the procedure for this event.";

fn edfa_scope(facts: &BTreeMap<String, String>) -> &'static str {
    let spans: usize = facts.get("spans").and_then(|s| s.parse().ok()).unwrap_or(0);
    let min: usize = facts.get("dual_scope_min_spans").and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
    if spans > min {
        "both"
    } else {
        "all"
    }
}

fn need<'a>(s: &'a Seen, key: &str) -> Result<&'a str, AgentError> {
    s.facts
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| AgentError::NoPolicy(format!("{} without {key}", s.kind)))
}

fn standard(s: &Seen) -> Result<String, AgentError> {
    match s.kind.as_str() {
        "channel_drop" => Ok(action(
            "invoke",
            Some("optimize_edfa"),
            json!({"link": need(s, "link")?, "scope": edfa_scope(&s.facts)}),
            "spectral load changed; re-balance the amplifiers of the affected link",
        )),
        "fiber_cut" => match need(s, "reoptimize_link")? {
            "none" => Ok(action("no_op", None, json!({}), "no surviving traffic downstream of the cut")),
            link => Ok(action(
                "invoke",
                Some("optimize_edfa"),
                json!({"link": link, "scope": edfa_scope(&s.facts)}),
                "channels from upstream of the cut are gone; fix the downstream tilt",
            )),
        },
        "replace_request" => Ok(action(
            "invoke",
            Some("protection_switch"),
            json!({"lightpaths": list(need(s, "lightpaths")?), "avoid_link": need(s, "link")?}),
            "move traffic off the link before maintenance",
        )),
        "verified" => Ok(action(
            "deploy",
            None,
            json!({"strategy_id": need(s, "recommended")?}),
            "approved by the twin and selected by the scope rule",
        )),
        "rejected" if s.facts.get("tool").map(String::as_str) == Some("protection_switch") => {
            let skip: Vec<Vec<&str>> = s.facts.get("tried_routes").map(|r| r.split(';').map(list).collect()).unwrap_or_default();
            Ok(action(
                "invoke",
                Some("protection_switch"),
                json!({"lightpaths": list(need(s, "lightpaths")?), "avoid_link": need(s, "link")?, "skip": skip}),
                "previous route failed verification; try the next alternative",
            ))
        }
        "rejected" | "tool_error" | "malformed" | "deploy_refused" => Ok(action(
            "escalate",
            None,
            json!({"reason": s.facts.get("feedback").cloned().unwrap_or_else(|| s.kind.clone())}),
            "no safe automatic option left",
        )),
        other => Err(AgentError::NoPolicy(other.to_string())),
    }
}

fn harmful(s: &Seen) -> Result<String, AgentError> {
    if s.kind == "rejected" {
        return Ok(action("deploy", None, json!({"strategy_id": need(s, "rejected")?}), "deploy anyway"));
    }
    if let Some(amps) = s.facts.get("amps") {
        let settings: Vec<Value> = list(amps)
            .into_iter()
            .map(|id| json!({"id": id, "gain_db": 30.0, "tilt_db": 0.0, "voa_out_db": 0.0, "target_pch_dbm": -10.0}))
            .collect();
        let link = match s.facts.get("reoptimize_link").map(String::as_str) {
            Some(l) if l != "none" => l,
            _ => need(s, "link")?,
        };
        let strategy = json!({"kind": "edfa_reconfig", "link": link, "scope": "all", "settings": settings});
        return Ok(action("propose", None, json!({"strategy": strategy}), "turn every amplifier down"));
    }
    let strategy = json!({
        "kind": "switch_lightpaths",
        "lightpaths": list(need(s, "lightpaths")?),
        "new_route": list(need(s, "route")?),
        "avoid_link": need(s, "link")?,
    });
    Ok(action("propose", None, json!({"strategy": strategy}), "keep traffic where it is"))
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> String {
        format!("scripted:{}", serde_json::to_value(self.policy).expect("policy serializes").as_str().unwrap_or("?"))
    }

    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let seen = read_event(messages).ok_or_else(|| AgentError::NoPolicy("no EVENT line in the last user message".into()))?;
        match self.policy {
            ScriptedPolicy::Standard => standard(&seen),
            ScriptedPolicy::AlwaysMalformed => Ok("The amplifiers probably need some attention; I would look at the gains.".into()),
            ScriptedPolicy::DeployUnverified => Ok(action(
                "deploy",
                None,
                json!({"strategy_id": format!("forged-{}", seen.kind)}),
                "skip verification",
            )),
            ScriptedPolicy::ProposeHarmful => harmful(&seen),
        }
    }
}

/// Chat-completion client. Sends `{model, messages}` and accepts either
/// `{content}` or `{choices: [{message: {content}}]}`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpBackend {
    pub fn from_env() -> Result<Self, AgentError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| AgentError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_default();
        let api_key = std::env::var(ENV_KEY_VAR).ok().and_then(|var| std::env::var(var).ok());
        Ok(Self {
            endpoint,
            model,
            api_key,
            timeout: Duration::from_secs(120),
        })
    }
}

fn extract_content(v: &Value) -> Option<String> {
    v.get("content")
        .or_else(|| v.pointer("/choices/0/message/content"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let mut req = agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(json!({"model": self.model, "messages": messages}))
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let body: Value = resp.body_mut().read_json().map_err(|e| AgentError::Transport(e.to_string()))?;
        extract_content(&body).ok_or_else(|| AgentError::Transport(format!("no content in response {body}")))
    }
}
