//! Extraction of the structured action from free-form backend output.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::strategy::StrategyPayload;
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Invoke { tool: String, args: Value },
    Propose { strategy: StrategyPayload },
    Deploy { strategy_id: String },
    Escalate { reason: String },
    NoOp,
    Info { query: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub action: Action,
    /// Kept for the audit trail only.
    pub rationale: String,
}

#[derive(Deserialize)]
struct Wire {
    action: String,
    #[serde(default)]
    tool: Option<String>,
    #[serde(default)]
    args: Value,
    #[serde(default)]
    rationale: String,
}

fn arg<'a>(args: &'a Value, key: &str) -> Option<&'a Value> {
    args.get(key)
}

fn convert(w: Wire) -> Option<ParsedAction> {
    let text = |k: &str| arg(&w.args, k).and_then(Value::as_str).map(str::to_string);
    let action = match w.action.as_str() {
        "invoke" => Action::Invoke {
            tool: w.tool?,
            args: if w.args.is_null() { Value::Object(Default::default()) } else { w.args.clone() },
        },
        "propose" => Action::Propose {
            strategy: serde_json::from_value(arg(&w.args, "strategy")?.clone()).ok()?,
        },
        "deploy" => Action::Deploy {
            strategy_id: text("strategy_id")?,
        },
        "escalate" => Action::Escalate {
            reason: text("reason").unwrap_or_default(),
        },
        "no_op" => Action::NoOp,
        "info" => Action::Info { query: text("query")? },
        _ => return None,
    };
    Some(ParsedAction {
        action,
        rationale: w.rationale,
    })
}

/// Every JSON object embedded in `text` that carries an `action` key, in order.
fn blocks(text: &str) -> Vec<ParsedAction> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) if v.get("action").is_some_and(Value::is_string) => {
                if let Some(p) = serde_json::from_value::<Wire>(v).ok().and_then(convert) {
                    out.push(p);
                }
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    out
}

/// The first well-formed action block. Repeats of the same action are
/// tolerated; differing actions are ambiguous.
pub fn parse_action(text: &str) -> Result<ParsedAction, AgentError> {
    let found = blocks(text);
    let Some(first) = found.first() else {
        return Err(AgentError::MalformedAction { text: text.to_string() });
    };
    let distinct = found.iter().filter(|p| p.action != first.action).count();
    if distinct > 0 {
        return Err(AgentError::AmbiguousAction { count: distinct + 1 });
    }
    Ok(first.clone())
}
