//! Prompt assembly: instructions, retrieved knowledge, reasoning template,
//! worked examples and the event description.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::backend::{ChatMessage, Role};
use super::kb::{retrieve_knowledge, Category, KnowledgeBase};
use super::AgentError;

pub const INSTRUCTIONS: &str = "You operate a multi-band optical network through its digital twin. \
Read the event, consult the knowledge entries, and answer with exactly one JSON object \
{\"action\": ..., \"tool\": ..., \"args\": ..., \"rationale\": ...}. \
Actions: invoke (call a tool by name with args), propose (args.strategy is a strategy payload), \
deploy (args.strategy_id names a verified strategy), escalate (args.reason), no_op, info (args.query). \
Only strategies approved by twin verification can be deployed.";

pub const COT_TEMPLATE: &str = "Think in steps: 1. what changed in the network; 2. which procedure applies; \
3. which tool produces a candidate strategy and with which arguments; 4. which rules the twin will check; \
5. the single action to take now.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub user: String,
    pub assistant: String,
}

/// What the agent is asked to act on. `facts` are rendered as `key=value`
/// lines so that both people and the scripted policy can read them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEvent {
    pub kind: String,
    pub summary: String,
    pub facts: BTreeMap<String, String>,
}

impl PromptEvent {
    pub fn new(kind: &str, summary: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            summary: summary.into(),
            facts: BTreeMap::new(),
        }
    }

    pub fn fact(mut self, key: &str, value: impl ToString) -> Self {
        self.facts.insert(key.to_string(), value.to_string());
        self
    }

    pub fn render(&self) -> String {
        let mut s = format!("EVENT {}\n{}\nFACTS\n", self.kind, self.summary);
        for (k, v) in &self.facts {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub k: usize,
    /// Rule entries added on top of the `k` general hits.
    pub rule_k: usize,
    pub cap_chars: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            k: 4,
            rule_k: 2,
            cap_chars: 12_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub cot_template: String,
    pub few_shot: Vec<FewShot>,
    pub user_event: String,
    pub retrieved_ids: Vec<String>,
    pub warnings: Vec<String>,
}

impl PromptBundle {
    pub fn chars(&self) -> usize {
        self.system_text.len()
            + self.cot_template.len()
            + self.user_event.len()
            + self.few_shot.iter().map(|f| f.user.len() + f.assistant.len()).sum::<usize>()
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::new(Role::System, format!("{}\n\n{}", self.system_text, self.cot_template))];
        for f in &self.few_shot {
            m.push(ChatMessage::new(Role::User, f.user.clone()));
            m.push(ChatMessage::new(Role::Assistant, f.assistant.clone()));
        }
        m.push(ChatMessage::new(Role::User, self.user_event.clone()));
        m
    }
}

pub fn default_examples() -> Vec<FewShot> {
    vec![
        FewShot {
            user: PromptEvent::new("channel_drop", "8 channels dropped on link X-Y")
                .fact("link", "X-Y")
                .fact("spans", 4)
                .render(),
            assistant: r#"{"action":"invoke","tool":"optimize_edfa","args":{"link":"X-Y","scope":"all"},"rationale":"short link, single scope"}"#.into(),
        },
        FewShot {
            user: PromptEvent::new("replace_request", "link P-Q scheduled for replacement")
                .fact("link", "P-Q")
                .fact("lightpaths", "lp1,lp2")
                .render(),
            assistant: r#"{"action":"invoke","tool":"protection_switch","args":{"lightpaths":["lp1","lp2"],"avoid_link":"P-Q"},"rationale":"move traffic off the link"}"#.into(),
        },
    ]
}

/// Deterministic prompt for `event`. Mandatory sections are the instructions,
/// the reasoning template and the event; knowledge entries and examples are
/// added in rank order while they fit under the cap.
pub fn build_prompt(kb: &KnowledgeBase, event: &PromptEvent, examples: &[FewShot], opts: &PromptOptions) -> Result<PromptBundle, AgentError> {
    let user_event = event.render();
    let mut bundle = PromptBundle {
        system_text: INSTRUCTIONS.to_string(),
        cot_template: COT_TEMPLATE.to_string(),
        few_shot: Vec::new(),
        user_event,
        retrieved_ids: Vec::new(),
        warnings: Vec::new(),
    };
    if bundle.chars() > opts.cap_chars {
        return Err(AgentError::PromptTooLong {
            needed: bundle.chars(),
            cap: opts.cap_chars,
        });
    }
    if kb.entries.is_empty() {
        bundle.warnings.push("knowledge base is empty".into());
    }
    let query = format!("{} {}", event.kind.replace('_', " "), event.summary);
    let mut hits: Vec<&super::kb::KbEntry> = retrieve_knowledge(kb, &query, opts.k);
    let rules_only = KnowledgeBase {
        entries: kb.entries.iter().filter(|e| e.category == Category::Rules).cloned().collect(),
        rules: kb.rules,
    };
    for r in retrieve_knowledge(&rules_only, &query, opts.rule_k) {
        if !hits.iter().any(|h| h.id == r.id) {
            hits.push(kb.entry(&r.id).expect("rule came from this knowledge base"));
        }
    }
    for e in hits {
        let header = if bundle.retrieved_ids.is_empty() { "\n\nKnowledge:" } else { "" };
        let line = format!("{header}\n[{}] {}", e.id, e.text);
        if bundle.chars() + line.len() > opts.cap_chars {
            bundle.warnings.push(format!("knowledge entry {} dropped by the length cap", e.id));
            continue;
        }
        bundle.system_text.push_str(&line);
        bundle.retrieved_ids.push(e.id.clone());
    }
    for (n, ex) in examples.iter().enumerate() {
        if bundle.chars() + ex.user.len() + ex.assistant.len() > opts.cap_chars {
            bundle.warnings.push(format!("example {n} dropped by the length cap"));
            continue;
        }
        bundle.few_shot.push(ex.clone());
    }
    Ok(bundle)
}
