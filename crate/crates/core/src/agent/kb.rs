//! Domain knowledge base: tagged text entries plus the numeric decision rules.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::toolbox::tfidf::{rank, TfIdf};

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    OpticalComponents,
    LightwaveSystems,
    FiberNonlinearity,
    Procedures,
    Rules,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::OpticalComponents,
        Category::LightwaveSystems,
        Category::FiberNonlinearity,
        Category::Procedures,
        Category::Rules,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Category::OpticalComponents => "optical_components",
            Category::LightwaveSystems => "lightwave_systems",
            Category::FiberNonlinearity => "fiber_nonlinearity",
            Category::Procedures => "procedures",
            Category::Rules => "rules",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub category: Category,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rules {
    pub min_gsnr_floor_db: f64,
    pub per_span_opt_threshold_db: f64,
    pub neighbor_impact_limit_db: f64,
    pub dual_scope_min_spans: usize,
}

impl Default for Rules {
    fn default() -> Self {
        Self {
            min_gsnr_floor_db: 18.0,
            per_span_opt_threshold_db: 0.1,
            neighbor_impact_limit_db: 0.5,
            dual_scope_min_spans: 10,
        }
    }
}

impl Rules {
    pub fn validate(&self) -> Result<(), AgentError> {
        let vals = [
            self.min_gsnr_floor_db,
            self.per_span_opt_threshold_db,
            self.neighbor_impact_limit_db,
        ];
        if vals.iter().any(|v| !v.is_finite()) || self.per_span_opt_threshold_db < 0.0 || self.neighbor_impact_limit_db < 0.0 {
            return Err(AgentError::Config(format!("invalid rule values {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub entries: Vec<KbEntry>,
    pub rules: Rules,
}

fn parse_entries(category: Category, text: &str) -> Result<Vec<KbEntry>, AgentError> {
    let mut out: Vec<KbEntry> = Vec::new();
    for line in text.lines() {
        if let Some(id) = line.strip_prefix("@id ") {
            out.push(KbEntry {
                id: id.trim().to_string(),
                category,
                text: String::new(),
            });
        } else if let Some(e) = out.last_mut() {
            if !line.trim().is_empty() {
                if !e.text.is_empty() {
                    e.text.push(' ');
                }
                e.text.push_str(line.trim());
            }
        } else if !line.trim().is_empty() {
            return Err(AgentError::Config(format!("{}: text before the first @id", category.file_stem())));
        }
    }
    Ok(out)
}

impl KnowledgeBase {
    pub fn new(entries: Vec<KbEntry>, rules: Rules) -> Result<Self, AgentError> {
        rules.validate()?;
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(AgentError::Config(format!("duplicate knowledge entry `{}`", e.id)));
            }
        }
        Ok(Self { entries, rules })
    }

    /// The knowledge base compiled into the crate.
    pub fn shipped() -> Self {
        let files = [
            (Category::OpticalComponents, include_str!("../../kb/optical_components.txt")),
            (Category::LightwaveSystems, include_str!("../../kb/lightwave_systems.txt")),
            (Category::FiberNonlinearity, include_str!("../../kb/fiber_nonlinearity.txt")),
            (Category::Procedures, include_str!("../../kb/procedures.txt")),
            (Category::Rules, include_str!("../../kb/rules.txt")),
        ];
        let mut entries = Vec::new();
        for (c, text) in files {
            entries.extend(parse_entries(c, text).expect("shipped knowledge parses"));
        }
        let rules = serde_json::from_str(include_str!("../../kb/rules.json")).expect("shipped rules parse");
        Self::new(entries, rules).expect("shipped knowledge is valid")
    }

    /// Loads `<category>.txt` files and `rules.json` from a directory; missing
    /// category files are skipped.
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let mut entries = Vec::new();
        for c in Category::ALL {
            let path = dir.join(format!("{}.txt", c.file_stem()));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
                entries.extend(parse_entries(c, &text)?);
            }
        }
        let rules_path = dir.join("rules.json");
        let rules = std::fs::read_to_string(&rules_path)
            .map_err(|e| AgentError::Config(format!("{}: {e}", rules_path.display())))
            .and_then(|t| serde_json::from_str(&t).map_err(|e| AgentError::Config(format!("rules.json: {e}"))))?;
        Self::new(entries, rules)
    }

    pub fn entry(&self, id: &str) -> Option<&KbEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Top `k` entries by TF-IDF cosine similarity to `query`; ties by id.
pub fn retrieve_knowledge<'a>(kb: &'a KnowledgeBase, query: &str, k: usize) -> Vec<&'a KbEntry> {
    if k == 0 || kb.entries.is_empty() {
        return Vec::new();
    }
    let texts: Vec<&str> = kb.entries.iter().map(|e| e.text.as_str()).collect();
    let ids: Vec<&str> = kb.entries.iter().map(|e| e.id.as_str()).collect();
    let scores = TfIdf::fit(&texts).scores(query);
    rank(&scores, &ids).into_iter().take(k).map(|i| &kb.entries[i]).collect()
}
