//! Named tools with usage labels and JSON schemas, and similarity-based selection.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use schemars::{schema_for, JsonSchema};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::topology::{Lightpath, Modulation, NetworkState};
use crate::twin::qot::{predict_qot, QotEstimate};

use super::edfa_opt::{optimize_edfa_with, EdfaOptRequest, EdfaOptResult, OptimizerOptions, Scope};
use super::rsa::{protection_switch, provision, rsa_allocate, Assignment, Demand, SwitchPlan};
use super::tfidf::{rank, TfIdf};
use super::ToolboxError;

pub type ToolFn = Arc<dyn Fn(&NetworkState, &Value) -> Result<Value, ToolboxError> + Send + Sync>;

#[derive(Clone)]
pub struct ToolDescriptor {
    pub name: String,
    pub label_text: String,
    pub input_schema: Value,
    pub output_schema: Value,
    pub invoke: ToolFn,
}

impl std::fmt::Debug for ToolDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolDescriptor").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub tool: String,
    pub request: Value,
    pub response: Value,
    pub duration_ms: u64,
}

fn schema_value<T: JsonSchema>() -> Value {
    serde_json::to_value(schema_for!(T)).expect("schemas serialize")
}

/// Wraps a typed tool: the request must parse as `I`, and the response must
/// survive a serialize/parse round trip as `O`.
fn typed<I, O, F>(f: F) -> ToolFn
where
    I: DeserializeOwned,
    O: Serialize + DeserializeOwned,
    F: Fn(&NetworkState, I) -> Result<O, ToolboxError> + Send + Sync + 'static,
{
    Arc::new(move |state, req| {
        let input: I = serde_json::from_value(req.clone()).map_err(|e| ToolboxError::Schema(format!("request: {e}")))?;
        let out = f(state, input)?;
        let v = serde_json::to_value(&out).map_err(|e| ToolboxError::Schema(format!("response: {e}")))?;
        serde_json::from_value::<O>(v.clone()).map_err(|e| ToolboxError::Schema(format!("response round trip: {e}")))?;
        Ok(v)
    })
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    pub fn register(&mut self, tool: ToolDescriptor) -> Result<(), ToolboxError> {
        if self.get(&tool.name).is_some() {
            return Err(ToolboxError::BadRequest(format!("tool `{}` already registered", tool.name)));
        }
        self.tools.push(tool);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn invoke(&self, name: &str, state: &NetworkState, request: &Value) -> Result<InvocationRecord, ToolboxError> {
        let tool = self.get(name).ok_or_else(|| ToolboxError::UnknownTool(name.to_string()))?;
        let t0 = Instant::now();
        let response = (tool.invoke)(state, request)?;
        let rec = InvocationRecord {
            tool: name.to_string(),
            request: request.clone(),
            response,
            duration_ms: t0.elapsed().as_millis() as u64,
        };
        log::debug!("tool {} finished in {} ms", rec.tool, rec.duration_ms);
        Ok(rec)
    }
}

/// Cosine TF-IDF similarity of `problem_text` against each tool label, best first.
pub fn select_tool<'a>(registry: &'a ToolRegistry, problem_text: &str) -> Result<Vec<(&'a ToolDescriptor, f64)>, ToolboxError> {
    if registry.tools.is_empty() {
        return Err(ToolboxError::EmptyRegistry);
    }
    let labels: Vec<&str> = registry.tools.iter().map(|t| t.label_text.as_str()).collect();
    let names: Vec<&str> = registry.tools.iter().map(|t| t.name.as_str()).collect();
    let scores = TfIdf::fit(&labels).scores(problem_text);
    Ok(rank(&scores, &names)
        .into_iter()
        .map(|i| (&registry.tools[i], scores[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OptimizeEdfaArgs {
    pub link: String,
    pub scope: Scope,
    /// Channels under test; every lit non-filler channel of the link when absent.
    #[serde(default)]
    pub cut_channels: Option<BTreeSet<usize>>,
    #[serde(default)]
    pub max_evals: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RsaArgs {
    pub demands: Vec<Demand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProvisionArgs {
    pub assignment: Assignment,
    #[schemars(with = "String")]
    pub modulation: Modulation,
    pub symbol_rate_gbaud: f64,
    #[serde(default)]
    pub floor_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProvisionResult {
    #[schemars(with = "Value")]
    pub lightpath: Lightpath,
    #[schemars(with = "Value")]
    pub predicted: QotEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SwitchArgs {
    pub lightpaths: Vec<String>,
    pub avoid_link: String,
    /// Routes already tried and rejected.
    #[serde(default)]
    pub skip: Vec<Vec<String>>,
}

/// Signal channels currently launched onto `link`.
pub fn link_cut_channels(state: &NetworkState, link: &str) -> Result<BTreeSet<usize>, ToolboxError> {
    let l = state
        .network
        .link(link)
        .ok_or_else(|| ToolboxError::UnknownLink(link.to_string()))?;
    Ok(state
        .link_load(l)
        .into_iter()
        .filter(|(_, (_, id))| state.lightpath(id).is_some_and(|lp| !lp.filler))
        .map(|(c, _)| c)
        .collect())
}

pub const OPTIMIZE_EDFA_LABEL: &str = "optimize_edfa: EDFA configuration optimization for one link. \
Use after a channel drop, channel add, fiber cut or any change of the launch power profile, spectral load or span loss. \
Inputs: link, scope (all amplifiers or alternating half), channels under test; the twin supplies launch power profiles, \
number of spans, fiber characteristics, EDFA settings and connector loss. \
Steps: balance linear and nonlinear noise with a flat output power offset, counter stimulated Raman scattering tilt, \
then descend on EDFA gain and tilt to maximize the worst channel GSNR. Never returns a worse configuration.";

pub const RSA_LABEL: &str = "rsa_allocate: routing and spectrum assignment. \
Use to find a route and free channels for new connection demands between nodes. \
Shortest path with first-fit lowest-index contiguous channels, demands processed in order; blocked demands are flagged.";

pub const PROVISION_LABEL: &str = "provision: lightpath provisioning. \
Use to set up a new lightpath on an assigned route and channel set with a modulation format and symbol rate, \
checked against spectrum clashes and a minimum GSNR floor.";

pub const SWITCH_LABEL: &str = "protection_switch: lightpath switching and rerouting. \
Use for link maintenance, replacement requests or failures: moves lightpaths off a link onto the shortest alternative path, \
keeping their channels, and predicts the GSNR of every moved lightpath.";

pub fn default_registry() -> ToolRegistry {
    let mut r = ToolRegistry::default();
    let tools = [
        ToolDescriptor {
            name: "optimize_edfa".into(),
            label_text: OPTIMIZE_EDFA_LABEL.into(),
            input_schema: schema_value::<OptimizeEdfaArgs>(),
            output_schema: schema_value::<EdfaOptResult>(),
            invoke: typed(|st: &NetworkState, a: OptimizeEdfaArgs| -> Result<EdfaOptResult, ToolboxError> {
                let cuts = match a.cut_channels {
                    Some(c) => c,
                    None => link_cut_channels(st, &a.link)?,
                };
                let req = EdfaOptRequest::from_twin(st, &a.link, a.scope, cuts)?;
                let mut opts = OptimizerOptions::default();
                if let Some(m) = a.max_evals {
                    opts.max_evals = m;
                }
                optimize_edfa_with(&req, st, &opts)
            }),
        },
        ToolDescriptor {
            name: "rsa_allocate".into(),
            label_text: RSA_LABEL.into(),
            input_schema: schema_value::<RsaArgs>(),
            output_schema: schema_value::<Vec<Assignment>>(),
            invoke: typed(|st: &NetworkState, a: RsaArgs| rsa_allocate(st, &a.demands)),
        },
        ToolDescriptor {
            name: "provision".into(),
            label_text: PROVISION_LABEL.into(),
            input_schema: schema_value::<ProvisionArgs>(),
            output_schema: schema_value::<ProvisionResult>(),
            invoke: typed(|st: &NetworkState, a: ProvisionArgs| -> Result<ProvisionResult, ToolboxError> {
                let next = provision(st, &a.assignment, a.modulation, a.symbol_rate_gbaud, a.floor_db)?;
                let lightpath = next.lightpaths.last().expect("provision appends").clone();
                let predicted = predict_qot(&next, &lightpath)?;
                Ok(ProvisionResult { lightpath, predicted })
            }),
        },
        ToolDescriptor {
            name: "protection_switch".into(),
            label_text: SWITCH_LABEL.into(),
            input_schema: schema_value::<SwitchArgs>(),
            output_schema: schema_value::<SwitchPlan>(),
            invoke: typed(|st: &NetworkState, a: SwitchArgs| protection_switch(st, &a.lightpaths, &a.avoid_link, &a.skip)),
        },
    ];
    for t in tools {
        r.register(t).expect("default tool names are unique");
    }
    r
}
