//! First-fit routing and spectrum assignment, provisioning, and protection switching.

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::topology::{apply_switch, route_paths, Lightpath, Modulation, NetworkState, TopologyError};
use crate::twin::qot::{predict_qot, QotEstimate};

use super::ToolboxError;

const SWITCH_CANDIDATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Demand {
    pub src: String,
    pub dst: String,
    pub channels_needed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Assignment {
    pub demand: usize,
    pub src: String,
    pub dst: String,
    /// Node route; empty when blocked.
    pub route: Vec<String>,
    pub channels: BTreeSet<usize>,
    pub blocked: bool,
}

fn used_channels(state: &NetworkState) -> BTreeMap<(String, String), BTreeSet<usize>> {
    let mut used: BTreeMap<(String, String), BTreeSet<usize>> = BTreeMap::new();
    for lp in &state.lightpaths {
        for w in lp.route.windows(2) {
            used.entry((w[0].clone(), w[1].clone()))
                .or_default()
                .extend(lp.channel_indices.iter().copied());
        }
    }
    used
}

/// Shortest path and lowest-index contiguous free block per demand, in order.
pub fn rsa_allocate(state: &NetworkState, demands: &[Demand]) -> Result<Vec<Assignment>, ToolboxError> {
    let net = &state.network;
    let n = net.grid().len();
    let mut used = used_channels(state);
    let mut out = Vec::with_capacity(demands.len());
    for (k, d) in demands.iter().enumerate() {
        for node in [&d.src, &d.dst] {
            if net.node(node).is_none() {
                return Err(TopologyError::UnknownNode(node.clone()).into());
            }
        }
        let blocked = || Assignment {
            demand: k,
            src: d.src.clone(),
            dst: d.dst.clone(),
            route: Vec::new(),
            channels: BTreeSet::new(),
            blocked: true,
        };
        if d.channels_needed == 0 || d.channels_needed > n {
            out.push(blocked());
            continue;
        }
        let route = match route_paths(net, &d.src, &d.dst, 1) {
            Ok(paths) => paths.into_iter().next().map(|p| p.nodes),
            Err(TopologyError::NoPath { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let Some(route) = route.filter(|r| r.len() >= 2) else {
            out.push(blocked());
            continue;
        };
        let hops: Vec<(String, String)> = route.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        let free = |c: usize| hops.iter().all(|h| used.get(h).is_none_or(|s| !s.contains(&c)));
        let start = (0..=n - d.channels_needed).find(|&s| (s..s + d.channels_needed).all(free));
        match start {
            Some(s) => {
                let channels: BTreeSet<usize> = (s..s + d.channels_needed).collect();
                for h in &hops {
                    used.entry(h.clone()).or_default().extend(channels.iter().copied());
                }
                out.push(Assignment {
                    demand: k,
                    src: d.src.clone(),
                    dst: d.dst.clone(),
                    route,
                    channels,
                    blocked: false,
                });
            }
            None => out.push(blocked()),
        }
    }
    Ok(out)
}

/// Adds the assignment as a lightpath and checks its predicted QoT against `floor_db`.
pub fn provision(
    state: &NetworkState,
    assignment: &Assignment,
    modulation: Modulation,
    symbol_rate_gbaud: f64,
    floor_db: Option<f64>,
) -> Result<NetworkState, ToolboxError> {
    if assignment.blocked {
        return Err(ToolboxError::Blocked(assignment.demand));
    }
    let first = assignment
        .channels
        .first()
        .ok_or_else(|| ToolboxError::BadRequest("assignment has no channels".into()))?;
    let lp = Lightpath {
        id: format!("{}-{}:{first}", assignment.src, assignment.dst),
        route: assignment.route.clone(),
        channel_indices: assignment.channels.clone(),
        modulation,
        symbol_rate_gbaud,
        source_node: assignment.src.clone(),
        filler: false,
    };
    let next = state.add_lightpath(lp.clone())?;
    let q = predict_qot(&next, &lp)?;
    if let Some(floor) = floor_db {
        if q.min_gsnr_db < floor {
            return Err(ToolboxError::BelowFloor { min_gsnr_db: q.min_gsnr_db });
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SwitchPlan {
    pub lightpaths: Vec<String>,
    pub from_route: Vec<String>,
    pub new_route: Vec<String>,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub predicted: Vec<QotEstimate>,
}

/// Moves lightpaths sharing one route onto the shortest route that avoids
/// the node pair of `avoid_link` and is not listed in `skip`, keeping their channels.
pub fn protection_switch(
    state: &NetworkState,
    lightpaths: &[String],
    avoid_link: &str,
    skip: &[Vec<String>],
) -> Result<SwitchPlan, ToolboxError> {
    let avoid = state
        .network
        .link(avoid_link)
        .ok_or_else(|| ToolboxError::UnknownLink(avoid_link.to_string()))?;
    let pair = BTreeSet::from([avoid.from.as_str(), avoid.to.as_str()]);
    let first = lightpaths
        .first()
        .and_then(|id| state.lightpath(id))
        .ok_or_else(|| ToolboxError::BadRequest("no known lightpath to switch".into()))?;
    for id in lightpaths {
        let lp = state
            .lightpath(id)
            .ok_or_else(|| TopologyError::UnknownLightpath(id.clone()))?;
        if lp.route != first.route {
            return Err(ToolboxError::BadRequest(format!("{id} does not share the route of {}", first.id)));
        }
    }
    let src = &first.route[0];
    let dst = &first.route[first.route.len() - 1];
    let candidates = route_paths(&state.network, src, dst, SWITCH_CANDIDATES)?;
    for cand in candidates {
        let crosses = cand
            .nodes
            .windows(2)
            .any(|w| pair == BTreeSet::from([w[0].as_str(), w[1].as_str()]));
        if crosses || cand.nodes == first.route || skip.contains(&cand.nodes) {
            continue;
        }
        let Ok(next) = apply_switch(state, lightpaths, &cand.nodes) else {
            continue;
        };
        let predicted = lightpaths
            .iter()
            .map(|id| predict_qot(&next, next.lightpath(id).expect("switched lightpath exists")))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(SwitchPlan {
            lightpaths: lightpaths.to_vec(),
            from_route: first.route.clone(),
            new_route: cand.nodes,
            predicted,
        });
    }
    Err(ToolboxError::NoAlternative(avoid_link.to_string()))
}
