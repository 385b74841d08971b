//! Directed link topology, lightpaths, routing and the mutable network state.

mod presets;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplifier::{AmpError, EdfaConfig};
use crate::fiber::{FiberError, SpanParams};
use crate::spectral::{build_grid, BandPlan, ChannelGrid, Occupancy, SpectralError};

pub use presets::{preset, preset_names, ROADM_LOSS_DB};

/// Largest `k` accepted by [`route_paths`].
pub const MAX_K: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("link `{link}`: {reason}")]
    BadLink { link: String, reason: String },
    #[error("roadm/terminal nodes are not connected")]
    Disconnected,
    #[error("no path from `{src}` to `{dst}`")]
    NoPath { src: String, dst: String },
    #[error("k must be in 1..={MAX_K}, got {0}")]
    InvalidK(usize),
    #[error("unknown lightpath `{0}`")]
    UnknownLightpath(String),
    #[error("unknown span `{0}`")]
    UnknownSpan(String),
    #[error("unknown amplifier `{0}`")]
    UnknownAmp(String),
    #[error("lightpath `{id}`: {reason}")]
    InvalidLightpath { id: String, reason: String },
    #[error("no link from `{from}` to `{to}`")]
    InvalidRoute { from: String, to: String },
    #[error("spectrum clash on link `{link}`: channels {channels:?}")]
    SpectrumClash { link: String, channels: Vec<usize> },
    #[error(transparent)]
    Span(#[from] FiberError),
    #[error(transparent)]
    Amp(#[from] AmpError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Roadm,
    AmpSite,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

fn default_add_power() -> f64 {
    -14.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub from: String,
    pub to: String,
    pub spans: Vec<SpanParams>,
    pub amps: Vec<EdfaConfig>,
    /// Per-channel power the source ROADM hands to the link, after its insertion loss.
    #[serde(default = "default_add_power")]
    pub add_power_dbm: f64,
}

impl Link {
    pub fn length_km(&self) -> f64 {
        self.spans.iter().map(|s| s.length_km).sum()
    }

    pub fn has_booster(&self) -> bool {
        self.amps.iter().any(|a| a.stage == 0)
    }

    /// Amplifiers at one stage, in band order.
    pub fn amps_at(&self, stage: usize) -> Vec<&EdfaConfig> {
        self.amps.iter().filter(|a| a.stage == stage).collect()
    }

    pub fn stages(&self) -> BTreeSet<usize> {
        self.amps.iter().map(|a| a.stage).collect()
    }

    pub fn span_index(&self, span_id: &str) -> Option<usize> {
        self.spans.iter().position(|s| s.id == span_id)
    }

    fn validate(&self, grid: &ChannelGrid) -> Result<(), TopologyError> {
        let bad = |reason: String| TopologyError::BadLink {
            link: self.id.clone(),
            reason,
        };
        if self.spans.is_empty() {
            return Err(bad("no spans".into()));
        }
        for s in &self.spans {
            s.validate()?;
        }
        for a in &self.amps {
            a.validate()?;
        }
        let n = self.spans.len();
        let stages = self.stages();
        let expected: BTreeSet<usize> = (1..=n).collect();
        let line: BTreeSet<usize> = stages.iter().copied().filter(|&s| s > 0).collect();
        if line != expected {
            return Err(bad(format!(
                "{n} spans need one amplifier stage after each span, found stages {stages:?}"
            )));
        }
        let freqs = grid.frequencies();
        for stage in stages {
            let amps = self.amps_at(stage);
            for f in &freqs {
                let covering = amps
                    .iter()
                    .filter(|a| *f >= a.f_min_thz - 1e-6 && *f <= a.f_max_thz + 1e-6)
                    .count();
                if covering != 1 {
                    return Err(bad(format!(
                        "stage {stage}: {f} THz covered by {covering} amplifiers"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    nodes: Vec<Node>,
    links: Vec<Link>,
    grid: BandPlan,
}

/// A validated topology. Serializes to and from the topology document form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct Network {
    pub description: Option<String>,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub grid_plan: BandPlan,
    grid: ChannelGrid,
}

impl TryFrom<NetworkDoc> for Network {
    type Error = TopologyError;

    fn try_from(doc: NetworkDoc) -> Result<Self, Self::Error> {
        let mut net = Network::new(doc.nodes, doc.links, doc.grid)?;
        net.description = doc.description;
        Ok(net)
    }
}

impl From<Network> for NetworkDoc {
    fn from(n: Network) -> Self {
        NetworkDoc {
            description: n.description,
            nodes: n.nodes,
            links: n.links,
            grid: n.grid_plan,
        }
    }
}

impl Network {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, grid_plan: BandPlan) -> Result<Self, TopologyError> {
        let grid = build_grid(&grid_plan)?;
        let net = Network {
            description: None,
            nodes,
            links,
            grid_plan,
            grid,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn grid(&self) -> &ChannelGrid {
        &self.grid
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, id: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.id == id)
    }

    pub fn link_between(&self, from: &str, to: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.from == from && l.to == to)
    }

    /// The link holding a span, with the span's position on it.
    pub fn span_location(&self, span_id: &str) -> Option<(&Link, usize)> {
        self.links
            .iter()
            .find_map(|l| l.span_index(span_id).map(|k| (l, k)))
    }

    pub fn amp(&self, amp_id: &str) -> Option<(&Link, &EdfaConfig)> {
        self.links
            .iter()
            .find_map(|l| l.amps.iter().find(|a| a.id == amp_id).map(|a| (l, a)))
    }

    /// Links traversed by a node route, in order.
    pub fn route_links(&self, route: &[String]) -> Result<Vec<&Link>, TopologyError> {
        route
            .windows(2)
            .map(|w| {
                self.link_between(&w[0], &w[1])
                    .ok_or_else(|| TopologyError::InvalidRoute {
                        from: w[0].clone(),
                        to: w[1].clone(),
                    })
            })
            .collect()
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(TopologyError::DuplicateId(n.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for l in &self.links {
            for end in [&l.from, &l.to] {
                if self.node(end).is_none() {
                    return Err(TopologyError::UnknownNode(end.clone()));
                }
            }
            if l.from == l.to {
                return Err(TopologyError::BadLink {
                    link: l.id.clone(),
                    reason: "self loop".into(),
                });
            }
            if !pairs.insert((l.from.as_str(), l.to.as_str())) {
                return Err(TopologyError::BadLink {
                    link: l.id.clone(),
                    reason: "parallel link between the same nodes".into(),
                });
            }
            let sub = l
                .spans
                .iter()
                .map(|s| s.id.as_str())
                .chain(l.amps.iter().map(|a| a.id.as_str()));
            for id in std::iter::once(l.id.as_str()).chain(sub) {
                if !seen.insert(id) {
                    return Err(TopologyError::DuplicateId(id.to_string()));
                }
            }
            l.validate(&self.grid)?;
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), TopologyError> {
        let core: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| n.node_type != NodeType::AmpSite)
            .map(|n| n.id.as_str())
            .collect();
        let Some(&start) = core.first() else {
            return Ok(());
        };
        let mut reached = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for l in &self.links {
                let next = if l.from == n {
                    l.to.as_str()
                } else if l.to == n {
                    l.from.as_str()
                } else {
                    continue;
                };
                if reached.insert(next) {
                    stack.push(next);
                }
            }
        }
        if core.iter().all(|n| reached.contains(n)) {
            Ok(())
        } else {
            Err(TopologyError::Disconnected)
        }
    }
}

/// Parses and validates a topology JSON document.
pub fn load_topology(document: &str) -> Result<Network, TopologyError> {
    let doc: NetworkDoc = serde_json::from_str(document).map_err(|e| TopologyError::Parse(e.to_string()))?;
    Network::try_from(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "16QAM")]
    Qam16,
    #[serde(rename = "PCS16QAM")]
    Pcs16Qam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lightpath {
    pub id: String,
    pub route: Vec<String>,
    pub channel_indices: BTreeSet<usize>,
    pub modulation: Modulation,
    pub symbol_rate_gbaud: f64,
    pub source_node: String,
    /// ASE loading carrier: occupies spectrum, excluded from QoT reporting.
    #[serde(default)]
    pub filler: bool,
}

impl Lightpath {
    pub fn occupancy(&self) -> Occupancy {
        if self.filler {
            Occupancy::AseFiller
        } else {
            Occupancy::Signal
        }
    }

    pub fn uses_link(&self, link: &Link) -> bool {
        self.route
            .windows(2)
            .any(|w| w[0] == link.from && w[1] == link.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutedPath {
    pub nodes: Vec<String>,
    pub length_km: f64,
}

#[derive(PartialEq)]
struct Partial {
    km: f64,
    nodes: Vec<String>,
}

impl Eq for Partial {}

impl Ord for Partial {
    // reversed so the max-heap pops the shortest, then fewest hops, then lexicographically first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .km
            .total_cmp(&self.km)
            .then_with(|| other.nodes.len().cmp(&self.nodes.len()))
            .then_with(|| other.nodes.cmp(&self.nodes))
    }
}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` shortest loop-free paths, ordered by length, hop count, then node ids.
///
/// Best-first expansion of simple paths: since link lengths are non-negative,
/// complete paths leave the queue already in the required order.
pub fn route_paths(network: &Network, src: &str, dst: &str, k: usize) -> Result<Vec<RoutedPath>, TopologyError> {
    if k == 0 || k > MAX_K {
        return Err(TopologyError::InvalidK(k));
    }
    for n in [src, dst] {
        if network.node(n).is_none() {
            return Err(TopologyError::UnknownNode(n.to_string()));
        }
    }
    let mut out = Vec::new();
    let mut heap = BinaryHeap::from([Partial {
        km: 0.0,
        nodes: vec![src.to_string()],
    }]);
    while let Some(p) = heap.pop() {
        let last = p.nodes.last().expect("partial paths are never empty");
        if last == dst {
            out.push(RoutedPath {
                nodes: p.nodes,
                length_km: p.km,
            });
            if out.len() == k {
                break;
            }
            continue;
        }
        for l in network.links.iter().filter(|l| &l.from == last) {
            if p.nodes.contains(&l.to) {
                continue;
            }
            let mut nodes = p.nodes.clone();
            nodes.push(l.to.clone());
            heap.push(Partial {
                km: p.km + l.length_km(),
                nodes,
            });
        }
    }
    if out.is_empty() {
        return Err(TopologyError::NoPath {
            src: src.to_string(),
            dst: dst.to_string(),
        });
    }
    Ok(out)
}

/// Topology plus everything the agent can change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub network: Network,
    pub lightpaths: Vec<Lightpath>,
    #[serde(default)]
    pub edfa_overrides: BTreeMap<String, EdfaConfig>,
    #[serde(default)]
    pub failed_spans: BTreeSet<String>,
}

impl NetworkState {
    pub fn new(network: Network, lightpaths: Vec<Lightpath>) -> Result<Self, TopologyError> {
        let state = NetworkState {
            network,
            lightpaths,
            edfa_overrides: BTreeMap::new(),
            failed_spans: BTreeSet::new(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let n_ch = self.network.grid().len();
        let mut ids = BTreeSet::new();
        for lp in &self.lightpaths {
            let bad = |reason: &str| TopologyError::InvalidLightpath {
                id: lp.id.clone(),
                reason: reason.to_string(),
            };
            if !ids.insert(lp.id.as_str()) {
                return Err(TopologyError::DuplicateId(lp.id.clone()));
            }
            if lp.route.is_empty() {
                return Err(bad("empty route"));
            }
            if lp.route.first() != Some(&lp.source_node) {
                return Err(bad("route does not start at the source node"));
            }
            let distinct: BTreeSet<&String> = lp.route.iter().collect();
            if distinct.len() != lp.route.len() {
                return Err(bad("route revisits a node"));
            }
            for n in &lp.route {
                if self.network.node(n).is_none() {
                    return Err(TopologyError::UnknownNode(n.clone()));
                }
            }
            self.network.route_links(&lp.route)?;
            if lp.channel_indices.iter().any(|&c| c >= n_ch) {
                return Err(bad("channel outside the grid"));
            }
        }
        for (id, amp) in &self.edfa_overrides {
            if amp.id != *id || self.network.amp(id).is_none() {
                return Err(TopologyError::UnknownAmp(id.clone()));
            }
            amp.validate()?;
        }
        for s in &self.failed_spans {
            if self.network.span_location(s).is_none() {
                return Err(TopologyError::UnknownSpan(s.clone()));
            }
        }
        self.check_clashes()
    }

    /// Fails on the first link where two lightpaths share a channel.
    pub fn check_clashes(&self) -> Result<(), TopologyError> {
        for link in &self.network.links {
            let mut used = BTreeSet::new();
            let mut clash = BTreeSet::new();
            for lp in self.lightpaths.iter().filter(|lp| lp.uses_link(link)) {
                for &c in &lp.channel_indices {
                    if !used.insert(c) {
                        clash.insert(c);
                    }
                }
            }
            if !clash.is_empty() {
                return Err(TopologyError::SpectrumClash {
                    link: link.id.clone(),
                    channels: clash.into_iter().collect(),
                });
            }
        }
        Ok(())
    }

    pub fn lightpath(&self, id: &str) -> Option<&Lightpath> {
        self.lightpaths.iter().find(|lp| lp.id == id)
    }

    /// Effective configuration of an amplifier (override if present).
    pub fn amp(&self, amp_id: &str) -> Option<&EdfaConfig> {
        self.edfa_overrides
            .get(amp_id)
            .or_else(|| self.network.amp(amp_id).map(|(_, a)| a))
    }

    /// Effective amplifier configs of a link, in link order.
    pub fn link_amps(&self, link: &Link) -> Vec<EdfaConfig> {
        link.amps
            .iter()
            .map(|a| self.edfa_overrides.get(&a.id).unwrap_or(a).clone())
            .collect()
    }

    pub fn is_down(&self, lp: &Lightpath) -> bool {
        self.network
            .route_links(&lp.route)
            .map(|links| {
                links
                    .iter()
                    .any(|l| l.spans.iter().any(|s| self.failed_spans.contains(&s.id)))
            })
            .unwrap_or(true)
    }

    /// Ids of lightpaths whose route crosses a failed span.
    pub fn down_lightpaths(&self) -> Vec<String> {
        self.lightpaths
            .iter()
            .filter(|lp| self.is_down(lp))
            .map(|lp| lp.id.clone())
            .collect()
    }

    /// Channels launched onto a link by the lightpaths routed over it, with
    /// the owning lightpath. Lightpaths cut upstream of this link are excluded.
    pub fn link_load(&self, link: &Link) -> BTreeMap<usize, (Occupancy, String)> {
        let mut load = BTreeMap::new();
        for lp in &self.lightpaths {
            let Some(pos) = lp
                .route
                .windows(2)
                .position(|w| w[0] == link.from && w[1] == link.to)
            else {
                continue;
            };
            let upstream_cut = self
                .network
                .route_links(&lp.route[..=pos])
                .map(|ls| {
                    ls.iter()
                        .any(|l| l.spans.iter().any(|s| self.failed_spans.contains(&s.id)))
                })
                .unwrap_or(true);
            if upstream_cut {
                continue;
            }
            for &c in &lp.channel_indices {
                load.insert(c, (lp.occupancy(), lp.id.clone()));
            }
        }
        load
    }

    /// Returns a copy with one amplifier's configuration replaced.
    pub fn with_override(&self, amp: EdfaConfig) -> Result<NetworkState, TopologyError> {
        let Some((_, base)) = self.network.amp(&amp.id) else {
            return Err(TopologyError::UnknownAmp(amp.id.clone()));
        };
        amp.validate()?;
        let mut next = self.clone();
        if *base == amp {
            next.edfa_overrides.remove(&amp.id);
        } else {
            next.edfa_overrides.insert(amp.id.clone(), amp);
        }
        Ok(next)
    }

    pub fn add_lightpath(&self, lp: Lightpath) -> Result<NetworkState, TopologyError> {
        let mut next = self.clone();
        next.lightpaths.push(lp);
        next.validate()?;
        Ok(next)
    }

    pub fn remove_lightpaths(&self, ids: &[String]) -> Result<NetworkState, TopologyError> {
        for id in ids {
            if self.lightpath(id).is_none() {
                return Err(TopologyError::UnknownLightpath(id.clone()));
            }
        }
        let mut next = self.clone();
        next.lightpaths.retain(|lp| !ids.contains(&lp.id));
        Ok(next)
    }
}

/// Moves lightpaths onto `new_route`, keeping their channels.
pub fn apply_switch(state: &NetworkState, lightpath_ids: &[String], new_route: &[String]) -> Result<NetworkState, TopologyError> {
    if lightpath_ids.is_empty() {
        return Ok(state.clone());
    }
    let targets = state.network.route_links(new_route)?;
    let mut moving = BTreeSet::new();
    for id in lightpath_ids {
        if state.lightpath(id).is_none() {
            return Err(TopologyError::UnknownLightpath(id.clone()));
        }
        moving.insert(id.as_str());
    }
    for link in targets {
        let occupied: BTreeSet<usize> = state
            .lightpaths
            .iter()
            .filter(|lp| !moving.contains(lp.id.as_str()) && lp.uses_link(link))
            .flat_map(|lp| lp.channel_indices.iter().copied())
            .collect();
        let conflicting: BTreeSet<usize> = state
            .lightpaths
            .iter()
            .filter(|lp| moving.contains(lp.id.as_str()))
            .flat_map(|lp| lp.channel_indices.iter().copied())
            .filter(|c| occupied.contains(c))
            .collect();
        if !conflicting.is_empty() {
            return Err(TopologyError::SpectrumClash {
                link: link.id.clone(),
                channels: conflicting.into_iter().collect(),
            });
        }
    }
    let mut next = state.clone();
    for lp in next.lightpaths.iter_mut().filter(|lp| moving.contains(lp.id.as_str())) {
        lp.route = new_route.to_vec();
        lp.source_node = new_route[0].clone();
    }
    next.validate()?;
    Ok(next)
}

pub fn fail_span(state: &NetworkState, span_id: &str) -> Result<NetworkState, TopologyError> {
    if state.network.span_location(span_id).is_none() {
        return Err(TopologyError::UnknownSpan(span_id.to_string()));
    }
    let mut next = state.clone();
    next.failed_spans.insert(span_id.to_string());
    Ok(next)
}

pub fn clear_failure(state: &NetworkState, span_id: &str) -> Result<NetworkState, TopologyError> {
    if state.network.span_location(span_id).is_none() {
        return Err(TopologyError::UnknownSpan(span_id.to_string()));
    }
    let mut next = state.clone();
    next.failed_spans.remove(span_id);
    Ok(next)
}
