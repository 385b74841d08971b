//! Scripted incidents on the reference systems.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::TimedEvent;
use crate::spectral::Band;
use crate::topology::{preset, Lightpath, Modulation, NetworkState};

use super::plant::PlantEvent;
use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    Custom,
}

/// What a successful run looks like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Deploy,
    Escalate,
}

/// Replaces one span's length before the run; used to build failing fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanOverride {
    pub span: String,
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub id: ScenarioId,
    pub name: String,
    pub preset: String,
    pub lightpaths: Vec<Lightpath>,
    #[serde(default)]
    pub span_overrides: Vec<SpanOverride>,
    pub events: Vec<TimedEvent>,
    pub expect: Expectation,
}

fn lp(id: String, route: &str, chans: impl IntoIterator<Item = usize>, rate: f64, filler: bool) -> Lightpath {
    let route: Vec<String> = route.split(',').map(str::to_string).collect();
    Lightpath {
        id,
        source_node: route[0].clone(),
        route,
        channel_indices: chans.into_iter().collect(),
        modulation: Modulation::Pcs16Qam,
        symbol_rate_gbaud: rate,
        filler,
    }
}

/// Channels of the System-1 drop: a contiguous block of 16 filler carriers.
pub const S1_DROP: std::ops::Range<usize> = 34..50;
const S1_CUTS: [usize; 6] = [4, 14, 24, 52, 57, 62];
/// L-band channels added at node A in S3.
pub const S3_NODE_A: std::ops::Range<usize> = 0..20;
const S3_B_L_CUT: usize = 30;
const S3_C_CUTS: [usize; 4] = [56, 68, 80, 92];
/// Stretch applied to the B-C span by the failing S2 fixture.
pub const S2_MUTATION_FACTOR: f64 = 3.65;

impl ScenarioScript {
    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "s1" => Ok(Self::s1()),
            "s2" => Ok(Self::s2()),
            "s2-mutated" => Ok(Self::s2_mutated()),
            "s3" => Ok(Self::s3()),
            other => Err(ScenarioError::Config(format!("unknown scenario `{other}` (s1, s2, s2-mutated, s3 or a JSON file)"))),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["s1", "s2", "s2-mutated", "s3"]
    }

    /// Six transceivers on the 22-span line, the rest of the band filled;
    /// 16 filler carriers are dropped.
    pub fn s1() -> Self {
        let mut lps: Vec<Lightpath> = S1_CUTS.iter().map(|&c| lp(format!("cut{c}"), "A,B", [c], 130.0, false)).collect();
        let fillers = (0..64).filter(|c| !S1_CUTS.contains(c));
        lps.extend(fillers.map(|c| lp(format!("ase{c}"), "A,B", [c], 130.0, true)));
        Self {
            id: ScenarioId::S1,
            name: "s1".into(),
            preset: "system1".into(),
            lightpaths: lps,
            span_overrides: Vec::new(),
            events: vec![TimedEvent {
                t: 10,
                event: PlantEvent::DropChannels { channels: S1_DROP.collect() },
            }],
            expect: Expectation::Deploy,
        }
    }

    /// Eight lightpaths on A-C-E and two on A-B-C-E; A-C is due for replacement.
    pub fn s2() -> Self {
        let mut lps: Vec<Lightpath> = (0..8).map(|k| lp(format!("m{k}"), "A,C,E", [2 * k], 91.6, false)).collect();
        lps.push(lp("n0".into(), "A,B,C,E", [20], 91.6, false));
        lps.push(lp("n1".into(), "A,B,C,E", [22], 91.6, false));
        Self {
            id: ScenarioId::S2,
            name: "s2".into(),
            preset: "system2".into(),
            lightpaths: lps,
            span_overrides: Vec::new(),
            events: vec![TimedEvent {
                t: 10,
                event: PlantEvent::ReplaceRequest { link: "A-C".into() },
            }],
            expect: Expectation::Deploy,
        }
    }

    /// S2 with the B-C span stretched until every detour misses the floor.
    pub fn s2_mutated() -> Self {
        let base = Self::s2();
        let len = preset("system2")
            .ok()
            .and_then(|n| n.link("B-C").map(|l| l.spans[0].length_km))
            .unwrap_or(47.0);
        Self {
            name: "s2-mutated".into(),
            span_overrides: vec![SpanOverride {
                span: "B-C:1".into(),
                length_km: len * S2_MUTATION_FACTOR,
            }],
            expect: Expectation::Escalate,
            ..base
        }
    }

    /// Twenty L-band channels from A ride A-B-Z next to traffic added at B;
    /// the A-B fiber is cut.
    pub fn s3() -> Self {
        let mut lps: Vec<Lightpath> = S3_NODE_A.map(|c| lp(format!("a{c}"), "A,B,Z", [c], 91.6, false)).collect();
        lps.push(lp(format!("b{S3_B_L_CUT}"), "B,Z", [S3_B_L_CUT], 91.6, false));
        lps.extend(S3_C_CUTS.iter().map(|&c| lp(format!("b{c}"), "B,Z", [c], 91.6, false)));
        let fillers = (48..96).filter(|c| !S3_C_CUTS.contains(c));
        lps.extend(fillers.map(|c| lp(format!("ase{c}"), "B,Z", [c], 91.6, true)));
        Self {
            id: ScenarioId::S3,
            name: "s3".into(),
            preset: "system3".into(),
            lightpaths: lps,
            span_overrides: Vec::new(),
            events: vec![TimedEvent {
                t: 10,
                event: PlantEvent::FiberCut { span: "A-B:1".into() },
            }],
            expect: Expectation::Deploy,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Nominal network with the script's lightpaths and span overrides.
    pub fn state(&self) -> Result<NetworkState, ScenarioError> {
        let mut net = preset(&self.preset)?;
        for o in &self.span_overrides {
            if !(o.length_km.is_finite() && o.length_km > 0.0) {
                return Err(ScenarioError::Config(format!("span {} length {} km", o.span, o.length_km)));
            }
            let span = net
                .links
                .iter_mut()
                .flat_map(|l| l.spans.iter_mut())
                .find(|s| s.id == o.span)
                .ok_or_else(|| ScenarioError::Config(format!("unknown span {}", o.span)))?;
            span.length_km = o.length_km;
        }
        Ok(NetworkState::new(net, self.lightpaths.clone())?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(ScenarioError::Config("event times must be non-decreasing".into()));
        }
        let st = self.state()?;
        let n = st.network.grid().len();
        for ev in &self.events {
            match &ev.event {
                PlantEvent::DropChannels { channels } | PlantEvent::Restore { channels, span: None } => {
                    if let Some(c) = channels.iter().find(|&&c| c >= n) {
                        return Err(ScenarioError::Config(format!("channel {c} outside a {n}-channel grid")));
                    }
                }
                PlantEvent::FiberCut { span } | PlantEvent::Restore { span: Some(span), .. } => {
                    if st.network.span_location(span).is_none() {
                        return Err(ScenarioError::Config(format!("unknown span {span}")));
                    }
                }
                PlantEvent::ReplaceRequest { link } => {
                    if st.network.link(link).is_none() {
                        return Err(ScenarioError::Config(format!("unknown link {link}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Channels the script drops or strands; the diagnosis must name exactly these.
    pub fn expected_lost_channels(&self) -> BTreeSet<usize> {
        let Ok(st) = self.state() else { return BTreeSet::new() };
        let mut out = BTreeSet::new();
        for ev in &self.events {
            match &ev.event {
                PlantEvent::DropChannels { channels } => out.extend(channels.iter().copied()),
                PlantEvent::FiberCut { span } => {
                    if let Some((link, _)) = st.network.span_location(span) {
                        for lp in st.lightpaths.iter().filter(|lp| lp.uses_link(link)) {
                            out.extend(lp.channel_indices.iter().copied());
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn channels_in_band(&self, band: Band) -> Vec<usize> {
        preset(&self.preset)
            .map(|n| n.grid().channels().iter().filter(|c| c.band == band).map(|c| c.index).collect())
            .unwrap_or_default()
    }
}
