//! Candidate strategies, their verification on a twin snapshot, and the
//! amplifier-scope decision rule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::amplifier::EdfaConfig;
use crate::exec::Execution;
use crate::toolbox::Scope;
use crate::topology::{apply_switch, Lightpath, NetworkState};
use crate::twin::qot::{qot_from_traces, QotEstimate};
use crate::twin::sim::{simulate_network, SimOptions};

use super::kb::Rules;
use super::AgentError;

const DEGRADE_EPS_DB: f64 = 1e-9;

/// Operator-settable part of an amplifier configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpSetting {
    pub id: String,
    pub gain_db: f64,
    pub tilt_db: f64,
    pub voa_out_db: f64,
    #[serde(default)]
    pub target_pch_dbm: Option<f64>,
}

impl From<&EdfaConfig> for AmpSetting {
    fn from(c: &EdfaConfig) -> Self {
        Self {
            id: c.id.clone(),
            gain_db: c.gain_db,
            tilt_db: c.tilt_db,
            voa_out_db: c.voa_out_db,
            target_pch_dbm: c.target_pch_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyPayload {
    EdfaReconfig {
        link: String,
        scope: Scope,
        settings: Vec<AmpSetting>,
    },
    SwitchLightpaths {
        lightpaths: Vec<String>,
        new_route: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        avoid_link: Option<String>,
    },
    Provision {
        lightpath: Lightpath,
    },
    NoOp,
}

impl StrategyPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            StrategyPayload::EdfaReconfig { .. } => "edfa_reconfig",
            StrategyPayload::SwitchLightpaths { .. } => "switch_lightpaths",
            StrategyPayload::Provision { .. } => "provision",
            StrategyPayload::NoOp => "no_op",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Tool that produced the payload; `None` when the backend wrote it.
    pub tool: Option<String>,
    pub llm_turn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: String,
    pub payload: StrategyPayload,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub rule: String,
    pub subject: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub strategy_id: String,
    pub approved: bool,
    pub checks: Vec<Check>,
    /// Per-channel predictions after the strategy; element terms are omitted.
    pub predicted: Vec<QotEstimate>,
    pub feedback_text: String,
}

impl Verdict {
    pub fn check(&self, rule: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.rule == rule)
    }
}

/// The state after `payload`, without touching `state`.
pub fn apply_payload(state: &NetworkState, payload: &StrategyPayload) -> Result<NetworkState, AgentError> {
    let na = |e: String| AgentError::NotApplicable(e);
    match payload {
        StrategyPayload::EdfaReconfig { link, settings, .. } => {
            let l = state.network.link(link).ok_or_else(|| na(format!("unknown link {link}")))?;
            let mut next = state.clone();
            for s in settings {
                if !l.amps.iter().any(|a| a.id == s.id) {
                    return Err(na(format!("amplifier {} is not on {link}", s.id)));
                }
                let base = state.amp(&s.id).expect("amplifier of a known link").clone();
                let cfg = EdfaConfig {
                    gain_db: s.gain_db,
                    tilt_db: s.tilt_db,
                    voa_out_db: s.voa_out_db,
                    target_pch_dbm: s.target_pch_dbm,
                    ..base
                };
                next = next.with_override(cfg).map_err(|e| na(e.to_string()))?;
            }
            Ok(next)
        }
        StrategyPayload::SwitchLightpaths { lightpaths, new_route, .. } => {
            apply_switch(state, lightpaths, new_route).map_err(|e| na(e.to_string()))
        }
        StrategyPayload::Provision { lightpath } => state.add_lightpath(lightpath.clone()).map_err(|e| na(e.to_string())),
        StrategyPayload::NoOp => Ok(state.clone()),
    }
}

/// Predictions for the live lightpaths among `ids` from one network simulation.
pub fn predict_lightpaths(state: &NetworkState, ids: &[String]) -> Result<Vec<QotEstimate>, AgentError> {
    let traces = simulate_network(state, &SimOptions::default(), Execution::Parallel)?;
    let mut out = Vec::new();
    for id in ids {
        let lp = state
            .lightpath(id)
            .ok_or_else(|| AgentError::NotApplicable(format!("unknown lightpath {id}")))?;
        if state.is_down(lp) {
            continue;
        }
        let ch: Vec<usize> = lp.channel_indices.iter().copied().collect();
        let mut q = qot_from_traces(state, &traces, id, &lp.route, &ch)?;
        q.terms.clear();
        out.push(q);
    }
    Ok(out)
}

fn min_of(qs: &[QotEstimate]) -> f64 {
    qs.iter().map(|q| q.min_gsnr_db).fold(f64::INFINITY, f64::min)
}

/// Live signal lightpaths crossing any link of `route`.
fn signal_on(state: &NetworkState, route: &[String], exclude: &BTreeSet<&str>) -> Vec<String> {
    let Ok(links) = state.network.route_links(route) else {
        return Vec::new();
    };
    state
        .lightpaths
        .iter()
        .filter(|lp| !lp.filler && !exclude.contains(lp.id.as_str()) && !state.is_down(lp))
        .filter(|lp| links.iter().any(|l| lp.uses_link(l)))
        .map(|lp| lp.id.clone())
        .collect()
}

fn feedback(approved: bool, checks: &[Check]) -> String {
    if approved {
        return format!("approved: {} checks passed", checks.len());
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} {}: measured {:.2} vs threshold {:.2}", c.rule, c.subject, c.measured, c.threshold))
        .collect();
    format!("rejected: {}", failed.join("; "))
}

/// Previews `strategy` on a copy of `twin` and applies the rule checks for its kind.
pub fn verify_strategy(strategy: &Strategy, twin: &NetworkState, rules: &Rules) -> Result<Verdict, AgentError> {
    let next = apply_payload(twin, &strategy.payload)?;
    let mut checks = Vec::new();
    let mut predicted = Vec::new();
    match &strategy.payload {
        StrategyPayload::EdfaReconfig { link, .. } => {
            let l = twin.network.link(link).expect("checked by apply_payload");
            let cuts = signal_on(twin, &[l.from.clone(), l.to.clone()], &BTreeSet::new());
            if cuts.is_empty() {
                return Err(AgentError::NotApplicable(format!("no live channel under test on {link}")));
            }
            let before = predict_lightpaths(twin, &cuts)?;
            predicted = predict_lightpaths(&next, &cuts)?;
            let (b, a) = (min_of(&before), min_of(&predicted));
            checks.push(Check {
                rule: "min_cut_not_degraded".into(),
                subject: link.clone(),
                measured: a,
                threshold: b,
                pass: a >= b - DEGRADE_EPS_DB,
            });
        }
        StrategyPayload::SwitchLightpaths {
            lightpaths,
            new_route,
            avoid_link,
        } => {
            if let Some(avoid) = avoid_link {
                let l = twin.network.link(avoid).ok_or_else(|| AgentError::NotApplicable(format!("unknown link {avoid}")))?;
                let crosses = new_route.windows(2).any(|w| {
                    let pair = BTreeSet::from([w[0].as_str(), w[1].as_str()]);
                    pair == BTreeSet::from([l.from.as_str(), l.to.as_str()])
                });
                checks.push(Check {
                    rule: "avoids_link".into(),
                    subject: avoid.clone(),
                    measured: if crosses { 1.0 } else { 0.0 },
                    threshold: 0.0,
                    pass: !crosses,
                });
            }
            let moved_set: BTreeSet<&str> = lightpaths.iter().map(String::as_str).collect();
            let moved = predict_lightpaths(&next, lightpaths)?;
            if moved.len() != lightpaths.len() {
                return Err(AgentError::NotApplicable("a moved lightpath crosses a failed span".into()));
            }
            for q in &moved {
                checks.push(Check {
                    rule: "gsnr_floor".into(),
                    subject: q.lightpath.clone(),
                    measured: q.min_gsnr_db,
                    threshold: rules.min_gsnr_floor_db,
                    pass: q.min_gsnr_db >= rules.min_gsnr_floor_db,
                });
            }
            let neighbors = signal_on(twin, new_route, &moved_set);
            let before = predict_lightpaths(twin, &neighbors)?;
            let after = predict_lightpaths(&next, &neighbors)?;
            for (b, a) in before.iter().zip(&after) {
                let bm = b.gsnr_by_channel();
                let delta = a
                    .channels
                    .iter()
                    .filter_map(|c| bm.get(&c.channel).map(|g| (c.gsnr_db - g).abs()))
                    .fold(0.0, f64::max);
                checks.push(Check {
                    rule: "neighbor_impact".into(),
                    subject: a.lightpath.clone(),
                    measured: delta,
                    threshold: rules.neighbor_impact_limit_db,
                    pass: delta <= rules.neighbor_impact_limit_db,
                });
            }
            predicted = moved;
            predicted.extend(after);
        }
        StrategyPayload::Provision { lightpath } => {
            predicted = predict_lightpaths(&next, std::slice::from_ref(&lightpath.id))?;
            let g = min_of(&predicted);
            checks.push(Check {
                rule: "gsnr_floor".into(),
                subject: lightpath.id.clone(),
                measured: g,
                threshold: rules.min_gsnr_floor_db,
                pass: g >= rules.min_gsnr_floor_db,
            });
        }
        StrategyPayload::NoOp => {}
    }
    let approved = checks.iter().all(|c| c.pass);
    Ok(Verdict {
        strategy_id: strategy.id.clone(),
        approved,
        feedback_text: feedback(approved, &checks),
        checks,
        predicted,
    })
}

/// `All` iff the extra GSNR of optimizing every amplifier pays the per-site
/// threshold for each extra site. A tie goes to `All`.
pub fn decide_scope(delta_gsnr_db: f64, extra_amps_optimized: usize, rules: &Rules) -> Scope {
    if delta_gsnr_db >= rules.per_span_opt_threshold_db * extra_amps_optimized as f64 {
        Scope::All
    } else {
        Scope::AlternatingHalf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{preset, Modulation};

    fn lp(id: &str, route: &str, chans: &[usize]) -> Lightpath {
        let route: Vec<String> = route.split(',').map(str::to_string).collect();
        Lightpath {
            id: id.into(),
            source_node: route[0].clone(),
            route,
            channel_indices: chans.iter().copied().collect(),
            modulation: Modulation::Pcs16Qam,
            symbol_rate_gbaud: 91.6,
            filler: false,
        }
    }

    fn mesh(stretch: f64) -> NetworkState {
        let mut net = preset("system2").unwrap();
        for l in &mut net.links {
            if l.id == "B-C" {
                l.spans[0].length_km *= stretch;
            }
        }
        let mut lps: Vec<Lightpath> = (0..8).map(|k| lp(&format!("m{k}"), "A,C,E", &[2 * k])).collect();
        lps.push(lp("n0", "A,B,C,E", &[20]));
        lps.push(lp("n1", "A,B,C,E", &[22]));
        NetworkState::new(net, lps).unwrap()
    }

    fn switch() -> Strategy {
        Strategy {
            id: "s".into(),
            payload: StrategyPayload::SwitchLightpaths {
                lightpaths: (0..8).map(|k| format!("m{k}")).collect(),
                new_route: ["A", "B", "C", "E"].map(String::from).to_vec(),
                avoid_link: Some("A-C".into()),
            },
            provenance: Provenance { tool: None, llm_turn: 0 },
        }
    }

    #[test]
    fn mesh_switch_is_approved() {
        let st = mesh(1.0);
        let v = verify_strategy(&switch(), &st, &Rules::default()).unwrap();
        assert!(v.approved, "{}", v.feedback_text);
        let floors: Vec<&Check> = v.checks.iter().filter(|c| c.rule == "gsnr_floor").collect();
        assert_eq!(floors.len(), 8);
        assert!(floors.iter().all(|c| c.measured >= 18.0));
        let nb: Vec<&Check> = v.checks.iter().filter(|c| c.rule == "neighbor_impact").collect();
        assert_eq!(nb.len(), 2);
        assert!(nb.iter().all(|c| c.measured <= 0.5 && c.measured > 0.0));
    }

    #[test]
    fn stretched_detour_is_rejected_with_the_failing_value() {
        let st = mesh(3.65);
        let before = st.clone();
        let v = verify_strategy(&switch(), &st, &Rules::default()).unwrap();
        assert!(!v.approved);
        let bad: Vec<&Check> = v.checks.iter().filter(|c| !c.pass).collect();
        assert!(bad.iter().any(|c| c.rule == "gsnr_floor" && c.measured < 18.0), "{}", v.feedback_text);
        assert!(v.feedback_text.contains("vs threshold 18.00"));
        assert_eq!(st, before);
    }

    #[test]
    fn route_through_the_avoided_link_fails() {
        let st = mesh(1.0);
        let mut s = switch();
        if let StrategyPayload::SwitchLightpaths { new_route, .. } = &mut s.payload {
            *new_route = ["A", "C", "E"].map(String::from).to_vec();
        }
        let v = verify_strategy(&s, &st, &Rules::default()).unwrap();
        assert!(!v.approved);
        assert!(!v.check("avoids_link").unwrap().pass);
    }

    #[test]
    fn no_op_is_approved_without_checks() {
        let st = mesh(1.0);
        let s = Strategy {
            id: "n".into(),
            payload: StrategyPayload::NoOp,
            provenance: Provenance { tool: None, llm_turn: 1 },
        };
        let v = verify_strategy(&s, &st, &Rules::default()).unwrap();
        assert!(v.approved && v.checks.is_empty());
    }

    #[test]
    fn amp_changes_are_checked_against_the_current_min() {
        let st = mesh(1.0);
        let link = st.network.link("A-C").unwrap();
        let mut down: Vec<AmpSetting> = st.link_amps(link).iter().map(AmpSetting::from).collect();
        for s in &mut down {
            s.target_pch_dbm = s.target_pch_dbm.map(|p| p - 8.0);
        }
        let s = Strategy {
            id: "h".into(),
            payload: StrategyPayload::EdfaReconfig {
                link: "A-C".into(),
                scope: Scope::All,
                settings: down,
            },
            provenance: Provenance { tool: None, llm_turn: 1 },
        };
        let v = verify_strategy(&s, &st, &Rules::default()).unwrap();
        assert!(!v.approved);
        let same = Strategy {
            payload: StrategyPayload::EdfaReconfig {
                link: "A-C".into(),
                scope: Scope::All,
                settings: st.link_amps(link).iter().map(AmpSetting::from).collect(),
            },
            ..s
        };
        assert!(verify_strategy(&same, &st, &Rules::default()).unwrap().approved);
    }

    #[test]
    fn foreign_amplifier_is_not_applicable() {
        let st = mesh(1.0);
        let other = st.network.link("C-E").unwrap().amps[0].clone();
        let s = Strategy {
            id: "x".into(),
            payload: StrategyPayload::EdfaReconfig {
                link: "A-C".into(),
                scope: Scope::All,
                settings: vec![AmpSetting::from(&other)],
            },
            provenance: Provenance { tool: None, llm_turn: 1 },
        };
        assert!(matches!(verify_strategy(&s, &st, &Rules::default()), Err(AgentError::NotApplicable(_))));
    }

    #[test]
    fn scope_rule_examples() {
        let r = Rules::default();
        assert_eq!(decide_scope(0.7, 10, &r), Scope::AlternatingHalf);
        assert_eq!(decide_scope(1.2, 10, &r), Scope::All);
        assert_eq!(decide_scope(0.0, 0, &r), Scope::All);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scope_rule_is_monotone_in_delta(d in 0.0f64..5.0, extra in 0usize..30, bump in 0.0f64..5.0) {
                let r = Rules::default();
                if decide_scope(d, extra, &r) == Scope::All {
                    prop_assert_eq!(decide_scope(d + bump, extra, &r), Scope::All);
                }
            }
        }
    }
}
