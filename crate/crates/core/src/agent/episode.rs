//! The monitor, detect, diagnose, plan, verify, decide, deploy, confirm loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::scenario::PlantEvent;
use crate::spectral::tilt_fit;
use crate::toolbox::registry::{ProvisionResult, SwitchArgs};
use crate::toolbox::{EdfaOptResult, Scope, SwitchPlan, ToolRegistry};
use crate::topology::{fail_span, NetworkState};
use crate::twin::report::{error_report, GsnrSample};
use crate::twin::telemetry::{Alarm, Payload, Source, TelemetryRecord};
use crate::twin::{calibrate, CalibrationOptions, Location, Twin};

use super::action::{parse_action, Action};
use super::backend::LlmBackend;
use super::kb::{retrieve_knowledge, KnowledgeBase};
use super::prompt::{build_prompt, default_examples, PromptEvent, PromptOptions};
use super::strategy::{apply_payload, decide_scope, predict_lightpaths, verify_strategy, AmpSetting, Provenance, Strategy, StrategyPayload, Verdict};
use super::transcript::{Diagnosis, EventKind, Transcript};
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: u64,
    pub event: PlantEvent,
}

/// One round of readings from the network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poll {
    pub records: Vec<TelemetryRecord>,
    /// Transponder-derived GSNR of the requested lightpaths.
    pub gsnr: Vec<GsnrSample>,
}

/// The agent's only window on the network: inject harness events, read
/// telemetry, push approved configurations.
pub trait NetworkIo {
    fn apply(&mut self, event: &PlantEvent) -> Result<(), AgentError>;
    fn poll(&mut self, tick: u64, lightpaths: &[String]) -> Result<Poll, AgentError>;
    /// `twin_after` is the twin state with the strategy applied.
    fn deploy(&mut self, payload: &StrategyPayload, twin_after: &NetworkState) -> Result<(), AgentError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub max_refinements: usize,
    /// Hard cap on backend calls per incident, failed or not.
    pub max_turns: usize,
    pub monitor_polls: usize,
    pub calibrate: bool,
    pub calibration: CalibrationOptions,
    pub prompt: PromptOptions,
    /// Mean-abs predicted-vs-measured GSNR error that triggers a recalibration recommendation.
    pub drift_threshold_db: f64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            max_refinements: 3,
            max_turns: 8,
            monitor_polls: 4,
            calibrate: true,
            calibration: CalibrationOptions::default(),
            prompt: PromptOptions::default(),
            drift_threshold_db: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    Escalated,
    Failed,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub transcript: Transcript,
    pub twin: Twin,
    pub status: EpisodeStatus,
}

enum Ending {
    Deployed,
    NoAction,
    Escalated,
}

struct Episode<'a> {
    twin: Twin,
    tx: Transcript,
    tick: u64,
    turn: u64,
    io: &'a mut dyn NetworkIo,
    backend: &'a mut dyn LlmBackend,
    kb: &'a KnowledgeBase,
    registry: &'a ToolRegistry,
    opts: &'a EpisodeOptions,
    verdicts: BTreeMap<String, (Strategy, Verdict)>,
}

fn csv<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn rx_tilt_db(records: &[TelemetryRecord], link: &str) -> Option<f64> {
    let r = records
        .iter()
        .find(|r| r.source == Source::Ocm && r.location == Location::plain(link))?;
    let Payload::Spectrum(s) = &r.payload else { return None };
    let fit = tilt_fit(s).ok()?;
    let f = s.freqs_thz();
    let lit = s.lit_indices();
    let (lo, hi) = lit.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(f[i]), b.max(f[i])));
    Some(fit.slope_db_per_thz * (hi - lo))
}

impl Episode<'_> {
    fn push(&mut self, kind: EventKind) -> u64 {
        self.tx.push(self.tick, kind)
    }

    fn cut_ids(&self) -> Vec<String> {
        self.twin.state.lightpaths.iter().filter(|lp| !lp.filler).map(|lp| lp.id.clone()).collect()
    }

    fn poll(&mut self) -> Result<(Poll, Vec<Alarm>), AgentError> {
        let ids = self.cut_ids();
        let p = self.io.poll(self.tick, &ids)?;
        let mut alarms = Vec::new();
        for r in &p.records {
            alarms.extend(self.twin.monitor.ingest(r.clone())?);
        }
        self.tick += 1;
        Ok((p, alarms))
    }

    fn monitor(&mut self) -> Result<(), AgentError> {
        let mut telemetry = Vec::new();
        for _ in 0..self.opts.monitor_polls {
            let (p, alarms) = self.poll()?;
            self.push(EventKind::Monitor {
                records: p.records.len(),
                alarms: alarms.len(),
            });
            telemetry.extend(p.records);
        }
        if self.opts.calibrate && !telemetry.is_empty() {
            let report = calibrate(&self.twin.state, &telemetry, &self.opts.calibration)?;
            self.twin.state = report.apply(&self.twin.state);
            self.push(EventKind::Calibrated {
                mode: report.mode,
                initial_mse_db2: report.initial_mse_db2,
                residual_mse_db2: report.residual_mse_db2,
            });
            self.twin.calibration = Some(report);
        }
        Ok(())
    }

    fn link_of_location(&self, id: &str) -> Option<String> {
        let net = &self.twin.state.network;
        net.span_location(id)
            .map(|(l, _)| l.id.clone())
            .or_else(|| net.link(id).map(|l| l.id.clone()))
    }

    /// Localizes the incident from alarms only; replacement requests are operator tickets.
    fn diagnose(&self, alarms: &[Alarm], event: &PlantEvent) -> Option<Diagnosis> {
        let st = &self.twin.state;
        if let PlantEvent::ReplaceRequest { link } = event {
            let l = st.network.link(link)?;
            let lps: Vec<String> = st
                .lightpaths
                .iter()
                .filter(|lp| !lp.filler && lp.uses_link(l) && !st.is_down(lp))
                .map(|lp| lp.id.clone())
                .collect();
            return Some(Diagnosis {
                kind: "replace_request".into(),
                link: Some(link.clone()),
                span: None,
                channels: Vec::new(),
                lightpaths: lps,
                reoptimize_link: None,
            });
        }
        let dropped: BTreeSet<usize> = alarms
            .iter()
            .filter_map(|a| match a {
                Alarm::ChannelDrop { channels, .. } => Some(channels.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect();
        let mut lost_stage: BTreeMap<String, usize> = BTreeMap::new();
        for a in alarms {
            if let Alarm::LossOfPower { amp, .. } = a {
                if let Some((l, cfg)) = st.network.amp(amp) {
                    if cfg.stage > 0 {
                        let e = lost_stage.entry(l.id.clone()).or_insert(cfg.stage);
                        *e = (*e).min(cfg.stage);
                    }
                }
            }
        }
        if let Some((link_id, stage)) = lost_stage.into_iter().next() {
            let link = st.network.link(&link_id)?;
            let span = link.spans[stage - 1].id.clone();
            let cut = fail_span(st, &span).ok()?;
            let lps: Vec<String> = st
                .lightpaths
                .iter()
                .filter(|lp| !st.is_down(lp) && cut.is_down(lp))
                .map(|lp| lp.id.clone())
                .collect();
            let reopt = lps
                .iter()
                .filter_map(|id| st.lightpath(id))
                .flat_map(|lp| {
                    let pos = lp.route.windows(2).position(|w| w[0] == link.from && w[1] == link.to).unwrap_or(0);
                    lp.route[pos + 1..].windows(2).map(|w| (w[0].clone(), w[1].clone())).collect::<Vec<_>>()
                })
                .filter_map(|(a, b)| cut.network.link_between(&a, &b))
                .find(|l| cut.link_load(l).values().any(|(_, id)| cut.lightpath(id).is_some_and(|lp| !lp.filler)))
                .map(|l| l.id.clone());
            return Some(Diagnosis {
                kind: "fiber_cut".into(),
                link: Some(link_id),
                span: Some(span),
                channels: dropped.into_iter().collect(),
                lightpaths: lps,
                reoptimize_link: reopt,
            });
        }
        if dropped.is_empty() {
            return None;
        }
        let link = alarms.iter().find_map(|a| match a {
            Alarm::ChannelDrop { location, .. } => {
                let id = location.split(['@', '/']).next().unwrap_or(location);
                self.link_of_location(id)
            }
            _ => None,
        });
        let lps = st
            .lightpaths
            .iter()
            .filter(|lp| lp.channel_indices.iter().any(|c| dropped.contains(c)))
            .map(|lp| lp.id.clone())
            .collect();
        Some(Diagnosis {
            kind: "channel_drop".into(),
            reoptimize_link: link.clone(),
            link,
            span: None,
            channels: dropped.into_iter().collect(),
            lightpaths: lps,
        })
    }

    fn update_twin(&mut self, d: &Diagnosis) -> Result<(), AgentError> {
        match d.kind.as_str() {
            "channel_drop" => {
                let gone: BTreeSet<usize> = d.channels.iter().copied().collect();
                let mut next = self.twin.state.clone();
                for lp in &mut next.lightpaths {
                    lp.channel_indices.retain(|c| !gone.contains(c));
                }
                next.lightpaths.retain(|lp| !lp.channel_indices.is_empty());
                self.twin.state = next;
            }
            "fiber_cut" => {
                if let Some(s) = &d.span {
                    self.twin.state = fail_span(&self.twin.state, s)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn incident_event(&self, d: &Diagnosis) -> PromptEvent {
        let st = &self.twin.state;
        let rules = &self.kb.rules;
        let link_facts = |e: PromptEvent, link: &str| match st.network.link(link) {
            Some(l) => e
                .fact("spans", l.spans.len())
                .fact("dual_scope_min_spans", rules.dual_scope_min_spans)
                .fact("amps", csv(l.amps.iter().map(|a| a.id.clone()))),
            None => e,
        };
        match d.kind.as_str() {
            "channel_drop" => {
                let link = d.link.clone().unwrap_or_default();
                let e = PromptEvent::new(
                    "channel_drop",
                    format!("channel drop count {} on link {link}; the spectral load of the link changed", d.channels.len()),
                )
                .fact("link", &link)
                .fact("count", d.channels.len())
                .fact("channels", csv(&d.channels));
                link_facts(e, &link)
            }
            "fiber_cut" => {
                let reopt = d.reoptimize_link.clone().unwrap_or_else(|| "none".into());
                let e = PromptEvent::new(
                    "fiber_cut",
                    format!(
                        "loss of power after span {}; {} channels from upstream lost; fiber cut",
                        d.span.clone().unwrap_or_default(),
                        d.channels.len()
                    ),
                )
                .fact("link", d.link.clone().unwrap_or_default())
                .fact("span", d.span.clone().unwrap_or_default())
                .fact("count", d.channels.len())
                .fact("channels", csv(&d.channels))
                .fact("reoptimize_link", &reopt);
                link_facts(e, &reopt)
            }
            _ => {
                let link = d.link.clone().unwrap_or_default();
                let route = d.lightpaths.first().and_then(|id| st.lightpath(id)).map(|lp| csv(&lp.route)).unwrap_or_default();
                PromptEvent::new(
                    "replace_request",
                    format!("link {link} scheduled for replacement while carrying {} lightpaths", d.lightpaths.len()),
                )
                .fact("link", &link)
                .fact("lightpaths", csv(&d.lightpaths))
                .fact("route", route)
            }
        }
    }

    fn followup(base: &PromptEvent, kind: &str, summary: String, facts: &[(&str, String)]) -> PromptEvent {
        let mut e = PromptEvent {
            kind: kind.to_string(),
            summary,
            facts: base.facts.clone(),
        };
        for (k, v) in facts {
            e.facts.insert(k.to_string(), v.clone());
        }
        e
    }

    /// Expands `scope: both` into one optimizer call per scope.
    fn expand(tool: &str, args: &Value) -> Vec<Value> {
        if tool == "optimize_edfa" && args.get("scope").and_then(Value::as_str) == Some("both") {
            return ["all", "alternating_half"]
                .iter()
                .map(|s| {
                    let mut a = args.clone();
                    a["scope"] = json!(s);
                    a
                })
                .collect();
        }
        vec![args.clone()]
    }

    fn to_payload(&self, tool: &str, request: &Value, response: &Value) -> Option<(StrategyPayload, String)> {
        match tool {
            "optimize_edfa" => {
                let r: EdfaOptResult = serde_json::from_value(response.clone()).ok()?;
                let link = self.twin.state.network.link(&r.link_ref)?;
                let current = self.twin.state.link_amps(link);
                let changed: BTreeSet<String> = r.changed_amps(&current).into_iter().collect();
                let settings = r.proposed.iter().filter(|a| changed.contains(&a.id)).map(AmpSetting::from).collect();
                let summary = format!(
                    "{:?} scope: min CUT GSNR {:.3} -> {:.3} dB, {} amplifiers changed, {} evaluations",
                    r.scope,
                    r.input_min_gsnr_db,
                    r.min_gsnr_db,
                    changed.len(),
                    r.evaluations
                );
                Some((
                    StrategyPayload::EdfaReconfig {
                        link: r.link_ref,
                        scope: r.scope,
                        settings,
                    },
                    summary,
                ))
            }
            "protection_switch" => {
                let p: SwitchPlan = serde_json::from_value(response.clone()).ok()?;
                let a: SwitchArgs = serde_json::from_value(request.clone()).ok()?;
                let summary = format!("{} lightpaths {} -> {}", p.lightpaths.len(), csv(&p.from_route), csv(&p.new_route));
                Some((
                    StrategyPayload::SwitchLightpaths {
                        lightpaths: p.lightpaths,
                        new_route: p.new_route,
                        avoid_link: Some(a.avoid_link),
                    },
                    summary,
                ))
            }
            "provision" => {
                let p: ProvisionResult = serde_json::from_value(response.clone()).ok()?;
                let summary = format!("lightpath {} predicted min {:.2} dB", p.lightpath.id, p.predicted.min_gsnr_db);
                Some((StrategyPayload::Provision { lightpath: p.lightpath }, summary))
            }
            _ => None,
        }
    }

    fn verify(&mut self, strategy: Strategy) -> Result<Verdict, AgentError> {
        let v = verify_strategy(&strategy, &self.twin.state, &self.kb.rules)?;
        self.push(EventKind::Verdict {
            strategy: strategy.clone(),
            verdict: v.clone(),
        });
        self.verdicts.insert(strategy.id.clone(), (strategy, v.clone()));
        Ok(v)
    }

    /// Picks the candidate to recommend among approved ones, applying the
    /// scope rule when an all-scope and a half-scope proposal compete.
    fn recommend(&mut self, approved: &[String]) -> String {
        let scoped: Vec<(Scope, &String, f64, &str)> = approved
            .iter()
            .filter_map(|id| {
                let (s, v) = &self.verdicts[id];
                match &s.payload {
                    StrategyPayload::EdfaReconfig { scope, link, .. } => {
                        Some((*scope, id, v.check("min_cut_not_degraded").map_or(f64::NAN, |c| c.measured), link.as_str()))
                    }
                    _ => None,
                }
            })
            .collect();
        let all = scoped.iter().find(|s| s.0 == Scope::All);
        let half = scoped.iter().find(|s| s.0 == Scope::AlternatingHalf);
        if let (Some(a), Some(h)) = (all, half) {
            let stages = self.twin.state.network.link(a.3).map(|l| l.stages()).unwrap_or_default();
            let extra = stages.iter().filter(|&&s| Scope::All.includes(s)).count()
                - stages.iter().filter(|&&s| Scope::AlternatingHalf.includes(s)).count();
            let delta = (a.2 - h.2).max(0.0);
            let scope = decide_scope(delta, extra, &self.kb.rules);
            let chosen = if scope == Scope::All { a.1.clone() } else { h.1.clone() };
            self.push(EventKind::ScopeDecision {
                delta_db: delta,
                extra_amps: extra,
                threshold_db_per_amp: self.kb.rules.per_span_opt_threshold_db,
                scope,
                chosen: chosen.clone(),
            });
            return chosen;
        }
        approved[0].clone()
    }

    fn confirm(&mut self, strategy: &Strategy, pre: &[TelemetryRecord]) -> Result<(), AgentError> {
        let (p, _) = self.poll()?;
        let ids = self.cut_ids();
        let predicted = predict_lightpaths(&self.twin.state, &ids)?;
        let rep = match error_report(&predicted, &p.gsnr) {
            Ok(r) => r,
            Err(e) => {
                self.push(EventKind::Resolved {
                    note: format!("post-deploy comparison unavailable: {e}"),
                });
                return Ok(());
            }
        };
        let tilt_link = match &strategy.payload {
            StrategyPayload::EdfaReconfig { link, .. } => Some(link.clone()),
            _ => None,
        };
        let measured_min = rep.samples.iter().map(|s| s.measured_db).fold(f64::INFINITY, f64::min);
        let predicted_min = rep.samples.iter().map(|s| s.predicted_db).fold(f64::INFINITY, f64::min);
        self.push(EventKind::Confirm {
            strategy_id: strategy.id.clone(),
            samples: rep.samples.len(),
            mean_db: rep.mean_db,
            mean_abs_db: rep.mean_abs_db,
            measured_min_cut_db: measured_min,
            predicted_min_cut_db: predicted_min,
            rx_tilt_before_db: tilt_link.as_deref().and_then(|l| rx_tilt_db(pre, l)),
            rx_tilt_after_db: tilt_link.as_deref().and_then(|l| rx_tilt_db(&p.records, l)),
            table: rep.samples,
        });
        if rep.mean_abs_db > self.opts.drift_threshold_db {
            self.push(EventKind::CalibrationRecommended {
                mean_abs_db: rep.mean_abs_db,
            });
        }
        Ok(())
    }

    fn handle(&mut self, d: &Diagnosis, pre: &[TelemetryRecord]) -> Result<Ending, AgentError> {
        let base = self.incident_event(d);
        let mut event = base.clone();
        let mut failures = 0usize;
        let mut tried_routes: Vec<String> = Vec::new();
        let mut chosen: Option<String> = None;
        for _ in 0..self.opts.max_turns {
            if failures > self.opts.max_refinements {
                break;
            }
            self.turn += 1;
            let turn = self.turn;
            let bundle = build_prompt(self.kb, &event, &default_examples(), &self.opts.prompt)?;
            self.push(EventKind::Prompt {
                turn,
                kind: event.kind.clone(),
                retrieved_ids: bundle.retrieved_ids.clone(),
                warnings: bundle.warnings.clone(),
                chars: bundle.chars(),
                user_event: bundle.user_event.clone(),
            });
            let text = self.backend.complete(&bundle.messages())?;
            self.push(EventKind::Response {
                turn,
                backend: self.backend.name(),
                text: text.clone(),
            });
            let parsed = match parse_action(&text) {
                Ok(p) => p,
                Err(e) => {
                    self.push(EventKind::MalformedAction { turn, error: e.to_string() });
                    failures += 1;
                    event = Self::followup(&base, "malformed", "the previous answer held no usable action".into(), &[("feedback", e.to_string())]);
                    continue;
                }
            };
            let mut candidates: Vec<Strategy> = Vec::new();
            let mut tool_used = String::new();
            match parsed.action {
                Action::Invoke { tool, args } => {
                    tool_used = tool.clone();
                    let mut error = None;
                    for (n, req) in Self::expand(&tool, &args).into_iter().enumerate() {
                        match self.registry.invoke(&tool, &self.twin.state, &req) {
                            Ok(rec) => {
                                let made = self.to_payload(&tool, &req, &rec.response);
                                let summary = made.as_ref().map_or_else(|| rec.response.to_string(), |m| m.1.clone());
                                self.push(EventKind::ToolCall {
                                    turn,
                                    tool: tool.clone(),
                                    request: req,
                                    summary,
                                });
                                if let Some((payload, _)) = made {
                                    candidates.push(Strategy {
                                        id: format!("t{turn}-{n}"),
                                        payload,
                                        provenance: Provenance {
                                            tool: Some(tool.clone()),
                                            llm_turn: turn,
                                        },
                                    });
                                }
                            }
                            Err(e) => {
                                self.push(EventKind::ToolError {
                                    turn,
                                    tool: tool.clone(),
                                    error: e.to_string(),
                                });
                                error = Some(e.to_string());
                            }
                        }
                    }
                    if let Some(e) = error {
                        failures += 1;
                        event = Self::followup(&base, "tool_error", format!("tool {tool} failed"), &[("tool", tool.clone()), ("feedback", e)]);
                        continue;
                    }
                    if candidates.is_empty() {
                        failures += 1;
                        event = Self::followup(&base, "tool_result", format!("tool {tool} returned information only"), &[("tool", tool.clone())]);
                        continue;
                    }
                }
                Action::Propose { strategy } => {
                    candidates.push(Strategy {
                        id: format!("t{turn}-0"),
                        payload: strategy,
                        provenance: Provenance { tool: None, llm_turn: turn },
                    });
                }
                Action::Deploy { strategy_id } => {
                    let refusal = match self.verdicts.get(&strategy_id) {
                        None => Some("no verified strategy with this id".to_string()),
                        Some((_, v)) if !v.approved => Some(format!("strategy was rejected: {}", v.feedback_text)),
                        Some(_) if chosen.as_ref().is_some_and(|c| *c != strategy_id) => {
                            Some(format!("the scope rule selected {}", chosen.clone().unwrap_or_default()))
                        }
                        Some(_) => None,
                    };
                    if let Some(reason) = refusal {
                        self.push(EventKind::DeployRefused {
                            turn,
                            strategy_id: strategy_id.clone(),
                            reason: reason.clone(),
                        });
                        failures += 1;
                        event = Self::followup(&base, "deploy_refused", format!("deployment of {strategy_id} refused"), &[("feedback", reason)]);
                        continue;
                    }
                    let strategy = self.verdicts[&strategy_id].0.clone();
                    let next = apply_payload(&self.twin.state, &strategy.payload)?;
                    self.io.deploy(&strategy.payload, &next)?;
                    self.twin.state = next;
                    self.push(EventKind::Deploy { strategy: strategy.clone() });
                    self.confirm(&strategy, pre)?;
                    return Ok(Ending::Deployed);
                }
                Action::Escalate { reason } => {
                    self.push(EventKind::Escalation { reason });
                    return Ok(Ending::Escalated);
                }
                Action::NoOp => {
                    self.push(EventKind::Resolved {
                        note: format!("no action: {}", parsed.rationale),
                    });
                    return Ok(Ending::NoAction);
                }
                Action::Info { query } => {
                    let hits = retrieve_knowledge(self.kb, &query, 2);
                    let text = hits.iter().map(|e| format!("[{}] {}", e.id, e.text)).collect::<Vec<_>>().join(" ");
                    event = Self::followup(&base, "info", text, &[]);
                    continue;
                }
            }
            for c in &candidates {
                self.push(EventKind::Candidate { strategy: c.clone() });
            }
            let mut approved = Vec::new();
            let mut rejected = Vec::new();
            for c in candidates {
                if let StrategyPayload::SwitchLightpaths { new_route, .. } = &c.payload {
                    tried_routes.push(csv(new_route));
                }
                let id = c.id.clone();
                match self.verify(c) {
                    Ok(v) if v.approved => approved.push(id),
                    Ok(v) => rejected.push((id, v.feedback_text)),
                    Err(e) => rejected.push((id, e.to_string())),
                }
            }
            if approved.is_empty() {
                failures += 1;
                let (id, fb) = rejected.first().cloned().unwrap_or_default();
                event = Self::followup(
                    &base,
                    "rejected",
                    format!("twin verification rejected {id}"),
                    &[
                        ("rejected", id),
                        ("feedback", fb),
                        ("tool", tool_used),
                        ("tried_routes", tried_routes.join(";")),
                    ],
                );
                continue;
            }
            let pick = self.recommend(&approved);
            chosen = Some(pick.clone());
            event = Self::followup(
                &base,
                "verified",
                format!("twin verification approved {}", csv(&approved)),
                &[("approved", csv(&approved)), ("recommended", pick)],
            );
        }
        self.push(EventKind::Escalation {
            reason: format!("no approved deployment after {failures} failed planning turns"),
        });
        Ok(Ending::Escalated)
    }

    fn run(&mut self, events: &[TimedEvent]) -> Result<EpisodeStatus, AgentError> {
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(AgentError::Config("event times must be non-decreasing".into()));
        }
        self.monitor()?;
        for ev in events {
            self.tick = self.tick.max(ev.t);
            self.io.apply(&ev.event)?;
            self.push(EventKind::Injected {
                injected: serde_json::to_value(&ev.event).expect("events serialize"),
            });
            let (p, alarms) = self.poll()?;
            self.push(EventKind::Observed {
                phase: "post_event".into(),
                min_cut_db: p.gsnr.iter().map(|s| s.gsnr_db).reduce(f64::min),
                samples: p.gsnr.clone(),
            });
            if !alarms.is_empty() {
                self.push(EventKind::Detect { alarms: alarms.clone() });
            }
            let Some(d) = self.diagnose(&alarms, &ev.event) else {
                self.push(EventKind::Resolved {
                    note: "no actionable alarm".into(),
                });
                continue;
            };
            self.push(EventKind::Diagnosis { diagnosis: d.clone() });
            self.update_twin(&d)?;
            let ending = self.handle(&d, &p.records)?;
            self.twin.monitor.rebaseline();
            match ending {
                Ending::Escalated => return Ok(EpisodeStatus::Escalated),
                Ending::Deployed | Ending::NoAction => {}
            }
        }
        Ok(EpisodeStatus::Completed)
    }
}

/// Drives one episode. Errors never escape: they end the transcript with a
/// `failure` event.
pub fn run_episode(
    twin: Twin,
    events: &[TimedEvent],
    io: &mut dyn NetworkIo,
    backend: &mut dyn LlmBackend,
    kb: &KnowledgeBase,
    registry: &ToolRegistry,
    opts: &EpisodeOptions,
) -> EpisodeOutcome {
    let mut ep = Episode {
        twin,
        tx: Transcript::default(),
        tick: 0,
        turn: 0,
        io,
        backend,
        kb,
        registry,
        opts,
        verdicts: BTreeMap::new(),
    };
    let status = match ep.run(events) {
        Ok(s) => s,
        Err(e) => {
            ep.push(EventKind::Failure { error: e.to_string() });
            EpisodeStatus::Failed
        }
    };
    EpisodeOutcome {
        transcript: ep.tx,
        twin: ep.twin,
        status,
    }
}
