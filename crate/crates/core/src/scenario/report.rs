//! Scenario reports rebuilt from the transcript alone, so `report` can
//! re-derive them offline.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::{check_safety, decide_scope, EpisodeStatus, EventKind, Rules, StrategyPayload, Transcript, TranscriptEvent};
use crate::toolbox::Scope;
use crate::twin::TelemetryMode;

use super::script::{Expectation, ScenarioId, ScenarioScript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    /// Transcript event the verdict rests on.
    pub event: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsnrRow {
    pub lightpath: String,
    pub channel: usize,
    pub predicted_db: Option<f64>,
    pub measured_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub phase: String,
    pub event: u64,
    pub rows: Vec<GsnrRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub event: u64,
    pub mode: TelemetryMode,
    pub initial_mse_db2: f64,
    pub residual_mse_db2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub id: ScenarioId,
    pub seed: u64,
    pub backend: String,
    pub status: EpisodeStatus,
    pub transcript: String,
    pub events: usize,
    pub calibration: Option<CalibrationMetrics>,
    pub phases: Vec<PhaseTable>,
    pub checks: Vec<CheckRow>,
    pub passed: bool,
}

pub const TRANSCRIPT_FILE: &str = "transcript.ndjson";

impl ScenarioReport {
    pub fn gsnr_csv(&self) -> String {
        let mut s = String::from("phase,event,lightpath,channel,predicted_db,measured_db\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for p in &self.phases {
            for r in &p.rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.phase,
                    p.event,
                    r.lightpath,
                    r.channel,
                    opt(r.predicted_db),
                    opt(r.measured_db)
                ));
            }
        }
        s
    }

    pub fn checks_csv(&self) -> String {
        let mut s = String::from("check,pass,event,detail\n");
        for c in &self.checks {
            s.push_str(&format!("{},{},{},\"{}\"\n", c.name, c.pass, c.event, c.detail.replace('"', "'")));
        }
        s
    }

    pub fn check(&self, name: &str) -> Option<&CheckRow> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn status_of(t: &Transcript) -> EpisodeStatus {
    if t.events().iter().any(|e| matches!(e.kind, EventKind::Failure { .. })) {
        EpisodeStatus::Failed
    } else if t.events().iter().any(|e| matches!(e.kind, EventKind::Escalation { .. })) {
        EpisodeStatus::Escalated
    } else {
        EpisodeStatus::Completed
    }
}

struct Checks<'a> {
    t: &'a Transcript,
    rows: Vec<CheckRow>,
}

impl<'a> Checks<'a> {
    fn last(&self) -> u64 {
        self.t.events().last().map_or(0, |e| e.id)
    }

    fn add(&mut self, name: &str, pass: bool, event: Option<u64>, detail: impl Into<String>) {
        let event = event.unwrap_or_else(|| self.last());
        self.rows.push(CheckRow {
            name: name.into(),
            pass,
            event,
            detail: detail.into(),
        });
    }

    fn find(&self, f: impl Fn(&EventKind) -> bool) -> Vec<&'a TranscriptEvent> {
        self.t.events().iter().filter(|e| f(&e.kind)).collect()
    }
}

fn scope_name(s: Option<Scope>) -> String {
    s.map_or_else(|| "none".into(), |s| serde_json::to_value(s).expect("scope serializes").as_str().unwrap_or_default().to_string())
}

fn db(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn deploys(t: &Transcript) -> Vec<&TranscriptEvent> {
    t.events().iter().filter(|e| matches!(e.kind, EventKind::Deploy { .. })).collect()
}

fn common(c: &mut Checks, expect: Expectation) {
    let safety = check_safety(c.t);
    let deps = deploys(c.t);
    c.add(
        "no_deploy_without_approval",
        safety.is_ok(),
        deps.first().map(|e| e.id),
        safety.err().map_or_else(|| format!("{} deployments, each after an approved verdict", deps.len()), |e| e.to_string()),
    );
    let failed = c.find(|k| matches!(k, EventKind::Failure { .. }));
    c.add(
        "no_failure",
        failed.is_empty(),
        failed.first().map(|e| e.id),
        failed.first().map_or_else(|| "episode ran to completion".to_string(), |e| format!("{:?}", e.kind)),
    );
    match expect {
        Expectation::Deploy => {
            let conf = c.find(|k| matches!(k, EventKind::Confirm { .. }));
            let ok = deps.len() == 1 && conf.first().is_some_and(|cf| cf.id > deps[0].id);
            c.add(
                "single_confirmed_deploy",
                ok,
                conf.first().or(deps.first()).map(|e| e.id),
                format!("{} deployments, {} confirmations", deps.len(), conf.len()),
            );
        }
        Expectation::Escalate => {
            let esc = c.find(|k| matches!(k, EventKind::Escalation { .. }));
            c.add(
                "escalated_without_deploy",
                !esc.is_empty() && deps.is_empty(),
                esc.first().map(|e| e.id),
                format!("{} escalations, {} deployments", esc.len(), deps.len()),
            );
        }
    }
}

fn s1(c: &mut Checks, script: &ScenarioScript, rules: &Rules) {
    let expected = script.expected_lost_channels();
    let diag = c.find(|k| matches!(k, EventKind::Diagnosis { diagnosis } if diagnosis.kind == "channel_drop"));
    let d_ok = diag.first().is_some_and(|e| match &e.kind {
        EventKind::Diagnosis { diagnosis } => diagnosis.channels.iter().copied().collect::<BTreeSet<_>>() == expected,
        _ => false,
    });
    let detect = c.find(|k| matches!(k, EventKind::Detect { .. }));
    c.add(
        "drop_detected",
        d_ok && detect.first().zip(diag.first()).is_some_and(|(a, b)| a.id < b.id),
        diag.first().map(|e| e.id),
        format!("diagnosis of a {}-channel drop", expected.len()),
    );

    let calls = c.find(|k| matches!(k, EventKind::ToolCall { tool, .. } if tool == "optimize_edfa"));
    let scope_of = |e: &TranscriptEvent| match &e.kind {
        EventKind::ToolCall { request, turn, .. } => Some((*turn, request["scope"].as_str().unwrap_or_default().to_string())),
        _ => None,
    };
    let scopes: Vec<(u64, String)> = calls.iter().filter_map(|e| scope_of(e)).collect();
    let dual = scopes
        .iter()
        .any(|(t, s)| s == "all" && scopes.iter().any(|(t2, s2)| t2 == t && s2 == "alternating_half"));
    c.add(
        "dual_scope_invocation",
        dual,
        calls.get(1).map(|e| e.id),
        format!("optimize_edfa scopes {:?}", scopes.iter().map(|s| s.1.as_str()).collect::<Vec<_>>()),
    );

    let first_call = calls.first().map_or(u64::MAX, |e| e.id);
    let verdicts: Vec<&TranscriptEvent> = c
        .find(|k| matches!(k, EventKind::Verdict { strategy, .. } if matches!(strategy.payload, StrategyPayload::EdfaReconfig { .. })))
        .into_iter()
        .filter(|e| e.id > first_call)
        .collect();
    c.add(
        "two_twin_verdicts",
        verdicts.len() >= 2,
        verdicts.get(1).map(|e| e.id),
        format!("{} amplifier verdicts after the optimizer calls", verdicts.len()),
    );

    let dec = c.find(|k| matches!(k, EventKind::ScopeDecision { .. }));
    let (dec_ok, dec_detail, chosen_scope) = match dec.first().map(|e| &e.kind) {
        Some(EventKind::ScopeDecision {
            delta_db,
            extra_amps,
            scope,
            chosen,
            ..
        }) => (
            decide_scope(*delta_db, *extra_amps, rules) == *scope,
            format!("delta {delta_db:.3} dB over {extra_amps} extra amplifiers -> {} ({chosen})", scope_name(Some(*scope))),
            Some(*scope),
        ),
        _ => (false, "no scope decision".to_string(), None),
    };
    c.add("scope_decision", dec_ok, dec.first().map(|e| e.id), dec_detail);

    let deps = deploys(c.t);
    let conf = c.find(|k| matches!(k, EventKind::Confirm { .. }));
    let ids = [
        diag.first().map(|e| e.id),
        calls.first().map(|e| e.id),
        verdicts.get(1).map(|e| e.id),
        dec.first().map(|e| e.id),
        deps.first().map(|e| e.id),
        conf.first().map(|e| e.id),
    ];
    let ordered = ids.iter().all(Option::is_some) && ids.windows(2).all(|w| w[0] < w[1]);
    c.add(
        "event_order",
        ordered,
        conf.first().map(|e| e.id),
        "diagnosis < optimizer < verdicts < scope decision < deploy < confirm",
    );

    let deployed_scope = deps.first().and_then(|e| match &e.kind {
        EventKind::Deploy { strategy } => match &strategy.payload {
            StrategyPayload::EdfaReconfig { scope, .. } => Some(*scope),
            _ => None,
        },
        _ => None,
    });
    c.add(
        "deployed_scope_matches_decision",
        deployed_scope.is_some() && deployed_scope == chosen_scope,
        deps.first().map(|e| e.id),
        format!("deployed {}, decided {}", scope_name(deployed_scope), scope_name(chosen_scope)),
    );
    c.add(
        "half_scope_deployed",
        deployed_scope == Some(Scope::AlternatingHalf),
        deps.first().map(|e| e.id),
        format!("deployed {}", scope_name(deployed_scope)),
    );

    let before = c
        .find(|k| matches!(k, EventKind::Observed { phase, .. } if phase == "post_event"))
        .first()
        .and_then(|e| match &e.kind {
            EventKind::Observed { min_cut_db, .. } => *min_cut_db,
            _ => None,
        });
    let after = conf.first().and_then(|e| match &e.kind {
        EventKind::Confirm { measured_min_cut_db, .. } => Some(*measured_min_cut_db),
        _ => None,
    });
    c.add(
        "min_cut_not_degraded",
        matches!((before, after), (Some(b), Some(a)) if a >= b),
        conf.first().map(|e| e.id),
        format!("measured min CUT GSNR post-drop {} dB, post-deploy {} dB", db(before), db(after)),
    );
}

fn s2(c: &mut Checks, script: &ScenarioScript, rules: &Rules) {
    let verdicts = c.find(|k| matches!(k, EventKind::Verdict { strategy, .. } if matches!(strategy.payload, StrategyPayload::SwitchLightpaths { .. })));
    match script.expect {
        Expectation::Deploy => {
            let ok = verdicts.iter().find(|e| matches!(&e.kind, EventKind::Verdict { verdict, .. } if verdict.approved));
            let (floors, neighbors) = ok.map_or((Vec::new(), Vec::new()), |e| match &e.kind {
                EventKind::Verdict { verdict, .. } => (
                    verdict.checks.iter().filter(|c| c.rule == "gsnr_floor").map(|c| c.measured).collect::<Vec<_>>(),
                    verdict.checks.iter().filter(|c| c.rule == "neighbor_impact").map(|c| c.measured).collect::<Vec<_>>(),
                ),
                _ => unreachable!(),
            });
            let moved = script.lightpaths.iter().filter(|lp| lp.route == ["A", "C", "E"]).count();
            let min_floor = floors.iter().copied().fold(f64::INFINITY, f64::min);
            c.add(
                "switched_paths_above_floor",
                floors.len() == moved && floors.iter().all(|&g| g >= rules.min_gsnr_floor_db),
                ok.map(|e| e.id),
                format!("{} of {moved} moved lightpaths verified, min {min_floor:.2} dB", floors.len()),
            );
            let max_nb = neighbors.iter().copied().fold(0.0, f64::max);
            let others = script.lightpaths.len() - moved;
            c.add(
                "neighbors_within_limit",
                neighbors.len() == others && neighbors.iter().all(|&d| d <= rules.neighbor_impact_limit_db),
                ok.map(|e| e.id),
                format!("{} pre-existing lightpaths, max change {max_nb:.3} dB", neighbors.len()),
            );
        }
        Expectation::Escalate => {
            let rej = verdicts.iter().find(|e| {
                matches!(&e.kind, EventKind::Verdict { verdict, .. }
                    if !verdict.approved && verdict.checks.iter().any(|c| c.rule == "gsnr_floor" && !c.pass))
            });
            let detail = rej.map_or_else(
                || "no switch rejected on the floor".to_string(),
                |e| match &e.kind {
                    EventKind::Verdict { verdict, .. } => verdict.feedback_text.clone(),
                    _ => unreachable!(),
                },
            );
            c.add("rejected_below_floor", rej.is_some(), rej.map(|e| e.id), detail);
        }
    }
}

fn s3(c: &mut Checks, script: &ScenarioScript) {
    let expected = script.expected_lost_channels();
    let span = script.events.iter().find_map(|e| match &e.event {
        super::PlantEvent::FiberCut { span } => Some(span.clone()),
        _ => None,
    });
    let diag = c.find(|k| matches!(k, EventKind::Diagnosis { diagnosis } if diagnosis.kind == "fiber_cut"));
    let d = diag.first().and_then(|e| match &e.kind {
        EventKind::Diagnosis { diagnosis } => Some((e.id, diagnosis)),
        _ => None,
    });
    c.add(
        "cut_localized",
        d.is_some_and(|(_, d)| d.span == span),
        d.map(|x| x.0),
        format!(
            "diagnosed span {}, injected {}",
            d.and_then(|x| x.1.span.clone()).unwrap_or_else(|| "none".into()),
            span.clone().unwrap_or_else(|| "none".into())
        ),
    );
    let got: BTreeSet<usize> = d.map(|x| x.1.channels.iter().copied().collect()).unwrap_or_default();
    c.add(
        "lost_channels_exact",
        d.is_some() && got == expected,
        d.map(|x| x.0),
        format!("{} channels named, {} expected", got.len(), expected.len()),
    );
    let conf = c.find(|k| matches!(k, EventKind::Confirm { .. }));
    let tilt = conf.first().and_then(|e| match &e.kind {
        EventKind::Confirm {
            rx_tilt_before_db,
            rx_tilt_after_db,
            ..
        } => rx_tilt_before_db.zip(*rx_tilt_after_db),
        _ => None,
    });
    c.add(
        "rx_tilt_reduced",
        tilt.is_some_and(|(b, a)| a.abs() < b.abs()),
        conf.first().map(|e| e.id),
        tilt.map_or_else(
            || "no received tilt readings".to_string(),
            |(b, a)| format!("received tilt {b:.3} dB post-cut, {a:.3} dB after re-optimization"),
        ),
    );
}

/// Builds the report of one run from its script and transcript.
pub fn build_report(script: &ScenarioScript, transcript: &Transcript, seed: u64, backend: &str, rules: &Rules) -> ScenarioReport {
    let mut c = Checks {
        t: transcript,
        rows: Vec::new(),
    };
    common(&mut c, script.expect);
    match script.id {
        ScenarioId::S1 => s1(&mut c, script, rules),
        ScenarioId::S2 => s2(&mut c, script, rules),
        ScenarioId::S3 => s3(&mut c, script),
        ScenarioId::Custom => {}
    }

    let mut phases = Vec::new();
    let mut calibration = None;
    let deployed: Option<String> = deploys(transcript).first().and_then(|e| match &e.kind {
        EventKind::Deploy { strategy } => Some(strategy.id.clone()),
        _ => None,
    });
    for e in transcript.events() {
        match &e.kind {
            EventKind::Calibrated {
                mode,
                initial_mse_db2,
                residual_mse_db2,
            } => {
                calibration = Some(CalibrationMetrics {
                    event: e.id,
                    mode: *mode,
                    initial_mse_db2: *initial_mse_db2,
                    residual_mse_db2: *residual_mse_db2,
                })
            }
            EventKind::Observed { phase, samples, .. } => phases.push(PhaseTable {
                phase: phase.clone(),
                event: e.id,
                rows: samples
                    .iter()
                    .map(|s| GsnrRow {
                        lightpath: s.lightpath.clone(),
                        channel: s.channel,
                        predicted_db: None,
                        measured_db: Some(s.gsnr_db),
                    })
                    .collect(),
            }),
            EventKind::Verdict { strategy, verdict } if deployed.as_ref() == Some(&strategy.id) => phases.push(PhaseTable {
                phase: format!("verified {}", strategy.id),
                event: e.id,
                rows: verdict
                    .predicted
                    .iter()
                    .flat_map(|q| {
                        q.channels.iter().map(|ch| GsnrRow {
                            lightpath: q.lightpath.clone(),
                            channel: ch.channel,
                            predicted_db: Some(ch.gsnr_db),
                            measured_db: None,
                        })
                    })
                    .collect(),
            }),
            EventKind::Confirm { table, .. } => phases.push(PhaseTable {
                phase: "post_deploy".into(),
                event: e.id,
                rows: table
                    .iter()
                    .map(|s| GsnrRow {
                        lightpath: s.lightpath.clone(),
                        channel: s.channel,
                        predicted_db: Some(s.predicted_db),
                        measured_db: Some(s.measured_db),
                    })
                    .collect(),
            }),
            _ => {}
        }
    }

    let status = status_of(transcript);
    let passed = c.rows.iter().all(|r| r.pass);
    ScenarioReport {
        scenario: script.name.clone(),
        id: script.id,
        seed,
        backend: backend.to_string(),
        status,
        transcript: TRANSCRIPT_FILE.into(),
        events: transcript.events().len(),
        calibration,
        phases,
        checks: c.rows,
        passed,
    }
}
