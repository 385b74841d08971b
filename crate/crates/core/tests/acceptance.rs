//! Quantitative acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use ontwin::agent::{check_safety, decide_scope, EventKind, Rules, ScriptedBackend, ScriptedPolicy, StrategyPayload, Transcript};
use ontwin::exec::Execution;
use ontwin::scenario::{run_scenario, RunOptions, ScenarioRun, ScenarioScript, S3_NODE_A};
use ontwin::toolbox::Scope;
use ontwin::topology::apply_switch;
use ontwin::twin::{predict_all, SimOptions, TelemetryMode};

fn verdict(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n}: {detail}");
}

struct Timed {
    run: ScenarioRun,
    seconds: f64,
}

fn run_with(name: &str, policy: ScriptedPolicy, out: Option<&Path>) -> Timed {
    let start = Instant::now();
    let script = ScenarioScript::builtin(name).unwrap();
    let mut backend = ScriptedBackend { policy };
    let run = run_scenario(&script, &mut backend, &RunOptions::default(), out).unwrap();
    Timed {
        run,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn scenario(name: &'static str) -> &'static Timed {
    static S1: OnceLock<Timed> = OnceLock::new();
    static S2: OnceLock<Timed> = OnceLock::new();
    static S2M: OnceLock<Timed> = OnceLock::new();
    static S3: OnceLock<Timed> = OnceLock::new();
    let cell = match name {
        "s1" => &S1,
        "s2" => &S2,
        "s2-mutated" => &S2M,
        _ => &S3,
    };
    cell.get_or_init(|| run_with(name, ScriptedPolicy::Standard, None))
}

fn deploys(t: &Transcript) -> Vec<u64> {
    t.events().iter().filter(|e| matches!(e.kind, EventKind::Deploy { .. })).map(|e| e.id).collect()
}

#[test]
fn criterion_1_calibration_error_reduction() {
    let o = calibration_outcome(TelemetryMode::Ocm, CAL_SEED);
    let (u, c) = (&o.uncalibrated, &o.calibrated);
    let ratio = u.variance_db2 / c.variance_db2;
    let pass = u.mean_abs_db > 1.0 && c.mean_abs_db <= 0.5 && ratio >= 4.0 && o.seconds <= 300.0;
    verdict(
        1,
        pass,
        format!(
            "mean-abs {:.3} -> {:.3} dB, variance {:.4} -> {:.4} dB^2 ({ratio:.1}x) on held-out mask, {:.1} s",
            u.mean_abs_db, c.mean_abs_db, u.variance_db2, c.variance_db2, o.seconds
        ),
    );
}

#[test]
fn criterion_2_total_power_calibration_is_weaker() {
    let start = Instant::now();
    let ocm = calibration_outcome(TelemetryMode::Ocm, CAL_SEED);
    let tp = calibration_outcome(TelemetryMode::TotalPower, CAL_SEED);
    let secs = start.elapsed().as_secs_f64();
    let (u, t, f) = (ocm.uncalibrated.mean_abs_db, tp.calibrated.mean_abs_db, ocm.calibrated.mean_abs_db);
    let pass = u > t && t > f && tp.seconds <= 300.0;
    verdict(
        2,
        pass,
        format!("mean-abs uncalibrated {u:.3} > total-power {t:.3} > full OCM {f:.3} dB, {secs:.1} s for both"),
    );
}

#[test]
fn criterion_3_physics_oracles() {
    let start = Instant::now();
    let (drift, _) = photon_flux_drift();
    let atten = attenuation_error_db();
    let srs = two_channel_srs_error_db();
    let (span_step, line_step) = step_halving_change_db();
    let nli = nli_closed_vs_integral_db();
    let nli_gap = nli.iter().map(|(c, n)| (c - n).abs()).fold(0.0, f64::max);
    let cubic = [0.1, 0.5, 3.0, 10.0].into_iter().map(nli_cubic_deviation).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = drift <= 1e-9
        && atten <= 1e-9
        && srs <= 1e-6
        && span_step < 0.01
        && line_step < 0.01
        && nli_gap <= 1.5
        && cubic <= 1e-12
        && secs <= 120.0;
    verdict(
        3,
        pass,
        format!(
            "flux drift {drift:.1e}, attenuation {atten:.1e} dB, 2-ch SRS {srs:.1e} dB, step halving {span_step:.1e}/{line_step:.1e} dB, \
             NLI closed vs integral {nli_gap:.3} dB, cubic {cubic:.1e}, {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_4_optimizer_properties() {
    let start = Instant::now();
    let mut degraded = Vec::new();
    let mut half_wins = Vec::new();
    let mut mean_gap = 0.0;
    const N: u64 = 100;
    for seed in 0..N {
        let r = optimize_both_scopes(&optimizer_instance(seed));
        if r.half_min_db < r.input_min_db || r.all_min_db < r.input_min_db {
            degraded.push(seed);
        }
        if r.all_min_db < r.half_min_db {
            half_wins.push(seed);
        }
        mean_gap += (r.all_min_db - r.half_min_db) / N as f64;
    }
    let instances_secs = start.elapsed().as_secs_f64();

    let rules = Rules::default();
    let forced = decide_scope(0.7, 10, &rules);
    let sweep_ok = (0..100).all(|k| decide_scope(k as f64 * 0.01, 10, &rules) == Scope::AlternatingHalf)
        && decide_scope(1.0, 10, &rules) == Scope::All;

    let s1 = &scenario("s1").run.transcript;
    let s1_delta = s1.events().iter().find_map(|e| match &e.kind {
        EventKind::ScopeDecision { delta_db, extra_amps, scope, .. } => Some((*delta_db, *extra_amps, *scope)),
        _ => None,
    });
    let s1_ok = matches!(s1_delta, Some((d, x, s)) if d > 0.0 && s == decide_scope(d, x, &rules));

    let pass = degraded.is_empty()
        && half_wins.is_empty()
        && forced == Scope::AlternatingHalf
        && sweep_ok
        && s1_ok
        && instances_secs <= 600.0;
    verdict(
        4,
        pass,
        format!(
            "{N} instances: degraded {degraded:?}, half beat all {half_wins:?}, mean all-half gap {mean_gap:.3} dB ({instances_secs:.1} s); \
             forced 0.7 dB -> {forced:?}, sweep below 1.0 dB ok {sweep_ok}; S1 (delta, extra, scope) {s1_delta:?}"
        ),
    );
}

#[test]
fn criterion_5_s1_end_to_end() {
    let s = scenario("s1");
    let t = &s.run.transcript;
    let ev = t.events();
    let pos = |pred: &dyn Fn(&EventKind) -> bool, after: u64| ev.iter().find(|e| e.id > after && pred(&e.kind)).map(|e| e.id);

    let detect = pos(
        &|k| matches!(k, EventKind::Detect { alarms } if alarms.iter().any(|a| matches!(a, ontwin::twin::Alarm::ChannelDrop { count: 16, .. }))),
        0,
    );
    let calls: Vec<(u64, String)> = ev
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ToolCall { tool, request, .. } if tool == "optimize_edfa" && e.id > detect.unwrap_or(u64::MAX) => {
                Some((e.id, request["scope"].as_str().unwrap_or_default().to_string()))
            }
            _ => None,
        })
        .collect();
    let scopes: BTreeSet<&str> = calls.iter().map(|c| c.1.as_str()).collect();
    let dual = scopes.contains("all") && scopes.contains("alternating_half");
    let last_call = calls.last().map_or(u64::MAX, |c| c.0);
    let amp_verdicts: Vec<u64> = ev
        .iter()
        .filter(|e| e.id > last_call && matches!(&e.kind, EventKind::Verdict { strategy, .. } if matches!(strategy.payload, StrategyPayload::EdfaReconfig { .. })))
        .map(|e| e.id)
        .collect();
    let decision = pos(&|k| matches!(k, EventKind::ScopeDecision { .. }), amp_verdicts.get(1).copied().unwrap_or(u64::MAX));
    let dep = deploys(t);
    let confirm = pos(&|k| matches!(k, EventKind::Confirm { .. }), dep.first().copied().unwrap_or(u64::MAX));
    let in_order = detect.is_some() && dual && amp_verdicts.len() >= 2 && decision.is_some_and(|d| dep.first().is_some_and(|&x| x > d)) && confirm.is_some();

    let post_drop = ev.iter().find_map(|e| match &e.kind {
        EventKind::Observed { phase, min_cut_db, .. } if phase == "post_event" => *min_cut_db,
        _ => None,
    });
    let deployed = ev.iter().find_map(|e| match &e.kind {
        EventKind::Confirm { measured_min_cut_db, .. } => Some(*measured_min_cut_db),
        _ => None,
    });
    let not_worse = matches!((post_drop, deployed), (Some(a), Some(b)) if b >= a);
    let safe = check_safety(t).is_ok();
    let pass = in_order && dep.len() == 1 && safe && not_worse && s.run.report.passed && s.seconds <= 300.0;
    verdict(
        5,
        pass,
        format!(
            "ordered detect/dual-scope/verdicts/decision/deploy/confirm {in_order}, deploys {}, safety {safe}, \
             min CUT {post_drop:?} -> {deployed:?} dB, report checks {}, {:.1} s",
            dep.len(),
            s.run.report.passed,
            s.seconds
        ),
    );
}

#[test]
fn criterion_6_s2_switch_and_mutated_fixture() {
    let s = scenario("s2");
    let t = &s.run.transcript;
    let rules = Rules::default();
    let after = &s.run.twin.state;
    let moved: Vec<String> = (0..8).map(|k| format!("m{k}")).collect();
    let sim = SimOptions::default();
    let q_after = predict_all(after, &sim, Execution::Parallel).unwrap();
    let before = apply_switch(after, &moved, &["A".into(), "C".into(), "E".into()]).unwrap();
    let q_before = predict_all(&before, &sim, Execution::Parallel).unwrap();
    let min_of = |q: &[ontwin::twin::QotEstimate], id: &str| q.iter().find(|x| x.lightpath == id).map(|x| x.min_gsnr_db);
    let moved_min = moved.iter().filter_map(|id| min_of(&q_after, id)).fold(f64::INFINITY, f64::min);
    let all_moved = moved.iter().all(|id| after.lightpath(id).is_some_and(|lp| !lp.route.windows(2).any(|w| w == ["A", "C"])));
    let neighbor_change = ["n0", "n1"]
        .iter()
        .map(|id| (min_of(&q_after, id).unwrap() - min_of(&q_before, id).unwrap()).abs())
        .fold(0.0, f64::max);
    let s2_ok = all_moved
        && moved_min >= rules.min_gsnr_floor_db
        && neighbor_change <= rules.neighbor_impact_limit_db
        && deploys(t).len() == 1
        && check_safety(t).is_ok()
        && s.seconds <= 180.0;

    let m = scenario("s2-mutated");
    let mt = &m.run.transcript;
    let rejected = mt.events().iter().find_map(|e| match &e.kind {
        EventKind::Verdict { strategy, verdict } if !verdict.approved && matches!(strategy.payload, StrategyPayload::SwitchLightpaths { .. }) => Some(
            verdict
                .predicted
                .iter()
                .filter(|q| moved.contains(&q.lightpath))
                .map(|q| q.min_gsnr_db)
                .fold(f64::INFINITY, f64::min),
        ),
        _ => None,
    });
    let escalated = mt.events().iter().any(|e| matches!(e.kind, EventKind::Escalation { .. }));
    let m_ok = rejected.is_some_and(|v| v < rules.min_gsnr_floor_db) && escalated && deploys(mt).is_empty() && m.seconds <= 180.0;
    verdict(
        6,
        s2_ok && m_ok,
        format!(
            "moved paths min {moved_min:.2} dB (all off A-C {all_moved}), neighbor change {neighbor_change:.3} dB, {:.1} s; \
             mutated: rejected at {rejected:?} dB, escalated {escalated}, deploys {}, {:.1} s",
            s.seconds,
            deploys(mt).len(),
            m.seconds
        ),
    );
}

#[test]
fn criterion_7_s3_fiber_cut() {
    let s = scenario("s3");
    let t = &s.run.transcript;
    let diag = t.events().iter().find_map(|e| match &e.kind {
        EventKind::Diagnosis { diagnosis } => Some(diagnosis.clone()),
        _ => None,
    });
    let expected: Vec<usize> = S3_NODE_A.collect();
    let located = diag.as_ref().is_some_and(|d| d.span.as_deref() == Some("A-B:1") && d.channels == expected);
    let tilt = t.events().iter().find_map(|e| match &e.kind {
        EventKind::Confirm {
            rx_tilt_before_db: Some(b),
            rx_tilt_after_db: Some(a),
            ..
        } => Some((*b, *a)),
        _ => None,
    });
    let flatter = tilt.is_some_and(|(b, a)| a.abs() < b.abs());
    let safe = check_safety(t).is_ok() && deploys(t).len() == 1;
    verdict(
        7,
        located && flatter && safe && s.seconds <= 180.0,
        format!(
            "diagnosis span {:?} with {} channels (exact {located}), rx tilt (before, after) {tilt:?} dB, approved deploy {safe}, {:.1} s",
            diag.as_ref().and_then(|d| d.span.clone()),
            diag.as_ref().map_or(0, |d| d.channels.len()),
            s.seconds
        ),
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_8_safety_and_determinism() {
    let mut unsafe_runs = Vec::new();
    for name in ["s1", "s2", "s2-mutated", "s3"] {
        if check_safety(&scenario(name).run.transcript).is_err() {
            unsafe_runs.push(name.to_string());
        }
    }
    let mut adversarial = 0;
    for policy in [ScriptedPolicy::AlwaysMalformed, ScriptedPolicy::DeployUnverified, ScriptedPolicy::ProposeHarmful] {
        for name in ["s2", "s2-mutated", "s3"] {
            let r = run_with(name, policy, None);
            adversarial += 1;
            if check_safety(&r.run.transcript).is_err() || !deploys(&r.run.transcript).is_empty() {
                unsafe_runs.push(format!("{name}/{policy:?}"));
            }
        }
    }

    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for name in ["s2", "s3"] {
        let a = tmp.path().join(format!("{name}-a"));
        let b = tmp.path().join(format!("{name}-b"));
        run_with(name, ScriptedPolicy::Standard, Some(&a));
        run_with(name, ScriptedPolicy::Standard, Some(&b));
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        if fa != fb || fa.is_empty() {
            differing.push(name);
        }
    }
    verdict(
        8,
        unsafe_runs.is_empty() && differing.is_empty(),
        format!(
            "safety violations {unsafe_runs:?} over 4 standard and {adversarial} adversarial runs; non-identical repeat outputs {differing:?}"
        ),
    );
}

#[test]
fn criterion_9_ber_gsnr_round_trip() {
    let worst = ber_round_trip_error_db();
    let pass = worst.iter().all(|(_, w)| *w <= 0.01);
    verdict(9, pass, format!("worst round-trip error over [5, 30] dB: {worst:?}"));
}
