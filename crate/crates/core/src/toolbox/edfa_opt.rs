//! Amplifier setting optimization on one link: power balance, counter-SRS
//! tilt, then coordinate descent on the worst channel under test.

use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::amplifier::EdfaConfig;
use crate::exec::{self, Execution};
use crate::fiber::SpanParams;
use crate::spectral::{tilt_fit, PowerSpectrum};
use crate::topology::{Link, NetworkState};
use crate::twin::qot::{qot_from_traces, QotEstimate};
use crate::twin::sim::{add_spectrum, simulate_link_from, LinkTrace, SimOptions};

use super::ToolboxError;

const MAX_TILT_DB: f64 = 6.0;
const IMPROVE_EPS_DB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    /// Even stage indices only; the amplifiers between them keep their settings.
    AlternatingHalf,
}

impl Scope {
    pub fn includes(self, stage: usize) -> bool {
        match self {
            Scope::All => true,
            Scope::AlternatingHalf => stage % 2 == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EdfaOptRequest {
    pub link_ref: String,
    /// Add spectrum handed to the link; the twin's own when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    #[schemars(with = "Option<serde_json::Value>")]
    pub launch: Option<PowerSpectrum>,
    pub span_count: usize,
    /// Fiber characteristics and connector losses, one entry per span.
    #[schemars(with = "Vec<serde_json::Value>")]
    pub spans: Vec<SpanParams>,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub current: Vec<EdfaConfig>,
    pub scope: Scope,
    pub cut_channels: BTreeSet<usize>,
}

impl EdfaOptRequest {
    /// Request for `link_id` filled from the twin's current view.
    pub fn from_twin(state: &NetworkState, link_id: &str, scope: Scope, cut_channels: BTreeSet<usize>) -> Result<Self, ToolboxError> {
        let link = state
            .network
            .link(link_id)
            .ok_or_else(|| ToolboxError::UnknownLink(link_id.to_string()))?;
        Ok(Self {
            link_ref: link.id.clone(),
            launch: None,
            span_count: link.spans.len(),
            spans: link.spans.clone(),
            current: state.link_amps(link),
            scope,
            cut_channels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OptStep {
    pub phase: u8,
    pub label: String,
    pub evaluations: usize,
    pub min_gsnr_db: f64,
    pub mean_gsnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EdfaOptResult {
    pub link_ref: String,
    pub scope: Scope,
    #[schemars(with = "Vec<serde_json::Value>")]
    pub proposed: Vec<EdfaConfig>,
    #[schemars(with = "serde_json::Value")]
    pub predicted: QotEstimate,
    pub input_min_gsnr_db: f64,
    pub min_gsnr_db: f64,
    /// Ids of the amplifiers the scope allowed to move.
    pub optimized_amps: Vec<String>,
    pub evaluations: usize,
    pub fell_back: bool,
    pub log: Vec<OptStep>,
}

impl EdfaOptResult {
    /// Ids of proposed configs whose settings differ from `current`.
    pub fn changed_amps(&self, current: &[EdfaConfig]) -> Vec<String> {
        self.proposed
            .iter()
            .zip(current)
            .filter(|(p, c)| !p.same_settings(c))
            .map(|(p, _)| p.id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub offset_range_db: f64,
    pub offset_step_db: f64,
    pub initial_step_db: f64,
    pub final_step_db: f64,
    /// Evaluation budget of the descent phase.
    pub max_evals: usize,
    pub execution: Execution,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            offset_range_db: 3.0,
            offset_step_db: 0.25,
            initial_step_db: 0.1,
            final_step_db: 0.025,
            max_evals: 200,
            execution: Execution::Parallel,
        }
    }
}

struct Eval {
    min: f64,
    mean: f64,
    qot: QotEstimate,
    trace: LinkTrace,
}

struct Problem<'a> {
    base: NetworkState,
    link: Link,
    add: PowerSpectrum,
    cuts: Vec<usize>,
    optimized: Vec<usize>,
    opts: &'a OptimizerOptions,
}

impl Problem<'_> {
    fn eval(&self, amps: &[EdfaConfig]) -> Result<Eval, ToolboxError> {
        let mut link = self.link.clone();
        link.amps = amps.to_vec();
        let mut st = self.base.clone();
        if let Some(l) = st.network.links.iter_mut().find(|l| l.id == link.id) {
            l.amps = amps.to_vec();
        }
        let trace = simulate_link_from(&st, &link, self.add.clone(), &SimOptions::default())?;
        let route = [link.from.clone(), link.to.clone()];
        let qot = qot_from_traces(&st, std::slice::from_ref(&trace), &link.id, &route, &self.cuts)?;
        Ok(Eval {
            min: qot.min_gsnr_db,
            mean: qot.mean_gsnr_db,
            qot,
            trace,
        })
    }

    fn eval_many(&self, cands: &[Vec<EdfaConfig>]) -> Result<Vec<Eval>, ToolboxError> {
        exec::map(self.opts.execution, cands, |c| self.eval(c)).into_iter().collect()
    }
}

fn shift_power(a: &mut EdfaConfig, delta: f64) {
    match a.target_pch_dbm.as_mut() {
        Some(t) => *t += delta,
        None => a.gain_db = (a.gain_db + delta).clamp(0.0, 40.0),
    }
}

fn band_only(s: &PowerSpectrum, a: &EdfaConfig) -> PowerSpectrum {
    let f = s.freqs_thz();
    let p = (0..s.len())
        .map(|i| {
            if f[i] >= a.f_min_thz - 1e-6 && f[i] <= a.f_max_thz + 1e-6 {
                s.power(i)
            } else {
                0.0
            }
        })
        .collect();
    s.with_powers(p)
}

/// Spectral slope a span adds across one amplifier's band (dB edge to edge).
fn span_tilt_db(trace: &LinkTrace, span: usize, amp: &EdfaConfig) -> Option<f64> {
    let st = trace.spans.get(span)?;
    if st.failed {
        return None;
    }
    let a = tilt_fit(&band_only(&st.fiber_in, amp)).ok()?;
    let b = tilt_fit(&band_only(&st.fiber_end, amp)).ok()?;
    Some((b.slope_db_per_thz - a.slope_db_per_thz) * (amp.f_max_thz - amp.f_min_thz))
}

fn step_log(phase: u8, label: impl Into<String>, evaluations: usize, e: &Eval) -> OptStep {
    OptStep {
        phase,
        label: label.into(),
        evaluations,
        min_gsnr_db: e.min,
        mean_gsnr_db: e.mean,
    }
}

fn setup<'a>(req: &EdfaOptRequest, twin: &NetworkState, scope: Scope, opts: &'a OptimizerOptions) -> Result<Problem<'a>, ToolboxError> {
    let link = twin
        .network
        .link(&req.link_ref)
        .ok_or_else(|| ToolboxError::UnknownLink(req.link_ref.clone()))?
        .clone();
    if req.span_count != link.spans.len() || req.spans.len() != link.spans.len() {
        return Err(ToolboxError::BadRequest(format!(
            "link {} has {} spans, request describes {}",
            link.id,
            link.spans.len(),
            req.span_count
        )));
    }
    let ids: Vec<&str> = link.amps.iter().map(|a| a.id.as_str()).collect();
    let got: Vec<&str> = req.current.iter().map(|a| a.id.as_str()).collect();
    if ids != got {
        return Err(ToolboxError::BadRequest(format!("amplifier list does not match link {}", link.id)));
    }
    for a in &req.current {
        a.validate()?;
    }
    let mut base = twin.clone();
    for a in &link.amps {
        base.edfa_overrides.remove(&a.id);
    }
    let mut link = link;
    link.spans = req.spans.clone();
    link.amps = req.current.clone();
    if let Some(l) = base.network.links.iter_mut().find(|l| l.id == link.id) {
        *l = link.clone();
    }
    let add = match &req.launch {
        Some(s) if s.len() == base.network.grid().len() => s.clone(),
        Some(_) => return Err(ToolboxError::BadRequest("launch spectrum is not on the network grid".into())),
        None => add_spectrum(&base, &link),
    };
    let lit: BTreeSet<usize> = add.lit_indices().into_iter().collect();
    let cuts: Vec<usize> = req.cut_channels.iter().copied().filter(|c| lit.contains(c)).collect();
    if cuts.is_empty() {
        return Err(ToolboxError::NoCut(link.id.clone()));
    }
    let optimized = (0..link.amps.len()).filter(|&i| scope.includes(link.amps[i].stage)).collect();
    Ok(Problem {
        base,
        link,
        add,
        cuts,
        optimized,
        opts,
    })
}

/// Phases one and two from `start`. Returns the configs, their evaluation and the log.
fn balance_and_tilt(p: &Problem, start: &[EdfaConfig], log: &mut Vec<OptStep>, evals: &mut usize) -> Result<(Vec<EdfaConfig>, Eval), ToolboxError> {
    let o = p.opts;
    let n = (o.offset_range_db / o.offset_step_db).round() as i64;
    let offsets: Vec<f64> = (-n..=n).map(|k| k as f64 * o.offset_step_db).collect();
    let cands: Vec<Vec<EdfaConfig>> = offsets
        .iter()
        .map(|off| {
            let mut c = start.to_vec();
            for &i in &p.optimized {
                shift_power(&mut c[i], *off);
            }
            c
        })
        .collect();
    let results = p.eval_many(&cands)?;
    *evals += results.len();
    // Offsets that lower the worst channel below the starting point are not eligible.
    let floor = results[n as usize].min;
    let mut best = n as usize;
    for (k, r) in results.iter().enumerate() {
        let b = &results[best];
        if r.min < floor {
            continue;
        }
        let better = r.mean > b.mean + IMPROVE_EPS_DB
            || ((r.mean - b.mean).abs() <= IMPROVE_EPS_DB && offsets[k].abs() < offsets[best].abs());
        if better {
            best = k;
        }
    }
    let mut results = results;
    let e1 = results.swap_remove(best);
    let c1 = cands[best].clone();
    log.push(step_log(1, format!("flat power offset {:+.2} dB", offsets[best]), *evals, &e1));

    let mut c2 = c1.clone();
    for &i in &p.optimized {
        let stage = c2[i].stage;
        if stage < p.link.spans.len() {
            if let Some(t) = span_tilt_db(&e1.trace, stage, &c2[i]) {
                c2[i].tilt_db = ((-t * 100.0).round() / 100.0).clamp(-MAX_TILT_DB, MAX_TILT_DB);
            }
        }
    }
    let e2 = p.eval(&c2)?;
    *evals += 1;
    if e2.min >= e1.min {
        log.push(step_log(2, "counter-SRS tilt applied", *evals, &e2));
        Ok((c2, e2))
    } else {
        log.push(step_log(2, "counter-SRS tilt discarded (worse worst-channel GSNR)", *evals, &e2));
        Ok((c1, e1))
    }
}

/// Phase three: coordinate descent on power and tilt of the optimized amplifiers.
fn descend(p: &Problem, mut cur: Vec<EdfaConfig>, mut e: Eval, log: &mut Vec<OptStep>, evals: &mut usize) -> Result<(Vec<EdfaConfig>, Eval), ToolboxError> {
    let o = p.opts;
    let mut used = 0usize;
    let mut step = o.initial_step_db;
    'outer: while step >= o.final_step_db - 1e-12 {
        loop {
            let mut improved = false;
            for &i in &p.optimized {
                for coord in 0..2 {
                    if used + 2 > o.max_evals {
                        break 'outer;
                    }
                    let cands: Vec<Vec<EdfaConfig>> = [step, -step]
                        .iter()
                        .map(|d| {
                            let mut c = cur.clone();
                            if coord == 0 {
                                shift_power(&mut c[i], *d);
                            } else {
                                c[i].tilt_db = (c[i].tilt_db + d).clamp(-MAX_TILT_DB, MAX_TILT_DB);
                            }
                            c
                        })
                        .collect();
                    let mut rs = p.eval_many(&cands)?;
                    used += 2;
                    *evals += 2;
                    let k = if rs[1].min > rs[0].min { 1 } else { 0 };
                    if rs[k].min > e.min + IMPROVE_EPS_DB {
                        cur = cands[k].clone();
                        e = rs.swap_remove(k);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        log.push(step_log(3, format!("descent at step {step:.3} dB"), *evals, &e));
        step /= 2.0;
    }
    log.push(step_log(3, format!("descent done, {used} evaluations"), *evals, &e));
    Ok((cur, e))
}

fn run(req: &EdfaOptRequest, twin: &NetworkState, scope: Scope, opts: &OptimizerOptions, warm: Option<&EdfaOptResult>) -> Result<EdfaOptResult, ToolboxError> {
    let p = setup(req, twin, scope, opts)?;
    let mut log = Vec::new();
    let mut evals = 0;
    let input = p.eval(&req.current)?;
    evals += 1;
    log.push(step_log(0, "input configuration", evals, &input));
    let (mut c, mut e) = balance_and_tilt(&p, &req.current, &mut log, &mut evals)?;
    if let Some(w) = warm.filter(|w| w.min_gsnr_db > e.min) {
        c = w.proposed.clone();
        e = p.eval(&c)?;
        evals += 1;
        log.push(step_log(3, "warm start from alternating_half result", evals, &e));
    }
    let (c, e) = descend(&p, c, e, &mut log, &mut evals)?;
    let input_min = input.min;
    let (proposed, best, fell_back) = if e.min >= input.min {
        (c, e, false)
    } else {
        log.push(step_log(3, "fallback to input configuration", evals, &input));
        (req.current.clone(), input, true)
    };
    for a in &proposed {
        a.validate()?;
    }
    Ok(EdfaOptResult {
        link_ref: req.link_ref.clone(),
        scope,
        optimized_amps: p.optimized.iter().map(|&i| p.link.amps[i].id.clone()).collect(),
        proposed,
        predicted: best.qot,
        input_min_gsnr_db: input_min,
        min_gsnr_db: best.min,
        evaluations: evals,
        fell_back,
        log,
    })
}

pub fn optimize_edfa(req: &EdfaOptRequest, twin: &NetworkState) -> Result<EdfaOptResult, ToolboxError> {
    optimize_edfa_with(req, twin, &OptimizerOptions::default())
}

/// Runs the three phases. With `Scope::All` the descent is warm-started from
/// the alternating-half optimum whenever that is better, so the full scope is
/// never worse than the half scope on the same instance.
pub fn optimize_edfa_with(req: &EdfaOptRequest, twin: &NetworkState, opts: &OptimizerOptions) -> Result<EdfaOptResult, ToolboxError> {
    match req.scope {
        Scope::AlternatingHalf => run(req, twin, Scope::AlternatingHalf, opts, None),
        Scope::All => {
            let half = run(req, twin, Scope::AlternatingHalf, opts, None)?;
            run(req, twin, Scope::All, opts, Some(&half))
        }
    }
}

/// Applies proposed settings to a copy of the twin.
pub fn apply_proposal(state: &NetworkState, proposed: &[EdfaConfig]) -> Result<NetworkState, ToolboxError> {
    let mut next = state.clone();
    for a in proposed {
        let base = state
            .network
            .amp(&a.id)
            .map(|(_, b)| b.clone())
            .ok_or_else(|| ToolboxError::BadRequest(format!("unknown amplifier {}", a.id)))?;
        next = next.with_override(base.with_settings_from(a))?;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{preset, Lightpath, Modulation};

    fn power_of(a: &EdfaConfig) -> f64 {
        a.target_pch_dbm.unwrap_or(a.gain_db)
    }

    fn state() -> NetworkState {
        let net = preset("system3").unwrap();
        let lps = vec![
            Lightpath {
                id: "cut".into(),
                route: vec!["B".into(), "Z".into()],
                channel_indices: [5, 30, 60, 85].into_iter().collect(),
                modulation: Modulation::Pcs16Qam,
                symbol_rate_gbaud: 91.6,
                source_node: "B".into(),
                filler: false,
            },
            Lightpath {
                id: "fill".into(),
                route: vec!["B".into(), "Z".into()],
                channel_indices: (0..96).filter(|c| ![5, 30, 60, 85].contains(c) && c % 3 != 0).collect(),
                modulation: Modulation::Pcs16Qam,
                symbol_rate_gbaud: 91.6,
                source_node: "B".into(),
                filler: true,
            },
        ];
        NetworkState::new(net, lps).unwrap()
    }

    fn quick() -> OptimizerOptions {
        OptimizerOptions {
            max_evals: 40,
            ..Default::default()
        }
    }

    fn req(st: &NetworkState, scope: Scope) -> EdfaOptRequest {
        EdfaOptRequest::from_twin(st, "B-Z", scope, [5, 30, 60, 85].into_iter().collect()).unwrap()
    }

    #[test]
    fn never_worse_and_in_bounds() {
        let st = state();
        let r = optimize_edfa_with(&req(&st, Scope::AlternatingHalf), &st, &quick()).unwrap();
        assert!(r.min_gsnr_db >= r.input_min_gsnr_db);
        assert!(r.proposed.iter().all(|a| a.validate().is_ok()));
        assert_eq!(r.log.first().unwrap().phase, 0);
        let phases: Vec<u8> = r.log.iter().map(|s| s.phase).collect();
        assert!(phases.windows(2).all(|w| w[0] <= w[1]), "{phases:?}");
    }

    #[test]
    fn half_scope_leaves_odd_stages_untouched() {
        let st = state();
        let q = req(&st, Scope::AlternatingHalf);
        let r = optimize_edfa_with(&q, &st, &quick()).unwrap();
        for (p, c) in r.proposed.iter().zip(&q.current) {
            if p.stage % 2 == 1 {
                assert_eq!(serde_json::to_string(p).unwrap(), serde_json::to_string(c).unwrap());
            }
        }
        assert!(r.optimized_amps.iter().all(|id| st.amp(id).unwrap().stage % 2 == 0));
    }

    #[test]
    fn all_scope_dominates_half() {
        let st = state();
        let half = optimize_edfa_with(&req(&st, Scope::AlternatingHalf), &st, &quick()).unwrap();
        let all = optimize_edfa_with(&req(&st, Scope::All), &st, &quick()).unwrap();
        assert!(all.min_gsnr_db >= half.min_gsnr_db - 1e-12);
    }

    #[test]
    fn optimum_is_nearly_fixed() {
        let st = state();
        let opts = OptimizerOptions {
            max_evals: 400,
            ..Default::default()
        };
        let first = optimize_edfa_with(&req(&st, Scope::AlternatingHalf), &st, &opts).unwrap();
        let tuned = apply_proposal(&st, &first.proposed).unwrap();
        let again = optimize_edfa_with(&req(&tuned, Scope::AlternatingHalf), &tuned, &opts).unwrap();
        assert!(again.min_gsnr_db >= again.input_min_gsnr_db);
        for (a, b) in again.proposed.iter().zip(&first.proposed) {
            assert!((power_of(a) - power_of(b)).abs() <= 0.025 + 1e-9, "{} {} {}", a.id, power_of(a), power_of(b));
            assert!((a.tilt_db - b.tilt_db).abs() <= 0.025 + 1e-9, "{} {} {}", a.id, a.tilt_db, b.tilt_db);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let st = state();
        let mut q = req(&st, Scope::All);
        q.cut_channels = [1, 2].into_iter().collect();
        q.cut_channels.retain(|c| c % 3 == 0);
        q.cut_channels.insert(3);
        assert!(matches!(optimize_edfa_with(&q, &st, &quick()), Err(ToolboxError::NoCut(_))));
        let mut q = req(&st, Scope::All);
        q.span_count = 2;
        assert!(matches!(optimize_edfa_with(&q, &st, &quick()), Err(ToolboxError::BadRequest(_))));
        let mut q = req(&st, Scope::All);
        q.link_ref = "Q-R".into();
        assert!(matches!(optimize_edfa_with(&q, &st, &quick()), Err(ToolboxError::UnknownLink(_))));
    }
}
