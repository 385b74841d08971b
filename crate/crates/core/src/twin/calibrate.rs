//! Refinement of connector losses, Raman strength and amplifier ripple from telemetry.
//!
//! The fit splits into independent blocks. With OCM telemetry each span block
//! holds its two connector losses and its Raman scale, and each amplifier stage
//! block holds that stage's ripple; every block only sees measurements taken
//! right around it, so blocks are solved concurrently. With total-power
//! telemetry only, each span block fits its connector losses against amplifier
//! readings, borrowing spectral shapes from the twin's own prediction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::amplifier::{apply_stage, EdfaConfig};
use crate::exec::{self, Execution};
use crate::fiber::{propagate, PropagationOptions, SpanParams};
use crate::spectral::{from_dbm, lin_to_db, PowerSpectrum};
use crate::topology::{Link, NetworkState};

use super::lm::{levenberg_marquardt, LmProblem};
use super::sim::{simulate_network, LinkTrace, SimOptions};
use super::telemetry::{Location, Payload, Port, Tap, TelemetryRecord};
use super::TwinError;

const LOSS_BOUNDS: (f64, f64) = (0.0, 10.0);
const RAMAN_BOUNDS: (f64, f64) = (0.2, 5.0);
const RIPPLE_BOUNDS: (f64, f64) = (-3.0, 3.0);
const FD_LOSS_DB: f64 = 0.01;
const FD_RAMAN: f64 = 0.01;
const FD_RIPPLE_DB: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetryMode {
    /// OCM profiles when any are present, else amplifier totals.
    #[default]
    Auto,
    Ocm,
    TotalPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMask {
    /// Spans to refine; `None` means all.
    pub spans: Option<BTreeSet<String>>,
    /// Amplifiers whose ripple is refined; `None` means all.
    pub amps: Option<BTreeSet<String>>,
    pub connector_loss: bool,
    pub raman: bool,
    pub ripple: bool,
}

impl Default for ParamMask {
    fn default() -> Self {
        Self {
            spans: None,
            amps: None,
            connector_loss: true,
            raman: true,
            ripple: true,
        }
    }
}

impl ParamMask {
    fn span(&self, id: &str) -> bool {
        self.spans.as_ref().is_none_or(|s| s.contains(id))
    }

    fn amp(&self, id: &str) -> bool {
        self.ripple && self.amps.as_ref().is_none_or(|s| s.contains(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub max_iters: usize,
    pub lambda_reg: f64,
    pub param_mask: ParamMask,
    pub mode: TelemetryMode,
    pub execution: Execution,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            lambda_reg: 1e-2,
            param_mask: ParamMask::default(),
            mode: TelemetryMode::Auto,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRefinement {
    pub span_id: String,
    pub input_connector_loss_db: f64,
    pub output_connector_loss_db: f64,
    pub raman_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpRefinement {
    pub amp_id: String,
    pub ripple_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mode: TelemetryMode,
    pub spans: Vec<SpanRefinement>,
    pub amps: Vec<AmpRefinement>,
    /// Total objective after each iteration, summed over blocks.
    pub objective_history: Vec<f64>,
    /// Mean over measurement records of the per-record mean squared dB error.
    pub initial_mse_db2: f64,
    pub residual_mse_db2: f64,
    pub warnings: Vec<String>,
}

impl CalibrationReport {
    /// Writes the refined values into a copy of `state`.
    pub fn apply(&self, state: &NetworkState) -> NetworkState {
        let mut next = state.clone();
        for link in &mut next.network.links {
            for span in &mut link.spans {
                if let Some(r) = self.spans.iter().find(|r| r.span_id == span.id) {
                    span.input_connector_loss_db = r.input_connector_loss_db;
                    span.output_connector_loss_db = r.output_connector_loss_db;
                    span.raman_scale = r.raman_scale;
                }
            }
            for amp in &mut link.amps {
                if let Some(r) = self.amps.iter().find(|r| r.amp_id == amp.id) {
                    amp.ripple_db = r.ripple_db.clone();
                }
            }
        }
        for (id, amp) in &mut next.edfa_overrides {
            if let Some(r) = self.amps.iter().find(|r| &r.amp_id == id) {
                amp.ripple_db = r.ripple_db.clone();
            }
        }
        next
    }
}

struct Snapshot<'a> {
    records: BTreeMap<String, &'a TelemetryRecord>,
}

impl Snapshot<'_> {
    fn spectrum(&self, loc: &Location) -> Option<&PowerSpectrum> {
        match self.records.get(&format!("Ocm:{}", loc.key())).map(|r| &r.payload) {
            Some(Payload::Spectrum(s)) => Some(s),
            _ => None,
        }
    }

    fn total(&self, amp: &str, port: Port) -> Option<f64> {
        let key = format!("AmpTotalPower:{}", Location::amp(amp, port).key());
        match self.records.get(&key).map(|r| &r.payload) {
            Some(Payload::TotalDbm(p)) => Some(*p),
            _ => None,
        }
    }
}

fn snapshots(telemetry: &[TelemetryRecord]) -> Vec<Snapshot<'_>> {
    let mut by_t: BTreeMap<u64, BTreeMap<String, &TelemetryRecord>> = BTreeMap::new();
    for r in telemetry {
        by_t.entry(r.t).or_default().insert(r.stream(), r);
    }
    by_t.into_values().map(|records| Snapshot { records }).collect()
}

/// Lit-channel power sum of one amplifier's band, in dBm.
fn band_total_dbm(s: &PowerSpectrum, amp: &EdfaConfig) -> Option<f64> {
    let f = s.freqs_thz();
    let mw: f64 = (0..s.len())
        .filter(|&i| s.is_lit(i) && f[i] >= amp.f_min_thz - 1e-6 && f[i] <= amp.f_max_thz + 1e-6)
        .map(|i| s.power(i))
        .sum();
    (mw > 0.0).then(|| lin_to_db(mw))
}

/// Mean-removed dB shape of the lit channels of one band.
fn band_shape(s: &PowerSpectrum, amp: &EdfaConfig, lit: &[usize]) -> Vec<f64> {
    let f = s.freqs_thz();
    let v: Vec<f64> = lit
        .iter()
        .filter(|&&i| f[i] >= amp.f_min_thz - 1e-6 && f[i] <= amp.f_max_thz + 1e-6)
        .map(|&i| lin_to_db(s.power(i).max(1e-30)))
        .collect();
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.into_iter().map(|x| x - m).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Param {
    InLoss,
    OutLoss,
    Raman,
    Ripple(usize, usize),
}

struct BlockSpec<'a> {
    name: String,
    params: Vec<Param>,
    x0: Vec<f64>,
    /// Residual vectors per measurement record.
    data: Box<dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>, TwinError> + Sync + 'a>,
    warnings: Vec<String>,
}

struct BlockOutcome {
    name: String,
    params: Vec<Param>,
    x: Vec<f64>,
    history: Vec<f64>,
    initial: Vec<f64>,
    last: Vec<f64>,
    warnings: Vec<String>,
}

fn record_mse(rs: &[Vec<f64>]) -> Vec<f64> {
    rs.iter()
        .filter(|r| !r.is_empty())
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64)
        .collect()
}

fn family(p: Param) -> u8 {
    match p {
        Param::InLoss | Param::OutLoss => 0,
        Param::Raman => 1,
        Param::Ripple(..) => 2,
    }
}

fn solve_block(spec: &BlockSpec, lambda: f64, max_iters: usize) -> Result<BlockOutcome, TwinError> {
    let mut counts = [0usize; 3];
    for p in &spec.params {
        counts[family(*p) as usize] += 1;
    }
    let weights: Vec<f64> = spec
        .params
        .iter()
        .map(|p| (lambda / counts[family(*p) as usize] as f64).sqrt())
        .collect();
    let residual = |x: &[f64]| -> Result<Vec<f64>, TwinError> {
        let recs = (spec.data)(x)?;
        let mut out = Vec::new();
        for r in recs.iter().filter(|r| !r.is_empty()) {
            let s = 1.0 / (r.len() as f64).sqrt();
            out.extend(r.iter().map(|v| v * s));
        }
        for (j, w) in weights.iter().enumerate() {
            out.push(w * (x[j] - spec.x0[j]));
        }
        Ok(out)
    };
    let bounds = |p: &Param| match p {
        Param::InLoss | Param::OutLoss => LOSS_BOUNDS,
        Param::Raman => RAMAN_BOUNDS,
        Param::Ripple(..) => RIPPLE_BOUNDS,
    };
    let problem = LmProblem {
        residual: &residual,
        fd_step: spec
            .params
            .iter()
            .map(|p| match p {
                Param::Raman => FD_RAMAN,
                Param::Ripple(..) => FD_RIPPLE_DB,
                _ => FD_LOSS_DB,
            })
            .collect(),
        lower: spec.params.iter().map(|p| bounds(p).0).collect(),
        upper: spec.params.iter().map(|p| bounds(p).1).collect(),
    };
    let initial = record_mse(&(spec.data)(&spec.x0)?);
    let out = levenberg_marquardt(&problem, &spec.x0, max_iters, Execution::Sequential)?;
    let last = record_mse(&(spec.data)(&out.x)?);
    Ok(BlockOutcome {
        name: spec.name.clone(),
        params: spec.params.clone(),
        x: out.x,
        history: out.history,
        initial,
        last,
        warnings: spec.warnings.clone(),
    })
}

fn fiber_only(span: &SpanParams, raman: f64) -> SpanParams {
    SpanParams {
        input_connector_loss_db: 0.0,
        output_connector_loss_db: 0.0,
        raman_scale: raman,
        ..span.clone()
    }
}

fn span_params(span: &SpanParams, mask: &ParamMask) -> (Vec<Param>, Vec<f64>) {
    let (mut ps, mut xs) = (Vec::new(), Vec::new());
    if mask.connector_loss {
        ps.extend([Param::InLoss, Param::OutLoss]);
        xs.extend([span.input_connector_loss_db, span.output_connector_loss_db]);
    }
    if mask.raman {
        ps.push(Param::Raman);
        xs.push(span.raman_scale);
    }
    (ps, xs)
}

fn unpack(span: &SpanParams, ps: &[Param], x: &[f64]) -> (f64, f64, f64) {
    let (mut i, mut o, mut r) = (
        span.input_connector_loss_db,
        span.output_connector_loss_db,
        span.raman_scale,
    );
    for (p, v) in ps.iter().zip(x) {
        match p {
            Param::InLoss => i = *v,
            Param::OutLoss => o = *v,
            Param::Raman => r = *v,
            Param::Ripple(..) => {}
        }
    }
    (i, o, r)
}

/// Span block fed by OCM profiles at both ends plus adjacent amplifier totals.
fn ocm_span_block<'a>(
    state: &'a NetworkState,
    link: &'a Link,
    k: usize,
    snaps: &'a [Snapshot<'a>],
    mask: &ParamMask,
) -> Option<BlockSpec<'a>> {
    let span = &link.spans[k];
    if !mask.span(&span.id) {
        return None;
    }
    let (params, x0) = span_params(span, mask);
    if params.is_empty() {
        return None;
    }
    let amps = state.link_amps(link);
    let before: Vec<EdfaConfig> = amps.iter().filter(|a| a.stage == k).cloned().collect();
    let after: Vec<EdfaConfig> = amps.iter().filter(|a| a.stage == k + 1).cloned().collect();
    let start = Location::span(&span.id, Tap::Start);
    let end = Location::span(&span.id, Tap::End);
    let used: Vec<&Snapshot> = snaps
        .iter()
        .filter(|s| s.spectrum(&start).is_some() || s.spectrum(&end).is_some())
        .collect();
    if used.is_empty() {
        return None;
    }
    let mut warnings = Vec::new();
    if mask.raman && !used.iter().any(|s| s.spectrum(&start).is_some() && s.spectrum(&end).is_some()) {
        warnings.push(format!("{}: raman_scale needs OCM at both ends; held at prior", span.id));
    }
    if mask.raman
        && used
            .iter()
            .filter_map(|s| s.spectrum(&start))
            .all(|s| s.lit_indices().len() < 2)
    {
        warnings.push(format!("{}: fewer than two lit channels, Raman tilt is unobservable", span.id));
    }
    let span = span.clone();
    let ps = params.clone();
    let data = move |x: &[f64]| -> Result<Vec<Vec<f64>>, TwinError> {
        let (li, lo, raman) = unpack(&span, &ps, x);
        let fiber = fiber_only(&span, raman);
        let mut recs = Vec::new();
        for s in &used {
            let z0 = s.spectrum(&start);
            let zl = s.spectrum(&end);
            if let Some(z0) = z0 {
                for a in &before {
                    if let (Some(meas), Some(p)) = (s.total(&a.id, Port::Out), band_total_dbm(z0, a)) {
                        recs.push(vec![p + li - meas]);
                    }
                }
            }
            if let (Some(z0), Some(zl)) = (z0, zl) {
                let lit: Vec<usize> = z0.lit_indices().into_iter().filter(|&i| zl.is_lit(i)).collect();
                if !lit.is_empty() {
                    let out = propagate(&fiber, z0, &PropagationOptions::default())?;
                    recs.push(
                        lit.iter()
                            .map(|&i| lin_to_db(out.fiber_end.power(i).max(1e-30)) - lin_to_db(zl.power(i)))
                            .collect(),
                    );
                }
            }
            if let Some(zl) = zl {
                for a in &after {
                    if let (Some(meas), Some(p)) = (s.total(&a.id, Port::In), band_total_dbm(zl, a)) {
                        recs.push(vec![p - lo - meas]);
                    }
                }
            }
        }
        Ok(recs)
    };
    Some(BlockSpec {
        name: link.spans[k].id.clone(),
        params,
        x0,
        data: Box::new(data),
        warnings,
    })
}

/// Ripple block of one amplifier stage: output shape against input shape.
fn ripple_block<'a>(
    state: &'a NetworkState,
    link: &'a Link,
    stage: usize,
    snaps: &'a [Snapshot<'a>],
    mask: &ParamMask,
) -> Option<BlockSpec<'a>> {
    let amps: Vec<EdfaConfig> = state
        .link_amps(link)
        .into_iter()
        .filter(|a| a.stage == stage)
        .collect();
    let mut params = Vec::new();
    let mut x0 = Vec::new();
    for (ai, a) in amps.iter().enumerate() {
        if mask.amp(&a.id) {
            for (ni, r) in a.ripple_db.iter().enumerate() {
                params.push(Param::Ripple(ai, ni));
                x0.push(*r);
            }
        }
    }
    if params.is_empty() {
        return None;
    }
    let n = link.spans.len();
    let input_loc = (stage > 0).then(|| Location::span(&link.spans[stage - 1].id, Tap::End));
    let output_loc = if stage < n {
        Location::span(&link.spans[stage].id, Tap::Start)
    } else {
        Location::plain(&link.id)
    };
    let add_mw = from_dbm(link.add_power_dbm);
    let pairs: Vec<(PowerSpectrum, &PowerSpectrum)> = snaps
        .iter()
        .filter_map(|s| {
            let out = s.spectrum(&output_loc)?;
            let input = match &input_loc {
                Some(loc) => s.spectrum(loc)?.clone(),
                None => {
                    let mut add = out.clone();
                    for i in out.lit_indices() {
                        add.set(i, add_mw, out.occupancy()[i]);
                    }
                    add
                }
            };
            Some((input, out))
        })
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let ps = params.clone();
    let data = move |x: &[f64]| -> Result<Vec<Vec<f64>>, TwinError> {
        let mut cfg = amps.clone();
        for (p, v) in ps.iter().zip(x) {
            if let Param::Ripple(ai, ni) = p {
                cfg[*ai].ripple_db[*ni] = *v;
            }
        }
        for a in cfg.iter_mut() {
            if !a.ripple_db.is_empty() {
                let m = a.ripple_db.iter().sum::<f64>() / a.ripple_db.len() as f64;
                a.ripple_db.iter_mut().for_each(|r| *r -= m);
            }
        }
        let refs: Vec<&EdfaConfig> = cfg.iter().collect();
        let mut recs = Vec::new();
        for (input, meas) in &pairs {
            let pred = apply_stage(&refs, input)?.output;
            let lit: Vec<usize> = meas.lit_indices().into_iter().filter(|&i| pred.is_lit(i)).collect();
            for a in &cfg {
                let pm = band_shape(&pred, a, &lit);
                let mm = band_shape(meas, a, &lit);
                if pm.len() > 1 {
                    recs.push(pm.iter().zip(&mm).map(|(p, m)| p - m).collect());
                }
            }
        }
        Ok(recs)
    };
    Some(BlockSpec {
        name: format!("{}:{stage}", link.id),
        params,
        x0,
        data: Box::new(data),
        warnings: Vec::new(),
    })
}

/// Connector-loss block from amplifier totals only.
fn coarse_span_block<'a>(
    state: &'a NetworkState,
    link: &'a Link,
    trace: &'a LinkTrace,
    k: usize,
    snaps: &'a [Snapshot<'a>],
    mask: &ParamMask,
) -> Option<BlockSpec<'a>> {
    let span = &link.spans[k];
    if !mask.span(&span.id) || !mask.connector_loss {
        return None;
    }
    let amps = state.link_amps(link);
    let before: Vec<EdfaConfig> = amps.iter().filter(|a| a.stage == k).cloned().collect();
    let after: Vec<EdfaConfig> = amps.iter().filter(|a| a.stage == k + 1).cloned().collect();
    let launch_shape = if k == 0 && !link.has_booster() {
        trace.add.clone()
    } else {
        trace.stage(k)?.output.clone()
    };
    let used: Vec<(Vec<f64>, Vec<f64>)> = snaps
        .iter()
        .filter_map(|s| {
            let outs: Option<Vec<f64>> = before.iter().map(|a| s.total(&a.id, Port::Out)).collect();
            let ins: Option<Vec<f64>> = after.iter().map(|a| s.total(&a.id, Port::In)).collect();
            Some((outs?, ins?))
        })
        .collect();
    if used.is_empty() || launch_shape.lit_indices().is_empty() {
        return None;
    }
    let params = vec![Param::InLoss, Param::OutLoss];
    let x0 = vec![span.input_connector_loss_db, span.output_connector_loss_db];
    let warnings = vec![format!(
        "{}: total-power telemetry only constrains the sum of input and output connector loss",
        span.id
    )];
    let span = span.clone();
    let data = move |x: &[f64]| -> Result<Vec<Vec<f64>>, TwinError> {
        let fiber = fiber_only(&span, span.raman_scale);
        let mut recs = Vec::new();
        for (outs, ins) in &used {
            let mut launch = launch_shape.clone();
            for (a, meas) in before.iter().zip(outs) {
                if let Some(pred) = band_total_dbm(&launch_shape, a) {
                    let f = launch.freqs_thz().to_vec();
                    let scale = from_dbm(meas - pred - x[0]);
                    let p: Vec<f64> = (0..launch.len())
                        .map(|i| {
                            let inb = f[i] >= a.f_min_thz - 1e-6 && f[i] <= a.f_max_thz + 1e-6;
                            launch.power(i) * if inb { scale } else { 1.0 }
                        })
                        .collect();
                    launch = launch.with_powers(p);
                }
            }
            if launch.lit_indices().is_empty() {
                continue;
            }
            let out = propagate(&fiber, &launch, &PropagationOptions::default())?;
            for (a, meas) in after.iter().zip(ins) {
                if let Some(p) = band_total_dbm(&out.fiber_end, a) {
                    recs.push(vec![p - x[1] - meas]);
                }
            }
        }
        Ok(recs)
    };
    Some(BlockSpec {
        name: link.spans[k].id.clone(),
        params,
        x0,
        data: Box::new(data),
        warnings,
    })
}

/// Fits the twin's physical parameters to telemetry. Pure: `state` is not modified;
/// apply the result with [`CalibrationReport::apply`].
pub fn calibrate(
    state: &NetworkState,
    telemetry: &[TelemetryRecord],
    options: &CalibrationOptions,
) -> Result<CalibrationReport, TwinError> {
    let snaps = snapshots(telemetry);
    let has_ocm = telemetry.iter().any(|r| matches!(r.payload, Payload::Spectrum(_)));
    let mode = match options.mode {
        TelemetryMode::Auto if has_ocm => TelemetryMode::Ocm,
        TelemetryMode::Auto => TelemetryMode::TotalPower,
        m => m,
    };
    let mask = &options.param_mask;
    let traces;
    let mut blocks = Vec::new();
    match mode {
        TelemetryMode::TotalPower => {
            traces = simulate_network(state, &SimOptions::default(), options.execution)?;
            for (link, trace) in state.network.links.iter().zip(&traces) {
                for k in 0..link.spans.len() {
                    blocks.extend(coarse_span_block(state, link, trace, k, &snaps, mask));
                }
            }
        }
        _ => {
            for link in &state.network.links {
                for k in 0..link.spans.len() {
                    blocks.extend(ocm_span_block(state, link, k, &snaps, mask));
                }
                for stage in link.stages() {
                    blocks.extend(ripple_block(state, link, stage, &snaps, mask));
                }
            }
        }
    }
    if blocks.is_empty() {
        return Err(TwinError::NoTelemetry);
    }
    let outcomes: Vec<BlockOutcome> = exec::map(options.execution, &blocks, |b| {
        solve_block(b, options.lambda_reg, options.max_iters)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let mut spans = Vec::new();
    let mut amp_ripple: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for o in &outcomes {
        if o.params.iter().any(|p| !matches!(p, Param::Ripple(..))) {
            let (_, span) = state
                .network
                .links
                .iter()
                .flat_map(|l| l.spans.iter().map(move |s| (l, s)))
                .find(|(_, s)| s.id == o.name)
                .expect("span blocks are named after their span");
            let (i, out, r) = unpack(span, &o.params, &o.x);
            spans.push(SpanRefinement {
                span_id: span.id.clone(),
                input_connector_loss_db: i,
                output_connector_loss_db: out,
                raman_scale: r,
            });
        } else {
            let (link_id, stage) = o.name.rsplit_once(':').expect("stage blocks are named link:stage");
            let stage: usize = stage.parse().expect("numeric stage");
            let link = state.network.link(link_id).expect("block link exists");
            let amps: Vec<EdfaConfig> = state
                .link_amps(link)
                .into_iter()
                .filter(|a| a.stage == stage)
                .collect();
            for (p, v) in o.params.iter().zip(&o.x) {
                if let Param::Ripple(ai, ni) = p {
                    amp_ripple
                        .entry(amps[*ai].id.clone())
                        .or_insert_with(|| amps[*ai].ripple_db.clone())[*ni] = *v;
                }
            }
        }
    }
    let amps = amp_ripple
        .into_iter()
        .map(|(amp_id, mut r)| {
            let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
            r.iter_mut().for_each(|v| *v -= m);
            AmpRefinement { amp_id, ripple_db: r }
        })
        .collect();

    let iters = outcomes.iter().map(|o| o.history.len()).max().unwrap_or(1);
    let objective_history = (0..iters)
        .map(|k| outcomes.iter().map(|o| o.history[k.min(o.history.len() - 1)]).sum())
        .collect();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let initial_mse_db2 = mean(outcomes.iter().flat_map(|o| o.initial.clone()).collect());
    let residual_mse_db2 = mean(outcomes.iter().flat_map(|o| o.last.clone()).collect());
    let warnings = outcomes.iter().flat_map(|o| o.warnings.clone()).collect();
    Ok(CalibrationReport {
        mode,
        spans,
        amps,
        objective_history,
        initial_mse_db2,
        residual_mse_db2,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{make_plant, NoiseSpec, PerturbationSpec};
    use crate::topology::{preset, Lightpath, Modulation};

    fn line_state() -> NetworkState {
        let net = preset("system3").unwrap();
        let lps = (0..net.grid().len())
            .map(|c| Lightpath {
                id: format!("ch{c}"),
                route: vec!["B".into(), "Z".into()],
                channel_indices: BTreeSet::from([c]),
                modulation: Modulation::Pcs16Qam,
                symbol_rate_gbaud: 91.6,
                source_node: "B".into(),
                filler: false,
            })
            .collect();
        NetworkState::new(net, lps).unwrap()
    }

    fn telemetry_of(truth: &NetworkState, with_ocm: bool) -> Vec<TelemetryRecord> {
        let plant = make_plant(truth, &PerturbationSpec::zero(), NoiseSpec::zero(), 0).unwrap();
        plant.snapshot(0, with_ocm).unwrap()
    }

    fn edit_span(state: &NetworkState, id: &str, f: impl Fn(&mut SpanParams)) -> NetworkState {
        let mut s = state.clone();
        for link in &mut s.network.links {
            for span in &mut link.spans {
                if span.id == id {
                    f(span);
                }
            }
        }
        s
    }

    fn only(id: &str) -> CalibrationOptions {
        CalibrationOptions {
            param_mask: ParamMask {
                spans: Some(BTreeSet::from([id.to_string()])),
                amps: Some(BTreeSet::new()),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn refined<'a>(r: &'a CalibrationReport, id: &str) -> &'a SpanRefinement {
        r.spans.iter().find(|s| s.span_id == id).unwrap()
    }

    #[test]
    fn nominal_telemetry_is_a_fixed_point() {
        let st = line_state();
        let tele = telemetry_of(&st, true);
        let r = calibrate(&st, &tele, &CalibrationOptions::default()).unwrap();
        assert!(r.residual_mse_db2 <= 1e-10, "{}", r.residual_mse_db2);
        for s in &r.spans {
            assert!((s.input_connector_loss_db - 0.5).abs() < 1e-6);
            assert!((s.output_connector_loss_db - 0.5).abs() < 1e-6);
            assert!((s.raman_scale - 1.0).abs() < 1e-6);
        }
        for a in &r.amps {
            assert!(a.ripple_db.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn recovers_connector_loss() {
        let st = line_state();
        let truth = edit_span(&st, "B-Z:2", |s| s.input_connector_loss_db += 1.5);
        let r = calibrate(&st, &telemetry_of(&truth, true), &only("B-Z:2")).unwrap();
        let s = refined(&r, "B-Z:2");
        assert!((s.input_connector_loss_db - 2.0).abs() <= 0.1, "{s:?}");
        assert!((s.output_connector_loss_db - 0.5).abs() <= 0.1, "{s:?}");
    }

    #[test]
    fn recovers_raman_scale() {
        let st = line_state();
        let truth = edit_span(&st, "B-Z:3", |s| s.raman_scale = 1.3);
        let r = calibrate(&st, &telemetry_of(&truth, true), &only("B-Z:3")).unwrap();
        let s = refined(&r, "B-Z:3");
        assert!((s.raman_scale - 1.3).abs() <= 0.05, "{s:?}");
    }

    #[test]
    fn masked_parameters_stay_nominal() {
        let st = line_state();
        let truth = edit_span(&st, "B-Z:1", |s| {
            s.input_connector_loss_db += 1.0;
            s.raman_scale = 1.2;
        });
        let mut opts = only("B-Z:1");
        opts.param_mask.raman = false;
        let r = calibrate(&st, &telemetry_of(&truth, true), &opts).unwrap();
        let s = refined(&r, "B-Z:1");
        assert_eq!(s.raman_scale, 1.0);
        assert!(r.spans.iter().all(|s| s.span_id == "B-Z:1"));
        assert!(r.amps.is_empty());
        let applied = r.apply(&st);
        assert_eq!(applied.network.link("A-B"), st.network.link("A-B"));
    }

    #[test]
    fn objective_never_increases() {
        let st = line_state();
        let plant = make_plant(&st, &PerturbationSpec::default(), NoiseSpec::default(), 11).unwrap();
        let tele = plant.snapshot(0, true).unwrap();
        let r = calibrate(&st, &tele, &CalibrationOptions::default()).unwrap();
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.objective_history);
        assert!(r.residual_mse_db2 < r.initial_mse_db2);
    }

    #[test]
    fn total_power_mode_moves_connectors_only() {
        let st = line_state();
        let truth = edit_span(&st, "B-Z:4", |s| s.output_connector_loss_db += 1.0);
        let r = calibrate(&st, &telemetry_of(&truth, false), &only("B-Z:4")).unwrap();
        assert_eq!(r.mode, TelemetryMode::TotalPower);
        let s = refined(&r, "B-Z:4");
        assert!((s.input_connector_loss_db + s.output_connector_loss_db - 2.0).abs() < 0.1, "{s:?}");
        assert_eq!(s.raman_scale, 1.0);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn no_telemetry_is_an_error() {
        assert_eq!(
            calibrate(&line_state(), &[], &CalibrationOptions::default()),
            Err(TwinError::NoTelemetry)
        );
    }
}
