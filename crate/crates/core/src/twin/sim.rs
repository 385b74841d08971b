//! Forward model of one link: ROADM add, booster, spans and line amplifiers.
//!
//! The same walk drives both the twin's predictions and the synthetic plant.

use serde::{Deserialize, Serialize};

use crate::amplifier::{apply_stage, REFERENCE_BANDWIDTH_GHZ};
use crate::exec::{self, Execution};
use crate::fiber::{nli_for_span, propagate, PropagationOptions};
use crate::spectral::{db_to_lin, from_dbm, PowerSpectrum};
use crate::topology::{Link, NetworkState};

use super::TwinError;

/// Total-power detectors never read below this level.
pub const DETECTOR_FLOOR_DBM: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub step_km: f64,
    pub srs: bool,
    pub nli: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            step_km: 0.1,
            srs: true,
            nli: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Ase,
    Nli,
}

/// One element's contribution to the inverse GSNR of every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTerm {
    pub link: String,
    /// Span or amplifier-stage id.
    pub element: String,
    pub kind: NoiseKind,
    pub inv_snr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanTrace {
    pub span_id: String,
    pub failed: bool,
    /// Before the input connector.
    pub input: PowerSpectrum,
    /// In-fiber at z = 0 (after the input connector).
    pub fiber_in: PowerSpectrum,
    /// In-fiber at z = length (before the output connector).
    pub fiber_end: PowerSpectrum,
    pub output: PowerSpectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub input: PowerSpectrum,
    pub output: PowerSpectrum,
    /// ASE generated here, per channel in the reference bandwidth (mW).
    pub ase_mw: Vec<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkTrace {
    pub link_id: String,
    pub add: PowerSpectrum,
    pub stages: Vec<StageTrace>,
    pub spans: Vec<SpanTrace>,
    pub received: PowerSpectrum,
    pub terms: Vec<NoiseTerm>,
}

impl LinkTrace {
    pub fn stage(&self, stage: usize) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// End-to-end inverse GSNR of the link, per channel.
    pub fn inv_snr(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.received.len()];
        for t in &self.terms {
            for (a, v) in acc.iter_mut().zip(&t.inv_snr) {
                *a += v;
            }
        }
        acc
    }
}

/// Per-channel symbol bandwidth (THz): the owning lightpath's rate, else the grid's.
pub fn symbol_bandwidths(state: &NetworkState, link: &Link) -> Vec<f64> {
    let load = state.link_load(link);
    state
        .network
        .grid()
        .channels()
        .iter()
        .map(|ch| {
            load.get(&ch.index)
                .and_then(|(_, id)| state.lightpath(id))
                .map_or(ch.symbol_bw_ghz, |lp| lp.symbol_rate_gbaud)
                * 1e-3
        })
        .collect()
}

/// Spectrum handed to the link by its source ROADM.
pub fn add_spectrum(state: &NetworkState, link: &Link) -> PowerSpectrum {
    let mut s = PowerSpectrum::dark(state.network.grid());
    let p = from_dbm(link.add_power_dbm);
    for (ch, (occ, _)) in state.link_load(link) {
        s.set(ch, p, occ);
    }
    s
}

fn ratio_terms(noise: &[f64], signal: &PowerSpectrum) -> Vec<f64> {
    (0..signal.len())
        .map(|i| {
            if signal.is_lit(i) {
                noise[i] / signal.power(i)
            } else {
                0.0
            }
        })
        .collect()
}

/// Walks one link with the given add spectrum.
pub fn simulate_link_from(
    state: &NetworkState,
    link: &Link,
    add: PowerSpectrum,
    opts: &SimOptions,
) -> Result<LinkTrace, TwinError> {
    let amps = state.link_amps(link);
    let bw = symbol_bandwidths(state, link);
    let mut stages = Vec::new();
    let mut spans = Vec::new();
    let mut terms = Vec::new();

    let mut run_stage = |stage: usize, input: PowerSpectrum, terms: &mut Vec<NoiseTerm>| -> Result<PowerSpectrum, TwinError> {
        let at: Vec<_> = amps.iter().filter(|a| a.stage == stage).collect();
        let out = apply_stage(&at, &input)?;
        terms.push(NoiseTerm {
            link: link.id.clone(),
            element: format!("{}:{stage}", link.id),
            kind: NoiseKind::Ase,
            inv_snr: ratio_terms(&out.ase, &out.output),
        });
        stages.push(StageTrace {
            stage,
            input,
            output: out.output.clone(),
            ase_mw: out.ase,
            clamped: out.clamped,
        });
        Ok(out.output)
    };

    let mut cur = if link.has_booster() {
        run_stage(0, add.clone(), &mut terms)?
    } else {
        add.clone()
    };

    let prop_opts = PropagationOptions {
        step_km: opts.step_km,
        sample_points: Vec::new(),
        srs_enabled: opts.srs,
    };
    for (k, span) in link.spans.iter().enumerate() {
        let failed = state.failed_spans.contains(&span.id);
        let trace = if failed || cur.lit_indices().is_empty() {
            let dark = PowerSpectrum::dark(state.network.grid());
            SpanTrace {
                span_id: span.id.clone(),
                failed,
                input: cur.clone(),
                fiber_in: cur.scaled(db_to_lin(-span.input_connector_loss_db)),
                fiber_end: dark.clone(),
                output: dark,
            }
        } else {
            let prop = propagate(span, &cur, &prop_opts)?;
            if opts.nli {
                let nli = nli_for_span(span, &cur, &prop, &bw)?;
                let nli_ref: Vec<f64> = (0..bw.len())
                    .map(|i| {
                        if bw[i] > 0.0 {
                            nli.nli_mw[i] * REFERENCE_BANDWIDTH_GHZ * 1e-3 / bw[i]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                terms.push(NoiseTerm {
                    link: link.id.clone(),
                    element: span.id.clone(),
                    kind: NoiseKind::Nli,
                    inv_snr: ratio_terms(&nli_ref, &prop.output),
                });
            }
            SpanTrace {
                span_id: span.id.clone(),
                failed,
                input: cur.clone(),
                fiber_in: prop.launch.clone(),
                fiber_end: prop.fiber_end.clone(),
                output: prop.output.clone(),
            }
        };
        cur = trace.output.clone();
        spans.push(trace);
        cur = run_stage(k + 1, cur, &mut terms)?;
    }
    Ok(LinkTrace {
        link_id: link.id.clone(),
        add,
        stages,
        spans,
        received: cur,
        terms,
    })
}

pub fn simulate_link(state: &NetworkState, link: &Link, opts: &SimOptions) -> Result<LinkTrace, TwinError> {
    simulate_link_from(state, link, add_spectrum(state, link), opts)
}

/// Traces of every link, in network order. Links are independent because
/// each ROADM re-equalizes its add/express channels to the link's add power.
pub fn simulate_network(state: &NetworkState, opts: &SimOptions, mode: Execution) -> Result<Vec<LinkTrace>, TwinError> {
    exec::map(mode, &state.network.links, |l| simulate_link(state, l, opts))
        .into_iter()
        .collect()
}
