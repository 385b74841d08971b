//! GSNR estimation along lightpaths.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::amplifier::apply_stage;
use crate::exec::Execution;
use crate::spectral::{from_dbm, lin_to_db, PowerSpectrum};
use crate::topology::{Lightpath, Modulation, NetworkState};

use super::sim::{simulate_network, LinkTrace, NoiseKind, SimOptions};
use super::TwinError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelQot {
    pub channel: usize,
    pub signal_mw: f64,
    /// Receiver-referred noise powers in the reference bandwidth.
    pub ase_mw: f64,
    pub nli_mw: f64,
    pub gsnr_db: f64,
}

/// Inverse-GSNR contribution of one span or amplifier stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementTerm {
    pub link: String,
    pub element: String,
    pub kind: NoiseKind,
    /// Aligned with `QotEstimate::channels`.
    pub inv_snr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QotEstimate {
    pub lightpath: String,
    pub channels: Vec<ChannelQot>,
    pub min_gsnr_db: f64,
    pub mean_gsnr_db: f64,
    pub terms: Vec<ElementTerm>,
}

impl QotEstimate {
    fn from_terms(lightpath: &str, channels: &[usize], signal: &[f64], terms: Vec<ElementTerm>) -> Self {
        let mut rows = Vec::with_capacity(channels.len());
        for (k, &ch) in channels.iter().enumerate() {
            let (mut ase, mut nli) = (0.0, 0.0);
            for t in &terms {
                match t.kind {
                    NoiseKind::Ase => ase += t.inv_snr[k],
                    NoiseKind::Nli => nli += t.inv_snr[k],
                }
            }
            let s = signal[k];
            rows.push(ChannelQot {
                channel: ch,
                signal_mw: s,
                ase_mw: ase * s,
                nli_mw: nli * s,
                gsnr_db: -lin_to_db(ase + nli),
            });
        }
        let min = rows.iter().map(|r| r.gsnr_db).fold(f64::INFINITY, f64::min);
        let mean = rows.iter().map(|r| r.gsnr_db).sum::<f64>() / rows.len().max(1) as f64;
        QotEstimate {
            lightpath: lightpath.to_string(),
            channels: rows,
            min_gsnr_db: min,
            mean_gsnr_db: mean,
            terms,
        }
    }

    pub fn gsnr_by_channel(&self) -> BTreeMap<usize, f64> {
        self.channels.iter().map(|c| (c.channel, c.gsnr_db)).collect()
    }
}

fn check_up(state: &NetworkState, lp: &Lightpath) -> Result<(), TwinError> {
    for link in state.network.route_links(&lp.route)? {
        if let Some(s) = link.spans.iter().find(|s| state.failed_spans.contains(&s.id)) {
            return Err(TwinError::FailedSpanOnRoute {
                lightpath: lp.id.clone(),
                span: s.id.clone(),
            });
        }
    }
    Ok(())
}

/// QoT of a set of channels along a route, given the link traces of `state`.
pub fn qot_from_traces(
    state: &NetworkState,
    traces: &[LinkTrace],
    id: &str,
    route: &[String],
    channels: &[usize],
) -> Result<QotEstimate, TwinError> {
    let links = state.network.route_links(route)?;
    if links.is_empty() {
        return back_to_back(state, id, &route[0], channels);
    }
    let mut terms = Vec::new();
    for link in &links {
        let trace = traces
            .iter()
            .find(|t| t.link_id == link.id)
            .ok_or_else(|| TwinError::UnknownLink(link.id.clone()))?;
        for &ch in channels {
            if !trace.received.is_lit(ch) {
                return Err(TwinError::ChannelNotLit {
                    link: link.id.clone(),
                    channel: ch,
                });
            }
        }
        for t in &trace.terms {
            terms.push(ElementTerm {
                link: t.link.clone(),
                element: t.element.clone(),
                kind: t.kind,
                inv_snr: channels.iter().map(|&c| t.inv_snr[c]).collect(),
            });
        }
    }
    let last = traces
        .iter()
        .find(|t| t.link_id == links[links.len() - 1].id)
        .expect("checked above");
    let signal: Vec<f64> = channels.iter().map(|&c| last.received.power(c)).collect();
    Ok(QotEstimate::from_terms(id, channels, &signal, terms))
}

/// Transmitter straight into the receiver through the node's booster.
fn back_to_back(state: &NetworkState, id: &str, node: &str, channels: &[usize]) -> Result<QotEstimate, TwinError> {
    let link = state
        .network
        .links
        .iter()
        .find(|l| l.from == node && l.has_booster())
        .ok_or_else(|| TwinError::NoBooster(node.to_string()))?;
    let mut add = PowerSpectrum::dark(state.network.grid());
    for &c in channels {
        add.set(c, from_dbm(link.add_power_dbm), crate::spectral::Occupancy::Signal);
    }
    let amps = state.link_amps(link);
    let booster: Vec<_> = amps.iter().filter(|a| a.stage == 0).collect();
    let out = apply_stage(&booster, &add)?;
    let inv: Vec<f64> = channels.iter().map(|&c| out.ase[c] / out.output.power(c)).collect();
    let signal: Vec<f64> = channels.iter().map(|&c| out.output.power(c)).collect();
    let terms = vec![ElementTerm {
        link: link.id.clone(),
        element: format!("{}:0", link.id),
        kind: NoiseKind::Ase,
        inv_snr: inv,
    }];
    Ok(QotEstimate::from_terms(id, channels, &signal, terms))
}

/// QoT of one lightpath, composing the full link walks of `state`.
pub fn predict_qot(state: &NetworkState, lightpath: &Lightpath) -> Result<QotEstimate, TwinError> {
    check_up(state, lightpath)?;
    let traces = simulate_network(state, &SimOptions::default(), Execution::Sequential)?;
    let channels: Vec<usize> = lightpath.channel_indices.iter().copied().collect();
    qot_from_traces(state, &traces, &lightpath.id, &lightpath.route, &channels)
}

/// QoT of every signal lightpath that is up; fillers and cut lightpaths are skipped.
pub fn predict_all(state: &NetworkState, opts: &SimOptions, mode: Execution) -> Result<Vec<QotEstimate>, TwinError> {
    let traces = simulate_network(state, opts, mode)?;
    let mut out = Vec::new();
    for lp in state.lightpaths.iter().filter(|lp| !lp.filler && !state.is_down(lp)) {
        let channels: Vec<usize> = lp.channel_indices.iter().copied().collect();
        out.push(qot_from_traces(state, &traces, &lp.id, &lp.route, &channels)?);
    }
    Ok(out)
}

/// QoT for channels on a node route. Channels not already carried on the
/// route are added as a temporary probe lightpath first.
pub fn predict_route(state: &NetworkState, route: &[String], channels: &[usize]) -> Result<QotEstimate, TwinError> {
    let carried: BTreeSet<usize> = state
        .lightpaths
        .iter()
        .filter(|lp| lp.route == route)
        .flat_map(|lp| lp.channel_indices.iter().copied())
        .collect();
    let missing: BTreeSet<usize> = channels.iter().copied().filter(|c| !carried.contains(c)).collect();
    let probe_state;
    let st = if missing.is_empty() || route.len() < 2 {
        state
    } else {
        let grid_rate = state.network.grid().channels()[0].symbol_bw_ghz;
        probe_state = state.add_lightpath(Lightpath {
            id: "probe".into(),
            route: route.to_vec(),
            channel_indices: missing,
            modulation: Modulation::Pcs16Qam,
            symbol_rate_gbaud: grid_rate,
            source_node: route[0].clone(),
            filler: false,
        })?;
        &probe_state
    };
    let traces = simulate_network(st, &SimOptions::default(), Execution::Sequential)?;
    qot_from_traces(st, &traces, &route.join("-"), route, channels)
}

/// Sum of per-element terms; equals the end-to-end inverse GSNR.
pub fn total_inv_snr(q: &QotEstimate) -> Vec<f64> {
    let mut acc = vec![0.0; q.channels.len()];
    for t in &q.terms {
        for (a, v) in acc.iter_mut().zip(&t.inv_snr) {
            *a += v;
        }
    }
    acc
}

/// Rounded GSNR summary used in logs and prompts.
pub fn summarize(q: &QotEstimate) -> String {
    format!(
        "{}: min {:.2} dB, mean {:.2} dB over {} channels",
        q.lightpath,
        q.min_gsnr_db,
        q.mean_gsnr_db,
        q.channels.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplifier::ase_power_mw;
    use crate::spectral::db_to_lin;
    use crate::topology::{fail_span, preset};

    fn lp(id: &str, route: &[&str], chans: impl IntoIterator<Item = usize>) -> Lightpath {
        Lightpath {
            id: id.into(),
            route: route.iter().map(|s| s.to_string()).collect(),
            channel_indices: chans.into_iter().collect(),
            modulation: Modulation::Pcs16Qam,
            symbol_rate_gbaud: 91.6,
            source_node: route[0].into(),
            filler: false,
        }
    }

    fn system3(lps: Vec<Lightpath>) -> NetworkState {
        NetworkState::new(preset("system3").unwrap(), lps).unwrap()
    }

    #[test]
    fn repeat_predictions_are_identical() {
        let st = system3(vec![lp("x", &["A", "B", "Z"], 0..40), lp("y", &["B", "Z"], 40..60)]);
        let x = st.lightpath("x").unwrap();
        assert_eq!(predict_qot(&st, x).unwrap(), predict_qot(&st, x).unwrap());
        let seq = predict_all(&st, &SimOptions::default(), Execution::Sequential).unwrap();
        let par = predict_all(&st, &SimOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn longer_route_is_worse() {
        let st = system3(vec![lp("az", &["A", "B", "Z"], 8..16)]);
        let traces = simulate_network(&st, &SimOptions::default(), Execution::Sequential).unwrap();
        let short = qot_from_traces(&st, &traces, "az", &["A".into(), "B".into()], &[8]).unwrap();
        let long = predict_qot(&st, st.lightpath("az").unwrap()).unwrap();
        assert!(long.gsnr_by_channel()[&8] < short.min_gsnr_db);
    }

    #[test]
    fn back_to_back_is_finite_and_high() {
        let st = system3(vec![lp("x", &["A", "B"], 0..4)]);
        let q = predict_route(&st, &["A".into()], &[0, 1]).unwrap();
        assert_eq!(q.terms.len(), 1);
        assert!(q.min_gsnr_db.is_finite() && q.min_gsnr_db > 30.0, "{}", q.min_gsnr_db);
    }

    #[test]
    fn failed_span_on_route_is_an_error() {
        let st = system3(vec![lp("x", &["A", "B", "Z"], 0..4)]);
        let cut = fail_span(&st, "B-Z:3").unwrap();
        let err = predict_qot(&cut, cut.lightpath("x").unwrap()).unwrap_err();
        assert_eq!(
            err,
            TwinError::FailedSpanOnRoute {
                lightpath: "x".into(),
                span: "B-Z:3".into()
            }
        );
        assert!(predict_all(&cut, &SimOptions::default(), Execution::Sequential).unwrap().is_empty());
    }

    #[test]
    fn single_span_ase_matches_hand_sum() {
        let st = system3(vec![lp("x", &["A", "B"], [3, 50, 90])]);
        let opts = SimOptions {
            nli: false,
            ..Default::default()
        };
        let traces = simulate_network(&st, &opts, Execution::Sequential).unwrap();
        let q = qot_from_traces(&st, &traces, "x", &["A".into(), "B".into()], &[3, 50, 90]).unwrap();
        let trace = &traces[0];
        let link = st.network.link("A-B").unwrap();
        let f = st.network.grid().frequencies();
        for (k, &c) in [3usize, 50, 90].iter().enumerate() {
            let mut inv = 0.0;
            for s in &trace.stages {
                let amp = link.amps_at(s.stage).into_iter().find(|a| f[c] >= a.f_min_thz && f[c] <= a.f_max_thz).unwrap();
                let g = s.output.power(c) / s.input.power(c);
                inv += ase_power_mw(f[c], amp.noise_figure_db(f[c]), g) / s.output.power(c);
            }
            let expected = -lin_to_db(inv);
            assert!((q.channels[k].gsnr_db - expected).abs() < 1e-9, "{} vs {expected}", q.channels[k].gsnr_db);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]
            #[test]
            fn inverse_gsnr_is_the_sum_of_element_terms(
                picks in proptest::collection::btree_set(0usize..90, 2..30),
                add in -18.0f64..-10.0,
            ) {
                let mut st = system3(vec![lp("x", &["A", "B", "Z"], picks.iter().copied())]);
                for l in &mut st.network.links {
                    l.add_power_dbm = add;
                }
                let q = predict_qot(&st, st.lightpath("x").unwrap()).unwrap();
                for (c, inv) in q.channels.iter().zip(total_inv_snr(&q)) {
                    prop_assert!((db_to_lin(-c.gsnr_db) - inv).abs() <= 1e-12 * inv);
                    prop_assert!(inv > 0.0);
                }
            }
        }
    }
}
