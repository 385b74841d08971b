//! Fixtures and independent oracles shared by the oracle and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::{LN_10, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ontwin::exec::Execution;
use ontwin::fiber::{nli_for_span, propagate, raman_gain, Attenuation, FiberType, PropagationOptions, SpanParams};
use ontwin::scenario::{make_plant, NoiseSpec, PerturbationSpec, PlantEvent};
use ontwin::spectral::{build_grid, lin_to_db, BandPlan, Occupancy, PowerSpectrum};
use ontwin::toolbox::{optimize_edfa_with, EdfaOptRequest, OptimizerOptions, Scope};
use ontwin::topology::{preset, Lightpath, Modulation, NetworkState};
use ontwin::twin::{calibrate, error_report, predict_all, CalibrationOptions, ErrorReport, SimOptions, TelemetryMode};

pub fn span(len: f64, alpha_db_km: f64, connectors_db: f64) -> SpanParams {
    let mut s = SpanParams::nominal("oracle", FiberType::G652, len);
    s.attenuation_db_per_km = Attenuation::Flat(alpha_db_km);
    s.input_connector_loss_db = connectors_db;
    s.output_connector_loss_db = connectors_db;
    s
}

pub fn full_load(preset_name: &str, mw: f64) -> PowerSpectrum {
    PowerSpectrum::uniform(&build_grid(&BandPlan::Preset(preset_name.into())).unwrap(), mw)
}

pub fn lit(freqs: &[f64], mw: f64) -> PowerSpectrum {
    PowerSpectrum::new(freqs.to_vec(), vec![mw; freqs.len()], vec![Occupancy::Signal; freqs.len()]).unwrap()
}

fn max_abs_db(a: &PowerSpectrum, b: &PowerSpectrum) -> f64 {
    (0..a.len())
        .filter(|&i| a.power(i) > 0.0)
        .map(|i| (lin_to_db(a.power(i)) - lin_to_db(b.power(i))).abs())
        .fold(0.0, f64::max)
}

/// Relative change of the photon count sum P/f through a lossless span with SRS.
pub fn photon_flux_drift() -> (f64, f64) {
    let s = span(100.0, 0.0, 0.0);
    let input = full_load("system3", 2.0);
    let r = propagate(&s, &input, &PropagationOptions::default()).unwrap();
    let flux = |p: &PowerSpectrum| (0..p.len()).map(|i| p.power(i) / p.freqs_thz()[i]).sum::<f64>();
    let drift = (flux(&r.fiber_end) - flux(&input)).abs() / flux(&input);
    let tilt = lin_to_db(r.fiber_end.power(0)) - lin_to_db(r.fiber_end.power(input.len() - 1));
    (drift, tilt)
}

/// Worst deviation (dB) from the closed-form loss with SRS off.
pub fn attenuation_error_db() -> f64 {
    let s = span(93.0, 0.21, 0.7);
    let input = full_load("system2", 1.3);
    let opts = PropagationOptions {
        srs_enabled: false,
        ..Default::default()
    };
    let r = propagate(&s, &input, &opts).unwrap();
    (0..input.len())
        .map(|i| {
            let expect = lin_to_db(input.power(i)) - 1.4 - 0.21 * 93.0;
            (lin_to_db(r.output.power(i)) - expect).abs()
        })
        .fold(0.0, f64::max)
}

/// Two channels, 10 THz apart, integrated by a plain RK4 at 1/1000 of the production step.
pub fn two_channel_srs_error_db() -> f64 {
    let s = span(80.0, 0.2, 0.0);
    let f = [186.5, 196.5];
    let input = lit(&f, 10.0);
    let r = propagate(&s, &input, &PropagationOptions::default()).unwrap();

    let a = 0.2 * LN_10 / 10.0;
    let g = raman_gain(f[1] - f[0], &s) * 1e-3;
    let rhs = |p: [f64; 2]| {
        [
            -a * p[0] + g * p[0] * p[1],
            -a * p[1] - f[1] / f[0] * g * p[0] * p[1],
        ]
    };
    let h = PropagationOptions::default().step_km / 1000.0;
    let steps = (80.0 / h).round() as usize;
    let mut p = [10.0, 10.0];
    let add = |p: [f64; 2], k: [f64; 2], c: f64| [p[0] + c * k[0], p[1] + c * k[1]];
    for _ in 0..steps {
        let k1 = rhs(p);
        let k2 = rhs(add(p, k1, h / 2.0));
        let k3 = rhs(add(p, k2, h / 2.0));
        let k4 = rhs(add(p, k3, h));
        for i in 0..2 {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let oracle = lit(&f, 1.0).with_powers(p.to_vec());
    max_abs_db(&r.fiber_end, &oracle)
}

/// Largest output change (dB) when the step is halved: one span at full
/// C+L load, and end-to-end GSNR on the 22-span line.
pub fn step_halving_change_db() -> (f64, f64) {
    let s = span(100.0, 0.2, 0.5);
    let input = full_load("system3", 2.0);
    let base = PropagationOptions::default();
    let half = PropagationOptions {
        step_km: base.step_km / 2.0,
        ..base.clone()
    };
    let a = propagate(&s, &input, &base).unwrap();
    let b = propagate(&s, &input, &half).unwrap();
    let span_change = max_abs_db(&a.output, &b.output);

    let st = system1_state(&[], 91.6);
    let coarse = SimOptions::default();
    let fine = SimOptions {
        step_km: coarse.step_km / 2.0,
        ..coarse.clone()
    };
    let qa = predict_all(&st, &coarse, Execution::Parallel).unwrap();
    let qb = predict_all(&st, &fine, Execution::Parallel).unwrap();
    let gsnr_change = qa
        .iter()
        .zip(&qb)
        .flat_map(|(x, y)| x.channels.iter().zip(&y.channels).map(|(c, d)| (c.gsnr_db - d.gsnr_db).abs()))
        .fold(0.0, f64::max);
    (span_change, gsnr_change)
}

pub const NLI_FIXTURE_FREQS: [f64; 3] = [193.0, 193.075, 193.15];
pub const NLI_FIXTURE_BW_THZ: f64 = 0.064;

/// Numerical GN double integral for one span, rectangular spectra, evaluated at
/// each channel centre. Returns NLI over launch power per channel.
pub fn gn_integral_isnr(s: &SpanParams, freqs: &[f64], mw: f64, bw: f64, n_per_band: usize) -> Vec<f64> {
    let a = s.attenuation_db_per_km.db_per_km(freqs[0]) * LN_10 / 10.0;
    let l = s.length_km;
    let b2 = s.beta2_ps2_per_km.abs();
    let gamma = s.gamma_per_w_km;
    let psd = mw * 1e-3 / bw;
    let df = bw / n_per_band as f64;
    let pts: Vec<f64> = freqs
        .iter()
        .flat_map(|&fc| (0..n_per_band).map(move |k| fc - bw / 2.0 + (k as f64 + 0.5) * df))
        .collect();
    let in_band = |x: f64| freqs.iter().any(|&fc| (x - fc).abs() < bw / 2.0);
    let e = (-a * l).exp();
    freqs
        .iter()
        .map(|&f| {
            let mut acc = 0.0;
            for &f1 in &pts {
                for &f2 in &pts {
                    if !in_band(f1 + f2 - f) {
                        continue;
                    }
                    let phi = 4.0 * PI * PI * b2 * (f1 - f) * (f2 - f);
                    let num = 1.0 - 2.0 * e * (phi * l).cos() + e * e;
                    acc += num / (a * a + phi * phi);
                }
            }
            let g_nli = 16.0 / 27.0 * gamma * gamma * psd.powi(3) * acc * df * df;
            g_nli * bw / (mw * 1e-3)
        })
        .collect()
}

/// Closed-form and numerical NLI-to-signal ratios (dB) on the three-channel fixture.
pub fn nli_closed_vs_integral_db() -> Vec<(f64, f64)> {
    let s = span(80.0, 0.2, 0.0);
    let input = lit(&NLI_FIXTURE_FREQS, 1.0);
    let opts = PropagationOptions {
        srs_enabled: false,
        ..Default::default()
    };
    let r = propagate(&s, &input, &opts).unwrap();
    let closed = nli_for_span(&s, &input, &r, &[NLI_FIXTURE_BW_THZ; 3]).unwrap();
    let numeric = gn_integral_isnr(&s, &NLI_FIXTURE_FREQS, 1.0, NLI_FIXTURE_BW_THZ, 512);
    closed.isnr.iter().zip(&numeric).map(|(c, n)| (lin_to_db(*c), lin_to_db(*n))).collect()
}

/// Worst relative deviation of NLI from exact cubic scaling with SRS off.
pub fn nli_cubic_deviation(k: f64) -> f64 {
    let s = span(80.0, 0.2, 0.5);
    let opts = PropagationOptions {
        srs_enabled: false,
        ..Default::default()
    };
    let bw = vec![0.0916; 60];
    let nli = |mw: f64| {
        let input = full_load("system2", mw);
        let r = propagate(&s, &input, &opts).unwrap();
        nli_for_span(&s, &input, &r, &bw).unwrap().nli_mw
    };
    let a = nli(1.0);
    let b = nli(k);
    a.iter().zip(&b).map(|(x, y)| (y / (x * k.powi(3)) - 1.0).abs()).fold(0.0, f64::max)
}

/// Worst round-trip error (dB) of GSNR -> BER -> GSNR on a 0.05 dB grid over [5, 30] dB.
pub fn ber_round_trip_error_db() -> Vec<(Modulation, f64)> {
    use ontwin::twin::{ber_from_gsnr, gsnr_from_ber};
    [Modulation::Qpsk, Modulation::Qam16, Modulation::Pcs16Qam]
        .into_iter()
        .map(|m| {
            let worst = (0..=500)
                .map(|k| 5.0 + 0.05 * k as f64)
                .map(|g| {
                    let ber = ber_from_gsnr(g, m);
                    // The BER of high-order formats underflows near 30 dB; those points cannot be inverted.
                    if ber < f64::MIN_POSITIVE {
                        return 0.0;
                    }
                    (gsnr_from_ber(ber, m).unwrap() - g).abs()
                })
                .fold(0.0, f64::max);
            (m, worst)
        })
        .collect()
}

pub fn system1_state(drop: &[usize], gbaud: f64) -> NetworkState {
    let net = preset("system1").unwrap();
    let lps = (0..net.grid().len())
        .filter(|c| !drop.contains(c))
        .map(|c| Lightpath {
            id: format!("ch{c}"),
            route: vec!["A".into(), "B".into()],
            channel_indices: BTreeSet::from([c]),
            modulation: Modulation::Pcs16Qam,
            symbol_rate_gbaud: gbaud,
            source_node: "A".into(),
            filler: false,
        })
        .collect();
    NetworkState::new(net, lps).unwrap()
}

pub const CAL_SEED: u64 = 7;
pub const CAL_SNAPSHOTS: u64 = 4;

pub fn drop_mask_a() -> Vec<usize> {
    (0..16).map(|k| k * 4 + 1).collect()
}

pub fn drop_mask_b() -> Vec<usize> {
    (0..16).map(|k| k * 4 + 3).collect()
}

pub struct CalibrationOutcome {
    pub uncalibrated: ErrorReport,
    pub calibrated: ErrorReport,
    pub seconds: f64,
}

/// Calibrates on full-load and drop-mask-A snapshots of a seeded System-1
/// plant, then scores the twin on the held-out mask B.
pub fn calibration_outcome(mode: TelemetryMode, seed: u64) -> CalibrationOutcome {
    let start = std::time::Instant::now();
    let with_ocm = mode != TelemetryMode::TotalPower;
    let nominal = system1_state(&[], 91.6);
    let mut plant = make_plant(&nominal, &PerturbationSpec::default(), NoiseSpec::default(), seed).unwrap();
    let mut tele = Vec::new();
    for t in 0..CAL_SNAPSHOTS {
        tele.extend(plant.snapshot(t, with_ocm).unwrap());
    }
    let mask_a = drop_mask_a();
    plant.inject(&PlantEvent::DropChannels { channels: mask_a.clone() }).unwrap();
    for t in CAL_SNAPSHOTS..2 * CAL_SNAPSHOTS {
        tele.extend(plant.snapshot(t, with_ocm).unwrap());
    }
    let opts = CalibrationOptions {
        mode,
        ..CalibrationOptions::default()
    };
    let rep = calibrate(&nominal, &tele, &opts).unwrap();

    plant.inject(&PlantEvent::Restore { span: None, channels: mask_a }).unwrap();
    let mask_b = drop_mask_b();
    plant.inject(&PlantEvent::DropChannels { channels: mask_b.clone() }).unwrap();
    let held_out = system1_state(&mask_b, 91.6);
    let ids: Vec<String> = held_out.lightpaths.iter().map(|l| l.id.clone()).collect();
    let meas = plant.measure_gsnr(&ids, 100).unwrap();
    let sim = SimOptions::default();
    let before = predict_all(&held_out, &sim, Execution::Parallel).unwrap();
    let after = predict_all(&rep.apply(&held_out), &sim, Execution::Parallel).unwrap();
    CalibrationOutcome {
        uncalibrated: error_report(&before, &meas).unwrap(),
        calibrated: error_report(&after, &meas).unwrap(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub struct OptimizerInstance {
    pub state: NetworkState,
    pub link: String,
    pub cuts: BTreeSet<usize>,
}

/// A randomized two-span System-2 link: perturbed spans and amplifier
/// settings, random loading and three to five channels under test.
pub fn optimizer_instance(seed: u64) -> OptimizerInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = preset("system2").unwrap();
    let (link, from, to) = if rng.random_bool(0.5) { ("C-E", "C", "E") } else { ("D-F", "D", "F") };
    let n = net.grid().len();
    for s in net.links.iter_mut().find(|l| l.id == link).unwrap().spans.iter_mut() {
        s.length_km *= rng.random_range(0.9..1.2);
        s.input_connector_loss_db += rng.random_range(0.0..1.0);
        s.output_connector_loss_db += rng.random_range(0.0..1.0);
        s.raman_scale *= rng.random_range(0.8..1.3);
    }
    let lit: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.75)).collect();
    let n_cut = rng.random_range(3..=5).min(lit.len());
    let mut cuts = BTreeSet::new();
    while cuts.len() < n_cut {
        cuts.insert(lit[rng.random_range(0..lit.len())]);
    }
    let route = vec![from.to_string(), to.to_string()];
    let lps = lit
        .iter()
        .map(|&c| Lightpath {
            id: format!("ch{c}"),
            route: route.clone(),
            channel_indices: BTreeSet::from([c]),
            modulation: Modulation::Pcs16Qam,
            symbol_rate_gbaud: 64.0,
            source_node: from.into(),
            filler: !cuts.contains(&c),
        })
        .collect();
    let mut state = NetworkState::new(net, lps).unwrap();
    let amps = state.link_amps(state.network.link(link).unwrap());
    for mut a in amps {
        let shift = rng.random_range(-1.0..1.0);
        match a.target_pch_dbm.as_mut() {
            Some(t) => *t += shift,
            None => a.gain_db += shift,
        }
        a.tilt_db += rng.random_range(-1.0..1.0);
        state = state.with_override(a).unwrap();
    }
    OptimizerInstance {
        state,
        link: link.into(),
        cuts,
    }
}

pub struct ScopePair {
    pub input_min_db: f64,
    pub half_min_db: f64,
    pub all_min_db: f64,
}

pub fn optimize_both_scopes(inst: &OptimizerInstance) -> ScopePair {
    let opts = OptimizerOptions::default();
    let run = |scope| {
        let req = EdfaOptRequest::from_twin(&inst.state, &inst.link, scope, inst.cuts.clone()).unwrap();
        optimize_edfa_with(&req, &inst.state, &opts).unwrap()
    };
    let half = run(Scope::AlternatingHalf);
    let all = run(Scope::All);
    ScopePair {
        input_min_db: half.input_min_gsnr_db,
        half_min_db: half.min_gsnr_db,
        all_min_db: all.min_gsnr_db,
    }
}
