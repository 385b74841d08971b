//! Ground-truth plant: a hidden, perturbed copy of the network that can only
//! be measured, disturbed or reconfigured.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplifier::EdfaConfig;
use crate::exec::Execution;
use crate::spectral::{from_dbm, lin_to_db, PowerSpectrum};
use crate::topology::{Lightpath, NetworkState, TopologyError};
use crate::twin::qot::qot_from_traces;
use crate::twin::sim::{simulate_network, LinkTrace, SimOptions, DETECTOR_FLOOR_DBM};
use crate::twin::{BerModel, GsnrSample, Location, Payload, Port, Source, Tap, TelemetryRecord, TwinError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("perturbation spec: {0}")]
    BadSpec(String),
    #[error("unknown probe location `{0}`")]
    UnknownLocation(String),
    #[error("unknown channel {0}")]
    UnknownChannel(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Twin(#[from] TwinError),
}

/// Ranges of the hidden deviations from nominal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Added to each connector loss, uniform (dB).
    pub connector_loss_db: (f64, f64),
    /// Multiplies each span's Raman scale, uniform.
    pub raman_factor: (f64, f64),
    /// Per-channel ripple standard deviation (dB).
    pub ripple_sigma_db: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            connector_loss_db: (-0.5, 1.5),
            raman_factor: (0.8, 1.3),
            ripple_sigma_db: 0.3,
        }
    }
}

impl PerturbationSpec {
    pub fn zero() -> Self {
        Self {
            connector_loss_db: (0.0, 0.0),
            raman_factor: (1.0, 1.0),
            ripple_sigma_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let (a, b) = self.connector_loss_db;
        if !(a <= b) || a < -5.0 || b > 5.0 {
            return Err(PlantError::BadSpec(format!("connector loss range ({a}, {b})")));
        }
        let (a, b) = self.raman_factor;
        if !(a <= b) || a < 0.2 || b > 5.0 {
            return Err(PlantError::BadSpec(format!("raman factor range ({a}, {b})")));
        }
        if !(0.0..=1.0).contains(&self.ripple_sigma_db) {
            return Err(PlantError::BadSpec(format!("ripple sigma {}", self.ripple_sigma_db)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ocm_sigma_db: f64,
    pub ber_sigma_rel: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            ocm_sigma_db: 0.1,
            ber_sigma_rel: 0.05,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            ocm_sigma_db: 0.0,
            ber_sigma_rel: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Probe {
    Ocm(Location),
    AmpTotal { amp: String, port: Port },
    TransponderBer { lightpath: String, channel: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlantEvent {
    DropChannels { channels: Vec<usize> },
    FiberCut { span: String },
    ReplaceRequest { link: String },
    Restore {
        #[serde(default)]
        span: Option<String>,
        #[serde(default)]
        channels: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    hidden: NetworkState,
    dropped: BTreeSet<usize>,
    noise: NoiseSpec,
    ber: BerModel,
    seed: u64,
    traces: Vec<LinkTrace>,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Builds a plant whose hidden parameters deviate from `nominal` as drawn from `spec`.
pub fn make_plant(nominal: &NetworkState, spec: &PerturbationSpec, noise: NoiseSpec, seed: u64) -> Result<Plant, PlantError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ripple = Normal::new(0.0, spec.ripple_sigma_db).map_err(|e| PlantError::BadSpec(e.to_string()))?;
    let mut hidden = nominal.clone();
    let (ca, cb) = spec.connector_loss_db;
    let (ra, rb) = spec.raman_factor;
    for link in &mut hidden.network.links {
        for span in &mut link.spans {
            span.input_connector_loss_db = (span.input_connector_loss_db + rng.random_range(ca..=cb)).clamp(0.0, 10.0);
            span.output_connector_loss_db = (span.output_connector_loss_db + rng.random_range(ca..=cb)).clamp(0.0, 10.0);
            span.raman_scale = (span.raman_scale * rng.random_range(ra..=rb)).clamp(0.2, 5.0);
        }
        for amp in &mut link.amps {
            for r in &mut amp.ripple_db {
                *r = (*r + ripple.sample(&mut rng)).clamp(-3.0, 3.0);
            }
        }
    }
    for (id, amp) in hidden.edfa_overrides.iter_mut() {
        if let Some((_, base)) = hidden.network.amp(id) {
            *amp = base.with_settings_from(amp);
        }
    }
    let mut plant = Plant {
        hidden,
        dropped: BTreeSet::new(),
        noise,
        ber: BerModel::default(),
        seed,
        traces: Vec::new(),
    };
    plant.refresh()?;
    Ok(plant)
}

impl Plant {
    fn effective(&self) -> NetworkState {
        let mut st = self.hidden.clone();
        for lp in &mut st.lightpaths {
            lp.channel_indices.retain(|c| !self.dropped.contains(c));
        }
        st.lightpaths.retain(|lp| !lp.channel_indices.is_empty());
        st
    }

    fn refresh(&mut self) -> Result<(), PlantError> {
        self.traces = simulate_network(&self.effective(), &SimOptions::default(), Execution::Parallel)?;
        Ok(())
    }

    fn rng_for(&self, t: u64, key: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(fnv1a(&[&self.seed.to_le_bytes(), &t.to_le_bytes(), key.as_bytes()]))
    }

    fn noisy_spectrum(&self, s: &PowerSpectrum, rng: &mut ChaCha8Rng) -> PowerSpectrum {
        let n = Normal::new(0.0, self.noise.ocm_sigma_db).expect("sigma validated non-negative");
        let p = (0..s.len())
            .map(|i| if s.is_lit(i) { s.power(i) * from_dbm(n.sample(rng)) } else { 0.0 })
            .collect();
        s.with_powers(p)
    }

    fn trace(&self, link_id: &str) -> Option<&LinkTrace> {
        self.traces.iter().find(|t| t.link_id == link_id)
    }

    /// One reading of a probe at logical time `t`. The same probe at the same
    /// time and plant state always returns the same record.
    pub fn measure(&self, probe: &Probe, t: u64) -> Result<TelemetryRecord, PlantError> {
        match probe {
            Probe::Ocm(loc) => {
                let truth = self.ocm_truth(loc)?;
                let mut rng = self.rng_for(t, &format!("ocm:{}", loc.key()));
                Ok(TelemetryRecord {
                    t,
                    source: Source::Ocm,
                    location: loc.clone(),
                    payload: Payload::Spectrum(self.noisy_spectrum(&truth, &mut rng)),
                })
            }
            Probe::AmpTotal { amp, port } => {
                let loc = Location::amp(amp, *port);
                let (link, cfg) = self
                    .hidden
                    .network
                    .amp(amp)
                    .ok_or_else(|| PlantError::UnknownLocation(amp.clone()))?;
                let trace = self.trace(&link.id).expect("every link is traced");
                let stage = trace.stage(cfg.stage).ok_or_else(|| PlantError::UnknownLocation(amp.clone()))?;
                let s = match port {
                    Port::In => &stage.input,
                    Port::Out => &stage.output,
                };
                let f = s.freqs_thz();
                let mw: f64 = (0..s.len())
                    .filter(|&i| f[i] >= cfg.f_min_thz - 1e-6 && f[i] <= cfg.f_max_thz + 1e-6)
                    .map(|i| s.power(i))
                    .sum();
                let mut dbm = if mw > 0.0 { lin_to_db(mw).max(DETECTOR_FLOOR_DBM) } else { DETECTOR_FLOOR_DBM };
                if dbm > DETECTOR_FLOOR_DBM && self.noise.ocm_sigma_db > 0.0 {
                    let mut rng = self.rng_for(t, &format!("amp:{}", loc.key()));
                    dbm += Normal::new(0.0, self.noise.ocm_sigma_db).expect("valid sigma").sample(&mut rng);
                }
                Ok(TelemetryRecord {
                    t,
                    source: Source::AmpTotalPower,
                    location: loc,
                    payload: Payload::TotalDbm(dbm),
                })
            }
            Probe::TransponderBer { lightpath, channel } => {
                let ber = self.transponder_ber(lightpath, *channel, t)?;
                Ok(TelemetryRecord {
                    t,
                    source: Source::Transponder,
                    location: Location::plain(lightpath),
                    payload: Payload::Ber {
                        pre_fec_ber: ber,
                        channel: *channel,
                    },
                })
            }
        }
    }

    fn ocm_truth(&self, loc: &Location) -> Result<PowerSpectrum, PlantError> {
        let unknown = || PlantError::UnknownLocation(loc.key());
        match loc.z {
            Some(z) => {
                let (link, k) = self.hidden.network.span_location(&loc.id).ok_or_else(unknown)?;
                let span = &self.trace(&link.id).expect("every link is traced").spans[k];
                Ok(match z {
                    Tap::Start => span.fiber_in.clone(),
                    Tap::End => span.fiber_end.clone(),
                })
            }
            None => Ok(self.trace(&loc.id).ok_or_else(unknown)?.received.clone()),
        }
    }

    fn transponder_ber(&self, lightpath: &str, channel: usize, t: u64) -> Result<f64, PlantError> {
        let st = self.effective();
        let lp = self
            .hidden
            .lightpath(lightpath)
            .ok_or_else(|| PlantError::UnknownLocation(lightpath.to_string()))?;
        if !lp.channel_indices.contains(&channel) {
            return Err(PlantError::UnknownChannel(channel));
        }
        if self.dropped.contains(&channel) || st.is_down(lp) {
            return Ok(0.5);
        }
        let q = qot_from_traces(&st, &self.traces, &lp.id, &lp.route, &[channel])?;
        let ber = self.ber.ber_from_gsnr(q.channels[0].gsnr_db, lp.modulation);
        let mut rng = self.rng_for(t, &format!("ber:{lightpath}:{channel}"));
        let n: f64 = Normal::new(0.0, self.noise.ber_sigma_rel).expect("valid sigma").sample(&mut rng);
        Ok((ber * (1.0 + n).max(0.05)).clamp(f64::MIN_POSITIVE, 0.4999))
    }

    /// Transponder-derived GSNR of every live signal channel of the given lightpaths.
    pub fn measure_gsnr(&self, lightpaths: &[String], t: u64) -> Result<Vec<GsnrSample>, PlantError> {
        let mut out = Vec::new();
        for id in lightpaths {
            let lp = self
                .hidden
                .lightpath(id)
                .ok_or_else(|| PlantError::UnknownLocation(id.clone()))?;
            for &ch in &lp.channel_indices {
                let ber = self.transponder_ber(id, ch, t)?;
                if let Ok(g) = self.ber.gsnr_from_ber(ber, lp.modulation) {
                    out.push(GsnrSample {
                        lightpath: id.clone(),
                        channel: ch,
                        gsnr_db: g,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Every OCM and amplifier total reading at time `t`.
    pub fn snapshot(&self, t: u64, with_ocm: bool) -> Result<Vec<TelemetryRecord>, PlantError> {
        let mut probes = Vec::new();
        for link in &self.hidden.network.links {
            if with_ocm {
                for span in &link.spans {
                    probes.push(Probe::Ocm(Location::span(&span.id, Tap::Start)));
                    probes.push(Probe::Ocm(Location::span(&span.id, Tap::End)));
                }
                probes.push(Probe::Ocm(Location::plain(&link.id)));
            }
            for amp in &link.amps {
                for port in [Port::In, Port::Out] {
                    probes.push(Probe::AmpTotal {
                        amp: amp.id.clone(),
                        port,
                    });
                }
            }
        }
        probes.iter().map(|p| self.measure(p, t)).collect()
    }

    pub fn inject(&mut self, event: &PlantEvent) -> Result<(), PlantError> {
        match event {
            PlantEvent::DropChannels { channels } => {
                let carried: BTreeSet<usize> = self
                    .hidden
                    .lightpaths
                    .iter()
                    .flat_map(|lp| lp.channel_indices.iter().copied())
                    .collect();
                for c in channels {
                    if *c >= self.hidden.network.grid().len() {
                        return Err(PlantError::UnknownChannel(*c));
                    }
                    if !carried.contains(c) || self.dropped.contains(c) {
                        log::warn!("drop of channel {c} ignored: already dark");
                        continue;
                    }
                    self.dropped.insert(*c);
                }
            }
            PlantEvent::FiberCut { span } => {
                self.hidden = crate::topology::fail_span(&self.hidden, span)?;
            }
            PlantEvent::ReplaceRequest { link } => {
                if self.hidden.network.link(link).is_none() {
                    return Err(PlantError::UnknownLocation(link.clone()));
                }
            }
            PlantEvent::Restore { span, channels } => {
                if let Some(s) = span {
                    self.hidden = crate::topology::clear_failure(&self.hidden, s)?;
                }
                for c in channels {
                    self.dropped.remove(c);
                }
            }
        }
        self.refresh()
    }

    /// Pushes amplifier settings (gain, tilt, VOA, power targets) into the
    /// hidden devices; ripple and noise figure stay the devices' own.
    pub fn deploy_amps(&mut self, configs: &BTreeMap<String, EdfaConfig>) -> Result<(), PlantError> {
        for (id, cfg) in configs {
            let Some((_, base)) = self.hidden.network.amp(id) else {
                return Err(PlantError::UnknownLocation(id.clone()));
            };
            let next = base.with_settings_from(cfg);
            self.hidden = self.hidden.with_override(next)?;
        }
        self.refresh()
    }

    /// Reroutes lightpaths to match `lightpaths` (matched by id).
    pub fn deploy_routes(&mut self, lightpaths: &[Lightpath]) -> Result<(), PlantError> {
        let mut next = self.hidden.clone();
        for lp in lightpaths {
            match next.lightpaths.iter_mut().find(|h| h.id == lp.id) {
                Some(h) => {
                    h.route = lp.route.clone();
                    h.source_node = lp.source_node.clone();
                }
                None => return Err(PlantError::UnknownLocation(lp.id.clone())),
            }
        }
        next.validate()?;
        self.hidden = next;
        self.refresh()
    }

    /// Lights a new lightpath in the plant.
    pub fn provision(&mut self, lightpath: &Lightpath) -> Result<(), PlantError> {
        self.hidden = self.hidden.add_lightpath(lightpath.clone())?;
        self.refresh()
    }

    pub fn dropped_channels(&self) -> &BTreeSet<usize> {
        &self.dropped
    }
}
