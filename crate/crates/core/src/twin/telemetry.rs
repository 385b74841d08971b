//! Telemetry records, NDJSON encoding and alarm derivation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::spectral::PowerSpectrum;

use super::TwinError;

/// Loss-of-power threshold on amplifier input total power.
pub const NO_POWER_DBM: f64 = -30.0;
const BUFFER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ocm,
    AmpTotalPower,
    Transponder,
}

/// Monitor position on a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tap {
    #[serde(rename = "0")]
    Start,
    #[serde(rename = "z_max")]
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    In,
    Out,
}

/// Span id with `z`, amplifier id with `port`, link id alone (receiver OCM),
/// or lightpath id (transponder).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Tap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<Port>,
}

impl Location {
    pub fn span(id: &str, z: Tap) -> Self {
        Self {
            id: id.to_string(),
            z: Some(z),
            port: None,
        }
    }

    pub fn amp(id: &str, port: Port) -> Self {
        Self {
            id: id.to_string(),
            z: None,
            port: Some(port),
        }
    }

    pub fn plain(id: &str) -> Self {
        Self {
            id: id.to_string(),
            z: None,
            port: None,
        }
    }

    pub fn key(&self) -> String {
        let mut k = self.id.clone();
        match self.z {
            Some(Tap::Start) => k.push_str("@0"),
            Some(Tap::End) => k.push_str("@z_max"),
            None => {}
        }
        match self.port {
            Some(Port::In) => k.push_str("/in"),
            Some(Port::Out) => k.push_str("/out"),
            None => {}
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Spectrum(PowerSpectrum),
    TotalDbm(f64),
    Ber { pre_fec_ber: f64, channel: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t: u64,
    pub source: Source,
    pub location: Location,
    pub payload: Payload,
}

impl TelemetryRecord {
    pub fn validate(&self) -> Result<(), TwinError> {
        let ok = matches!(
            (self.source, &self.payload),
            (Source::Ocm, Payload::Spectrum(_))
                | (Source::AmpTotalPower, Payload::TotalDbm(_))
                | (Source::Transponder, Payload::Ber { .. })
        );
        if !ok {
            return Err(TwinError::PayloadMismatch(self.location.key()));
        }
        if self.source == Source::AmpTotalPower && self.location.port.is_none() {
            return Err(TwinError::PayloadMismatch(self.location.key()));
        }
        Ok(())
    }

    /// Buffer key: one monotone stream per (source, location).
    pub fn stream(&self) -> String {
        format!("{:?}:{}", self.source, self.location.key())
    }
}

pub fn read_ndjson(text: &str) -> Result<Vec<TelemetryRecord>, TwinError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let r: TelemetryRecord =
                serde_json::from_str(l).map_err(|e| TwinError::Json(format!("line {}: {e}", n + 1)))?;
            r.validate()?;
            Ok(r)
        })
        .collect()
}

pub fn write_ndjson(records: &[TelemetryRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Alarm {
    LossOfPower {
        t: u64,
        amp: String,
        total_dbm: f64,
    },
    ChannelDrop {
        t: u64,
        location: String,
        count: usize,
        channels: Vec<usize>,
    },
}

/// Ring buffers and alarm state fed by [`TelemetryMonitor::ingest`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMonitor {
    pub buffers: BTreeMap<String, VecDeque<TelemetryRecord>>,
    /// Lit channels per OCM location when the baseline was taken.
    pub baseline: BTreeMap<String, BTreeSet<usize>>,
    pub alarms: Vec<Alarm>,
    last_drop: BTreeMap<String, BTreeSet<usize>>,
    powered_off: BTreeSet<String>,
}

impl TelemetryMonitor {
    /// Buffers a record and returns the alarms it raised. Stale or duplicate
    /// timestamps are rejected and leave the monitor unchanged.
    pub fn ingest(&mut self, record: TelemetryRecord) -> Result<Vec<Alarm>, TwinError> {
        record.validate()?;
        let stream = record.stream();
        if let Some(last) = self.buffers.get(&stream).and_then(|b| b.back()) {
            if record.t <= last.t {
                log::warn!("rejected stale record on {stream}: t={} after t={}", record.t, last.t);
                return Err(TwinError::StaleTimestamp {
                    stream,
                    t: record.t,
                    last: last.t,
                });
            }
        }
        let mut raised = Vec::new();
        let key = record.location.key();
        match (&record.payload, record.location.port) {
            (Payload::TotalDbm(p), Some(Port::In)) => {
                // An amplifier that has never carried light is not an outage.
                let first = !self.buffers.contains_key(&stream);
                if *p < NO_POWER_DBM {
                    if self.powered_off.insert(record.location.id.clone()) && !first {
                        raised.push(Alarm::LossOfPower {
                            t: record.t,
                            amp: record.location.id.clone(),
                            total_dbm: *p,
                        });
                    }
                } else {
                    self.powered_off.remove(&record.location.id);
                }
            }
            (Payload::Spectrum(s), _) => {
                let lit: BTreeSet<usize> = s.lit_indices().into_iter().collect();
                let base = self.baseline.entry(key.clone()).or_insert_with(|| lit.clone());
                let dropped: BTreeSet<usize> = base.difference(&lit).copied().collect();
                let previous = self.last_drop.get(&key).cloned().unwrap_or_default();
                if dropped != previous {
                    if !dropped.is_empty() {
                        raised.push(Alarm::ChannelDrop {
                            t: record.t,
                            location: key.clone(),
                            count: dropped.len(),
                            channels: dropped.iter().copied().collect(),
                        });
                    }
                    self.last_drop.insert(key.clone(), dropped);
                }
            }
            _ => {}
        }
        let buf = self.buffers.entry(stream).or_default();
        if buf.len() == BUFFER_LEN {
            buf.pop_front();
        }
        buf.push_back(record);
        self.alarms.extend(raised.iter().cloned());
        Ok(raised)
    }

    /// Re-arms drop detection against the latest OCM readings.
    pub fn rebaseline(&mut self) {
        for (stream, buf) in &self.buffers {
            if let Some(TelemetryRecord {
                payload: Payload::Spectrum(s),
                location,
                ..
            }) = buf.back()
            {
                if stream.starts_with("Ocm:") {
                    let key = location.key();
                    self.baseline.insert(key.clone(), s.lit_indices().into_iter().collect());
                    self.last_drop.remove(&key);
                }
            }
        }
        self.powered_off = self
            .buffers
            .values()
            .filter_map(|b| b.back())
            .filter(|r| r.location.port == Some(Port::In) && matches!(r.payload, Payload::TotalDbm(p) if p < NO_POWER_DBM))
            .map(|r| r.location.id.clone())
            .collect();
    }

    pub fn latest(&self, source: Source, location: &Location) -> Option<&TelemetryRecord> {
        self.buffers
            .get(&format!("{source:?}:{}", location.key()))
            .and_then(|b| b.back())
    }
}
