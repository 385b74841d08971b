//! Channel grids, power spectra and the unit conversions shared by the physics modules.
//!
//! Powers are carried in linear mW everywhere inside the crate. dBm only shows up at
//! the edges (JSON, telemetry, reports).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frequency tolerance used when checking grid consistency (THz).
const FREQ_EPS_THZ: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("unknown band plan preset `{0}`")]
    UnknownPreset(String),
    #[error("band plan has no bands")]
    EmptyPlan,
    #[error("channel spacing must be positive, got {0} GHz")]
    NonPositiveSpacing(f64),
    #[error("band {band:?}: f_min {f_min} THz must be below f_max {f_max} THz")]
    InvertedBand { band: Band, f_min: f64, f_max: f64 },
    #[error("band {band:?}: {count} channels at {spacing_ghz} GHz do not span [{f_min}, {f_max}] THz")]
    InconsistentBand {
        band: Band,
        f_min: f64,
        f_max: f64,
        spacing_ghz: f64,
        count: usize,
    },
    #[error("L-band upper edge {l_max} THz overlaps C-band lower edge {c_min} THz")]
    OverlappingBands { l_max: f64, c_min: f64 },
    #[error("symbol bandwidth {symbol_ghz} GHz exceeds slot spacing {spacing_ghz} GHz")]
    SymbolExceedsSlot { symbol_ghz: f64, spacing_ghz: f64 },
    #[error("negative linear power {0} mW")]
    NegativePower(f64),
    #[error("tilt needs at least two lit channels, found {0}")]
    TooFewLit(usize),
    #[error("spectrum length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    L,
    C,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::L => "L",
            Band::C => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub index: usize,
    pub center_thz: f64,
    pub symbol_bw_ghz: f64,
    pub slot_ghz: f64,
    pub band: Band,
}

/// An ordered, fixed-spacing channel plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGrid {
    channels: Vec<Channel>,
}

impl ChannelGrid {
    /// Builds a grid from explicit channels, checking ordering and slot overlap.
    pub fn from_channels(mut channels: Vec<Channel>) -> Result<Self, SpectralError> {
        channels.sort_by(|a, b| a.center_thz.total_cmp(&b.center_thz));
        for (i, ch) in channels.iter_mut().enumerate() {
            ch.index = i;
            if ch.slot_ghz <= 0.0 {
                return Err(SpectralError::NonPositiveSpacing(ch.slot_ghz));
            }
            if ch.symbol_bw_ghz > ch.slot_ghz + 1e-9 {
                return Err(SpectralError::SymbolExceedsSlot {
                    symbol_ghz: ch.symbol_bw_ghz,
                    spacing_ghz: ch.slot_ghz,
                });
            }
        }
        for w in channels.windows(2) {
            let gap_ghz = (w[1].center_thz - w[0].center_thz) * 1e3;
            let need = 0.5 * (w[0].slot_ghz + w[1].slot_ghz);
            if gap_ghz + 1e-6 < need {
                return Err(SpectralError::OverlappingBands {
                    l_max: w[0].center_thz,
                    c_min: w[1].center_thz,
                });
            }
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.center_thz).collect()
    }

    pub fn band_indices(&self, band: Band) -> Vec<usize> {
        self.channels
            .iter()
            .filter(|c| c.band == band)
            .map(|c| c.index)
            .collect()
    }

    pub fn bands(&self) -> Vec<Band> {
        let mut out: Vec<Band> = self.channels.iter().map(|c| c.band).collect();
        out.dedup();
        out
    }

    /// `[f_min, f_max]` of the channel centres in a band.
    pub fn band_edges(&self, band: Band) -> Option<(f64, f64)> {
        let mut it = self.channels.iter().filter(|c| c.band == band);
        let first = it.next()?.center_thz;
        let last = it.last().map(|c| c.center_thz).unwrap_or(first);
        Some((first, last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub f_min_thz: f64,
    pub f_max_thz: f64,
    pub count: usize,
}

/// A named preset or an explicit fixed-grid plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandPlan {
    Preset(String),
    Explicit(ExplicitPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitPlan {
    #[serde(default)]
    pub l_band: Option<BandRange>,
    #[serde(default)]
    pub c_band: Option<BandRange>,
    pub spacing_ghz: f64,
    pub symbol_rate_gbaud: f64,
}

impl BandPlan {
    pub fn resolve(&self) -> Result<ExplicitPlan, SpectralError> {
        match self {
            BandPlan::Explicit(p) => Ok(p.clone()),
            BandPlan::Preset(name) => preset_plan(name),
        }
    }
}

/// Band plans of the three reference systems.
pub fn preset_plan(name: &str) -> Result<ExplicitPlan, SpectralError> {
    let plan = match name {
        "system1" => ExplicitPlan {
            l_band: Some(BandRange { f_min_thz: 186.15, f_max_thz: 190.8, count: 32 }),
            c_band: Some(BandRange { f_min_thz: 191.35, f_max_thz: 196.0, count: 32 }),
            spacing_ghz: 150.0,
            symbol_rate_gbaud: 130.0,
        },
        "system2" => ExplicitPlan {
            l_band: None,
            c_band: Some(BandRange { f_min_thz: 191.0, f_max_thz: 196.9, count: 60 }),
            spacing_ghz: 100.0,
            symbol_rate_gbaud: 91.6,
        },
        "system3" => ExplicitPlan {
            l_band: Some(BandRange { f_min_thz: 186.1, f_max_thz: 190.8, count: 48 }),
            c_band: Some(BandRange { f_min_thz: 191.4, f_max_thz: 196.1, count: 48 }),
            spacing_ghz: 100.0,
            symbol_rate_gbaud: 91.6,
        },
        other => return Err(SpectralError::UnknownPreset(other.to_string())),
    };
    Ok(plan)
}

pub fn build_grid(plan: &BandPlan) -> Result<ChannelGrid, SpectralError> {
    let plan = plan.resolve()?;
    if plan.spacing_ghz <= 0.0 {
        return Err(SpectralError::NonPositiveSpacing(plan.spacing_ghz));
    }
    if plan.symbol_rate_gbaud > plan.spacing_ghz {
        return Err(SpectralError::SymbolExceedsSlot {
            symbol_ghz: plan.symbol_rate_gbaud,
            spacing_ghz: plan.spacing_ghz,
        });
    }
    if plan.l_band.is_none() && plan.c_band.is_none() {
        return Err(SpectralError::EmptyPlan);
    }
    if let (Some(l), Some(c)) = (&plan.l_band, &plan.c_band) {
        if l.f_max_thz >= c.f_min_thz {
            return Err(SpectralError::OverlappingBands {
                l_max: l.f_max_thz,
                c_min: c.f_min_thz,
            });
        }
    }
    let spacing_thz = plan.spacing_ghz * 1e-3;
    let mut channels = Vec::new();
    for (band, range) in [(Band::L, plan.l_band), (Band::C, plan.c_band)] {
        let Some(r) = range else { continue };
        if r.f_min_thz >= r.f_max_thz && r.count > 1 {
            return Err(SpectralError::InvertedBand {
                band,
                f_min: r.f_min_thz,
                f_max: r.f_max_thz,
            });
        }
        let span = r.f_max_thz - r.f_min_thz;
        if r.count == 0 || (span - spacing_thz * (r.count - 1) as f64).abs() > FREQ_EPS_THZ {
            return Err(SpectralError::InconsistentBand {
                band,
                f_min: r.f_min_thz,
                f_max: r.f_max_thz,
                spacing_ghz: plan.spacing_ghz,
                count: r.count,
            });
        }
        for k in 0..r.count {
            channels.push(Channel {
                index: 0,
                // rounded to the nearest Hz-scale value so presets print cleanly
                center_thz: ((r.f_min_thz + spacing_thz * k as f64) * 1e6).round() / 1e6,
                symbol_bw_ghz: plan.symbol_rate_gbaud,
                slot_ghz: plan.spacing_ghz,
                band,
            });
        }
    }
    let grid = ChannelGrid::from_channels(channels)?;
    // adjacent bands must also respect the slot guard
    Ok(grid)
}

pub fn to_dbm(mw: f64) -> Result<f64, SpectralError> {
    if mw < 0.0 || mw.is_nan() {
        return Err(SpectralError::NegativePower(mw));
    }
    Ok(10.0 * mw.log10())
}

pub fn from_dbm(dbm: f64) -> f64 {
    if dbm == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(dbm / 10.0)
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Signal,
    AseFiller,
    Dark,
}

/// Per-channel linear power on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    freqs_thz: Vec<f64>,
    powers_mw: Vec<f64>,
    occupancy: Vec<Occupancy>,
}

impl PowerSpectrum {
    /// All channels dark.
    pub fn dark(grid: &ChannelGrid) -> Self {
        Self {
            freqs_thz: grid.frequencies(),
            powers_mw: vec![0.0; grid.len()],
            occupancy: vec![Occupancy::Dark; grid.len()],
        }
    }

    /// Every channel lit as signal with the same power.
    pub fn uniform(grid: &ChannelGrid, mw: f64) -> Self {
        Self {
            freqs_thz: grid.frequencies(),
            powers_mw: vec![mw; grid.len()],
            occupancy: vec![Occupancy::Signal; grid.len()],
        }
    }

    pub fn new(
        freqs_thz: Vec<f64>,
        powers_mw: Vec<f64>,
        occupancy: Vec<Occupancy>,
    ) -> Result<Self, SpectralError> {
        if powers_mw.len() != freqs_thz.len() {
            return Err(SpectralError::LengthMismatch {
                expected: freqs_thz.len(),
                got: powers_mw.len(),
            });
        }
        if occupancy.len() != freqs_thz.len() {
            return Err(SpectralError::LengthMismatch {
                expected: freqs_thz.len(),
                got: occupancy.len(),
            });
        }
        if let Some(&p) = powers_mw.iter().find(|p| **p < 0.0 || p.is_nan()) {
            return Err(SpectralError::NegativePower(p));
        }
        let mut s = Self {
            freqs_thz,
            powers_mw,
            occupancy,
        };
        s.normalize_dark();
        Ok(s)
    }

    fn normalize_dark(&mut self) {
        for (p, o) in self.powers_mw.iter_mut().zip(self.occupancy.iter_mut()) {
            if *o == Occupancy::Dark || *p == 0.0 {
                *p = 0.0;
                *o = Occupancy::Dark;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.powers_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers_mw.is_empty()
    }

    pub fn freqs_thz(&self) -> &[f64] {
        &self.freqs_thz
    }

    pub fn powers_mw(&self) -> &[f64] {
        &self.powers_mw
    }

    pub fn occupancy(&self) -> &[Occupancy] {
        &self.occupancy
    }

    pub fn power(&self, i: usize) -> f64 {
        self.powers_mw[i]
    }

    pub fn is_lit(&self, i: usize) -> bool {
        self.occupancy[i] != Occupancy::Dark
    }

    pub fn lit_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_lit(i)).collect()
    }

    /// Sets a channel. Non-positive power turns it dark.
    pub fn set(&mut self, i: usize, mw: f64, occ: Occupancy) {
        if mw <= 0.0 || occ == Occupancy::Dark || !mw.is_finite() {
            self.powers_mw[i] = 0.0;
            self.occupancy[i] = Occupancy::Dark;
        } else {
            self.powers_mw[i] = mw;
            self.occupancy[i] = occ;
        }
    }

    /// Replaces the linear powers keeping occupancy; channels whose power
    /// reaches zero go dark.
    pub fn with_powers(&self, powers_mw: Vec<f64>) -> Self {
        assert_eq!(powers_mw.len(), self.len());
        let mut s = Self {
            freqs_thz: self.freqs_thz.clone(),
            powers_mw,
            occupancy: self.occupancy.clone(),
        };
        for i in 0..s.len() {
            if s.occupancy[i] == Occupancy::Dark || !(s.powers_mw[i] > 0.0) {
                s.powers_mw[i] = 0.0;
                s.occupancy[i] = Occupancy::Dark;
            }
        }
        s
    }

    /// Uniform scaling of every lit channel.
    pub fn scaled(&self, factor: f64) -> Self {
        self.with_powers(self.powers_mw.iter().map(|p| p * factor).collect())
    }

    /// Powers in dBm; dark channels map to `None`.
    pub fn dbm(&self) -> Vec<Option<f64>> {
        self.powers_mw
            .iter()
            .zip(&self.occupancy)
            .map(|(p, o)| (*o != Occupancy::Dark).then(|| 10.0 * p.log10()))
            .collect()
    }

    pub fn total_mw(&self) -> f64 {
        self.powers_mw.iter().sum()
    }
}

/// Least-squares slope of lit-channel power (dB) against frequency (THz).
pub fn spectral_tilt(spectrum: &PowerSpectrum) -> Result<f64, SpectralError> {
    Ok(tilt_fit(spectrum)?.slope_db_per_thz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltFit {
    pub slope_db_per_thz: f64,
    /// Fitted level at the mean lit frequency.
    pub center_thz: f64,
    pub center_level_dbm: f64,
}

pub fn tilt_fit(spectrum: &PowerSpectrum) -> Result<TiltFit, SpectralError> {
    let lit = spectrum.lit_indices();
    if lit.len() < 2 {
        return Err(SpectralError::TooFewLit(lit.len()));
    }
    let n = lit.len() as f64;
    let fx: Vec<f64> = lit.iter().map(|&i| spectrum.freqs_thz[i]).collect();
    let py: Vec<f64> = lit
        .iter()
        .map(|&i| 10.0 * spectrum.powers_mw[i].log10())
        .collect();
    let fm = fx.iter().sum::<f64>() / n;
    let pm = py.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in fx.iter().zip(&py) {
        sxy += (x - fm) * (y - pm);
        sxx += (x - fm) * (x - fm);
    }
    if sxx == 0.0 {
        return Err(SpectralError::TooFewLit(1));
    }
    Ok(TiltFit {
        slope_db_per_thz: sxy / sxx,
        center_thz: fm,
        center_level_dbm: pm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub total_mw: f64,
    /// Mean of lit channel powers in dB; `None` when nothing is lit.
    pub mean_dbm: Option<f64>,
    pub lit_count: usize,
}

pub fn channel_stats(spectrum: &PowerSpectrum) -> ChannelStats {
    let lit = spectrum.lit_indices();
    let mean_dbm = (!lit.is_empty()).then(|| {
        lit.iter()
            .map(|&i| 10.0 * spectrum.powers_mw[i].log10())
            .sum::<f64>()
            / lit.len() as f64
    });
    ChannelStats {
        total_mw: spectrum.total_mw(),
        mean_dbm,
        lit_count: lit.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChannelRecord {
    index: usize,
    frequency_thz: f64,
    power_dbm: Option<f64>,
    occupancy: Occupancy,
}

impl Serialize for PowerSpectrum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let dbm = self.dbm();
        let rows: Vec<ChannelRecord> = (0..self.len())
            .map(|i| ChannelRecord {
                index: i,
                frequency_thz: self.freqs_thz[i],
                power_dbm: dbm[i],
                occupancy: self.occupancy[i],
            })
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PowerSpectrum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut rows = Vec::<ChannelRecord>::deserialize(d)?;
        rows.sort_by_key(|r| r.index);
        let freqs = rows.iter().map(|r| r.frequency_thz).collect();
        let powers = rows
            .iter()
            .map(|r| r.power_dbm.map(from_dbm).unwrap_or(0.0))
            .collect();
        let occ = rows
            .iter()
            .map(|r| if r.power_dbm.is_none() { Occupancy::Dark } else { r.occupancy })
            .collect();
        PowerSpectrum::new(freqs, powers, occ).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn preset_grids_have_published_channel_counts() {
        let g1 = build_grid(&BandPlan::Preset("system1".into())).unwrap();
        assert_eq!(g1.len(), 64);
        assert_abs_diff_eq!(g1.channels()[0].center_thz, 186.15, epsilon = 1e-9);
        assert_abs_diff_eq!(g1.channels()[63].center_thz, 196.0, epsilon = 1e-9);
        let g3 = build_grid(&BandPlan::Preset("system3".into())).unwrap();
        assert_eq!(g3.len(), 96);
        assert_eq!(g3.band_indices(Band::L).len(), 48);
        let g2 = build_grid(&BandPlan::Preset("system2".into())).unwrap();
        assert_eq!(g2.len(), 60);
        assert_eq!(g2.bands(), vec![Band::C]);
        for w in g1.channels().windows(2) {
            assert!(w[1].center_thz > w[0].center_thz);
        }
    }

    #[test]
    fn overlapping_and_bad_plans_are_rejected() {
        let mut p = preset_plan("system1").unwrap();
        p.l_band = Some(BandRange { f_min_thz: 187.0, f_max_thz: 191.65, count: 32 });
        assert!(matches!(
            build_grid(&BandPlan::Explicit(p)),
            Err(SpectralError::OverlappingBands { .. })
        ));
        let mut p = preset_plan("system2").unwrap();
        p.spacing_ghz = 0.0;
        assert!(matches!(
            build_grid(&BandPlan::Explicit(p)),
            Err(SpectralError::NonPositiveSpacing(_))
        ));
        assert!(build_grid(&BandPlan::Preset("nope".into())).is_err());
    }

    #[test]
    fn dbm_conversions() {
        assert_eq!(to_dbm(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(to_dbm(1000.0).unwrap(), 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(to_dbm(0.5).unwrap(), -3.0103, epsilon = 1e-4);
        assert_eq!(from_dbm(f64::NEG_INFINITY), 0.0);
        assert!(to_dbm(-1.0).is_err());
    }

    #[test]
    fn tilt_of_flat_and_ramp() {
        let g = build_grid(&BandPlan::Preset("system2".into())).unwrap();
        let flat = PowerSpectrum::uniform(&g, 1.0);
        assert_abs_diff_eq!(spectral_tilt(&flat).unwrap(), 0.0, epsilon = 1e-12);

        let f: Vec<f64> = (0..10).map(|i| 190.0 + 0.1 * i as f64).collect();
        let p: Vec<f64> = f.iter().map(|x| from_dbm(x - 190.0)).collect();
        let s = PowerSpectrum::new(f, p, vec![Occupancy::Signal; 10]).unwrap();
        assert_abs_diff_eq!(spectral_tilt(&s).unwrap(), 1.0, epsilon = 1e-9);

        let one = PowerSpectrum::new(vec![193.0], vec![1.0], vec![Occupancy::Signal]).unwrap();
        assert_eq!(spectral_tilt(&one), Err(SpectralError::TooFewLit(1)));
    }

    #[test]
    fn stats_cover_dark_and_dropped_loads() {
        let g = build_grid(&BandPlan::Preset("system1".into())).unwrap();
        let st = channel_stats(&PowerSpectrum::dark(&g));
        assert_eq!((st.total_mw, st.lit_count, st.mean_dbm), (0.0, 0, None));

        let mut s = PowerSpectrum::uniform(&g, 1.0);
        let st = channel_stats(&s);
        assert_abs_diff_eq!(st.total_mw, 64.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.mean_dbm.unwrap(), 0.0, epsilon = 1e-12);
        for i in 10..26 {
            s.set(i, 0.0, Occupancy::Dark);
        }
        let st = channel_stats(&s);
        assert_abs_diff_eq!(st.total_mw, 48.0, epsilon = 1e-12);
        assert_eq!(st.lit_count, 48);
    }

    #[test]
    fn spectrum_json_uses_dbm_rows() {
        let g = build_grid(&BandPlan::Preset("system2".into())).unwrap();
        let mut s = PowerSpectrum::uniform(&g, 2.0);
        s.set(3, 0.0, Occupancy::Dark);
        let js = serde_json::to_value(&s).unwrap();
        assert_eq!(js[3]["power_dbm"], serde_json::Value::Null);
        assert_eq!(js[0]["occupancy"], "signal");
        let back: PowerSpectrum = serde_json::from_value(js).unwrap();
        assert_eq!(back.lit_indices().len(), 59);
        assert_abs_diff_eq!(back.power(0), 2.0, epsilon = 1e-12);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dbm_round_trip(exp in -9.0f64..6.0) {
                let mw = 10f64.powf(exp);
                let back = to_dbm(from_dbm(to_dbm(mw).unwrap())).unwrap();
                prop_assert!((back - to_dbm(mw).unwrap()).abs() <= 1e-12);
            }

            #[test]
            fn tilt_ignores_uniform_offset(
                levels in proptest::collection::vec(-10.0f64..5.0, 8),
                offset in -20.0f64..20.0,
            ) {
                let f: Vec<f64> = (0..8).map(|i| 191.0 + 0.1 * i as f64).collect();
                let a = PowerSpectrum::new(f.clone(), levels.iter().map(|d| from_dbm(*d)).collect(), vec![Occupancy::Signal; 8]).unwrap();
                let b = PowerSpectrum::new(f, levels.iter().map(|d| from_dbm(d + offset)).collect(), vec![Occupancy::Signal; 8]).unwrap();
                let da = spectral_tilt(&a).unwrap();
                let db = spectral_tilt(&b).unwrap();
                prop_assert!((da - db).abs() <= 1e-9 * (1.0 + da.abs()));
            }
        }
    }
}
