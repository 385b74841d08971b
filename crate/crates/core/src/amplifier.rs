//! EDFA gain shaping, ASE generation and output-power limiting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiber::interp_linear;
use crate::spectral::{db_to_lin, from_dbm, Band, ChannelGrid, PowerSpectrum};

pub const PLANCK: f64 = 6.626_070_15e-34;
/// ASE/GSNR reference bandwidth (0.1 nm near 1550 nm).
pub const REFERENCE_BANDWIDTH_GHZ: f64 = 12.5;
pub const DEFAULT_NF_C_DB: f64 = 5.0;
pub const DEFAULT_NF_L_DB: f64 = 6.0;
/// Frequency slack allowed at the band edges (THz).
const EDGE_EPS_THZ: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmpError {
    #[error("amplifier `{id}`: {reason}")]
    InvalidConfig { id: String, reason: String },
    #[error("amplifier `{id}`: {f_thz} THz is outside [{f_min}, {f_max}] THz")]
    OutOfBand {
        id: String,
        f_thz: f64,
        f_min: f64,
        f_max: f64,
    },
    #[error("amplifier `{id}` covers no channel of the input spectrum")]
    BandMismatch { id: String },
    #[error("lit channel {0} is not covered by any amplifier in the stage")]
    Uncovered(usize),
    #[error("ASE stage list has {stages} entries but {transfers} transfer vectors")]
    LengthMismatch { stages: usize, transfers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AmpBand {
    C,
    L,
    #[serde(rename = "CL")]
    Cl,
}

impl AmpBand {
    pub fn covers(self, band: Band) -> bool {
        matches!(
            (self, band),
            (AmpBand::Cl, _) | (AmpBand::C, Band::C) | (AmpBand::L, Band::L)
        )
    }
}

/// Configuration and physical state of one logical EDFA.
///
/// `gain_db`, `tilt_db`, `voa_out_db`, `max_pout_dbm` and `target_pch_dbm` are
/// operator settings; `ripple_db` and `nf_db` describe the device itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfaConfig {
    pub id: String,
    pub site: String,
    /// Position on the link: 0 is a booster ahead of the first span, `k` sits after span `k`.
    pub stage: usize,
    pub band: AmpBand,
    pub f_min_thz: f64,
    pub f_max_thz: f64,
    pub gain_db: f64,
    /// Edge-to-edge gain tilt across `[f_min, f_max]`, anchored at the band centre.
    pub tilt_db: f64,
    /// Per-node gain deviation, nodes evenly spread over the band.
    #[serde(default)]
    pub ripple_db: Vec<f64>,
    /// `[frequency_thz, nf_db]` nodes.
    pub nf_db: Vec<[f64; 2]>,
    #[serde(default)]
    pub voa_out_db: f64,
    pub max_pout_dbm: f64,
    /// Per-channel output power set-point. When present the flat gain is
    /// resolved from the lit input load instead of `gain_db`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pch_dbm: Option<f64>,
}

impl EdfaConfig {
    /// A flat-gain amplifier covering `band` of `grid`, with default NF and no ripple.
    pub fn for_band(
        id: impl Into<String>,
        site: impl Into<String>,
        stage: usize,
        grid: &ChannelGrid,
        band: Band,
        gain_db: f64,
    ) -> Self {
        let (f_min, f_max) = grid.band_edges(band).unwrap_or((0.0, 0.0));
        let nf = match band {
            Band::C => DEFAULT_NF_C_DB,
            Band::L => DEFAULT_NF_L_DB,
        };
        Self {
            id: id.into(),
            site: site.into(),
            stage,
            band: match band {
                Band::C => AmpBand::C,
                Band::L => AmpBand::L,
            },
            f_min_thz: f_min,
            f_max_thz: f_max,
            gain_db,
            tilt_db: 0.0,
            ripple_db: vec![0.0; grid.band_indices(band).len()],
            nf_db: vec![[f_min, nf]],
            voa_out_db: 0.0,
            max_pout_dbm: 30.0,
            target_pch_dbm: None,
        }
    }

    pub fn validate(&self) -> Result<(), AmpError> {
        let bad = |reason: String| {
            Err(AmpError::InvalidConfig {
                id: self.id.clone(),
                reason,
            })
        };
        if !(0.0..=40.0).contains(&self.gain_db) {
            return bad(format!("gain {} dB outside [0, 40]", self.gain_db));
        }
        if self.tilt_db.abs() > 6.0 {
            return bad(format!("tilt {} dB exceeds 6 dB", self.tilt_db));
        }
        if let Some(r) = self.ripple_db.iter().find(|r| r.abs() > 3.0) {
            return bad(format!("ripple {r} dB exceeds 3 dB"));
        }
        if self.nf_db.is_empty() {
            return bad("noise figure table is empty".into());
        }
        if let Some(nf) = self.nf_db.iter().find(|n| !(3.0..=10.0).contains(&n[1])) {
            return bad(format!("noise figure {} dB outside [3, 10]", nf[1]));
        }
        if self.voa_out_db < 0.0 {
            return bad("negative VOA attenuation".into());
        }
        if self.f_max_thz < self.f_min_thz {
            return bad("inverted band edges".into());
        }
        Ok(())
    }

    /// Copies the operator settings of `other`, keeping this device's ripple and NF.
    pub fn with_settings_from(&self, other: &EdfaConfig) -> EdfaConfig {
        EdfaConfig {
            gain_db: other.gain_db,
            tilt_db: other.tilt_db,
            voa_out_db: other.voa_out_db,
            max_pout_dbm: other.max_pout_dbm,
            target_pch_dbm: other.target_pch_dbm,
            ..self.clone()
        }
    }

    /// True when the settings (not the device state) of two configs agree.
    pub fn same_settings(&self, other: &EdfaConfig) -> bool {
        self.gain_db == other.gain_db
            && self.tilt_db == other.tilt_db
            && self.voa_out_db == other.voa_out_db
            && self.max_pout_dbm == other.max_pout_dbm
            && self.target_pch_dbm == other.target_pch_dbm
    }

    fn in_band(&self, f_thz: f64) -> bool {
        f_thz >= self.f_min_thz - EDGE_EPS_THZ && f_thz <= self.f_max_thz + EDGE_EPS_THZ
    }

    fn ripple_at(&self, f_thz: f64) -> f64 {
        let n = self.ripple_db.len();
        match n {
            0 => 0.0,
            1 => self.ripple_db[0],
            _ => {
                let width = self.f_max_thz - self.f_min_thz;
                if width <= 0.0 {
                    return self.ripple_db[0];
                }
                let x = ((f_thz - self.f_min_thz) / width * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                let k = (x.floor() as usize).min(n - 2);
                let t = x - k as f64;
                self.ripple_db[k] * (1.0 - t) + self.ripple_db[k + 1] * t
            }
        }
    }

    /// Gain shape relative to the flat component: tilt plus ripple (dB).
    fn shape_db(&self, f_thz: f64) -> f64 {
        let width = self.f_max_thz - self.f_min_thz;
        let center = 0.5 * (self.f_min_thz + self.f_max_thz);
        let tilt = if width > 0.0 {
            self.tilt_db * (f_thz - center) / width
        } else {
            0.0
        };
        tilt + self.ripple_at(f_thz)
    }

    pub fn noise_figure_db(&self, f_thz: f64) -> f64 {
        interp_linear(&self.nf_db, f_thz)
    }
}

/// Configured net gain at a frequency: flat + tilt + ripple − VOA (dB).
pub fn gain_db_at(config: &EdfaConfig, f_thz: f64) -> Result<f64, AmpError> {
    if !config.in_band(f_thz) {
        return Err(AmpError::OutOfBand {
            id: config.id.clone(),
            f_thz,
            f_min: config.f_min_thz,
            f_max: config.f_max_thz,
        });
    }
    Ok(config.gain_db + config.shape_db(f_thz) - config.voa_out_db)
}

/// ASE power (mW) in the reference bandwidth for a linear gain and NF.
pub fn ase_power_mw(f_thz: f64, nf_db: f64, gain_lin: f64) -> f64 {
    if gain_lin <= 1.0 {
        return 0.0;
    }
    let b_ref_hz = REFERENCE_BANDWIDTH_GHZ * 1e9;
    PLANCK * f_thz * 1e12 * db_to_lin(nf_db) * (gain_lin - 1.0) * b_ref_hz * 1e3
}

/// Per-channel ASE in the reference bandwidth (mW).
pub type AseSpectrum = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct EdfaOutput {
    pub output: PowerSpectrum,
    pub ase: AseSpectrum,
    /// Net linear transfer applied to every in-band channel (gain, VOA and clamp).
    pub transfer: Vec<f64>,
    pub clamped: bool,
}

/// Applies one amplifier to the in-band channels of `input`; other channels pass unchanged.
pub fn apply_edfa(config: &EdfaConfig, input: &PowerSpectrum) -> Result<EdfaOutput, AmpError> {
    config.validate()?;
    let f = input.freqs_thz();
    let idx: Vec<usize> = (0..input.len()).filter(|&i| config.in_band(f[i])).collect();
    if idx.is_empty() {
        return Err(AmpError::BandMismatch {
            id: config.id.clone(),
        });
    }
    let shape: Vec<f64> = idx.iter().map(|&i| db_to_lin(config.shape_db(f[i]))).collect();
    let lit: Vec<usize> = (0..idx.len()).filter(|&k| input.is_lit(idx[k])).collect();
    let voa = db_to_lin(-config.voa_out_db);

    let flat = match config.target_pch_dbm {
        Some(target) => {
            let shaped_in: f64 = lit.iter().map(|&k| input.power(idx[k]) * shape[k]).sum();
            from_dbm(target) * lit.len() as f64 / (shaped_in * voa)
        }
        _ => db_to_lin(config.gain_db),
    };

    let mut powers = input.powers_mw().to_vec();
    let mut ase = vec![0.0; input.len()];
    let mut transfer = vec![1.0; input.len()];
    if lit.is_empty() {
        // loss-of-signal shutdown
        for &i in &idx {
            powers[i] = 0.0;
            transfer[i] = 0.0;
        }
        return Ok(EdfaOutput {
            output: input.with_powers(powers),
            ase,
            transfer,
            clamped: false,
        });
    }
    for (k, &i) in idx.iter().enumerate() {
        let g = flat * shape[k];
        ase[i] = ase_power_mw(f[i], config.noise_figure_db(f[i]), g) * voa;
        powers[i] = input.power(i) * g * voa;
        transfer[i] = g * voa;
    }
    let total: f64 = idx.iter().map(|&i| powers[i] + ase[i]).sum();
    let cap = from_dbm(config.max_pout_dbm);
    let clamped = total >= cap;
    if clamped && total > 0.0 {
        let s = cap / total;
        for &i in &idx {
            powers[i] *= s;
            ase[i] *= s;
            transfer[i] *= s;
        }
    }
    Ok(EdfaOutput {
        output: input.with_powers(powers),
        ase,
        transfer,
        clamped,
    })
}

/// Applies all amplifiers of one site; every lit channel must be covered by exactly one.
pub fn apply_stage(amps: &[&EdfaConfig], input: &PowerSpectrum) -> Result<EdfaOutput, AmpError> {
    let f = input.freqs_thz().to_vec();
    for i in input.lit_indices() {
        if !amps.iter().any(|a| a.in_band(f[i])) {
            return Err(AmpError::Uncovered(i));
        }
    }
    let mut cur = input.clone();
    let mut ase = vec![0.0; input.len()];
    let mut transfer = vec![1.0; input.len()];
    let mut clamped = false;
    for amp in amps {
        let out = apply_edfa(amp, &cur)?;
        for i in 0..input.len() {
            if amp.in_band(f[i]) {
                ase[i] = out.ase[i];
                transfer[i] = out.transfer[i];
            }
        }
        clamped |= out.clamped;
        cur = out.output;
    }
    Ok(EdfaOutput {
        output: cur,
        ase,
        transfer,
        clamped,
    })
}

/// Refers every stage's ASE to the receiver: `transfers[k]` is the net
/// per-channel transfer between stage `k`'s output and the next reference point.
pub fn ase_accumulate(per_stage_ase: &[AseSpectrum], transfers: &[Vec<f64>]) -> Result<AseSpectrum, AmpError> {
    if per_stage_ase.len() != transfers.len() {
        return Err(AmpError::LengthMismatch {
            stages: per_stage_ase.len(),
            transfers: transfers.len(),
        });
    }
    let Some(n) = per_stage_ase.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    let mut acc = vec![0.0; n];
    for (ase, t) in per_stage_ase.iter().zip(transfers) {
        for i in 0..n {
            acc[i] = (acc[i] + ase[i]) * t[i];
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_grid, BandPlan, Occupancy};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn c_grid() -> ChannelGrid {
        build_grid(&BandPlan::Preset("system2".into())).unwrap()
    }

    #[test]
    fn flat_gain_is_frequency_independent() {
        let g = c_grid();
        let amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 20.0);
        for ch in g.channels() {
            assert_abs_diff_eq!(gain_db_at(&amp, ch.center_thz).unwrap(), 20.0, epsilon = 1e-12);
        }
        assert!(matches!(gain_db_at(&amp, 185.0), Err(AmpError::OutOfBand { .. })));
    }

    #[test]
    fn tilt_is_anchored_at_band_centre() {
        let g = c_grid();
        let mut amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 20.0);
        amp.tilt_db = 2.0;
        assert_abs_diff_eq!(gain_db_at(&amp, amp.f_max_thz).unwrap(), 21.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gain_db_at(&amp, amp.f_min_thz).unwrap(), 19.0, epsilon = 1e-12);
    }

    #[test]
    fn ripple_is_reproduced_at_nodes() {
        let g = c_grid();
        let mut amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 20.0);
        amp.ripple_db = (0..60).map(|k| ((k * 7) % 11) as f64 * 0.1 - 0.5).collect();
        for (k, ch) in g.channels().iter().enumerate() {
            assert_abs_diff_eq!(
                gain_db_at(&amp, ch.center_thz).unwrap(),
                20.0 + amp.ripple_db[k],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn unity_gain_passes_input_without_noise() {
        let g = c_grid();
        let amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 0.0);
        let input = PowerSpectrum::uniform(&g, 0.7);
        let out = apply_edfa(&amp, &input).unwrap();
        assert_eq!(out.output, input);
        assert!(out.ase.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn ase_matches_hand_evaluation() {
        let input = PowerSpectrum::new(vec![193.5], vec![0.001], vec![Occupancy::Signal]).unwrap();
        let amp = EdfaConfig {
            id: "a".into(),
            site: "s".into(),
            stage: 1,
            band: AmpBand::C,
            f_min_thz: 193.5,
            f_max_thz: 193.5,
            gain_db: 20.0,
            tilt_db: 0.0,
            ripple_db: vec![],
            nf_db: vec![[193.5, 5.0]],
            voa_out_db: 0.0,
            max_pout_dbm: 30.0,
            target_pch_dbm: None,
        };
        let out = apply_edfa(&amp, &input).unwrap();
        // 6.62607015e-34 * 193.5e12 * 10^0.5 * 99 * 12.5e9 W, in mW
        assert_relative_eq!(out.ase[0], 5.017440e-4, max_relative = 1e-6);
    }

    #[test]
    fn clamp_holds_total_at_limit() {
        let g = c_grid();
        let mut amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 10.0);
        amp.nf_db = vec![[190.0, 3.0]];
        let input = PowerSpectrum::uniform(&g, 1.0);
        let raw = apply_edfa(&amp, &input).unwrap();
        amp.max_pout_dbm = 10.0 * (raw.output.total_mw() + raw.ase.iter().sum::<f64>()).log10();
        let out = apply_edfa(&amp, &input).unwrap();
        assert!(out.clamped);
        let total = out.output.total_mw() + out.ase.iter().sum::<f64>();
        assert_relative_eq!(10.0 * total.log10(), amp.max_pout_dbm, max_relative = 1e-12);

        amp.max_pout_dbm -= 3.0;
        let out = apply_edfa(&amp, &input).unwrap();
        let r0 = out.output.power(0) / raw.output.power(0);
        for i in 0..g.len() {
            assert_relative_eq!(out.output.power(i) / raw.output.power(i), r0, max_relative = 1e-12);
        }
    }

    #[test]
    fn power_control_resolves_flat_gain_from_load() {
        let g = c_grid();
        let mut amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 25.0);
        amp.target_pch_dbm = Some(1.0);
        let mut input = PowerSpectrum::uniform(&g, 0.01);
        for i in 0..30 {
            input.set(i, 0.0, Occupancy::Dark);
        }
        let out = apply_edfa(&amp, &input).unwrap();
        let mean = out.output.total_mw() / 30.0;
        assert_relative_eq!(10.0 * mean.log10(), 1.0, max_relative = 1e-12);
        assert_eq!(out.output.power(3), 0.0);
    }

    #[test]
    fn band_mismatch_and_stage_coverage() {
        let g = build_grid(&BandPlan::Preset("system3".into())).unwrap();
        let c_only = c_grid();
        let amp_l = EdfaConfig::for_band("l", "s", 1, &g, Band::L, 20.0);
        let input = PowerSpectrum::uniform(&c_only, 1.0);
        assert!(matches!(apply_edfa(&amp_l, &input), Err(AmpError::BandMismatch { .. })));
        let full = PowerSpectrum::uniform(&g, 0.01);
        assert!(matches!(apply_stage(&[&amp_l], &full), Err(AmpError::Uncovered(_))));
        let amp_c = EdfaConfig::for_band("c", "s", 1, &g, Band::C, 17.0);
        let out = apply_stage(&[&amp_l, &amp_c], &full).unwrap();
        assert!(!out.clamped);
        assert_relative_eq!(out.output.power(0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(out.output.power(95), 0.50118723362727, max_relative = 1e-9);
    }

    #[test]
    fn ase_accumulation_cases() {
        let one = vec![vec![1e-4, 2e-4]];
        assert_eq!(ase_accumulate(&one, &[vec![1.0, 1.0]]).unwrap(), one[0]);
        let two = vec![vec![1e-4, 2e-4], vec![1e-4, 2e-4]];
        let acc = ase_accumulate(&two, &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(acc, vec![2e-4, 4e-4]);
        assert!(ase_accumulate(&two, &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn dark_input_mutes_the_amplifier() {
        let g = c_grid();
        let amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 20.0);
        let out = apply_edfa(&amp, &PowerSpectrum::dark(&g)).unwrap();
        assert_eq!(out.output.total_mw(), 0.0);
        assert!(out.ase.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn config_bounds() {
        let g = c_grid();
        let mut amp = EdfaConfig::for_band("a", "s", 1, &g, Band::C, 41.0);
        assert!(amp.validate().is_err());
        amp.gain_db = 20.0;
        amp.tilt_db = 7.0;
        assert!(amp.validate().is_err());
        amp.tilt_db = 0.0;
        amp.nf_db = vec![[190.0, 2.0]];
        assert!(amp.validate().is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ase_increases_with_nf_and_gain(nf in 3.0f64..9.9, g_db in 0.1f64..29.9, d in 0.01f64..0.1) {
                let a = ase_power_mw(193.0, nf, db_to_lin(g_db));
                prop_assert!(ase_power_mw(193.0, nf + d, db_to_lin(g_db)) > a);
                prop_assert!(ase_power_mw(193.0, nf, db_to_lin(g_db + d)) > a);
            }
        }
    }
}
