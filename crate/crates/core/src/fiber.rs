//! Single-span fiber physics: Raman-coupled power evolution and closed-form GN
//! nonlinear interference.
//!
//! Units inside the integrator are km, THz and mW. Raman coefficients are quoted
//! per (W·km·THz) and converted once when the derivative is set up.

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{db_to_lin, PowerSpectrum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("invalid span `{id}`: {reason}")]
    InvalidSpan { id: String, reason: String },
    #[error("integration step must be positive, got {0} km")]
    BadStep(f64),
    #[error("power state became non-finite at z = {z_km:.3} km")]
    NonFinite { z_km: f64 },
    #[error("GN model needs non-zero dispersion")]
    ZeroDispersion,
    #[error("spectrum length {got} does not match {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("effective length needs at least two profile samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberType {
    G652,
    G654,
}

/// Handbook constants for a fiber type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberConstants {
    pub attenuation_db_per_km: f64,
    pub gamma_per_w_km: f64,
    pub beta2_ps2_per_km: f64,
}

impl FiberType {
    pub fn constants(self) -> FiberConstants {
        match self {
            FiberType::G652 => FiberConstants {
                attenuation_db_per_km: 0.20,
                gamma_per_w_km: 1.3,
                beta2_ps2_per_km: -21.7,
            },
            FiberType::G654 => FiberConstants {
                attenuation_db_per_km: 0.17,
                gamma_per_w_km: 0.8,
                beta2_ps2_per_km: -26.0,
            },
        }
    }
}

pub const DEFAULT_RAMAN_SLOPE: f64 = 0.028;
pub const DEFAULT_RAMAN_CUTOFF_THZ: f64 = 14.0;

/// Attenuation in dB/km, either flat or piecewise linear over frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attenuation {
    Flat(f64),
    /// `[frequency_thz, db_per_km]` nodes, ascending in frequency.
    Table(Vec<[f64; 2]>),
}

impl Attenuation {
    pub fn db_per_km(&self, f_thz: f64) -> f64 {
        match self {
            Attenuation::Flat(a) => *a,
            Attenuation::Table(nodes) => interp_linear(nodes, f_thz),
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            Attenuation::Flat(a) => *a,
            Attenuation::Table(n) => n.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Piecewise-linear interpolation, clamped at the end nodes.
pub(crate) fn interp_linear(nodes: &[[f64; 2]], x: f64) -> f64 {
    match nodes.len() {
        0 => 0.0,
        1 => nodes[0][1],
        _ => {
            if x <= nodes[0][0] {
                return nodes[0][1];
            }
            let last = nodes[nodes.len() - 1];
            if x >= last[0] {
                return last[1];
            }
            let k = nodes.partition_point(|p| p[0] <= x);
            let (a, b) = (nodes[k - 1], nodes[k]);
            a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_aeff() -> f64 {
    80.0
}

/// Physical parameters of one fiber span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanParams {
    pub id: String,
    pub fiber: FiberType,
    pub length_km: f64,
    pub attenuation_db_per_km: Attenuation,
    /// Raman gain slope, per (W·km·THz).
    pub raman_slope: f64,
    /// Calibrated multiplier on the Raman profile, nominal 1.
    pub raman_scale: f64,
    pub raman_cutoff_thz: f64,
    pub input_connector_loss_db: f64,
    pub output_connector_loss_db: f64,
    pub gamma_per_w_km: f64,
    pub beta2_ps2_per_km: f64,
    /// When false, `raman_slope` is per (m/W·THz) and is divided by the
    /// effective area before use.
    #[serde(default = "default_true")]
    pub effective_area_folded: bool,
    #[serde(default = "default_aeff")]
    pub effective_area_um2: f64,
}

impl SpanParams {
    /// A span with handbook constants and the default Raman profile.
    pub fn nominal(id: impl Into<String>, fiber: FiberType, length_km: f64) -> Self {
        let c = fiber.constants();
        Self {
            id: id.into(),
            fiber,
            length_km,
            attenuation_db_per_km: Attenuation::Flat(c.attenuation_db_per_km),
            raman_slope: DEFAULT_RAMAN_SLOPE,
            raman_scale: 1.0,
            raman_cutoff_thz: DEFAULT_RAMAN_CUTOFF_THZ,
            input_connector_loss_db: 0.5,
            output_connector_loss_db: 0.5,
            gamma_per_w_km: c.gamma_per_w_km,
            beta2_ps2_per_km: c.beta2_ps2_per_km,
            effective_area_folded: true,
            effective_area_um2: 80.0,
        }
    }

    pub fn validate(&self) -> Result<(), FiberError> {
        let bad = |reason: &str| {
            Err(FiberError::InvalidSpan {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.length_km > 0.0) {
            return bad("length must be positive");
        }
        if !(self.attenuation_db_per_km.min_value() >= 0.0) {
            return bad("attenuation must be non-negative");
        }
        if !(0.2..=5.0).contains(&self.raman_scale) {
            return bad("raman_scale outside [0.2, 5]");
        }
        for l in [self.input_connector_loss_db, self.output_connector_loss_db] {
            if !(0.0..=10.0).contains(&l) {
                return bad("connector loss outside [0, 10] dB");
            }
        }
        if !(self.raman_cutoff_thz > 0.0) {
            return bad("raman cutoff must be positive");
        }
        Ok(())
    }

    /// Raman slope actually used, per (W·km·THz).
    fn folded_slope(&self) -> f64 {
        if self.effective_area_folded {
            self.raman_slope
        } else {
            // per (m/W) over m² -> per (W·m) -> per (W·km)
            self.raman_slope / (self.effective_area_um2 * 1e-12) * 1e3
        }
    }

    /// Total passive loss at a frequency, connectors included (dB).
    pub fn passive_loss_db(&self, f_thz: f64) -> f64 {
        self.input_connector_loss_db
            + self.output_connector_loss_db
            + self.attenuation_db_per_km.db_per_km(f_thz) * self.length_km
    }
}

/// Triangular Raman gain profile, per (W·km), for a pump `delta_f_thz` above the signal.
pub fn raman_gain(delta_f_thz: f64, params: &SpanParams) -> f64 {
    if delta_f_thz > 0.0 && delta_f_thz <= params.raman_cutoff_thz {
        params.raman_scale * params.folded_slope() * delta_f_thz
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub step_km: f64,
    /// In-fiber positions (km) at which to record the profile.
    pub sample_points: Vec<f64>,
    pub srs_enabled: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            step_km: 0.1,
            sample_points: Vec::new(),
            srs_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub length_km: f64,
    /// In-fiber power at z = 0, after the input connector.
    pub launch: PowerSpectrum,
    /// In-fiber power at z = length, before the output connector.
    pub fiber_end: PowerSpectrum,
    /// Span output, after the output connector.
    pub output: PowerSpectrum,
    /// In-fiber samples at the requested positions (always includes 0 and length).
    pub sampled_profile: Vec<(f64, PowerSpectrum)>,
    /// `∫P_i dz / P_i(0)` at integration-step resolution; 0 for dark channels.
    pub effective_length_km: Vec<f64>,
}

/// SRS derivative over the lit channels, O(N) per evaluation using windowed sums.
struct SrsField {
    f: Vec<f64>,
    alpha: Vec<f64>,
    /// Raman slope per (mW·km·THz).
    c: f64,
    srs: bool,
    /// exclusive upper index of channels within the cutoff above `i`
    hi: Vec<usize>,
    /// first index of channels within the cutoff below `i`
    lo: Vec<usize>,
    pa: Vec<f64>,
    pb: Vec<f64>,
    pc: Vec<f64>,
}

impl SrsField {
    fn new(f: Vec<f64>, alpha: Vec<f64>, c: f64, cutoff: f64, srs: bool) -> Self {
        let n = f.len();
        let mut hi = vec![0; n];
        let mut lo = vec![0; n];
        let mut h = 0;
        let mut l = 0;
        for i in 0..n {
            if h < i + 1 {
                h = i + 1;
            }
            while h < n && f[h] - f[i] <= cutoff {
                h += 1;
            }
            hi[i] = h;
            while l < i && f[i] - f[l] > cutoff {
                l += 1;
            }
            lo[i] = l;
        }
        Self {
            f,
            alpha,
            c,
            srs,
            hi,
            lo,
            pa: vec![0.0; n + 1],
            pb: vec![0.0; n + 1],
            pc: vec![0.0; n + 1],
        }
    }

    fn eval(&mut self, p: &[f64], out: &mut [f64]) {
        let n = p.len();
        if !self.srs || n < 2 {
            for i in 0..n {
                out[i] = -self.alpha[i] * p[i];
            }
            return;
        }
        for j in 0..n {
            self.pa[j + 1] = self.pa[j] + p[j];
            self.pb[j + 1] = self.pb[j] + self.f[j] * p[j];
            self.pc[j + 1] = self.pc[j] + p[j] / self.f[j];
        }
        for i in 0..n {
            let fi = self.f[i];
            // pumps above i: sum (f_j - f_i) P_j
            let (a0, a1) = (i + 1, self.hi[i]);
            let gain = (self.pb[a1] - self.pb[a0]) - fi * (self.pa[a1] - self.pa[a0]);
            // signals below i: f_i * sum (f_i - f_j) P_j / f_j
            let (b0, b1) = (self.lo[i], i);
            let loss = fi * (fi * (self.pc[b1] - self.pc[b0]) - (self.pa[b1] - self.pa[b0]));
            out[i] = p[i] * (-self.alpha[i] + self.c * (gain - loss));
        }
    }
}

/// Integrates the coupled power evolution over one span with fixed-step RK4.
pub fn propagate(
    span: &SpanParams,
    input: &PowerSpectrum,
    opts: &PropagationOptions,
) -> Result<PropagationResult, FiberError> {
    span.validate()?;
    if !(opts.step_km > 0.0) {
        return Err(FiberError::BadStep(opts.step_km));
    }
    let lit = input.lit_indices();
    let n_all = input.len();
    let freqs = input.freqs_thz();
    let f: Vec<f64> = lit.iter().map(|&i| freqs[i]).collect();
    let alpha: Vec<f64> = f
        .iter()
        .map(|&fi| span.attenuation_db_per_km.db_per_km(fi) * LN_10 / 10.0)
        .collect();
    // per (W·km·THz) -> per (mW·km·THz)
    let c = span.raman_scale * span.folded_slope() * 1e-3;
    let mut field = SrsField::new(f, alpha, c, span.raman_cutoff_thz, opts.srs_enabled);

    let t_in = db_to_lin(-span.input_connector_loss_db);
    let t_out = db_to_lin(-span.output_connector_loss_db);
    let p0: Vec<f64> = lit.iter().map(|&i| input.power(i) * t_in).collect();

    let scatter = |state: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; n_all];
        for (k, &i) in lit.iter().enumerate() {
            full[i] = state[k];
        }
        full
    };

    let len = span.length_km;
    let mut breaks: Vec<f64> = opts
        .sample_points
        .iter()
        .copied()
        .filter(|z| z.is_finite() && *z > 0.0 && *z < len)
        .collect();
    breaks.push(len);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let m = p0.len();
    let mut p = p0.clone();
    let mut integral = vec![0.0; m];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut profile = vec![(0.0, input.with_powers(scatter(&p)))];
    let mut z = 0.0;
    for &zb in &breaks {
        let seg = zb - z;
        let steps = (seg / opts.step_km).ceil().max(1.0) as usize;
        let h = seg / steps as f64;
        for s in 0..steps {
            field.eval(&p, &mut k1);
            for i in 0..m {
                tmp[i] = p[i] + 0.5 * h * k1[i];
            }
            field.eval(&tmp, &mut k2);
            for i in 0..m {
                tmp[i] = p[i] + 0.5 * h * k2[i];
            }
            field.eval(&tmp, &mut k3);
            for i in 0..m {
                tmp[i] = p[i] + h * k3[i];
            }
            field.eval(&tmp, &mut k4);
            for i in 0..m {
                let next = p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                integral[i] += 0.5 * h * (p[i] + next);
                p[i] = next;
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(FiberError::NonFinite {
                    z_km: z + h * (s + 1) as f64,
                });
            }
        }
        z = zb;
        profile.push((zb, input.with_powers(scatter(&p))));
    }
    let keep: Vec<f64> = {
        let mut v = vec![0.0, len];
        v.extend(opts.sample_points.iter().copied());
        v
    };
    profile.retain(|(zp, _)| keep.iter().any(|k| (k - zp).abs() < 1e-9));

    let mut leff = vec![0.0; n_all];
    for (k, &i) in lit.iter().enumerate() {
        if p0[k] > 0.0 {
            leff[i] = integral[k] / p0[k];
        }
    }
    let launch = input.with_powers(scatter(&p0));
    let fiber_end = input.with_powers(scatter(&p));
    let output = fiber_end.scaled(t_out);
    Ok(PropagationResult {
        length_km: len,
        launch,
        fiber_end,
        output,
        sampled_profile: profile,
        effective_length_km: leff,
    })
}

/// Trapezoidal effective lengths from the sampled profile.
pub fn effective_lengths(prop: &PropagationResult) -> Result<Vec<f64>, FiberError> {
    let s = &prop.sampled_profile;
    if s.len() < 2 {
        return Err(FiberError::TooFewSamples(s.len()));
    }
    let n = s[0].1.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let p0 = s[0].1.power(i);
        if p0 <= 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for w in s.windows(2) {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1.power(i) + w[1].1.power(i));
        }
        *o = acc / p0;
    }
    Ok(out)
}

/// NLI accrued over one span, referenced to the span output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliEstimate {
    /// NLI power in the channel bandwidth (mW).
    pub nli_mw: Vec<f64>,
    /// NLI-to-signal ratio per channel; 0 for dark channels.
    pub isnr: Vec<f64>,
}

/// Self- and cross-channel GN coefficients (1/W²) for channel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnCoefficients {
    pub sci: f64,
    /// `(j, eta_xci_ij)` for every other lit channel.
    pub xci: Vec<(usize, f64)>,
}

/// Asymptotic effective length 1/α (km); falls back to the span length for a lossless fiber.
pub fn asymptotic_length_km(span: &SpanParams, f_thz: f64) -> f64 {
    let a = span.attenuation_db_per_km.db_per_km(f_thz) * LN_10 / 10.0;
    if a > 0.0 {
        1.0 / a
    } else {
        span.length_km
    }
}

pub fn gn_coefficients(
    span: &SpanParams,
    spectrum: &PowerSpectrum,
    symbol_bw_thz: &[f64],
    leff_km: &[f64],
    i: usize,
) -> Result<GnCoefficients, FiberError> {
    let b2 = span.beta2_ps2_per_km.abs();
    if b2 == 0.0 {
        return Err(FiberError::ZeroDispersion);
    }
    let f = spectrum.freqs_thz();
    let la = asymptotic_length_km(span, f[i]);
    let g2 = span.gamma_per_w_km * span.gamma_per_w_km;
    let le2 = leff_km[i] * leff_km[i];
    let bi = symbol_bw_thz[i];
    let x = PI * PI / 2.0 * b2 * la * bi * bi;
    let sci = 8.0 / 27.0 * g2 * le2 * x.asinh() / (PI * b2 * la * bi * bi);
    let mut xci = Vec::new();
    for j in spectrum.lit_indices() {
        if j == i {
            continue;
        }
        let bj = symbol_bw_thz[j];
        let df = (f[j] - f[i]).abs();
        let ratio = ((df + bj / 2.0) / (df - bj / 2.0)).abs();
        let eta = 16.0 / 27.0 * g2 * le2 * ratio.ln() / (2.0 * PI * b2 * la * bj * bj);
        xci.push((j, eta));
    }
    Ok(GnCoefficients { sci, xci })
}

/// Closed-form incoherent GN NLI for one span, using the SRS-resolved effective lengths.
pub fn nli_for_span(
    span: &SpanParams,
    launch: &PowerSpectrum,
    prop: &PropagationResult,
    symbol_bw_thz: &[f64],
) -> Result<NliEstimate, FiberError> {
    if launch.len() != prop.launch.len() {
        return Err(FiberError::LengthMismatch {
            expected: prop.launch.len(),
            got: launch.len(),
        });
    }
    if symbol_bw_thz.len() != launch.len() {
        return Err(FiberError::LengthMismatch {
            expected: launch.len(),
            got: symbol_bw_thz.len(),
        });
    }
    let fib = &prop.launch;
    let n = fib.len();
    let mut nli = vec![0.0; n];
    let mut isnr = vec![0.0; n];
    for i in fib.lit_indices() {
        let coef = gn_coefficients(span, fib, symbol_bw_thz, &prop.effective_length_km, i)?;
        let pi_w = fib.power(i) * 1e-3;
        let mut ratio = coef.sci * pi_w * pi_w;
        for (j, eta) in coef.xci {
            let pj = fib.power(j) * 1e-3;
            ratio += eta * pj * pj;
        }
        isnr[i] = ratio;
        nli[i] = ratio * prop.output.power(i);
    }
    Ok(NliEstimate { nli_mw: nli, isnr })
}
