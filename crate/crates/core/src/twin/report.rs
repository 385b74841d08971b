//! Prediction-error statistics between twin GSNR and measured GSNR.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::qot::QotEstimate;
use super::TwinError;

const KDE_MIN_DB: f64 = -5.0;
const KDE_MAX_DB: f64 = 5.0;
const KDE_STEP_DB: f64 = 0.05;
/// Bandwidth used when the errors have no spread.
const KDE_FALLBACK_BW_DB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsnrSample {
    pub lightpath: String,
    pub channel: usize,
    pub gsnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub lightpath: String,
    pub channel: usize,
    pub predicted_db: f64,
    pub measured_db: f64,
    /// Predicted minus measured; positive means the twin is optimistic.
    pub error_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth_db: f64,
    pub grid_db: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: Vec<ErrorSample>,
    pub mean_db: f64,
    pub mean_abs_db: f64,
    pub variance_db2: f64,
    pub kde: Kde,
}

pub fn gaussian_kde(values: &[f64]) -> Kde {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let scott = var.sqrt() * n.powf(-0.2);
    let h = if scott > 0.0 { scott } else { KDE_FALLBACK_BW_DB };
    let steps = ((KDE_MAX_DB - KDE_MIN_DB) / KDE_STEP_DB).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| KDE_MIN_DB + k as f64 * KDE_STEP_DB).collect();
    let norm = 1.0 / (n * h * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|x| norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Kde {
        bandwidth_db: h,
        grid_db: grid,
        density,
    }
}

/// Matches predictions and measurements on (lightpath, channel).
pub fn error_report(predictions: &[QotEstimate], measurements: &[GsnrSample]) -> Result<ErrorReport, TwinError> {
    let predicted: BTreeMap<(&str, usize), f64> = predictions
        .iter()
        .flat_map(|q| q.channels.iter().map(move |c| ((q.lightpath.as_str(), c.channel), c.gsnr_db)))
        .collect();
    let mut samples = Vec::new();
    for m in measurements {
        if let Some(&p) = predicted.get(&(m.lightpath.as_str(), m.channel)) {
            samples.push(ErrorSample {
                lightpath: m.lightpath.clone(),
                channel: m.channel,
                predicted_db: p,
                measured_db: m.gsnr_db,
                error_db: p - m.gsnr_db,
            });
        }
    }
    if samples.is_empty() {
        return Err(TwinError::EmptyIntersection);
    }
    let e: Vec<f64> = samples.iter().map(|s| s.error_db).collect();
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let mean_abs = e.iter().map(|x| x.abs()).sum::<f64>() / n;
    let variance = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(ErrorReport {
        samples,
        mean_db: mean,
        mean_abs_db: mean_abs,
        variance_db2: variance,
        kde: gaussian_kde(&e),
    })
}
