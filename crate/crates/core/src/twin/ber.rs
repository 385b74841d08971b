//! Pre-FEC BER and GSNR conversions.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::spectral::db_to_lin;
use crate::topology::Modulation;

use super::TwinError;

/// Default shaping gain credited to PCS-16QAM over uniform 16QAM (dB).
pub const DEFAULT_PCS_OFFSET_DB: f64 = 0.8;

const GSNR_LO_DB: f64 = -20.0;
const GSNR_HI_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerModel {
    pub pcs_offset_db: f64,
}

impl Default for BerModel {
    fn default() -> Self {
        Self {
            pcs_offset_db: DEFAULT_PCS_OFFSET_DB,
        }
    }
}

impl BerModel {
    pub fn ber_from_gsnr(&self, gsnr_db: f64, modulation: Modulation) -> f64 {
        match modulation {
            Modulation::Qpsk => 0.5 * erfc((db_to_lin(gsnr_db) / 2.0).sqrt()),
            Modulation::Qam16 => 0.375 * erfc((db_to_lin(gsnr_db) / 10.0).sqrt()),
            Modulation::Pcs16Qam => self.ber_from_gsnr(gsnr_db + self.pcs_offset_db, Modulation::Qam16),
        }
    }

    /// Inverse of [`BerModel::ber_from_gsnr`], by bisection on log BER.
    pub fn gsnr_from_ber(&self, ber: f64, modulation: Modulation) -> Result<f64, TwinError> {
        if !(ber > 0.0 && ber < 0.5) {
            return Err(TwinError::BerOutOfRange(ber));
        }
        let target = ber.ln();
        let f = |g: f64| self.ber_from_gsnr(g, modulation).ln() - target;
        let (mut lo, mut hi) = (GSNR_LO_DB, GSNR_HI_DB);
        if f(lo) < 0.0 || f(hi) > 0.0 {
            return Err(TwinError::BerOutOfRange(ber));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn ber_from_gsnr(gsnr_db: f64, modulation: Modulation) -> f64 {
    BerModel::default().ber_from_gsnr(gsnr_db, modulation)
}

pub fn gsnr_from_ber(ber: f64, modulation: Modulation) -> Result<f64, TwinError> {
    BerModel::default().gsnr_from_ber(ber, modulation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ALL: [Modulation; 3] = [Modulation::Qpsk, Modulation::Qam16, Modulation::Pcs16Qam];

    #[test]
    fn qam16_hand_value() {
        // (3/8) erfc(sqrt(10^1.7 / 10))
        let x: f64 = (10f64.powf(1.7) / 10.0).sqrt();
        let expected = 0.375 * erfc(x);
        assert_relative_eq!(ber_from_gsnr(17.0, Modulation::Qam16), expected, max_relative = 1e-15);
        assert_relative_eq!(expected, 5.795061e-4, max_relative = 1e-6);
    }

    #[test]
    fn pcs_is_shifted_qam16() {
        let m = BerModel { pcs_offset_db: 1.5 };
        assert_eq!(
            m.ber_from_gsnr(12.0, Modulation::Pcs16Qam),
            m.ber_from_gsnr(13.5, Modulation::Qam16)
        );
    }

    #[test]
    fn rejects_out_of_range() {
        for b in [0.0, -1e-3, 0.5, 0.7, f64::NAN] {
            assert!(gsnr_from_ber(b, Modulation::Qpsk).is_err());
        }
    }

    #[test]
    fn round_trip_grid() {
        for m in ALL {
            let mut g = 5.0;
            while g <= 30.0 {
                let back = gsnr_from_ber(ber_from_gsnr(g, m), m).unwrap();
                assert!((back - g).abs() < 0.01, "{m:?} {g} -> {back}");
                g += 0.25;
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ber_to_gsnr_is_decreasing(a in 1e-6f64..0.2, b in 1e-6f64..0.2) {
                prop_assume!((a - b).abs() > 1e-9);
                for m in ALL {
                    let (ga, gb) = (gsnr_from_ber(a, m).unwrap(), gsnr_from_ber(b, m).unwrap());
                    prop_assert_eq!(a < b, ga > gb);
                }
            }

            #[test]
            fn round_trip_is_tight(g in 5.0f64..30.0) {
                for m in ALL {
                    prop_assert!((gsnr_from_ber(ber_from_gsnr(g, m), m).unwrap() - g).abs() < 0.01);
                }
            }
        }
    }
}
