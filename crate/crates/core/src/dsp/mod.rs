//! Filtering, analytic signals and epoching.

mod epoch;
mod fir;
mod hilbert;
mod iir;

use serde::{Deserialize, Serialize};

use crate::error::DspError;
use crate::recording::Recording;

pub use epoch::{epoch_hop, epoch_len, segment_epochs, zscore, Epoch};
pub use fir::{apply_fir, default_taps, fir_bandpass, firwin_bandpass};
pub use hilbert::{analytic_signal, hilbert_phase, MIN_HILBERT_LEN};
pub use iir::{
    butterworth_bandpass, butterworth_bandpass_sos, notch_design, notch_filter, sos_gain, sosfilt,
    sosfiltfilt, Biquad,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn spec(self) -> BandSpec {
        let (low_hz, high_hz) = match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 13.0),
            Band::Beta => (13.0, 22.0),
            Band::Gamma => (22.0, 30.0),
        };
        BandSpec {
            name: self,
            low_hz,
            high_hz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<(), DspError> {
        if self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < sample_rate_hz / 2.0
        {
            Ok(())
        } else {
            Err(DspError::InvalidBand {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                sample_rate_hz,
            })
        }
    }
}

/// Preprocessing parameters applied to every recording before epoching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    /// `None` selects [`default_taps`].
    pub fir_taps: Option<usize>,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub epoch_s: f64,
    pub overlap: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            bandpass_low_hz: 0.1,
            bandpass_high_hz: 70.0,
            fir_taps: None,
            notch_hz: 50.0,
            notch_q: 30.0,
            epoch_s: 5.0,
            overlap: 0.5,
        }
    }
}

/// Band-pass, notch, then cut into z-scored epochs.
pub fn preprocess_recording(rec: &Recording, cfg: &DspConfig) -> Result<Vec<Epoch>, DspError> {
    let fs = rec.sample_rate_hz;
    let taps = firwin_bandpass(
        cfg.bandpass_low_hz,
        cfg.bandpass_high_hz,
        fs,
        cfg.fir_taps.unwrap_or_else(|| default_taps(fs)),
    )?;
    let data = rec
        .data
        .iter()
        .map(|row| {
            let bp = apply_fir(&taps, row)?;
            notch_filter(&bp, cfg.notch_hz, fs, cfg.notch_q)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let filtered = Recording {
        data,
        ..rec.clone()
    };
    segment_epochs(&filtered, cfg.epoch_s, cfg.overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-300, f64::max);
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn filters_are_linear(
            x in prop::collection::vec(-5.0f64..5.0, 400),
            y in prop::collection::vec(-5.0f64..5.0, 400),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let fs = 200.0;
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let check = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
                let lhs = f(&combo);
                let rhs: Vec<f64> = f(&x).iter().zip(f(&y)).map(|(p, q)| a * p + b * q).collect();
                rel_close(&lhs, &rhs, 1e-9)
            };
            prop_assert!(check(&|s| fir_bandpass(s, 0.1, 70.0, fs, 201).unwrap()));
            prop_assert!(check(&|s| notch_filter(s, 50.0, fs, 30.0).unwrap()));
            prop_assert!(check(&|s| butterworth_bandpass(s, &Band::Alpha.spec(), fs, 4).unwrap()));
        }
    }

    #[test]
    fn butterworth_passband_and_stopband_on_sine() {
        let fs = 128.0;
        let x: Vec<f64> = (0..1280).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let rms = |v: &[f64]| (v[256..1024].iter().map(|s| s * s).sum::<f64>() / 768.0).sqrt();
        let alpha = butterworth_bandpass(&x, &Band::Alpha.spec(), fs, 4).unwrap();
        let gain_db = 20.0 * (rms(&alpha) / rms(&x)).log10();
        assert!(gain_db.abs() <= 0.5, "alpha gain {gain_db} dB");
        let delta = butterworth_bandpass(&x, &Band::Delta.spec(), fs, 4).unwrap();
        let att_db = 20.0 * (rms(&delta) / rms(&x)).log10();
        assert!(att_db <= -24.0, "delta attenuation {att_db} dB");
    }

    #[test]
    fn invalid_band_is_rejected() {
        let bad = BandSpec {
            name: Band::Gamma,
            low_hz: 22.0,
            high_hz: 80.0,
        };
        assert!(matches!(
            butterworth_bandpass(&[0.0; 64], &bad, 128.0, 4),
            Err(DspError::InvalidBand { .. })
        ));
    }
}
