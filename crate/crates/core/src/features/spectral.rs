use crate::dsp::{butterworth_bandpass, BandSpec};
use crate::error::FeatureError;

/// Energy floor applied before the logarithm.
pub const BAND_POWER_FLOOR: f64 = 1e-12;

/// `ln(max(sum(x_b^2), 1e-12))` where `x_b` is the zero-phase Butterworth
/// band-pass output.
pub fn band_power(
    x: &[f64],
    band: &BandSpec,
    sample_rate_hz: f64,
    order: usize,
) -> Result<f64, FeatureError> {
    let filtered = butterworth_bandpass(x, band, sample_rate_hz, order)?;
    let energy: f64 = filtered.iter().map(|v| v * v).sum();
    Ok(energy.max(BAND_POWER_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Band;
    use std::f64::consts::PI;

    fn sine(amp: f64) -> Vec<f64> {
        (0..640).map(|i| amp * (2.0 * PI * 10.0 * i as f64 / 128.0).sin()).collect()
    }

    #[test]
    fn zero_signal_hits_floor() {
        let bp = band_power(&[0.0; 640], &Band::Alpha.spec(), 128.0, 4).unwrap();
        assert_eq!(bp, BAND_POWER_FLOOR.ln());
    }

    #[test]
    fn alpha_sine_dominates_delta() {
        let x = sine(1.0);
        let alpha = band_power(&x, &Band::Alpha.spec(), 128.0, 4).unwrap();
        let delta = band_power(&x, &Band::Delta.spec(), 128.0, 4).unwrap();
        assert!(alpha - delta >= 5.0, "{alpha} vs {delta}");
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let a = band_power(&sine(1.0), &Band::Alpha.spec(), 128.0, 4).unwrap();
        let b = band_power(&sine(2.0), &Band::Alpha.spec(), 128.0, 4).unwrap();
        assert!((b - a - 4f64.ln()).abs() < 0.05);
    }
}
