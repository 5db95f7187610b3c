use std::f64::consts::PI;

use crate::error::DspError;

/// Smallest odd tap count that is at least `sample_rate_hz` (about one second).
pub fn default_taps(sample_rate_hz: f64) -> usize {
    let n = sample_rate_hz.ceil().max(3.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

fn hamming(n_taps: usize) -> Vec<f64> {
    let m = (n_taps - 1) as f64;
    (0..n_taps)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos())
        .collect()
}

/// Hamming-windowed sinc low-pass normalised to unit DC gain.
fn lowpass_taps(cutoff_hz: f64, sample_rate_hz: f64, window: &[f64]) -> Vec<f64> {
    let n = window.len();
    let fc = cutoff_hz / sample_rate_hz;
    let mid = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    taps
}

/// Linear-phase band-pass taps: difference of two unit-DC-gain low-passes,
/// so the DC response is exactly zero.
pub fn firwin_bandpass(
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
    n_taps: usize,
) -> Result<Vec<f64>, DspError> {
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0) {
        return Err(DspError::InvalidBand {
            low_hz,
            high_hz,
            sample_rate_hz,
        });
    }
    if n_taps < 3 || n_taps % 2 == 0 {
        return Err(DspError::InvalidParameter(format!(
            "FIR tap count must be odd and >= 3, got {n_taps}"
        )));
    }
    let window = hamming(n_taps);
    let hi = lowpass_taps(high_hz, sample_rate_hz, &window);
    let lo = lowpass_taps(low_hz, sample_rate_hz, &window);
    Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
}

/// Applies symmetric taps with the group delay removed. The signal is
/// extended by repeating its edge values, so the output length matches the
/// input length.
pub fn apply_fir(taps: &[f64], signal: &[f64]) -> Result<Vec<f64>, DspError> {
    if signal.len() < taps.len() {
        return Err(DspError::TooShortSignal {
            needed: taps.len(),
            got: signal.len(),
        });
    }
    let half = taps.len() / 2;
    let first = signal[0];
    let last = signal[signal.len() - 1];
    let mut padded = Vec::with_capacity(signal.len() + 2 * half);
    padded.extend(std::iter::repeat_n(first, half));
    padded.extend_from_slice(signal);
    padded.extend(std::iter::repeat_n(last, half));
    Ok((0..signal.len())
        .map(|i| {
            padded[i..i + taps.len()]
                .iter()
                .zip(taps)
                .map(|(x, h)| x * h)
                .sum()
        })
        .collect())
}

pub fn fir_bandpass(
    signal: &[f64],
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
    n_taps: usize,
) -> Result<Vec<f64>, DspError> {
    let taps = firwin_bandpass(low_hz, high_hz, sample_rate_hz, n_taps)?;
    apply_fir(&taps, signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn default_taps_is_odd_and_covers_one_second() {
        assert_eq!(default_taps(256.0), 257);
        assert_eq!(default_taps(255.0), 255);
        assert_eq!(default_taps(160.5), 161);
    }

    #[test]
    fn passband_sine_keeps_amplitude() {
        let fs = 256.0;
        let x = sine(10.0, fs, 10 * 256);
        let y = fir_bandpass(&x, 0.1, 70.0, fs, default_taps(fs)).unwrap();
        assert_eq!(y.len(), x.len());
        let skip = 300;
        let (a, b) = (rms(&x[skip..x.len() - skip]), rms(&y[skip..y.len() - skip]));
        assert!((b / a - 1.0).abs() < 0.01, "ratio {}", b / a);
    }

    #[test]
    fn dc_is_removed() {
        let x = vec![5.0; 1024];
        let y = fir_bandpass(&x, 0.1, 70.0, 256.0, 257).unwrap();
        assert!(y.iter().all(|v| v.abs() < 0.05 * 5.0));
    }

    #[test]
    fn stopband_sine_is_attenuated_40db() {
        let fs = 256.0;
        let x = sine(100.0, fs, 10 * 256);
        let y = fir_bandpass(&x, 0.1, 70.0, fs, default_taps(fs)).unwrap();
        let skip = 300;
        let ratio = rms(&y[skip..y.len() - skip]) / rms(&x[skip..x.len() - skip]);
        assert!(20.0 * ratio.log10() <= -40.0, "{} dB", 20.0 * ratio.log10());
    }

    #[test]
    fn dc_and_nyquist_response() {
        let taps = firwin_bandpass(0.1, 70.0, 256.0, 257).unwrap();
        let dc: f64 = taps.iter().sum();
        let nyq: f64 = taps
            .iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { *t } else { -*t })
            .sum();
        assert!(dc.abs() < 1e-2);
        assert!(20.0 * nyq.abs().log10() <= -40.0);
    }

    #[test]
    fn rejects_bad_band_and_short_signal() {
        assert!(matches!(
            firwin_bandpass(0.1, 200.0, 256.0, 257),
            Err(DspError::InvalidBand { .. })
        ));
        assert!(matches!(
            fir_bandpass(&[0.0; 100], 0.1, 70.0, 256.0, 257),
            Err(DspError::TooShortSignal { .. })
        ));
    }
}
