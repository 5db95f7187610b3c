use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::DspError;

use super::BandSpec;

/// Second-order section with `a0` normalised to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form state reached after a unit constant input.
    fn steady_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[2] * y]
    }

    fn filter_in_place(&self, x: &mut [f64], init: [f64; 2]) {
        // Direct form II transposed.
        let [mut s1, mut s2] = init;
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[1] * out + s2;
            s2 = self.b[2] * input - self.a[2] * out;
            *v = out;
        }
    }
}

/// Magnitude of a cascade's response at `freq_hz`.
pub fn sos_gain(sos: &[Biquad], freq_hz: f64, sample_rate_hz: f64) -> f64 {
    sos.iter()
        .map(|s| s.response(freq_hz, sample_rate_hz))
        .product::<Complex64>()
        .norm()
}

/// Single causal pass through a cascade, zero initial state.
pub fn sosfilt(sos: &[Biquad], signal: &[f64]) -> Vec<f64> {
    let mut y = signal.to_vec();
    for s in sos {
        s.filter_in_place(&mut y, [0.0; 2]);
    }
    y
}

/// Causal pass whose state starts as if `x[0]` had been applied forever,
/// which suppresses the start-up step transient.
fn sosfilt_steady(sos: &[Biquad], x: &mut [f64]) {
    let Some(&x0) = x.first() else { return };
    let mut level = x0;
    for s in sos {
        let [a, b] = s.steady_state();
        s.filter_in_place(x, [a * level, b * level]);
        level *= s.dc_gain();
    }
}

/// Zero-phase filtering: forward then backward pass over a mirror (even)
/// extension of `pad` samples at both ends, each pass starting from the
/// steady state of its first sample. Mirroring rather than point reflection
/// avoids injecting a step when the signal ends away from zero.
pub fn sosfiltfilt(sos: &[Biquad], signal: &[f64], pad: usize) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| signal[n - 1 - i]));
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Butterworth band-pass of the given prototype order, as `order` biquads.
///
/// Both band edges are pre-warped, so the single-pass response is exactly
/// -3 dB at `band.low_hz` and `band.high_hz`.
pub fn butterworth_bandpass_sos(
    band: &BandSpec,
    sample_rate_hz: f64,
    order: usize,
) -> Result<Vec<Biquad>, DspError> {
    band.validate(sample_rate_hz)?;
    if order == 0 {
        return Err(DspError::InvalidParameter("filter order must be >= 1".into()));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let wl = fs2 * (PI * band.low_hz / sample_rate_hz).tan();
    let wh = fs2 * (PI * band.high_hz / sample_rate_hz).tan();
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // Low-pass prototype poles, mapped to band-pass pole pairs, then to z.
    let mut z_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            z_poles.push((fs2 + s) / (fs2 - s));
        }
    }
    if let Some(max) = z_poles.iter().map(|z| z.norm()).reduce(f64::max) {
        if max >= 1.0 {
            return Err(DspError::UnstableDesign {
                pole_magnitude: max,
            });
        }
    }

    // Pair conjugates; real poles (if any) pair with each other.
    let mut complex: Vec<Complex64> = z_poles.iter().copied().filter(|z| z.im > 1e-12).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    let mut real: Vec<f64> = z_poles
        .iter()
        .filter(|z| z.im.abs() <= 1e-12)
        .map(|z| z.re)
        .collect();
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Biquad> = complex
        .iter()
        .map(|z| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * z.re, z.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p1 + p2), p1 * p2],
        });
    }

    // Unit gain at the centre frequency, split evenly over the sections.
    let center_hz = sample_rate_hz / PI * (w0 / fs2).atan();
    for s in &mut sections {
        let g = s.response(center_hz, sample_rate_hz).norm();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Ok(sections)
}

/// Forward-backward Butterworth band-pass (zero phase).
pub fn butterworth_bandpass(
    signal: &[f64],
    band: &BandSpec,
    sample_rate_hz: f64,
    order: usize,
) -> Result<Vec<f64>, DspError> {
    let sos = butterworth_bandpass_sos(band, sample_rate_hz, order)?;
    // about four periods of the lower edge; sosfiltfilt caps it at the signal length
    let pad = ((4.0 * sample_rate_hz / band.low_hz).ceil() as usize).max(3 * (2 * sos.len() + 1));
    Ok(sosfiltfilt(&sos, signal, pad))
}

/// Second-order IIR notch with quality factor `q`.
pub fn notch_design(center_hz: f64, sample_rate_hz: f64, q: f64) -> Result<Biquad, DspError> {
    if !(center_hz > 0.0 && center_hz < sample_rate_hz / 2.0) {
        return Err(DspError::InvalidCenter {
            center_hz,
            sample_rate_hz,
        });
    }
    if !(q > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "notch q must be positive, got {q}"
        )));
    }
    let w0 = 2.0 * PI * center_hz / sample_rate_hz;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let c = w0.cos();
    Ok(Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
    })
}

/// Zero-phase notch filter.
pub fn notch_filter(
    signal: &[f64],
    center_hz: f64,
    sample_rate_hz: f64,
    q: f64,
) -> Result<Vec<f64>, DspError> {
    let section = notch_design(center_hz, sample_rate_hz, q)?;
    let pad = (2.0 * q * sample_rate_hz / center_hz).ceil() as usize;
    Ok(sosfiltfilt(&[section], signal, pad))
}
