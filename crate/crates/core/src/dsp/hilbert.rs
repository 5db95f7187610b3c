use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::DspError;

pub const MIN_HILBERT_LEN: usize = 8;

/// Analytic signal by the full-length spectral method: positive frequencies
/// doubled, negative frequencies zeroed, DC and Nyquist kept once.
pub fn analytic_signal(signal: &[f64]) -> Result<Vec<Complex64>, DspError> {
    let n = signal.len();
    if n < MIN_HILBERT_LEN {
        return Err(DspError::TooShortSignal {
            needed: MIN_HILBERT_LEN,
            got: n,
        });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= w / n as f64;
    }
    inv.process(&mut buf);
    Ok(buf)
}

/// Instantaneous phase in `(-π, π]`.
pub fn hilbert_phase(signal: &[f64]) -> Result<Vec<f64>, DspError> {
    Ok(analytic_signal(signal)?
        .iter()
        .map(|z| {
            let p = z.im.atan2(z.re);
            if p <= -PI {
                PI
            } else {
                p
            }
        })
        .collect())
}
