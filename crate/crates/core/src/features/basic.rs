use crate::error::FeatureError;

fn require_len(x: &[f64], needed: usize) -> Result<(), FeatureError> {
    if x.len() < needed {
        Err(FeatureError::TooShort {
            needed,
            got: x.len(),
        })
    } else {
        Ok(())
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> Result<f64, FeatureError> {
    require_len(x, 2)?;
    let m = mean(x);
    Ok(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64)
}

/// Sum of absolute first differences.
pub fn line_length(x: &[f64]) -> Result<f64, FeatureError> {
    require_len(x, 2)?;
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// First difference scaled by the sample rate.
pub fn derivative(x: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    x.windows(2).map(|w| (w[1] - w[0]) * sample_rate_hz).collect()
}

fn nonzero_variance(x: &[f64]) -> Result<f64, FeatureError> {
    let v = variance(x)?;
    let scale = x.iter().map(|s| s.abs()).fold(0.0, f64::max);
    if !(v.sqrt() > 1e-12 * scale) {
        return Err(FeatureError::ZeroVariance);
    }
    Ok(v)
}

/// `sqrt(Var(x') / Var(x))`, in rad/s.
pub fn hjorth_mobility(x: &[f64], sample_rate_hz: f64) -> Result<f64, FeatureError> {
    require_len(x, 3)?;
    let vx = nonzero_variance(x)?;
    let vd = variance(&derivative(x, sample_rate_hz))?;
    Ok((vd / vx).sqrt())
}

/// `Mobility(x') / Mobility(x)`; close to one for a pure sinusoid.
pub fn hjorth_complexity(x: &[f64], sample_rate_hz: f64) -> Result<f64, FeatureError> {
    require_len(x, 4)?;
    let mob = hjorth_mobility(x, sample_rate_hz)?;
    let dx = derivative(x, sample_rate_hz);
    let mob_d = hjorth_mobility(&dx, sample_rate_hz)?;
    Ok(mob_d / mob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn variance_and_line_length_examples() {
        assert_eq!(variance(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(variance(&[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(line_length(&[3.0; 5]).unwrap(), 0.0);
        assert_eq!(line_length(&[0.0, 1.0, 0.0, 1.0]).unwrap(), 3.0);
        assert!(matches!(variance(&[1.0]), Err(FeatureError::TooShort { .. })));
    }

    #[test]
    fn mobility_of_sine_is_angular_frequency() {
        let fs = 256.0;
        let x: Vec<f64> = (0..1280).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let m = hjorth_mobility(&x, fs).unwrap();
        // first difference of a sampled sine has amplitude 2 fs sin(pi f / fs)
        let discrete = 2.0 * fs * (PI * 10.0 / fs).sin();
        assert!((m - discrete).abs() / discrete < 0.01);
        let omega = 2.0 * PI * 10.0;
        assert!((m - omega).abs() / omega < 0.02);
        let c = hjorth_complexity(&x, fs).unwrap();
        assert!((c - 1.0).abs() < 0.03, "complexity {c}");
    }

    #[test]
    fn noise_is_more_mobile_and_complex_than_its_integral_and_a_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let walk: Vec<f64> = noise
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        assert!(hjorth_mobility(&noise, 100.0).unwrap() > hjorth_mobility(&walk, 100.0).unwrap());
        let sine: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.2).sin()).collect();
        assert!(
            hjorth_complexity(&noise, 100.0).unwrap() > hjorth_complexity(&sine, 100.0).unwrap()
        );
    }

    #[test]
    fn constant_signal_has_zero_variance_error() {
        assert!(matches!(
            hjorth_mobility(&[2.0; 50], 100.0),
            Err(FeatureError::ZeroVariance)
        ));
        assert!(matches!(
            hjorth_complexity(&[2.0; 50], 100.0),
            Err(FeatureError::ZeroVariance)
        ));
        // linear ramp: derivative is constant
        let ramp: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(matches!(
            hjorth_complexity(&ramp, 100.0),
            Err(FeatureError::ZeroVariance)
        ));
    }
}
