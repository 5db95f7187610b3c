use crate::error::FeatureError;

use super::basic::mean;

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Katz fractal dimension `log10(L/a) / log10(d/a)` with `L` the path length,
/// `d` the largest distance from the first sample and `a` the mean step.
pub fn katz_fd(x: &[f64]) -> Result<f64, FeatureError> {
    if x.len() < 3 {
        return Err(FeatureError::TooShort {
            needed: 3,
            got: x.len(),
        });
    }
    let total: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let extent = x.iter().map(|v| (v - x[0]).abs()).fold(0.0, f64::max);
    if total == 0.0 || extent == 0.0 {
        return Err(FeatureError::DegenerateSignal);
    }
    let step = total / (x.len() - 1) as f64;
    let den = (extent / step).log10();
    if den == 0.0 {
        return Err(FeatureError::DegenerateSignal);
    }
    Ok((total / step).log10() / den)
}

/// Higuchi fractal dimension: slope of `ln L(k)` against `ln(1/k)` for
/// `k = 1..=k_max`, where `L(k)` is the mean normalised curve length of the
/// `k` decimated sub-series.
pub fn higuchi_fd(x: &[f64], k_max: usize) -> Result<f64, FeatureError> {
    let n = x.len();
    let k_max = k_max.max(2);
    if n < 2 * k_max {
        return Err(FeatureError::TooShort {
            needed: 2 * k_max,
            got: n,
        });
    }
    let mut log_inv_k = Vec::with_capacity(k_max);
    let mut log_len = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut acc = 0.0;
        for m in 0..k {
            let count = (n - 1 - m) / k;
            let length: f64 = (1..=count)
                .map(|i| (x[m + i * k] - x[m + (i - 1) * k]).abs())
                .sum();
            acc += length * (n - 1) as f64 / (count * k) as f64 / k as f64;
        }
        let l = acc / k as f64;
        if !(l > 0.0) {
            return Err(FeatureError::DegenerateSignal);
        }
        log_inv_k.push(-(k as f64).ln());
        log_len.push(l.ln());
    }
    ls_slope(&log_inv_k, &log_len).ok_or(FeatureError::DegenerateSignal)
}

/// Scales actually used for a series of length `n`: those no larger than `n / 4`.
pub fn dfa_scales(scales: &[usize], n: usize) -> Vec<usize> {
    let mut s: Vec<usize> = scales
        .iter()
        .copied()
        .filter(|&s| s >= 3 && s * 4 <= n)
        .collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Root-mean-square residual of the linearly detrended profile over
/// non-overlapping windows of `scale` samples.
pub(crate) fn dfa_fluctuation(profile: &[f64], scale: usize) -> f64 {
    let windows = profile.len() / scale;
    let t_mean = (scale - 1) as f64 / 2.0;
    let stt: f64 = (0..scale).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut sq = 0.0;
    for w in 0..windows {
        let seg = &profile[w * scale..(w + 1) * scale];
        let y_mean = mean(seg);
        let sty: f64 = seg
            .iter()
            .enumerate()
            .map(|(t, y)| (t as f64 - t_mean) * (y - y_mean))
            .sum();
        let b = sty / stt;
        sq += seg
            .iter()
            .enumerate()
            .map(|(t, y)| {
                let r = y - (y_mean + b * (t as f64 - t_mean));
                r * r
            })
            .sum::<f64>();
    }
    (sq / (windows * scale) as f64).sqrt()
}

/// Detrended fluctuation analysis exponent (first-order detrending).
pub fn dfa_exponent(x: &[f64], scales: &[usize]) -> Result<f64, FeatureError> {
    let used = dfa_scales(scales, x.len());
    if used.len() < 2 {
        let mut s: Vec<usize> = scales.iter().copied().filter(|&s| s >= 3).collect();
        s.sort_unstable();
        let needed = 4 * s.get(1).copied().unwrap_or(8);
        return Err(FeatureError::TooShort {
            needed,
            got: x.len(),
        });
    }
    let m = mean(x);
    let profile: Vec<f64> = x
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v - m;
            Some(*acc)
        })
        .collect();
    let (mut ln_n, mut ln_f) = (Vec::new(), Vec::new());
    for &s in &used {
        let f = dfa_fluctuation(&profile, s);
        if f > 0.0 {
            ln_n.push((s as f64).ln());
            ln_f.push(f.ln());
        }
    }
    if ln_n.len() < 2 {
        return Err(FeatureError::SingularFit);
    }
    ls_slope(&ln_n, &ln_f).ok_or(FeatureError::SingularFit)
}
