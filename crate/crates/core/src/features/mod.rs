//! Per-channel signal features and the 19x14 node attribute matrix.

mod basic;
mod complexity;
mod fractal;
mod spectral;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dsp::{Band, Epoch};
use crate::error::FeatureError;

pub use basic::{derivative, hjorth_complexity, hjorth_mobility, line_length, variance};
pub use complexity::{binarize_median, lz_phrase_count, lzc, perm_entropy};
pub use fractal::{dfa_exponent, dfa_scales, higuchi_fd, katz_fd};
pub use spectral::{band_power, BAND_POWER_FLOOR};

pub const N_FEATURES: usize = 14;

/// Column order of the feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Variance,
    LineLength,
    Mobility,
    Complexity,
    Kfd,
    Hfd,
    Dfa,
    Lzc,
    PermEntropy,
    BpDelta,
    BpTheta,
    BpAlpha,
    BpBeta,
    BpGamma,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::Variance,
        Feature::LineLength,
        Feature::Mobility,
        Feature::Complexity,
        Feature::Kfd,
        Feature::Hfd,
        Feature::Dfa,
        Feature::Lzc,
        Feature::PermEntropy,
        Feature::BpDelta,
        Feature::BpTheta,
        Feature::BpAlpha,
        Feature::BpBeta,
        Feature::BpGamma,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Variance => "variance",
            Feature::LineLength => "line_length",
            Feature::Mobility => "mobility",
            Feature::Complexity => "complexity",
            Feature::Kfd => "kfd",
            Feature::Hfd => "hfd",
            Feature::Dfa => "dfa",
            Feature::Lzc => "lzc",
            Feature::PermEntropy => "perm_entropy",
            Feature::BpDelta => "bp_delta",
            Feature::BpTheta => "bp_theta",
            Feature::BpAlpha => "bp_alpha",
            Feature::BpBeta => "bp_beta",
            Feature::BpGamma => "bp_gamma",
        }
    }

    pub fn band(self) -> Option<Band> {
        match self {
            Feature::BpDelta => Some(Band::Delta),
            Feature::BpTheta => Some(Band::Theta),
            Feature::BpAlpha => Some(Band::Alpha),
            Feature::BpBeta => Some(Band::Beta),
            Feature::BpGamma => Some(Band::Gamma),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub hfd_k_max: usize,
    /// Scales larger than a quarter of the epoch are dropped.
    pub dfa_scales: Vec<usize>,
    pub pe_order: usize,
    pub pe_delay: usize,
    pub butterworth_order: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hfd_k_max: 10,
            dfa_scales: vec![4, 8, 16, 32, 64],
            pe_order: 3,
            pe_delay: 1,
            butterworth_order: 4,
        }
    }
}

/// A feature that could not be computed for one channel and was set to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureFlag {
    pub channel: usize,
    pub feature: Feature,
    pub reason: String,
}

/// Node attributes of one epoch: rows are channels in canonical order,
/// columns follow [`Feature::ALL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub flags: Vec<FeatureFlag>,
}

impl FeatureMatrix {
    pub fn get(&self, channel: usize, feature: Feature) -> f64 {
        self.values.get(channel, feature.index())
    }
}

/// All 14 features of a single channel, in column order.
pub fn channel_features(
    x: &[f64],
    sample_rate_hz: f64,
    cfg: &FeatureConfig,
) -> [Result<f64, FeatureError>; N_FEATURES] {
    let bp = |band: Band| band_power(x, &band.spec(), sample_rate_hz, cfg.butterworth_order);
    [
        variance(x),
        line_length(x),
        hjorth_mobility(x, sample_rate_hz),
        hjorth_complexity(x, sample_rate_hz),
        katz_fd(x),
        higuchi_fd(x, cfg.hfd_k_max),
        dfa_exponent(x, &cfg.dfa_scales),
        lzc(x),
        perm_entropy(x, cfg.pe_order, cfg.pe_delay),
        bp(Band::Delta),
        bp(Band::Theta),
        bp(Band::Alpha),
        bp(Band::Beta),
        bp(Band::Gamma),
    ]
}

/// Computes the feature matrix of an epoch. Degenerate channels (constant,
/// zero path length, singular DFA fit) get 0 for the affected feature and a
/// flag; length and band errors are returned.
pub fn extract_features(epoch: &Epoch, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let n_ch = epoch.data.len();
    let mut values = Tensor::zeros(n_ch, N_FEATURES);
    let mut flags = Vec::new();
    for (c, x) in epoch.data.iter().enumerate() {
        for (f, result) in channel_features(x, epoch.sample_rate_hz, cfg)
            .into_iter()
            .enumerate()
        {
            match result {
                Ok(v) => values.set(c, f, v),
                Err(
                    e @ (FeatureError::ZeroVariance
                    | FeatureError::DegenerateSignal
                    | FeatureError::SingularFit),
                ) => flags.push(FeatureFlag {
                    channel: c,
                    feature: Feature::ALL[f],
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(FeatureMatrix { values, flags })
}

/// Per-column z-score fitted on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(n_features: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; n_features],
            std: vec![1.0; n_features],
        }
    }

    /// Pools every row of every matrix. Columns with (near) zero spread get
    /// unit scale so they map to zero rather than blowing up.
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a Tensor>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sumsq: Vec<f64> = Vec::new();
        let mut rows: Vec<&Tensor> = Vec::new();
        for m in matrices {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sumsq = vec![0.0; m.cols()];
            }
            rows.push(m);
            for r in 0..m.rows() {
                for (s, v) in sum.iter_mut().zip(m.row_slice(r)) {
                    *s += v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for m in rows {
            for r in 0..m.rows() {
                for ((q, v), mu) in sumsq.iter_mut().zip(m.row_slice(r)).zip(&mean) {
                    *q += (v - mu) * (v - mu);
                }
            }
        }
        let std = sumsq
            .iter()
            .zip(&mean)
            .map(|(q, mu)| {
                let s = (q / n as f64).sqrt();
                if s > 1e-12 * mu.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Some(FeatureScaler { mean, std })
    }

    pub fn transform(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, mu), sd) in out.row_slice_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::Label;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_epoch(seed: u64, n: usize) -> Epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Epoch {
            subject_id: "s".into(),
            label: Label::Hc,
            sample_rate_hz: 128.0,
            data: (0..19)
                .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
            segment_index: 0,
        }
    }

    #[test]
    fn noise_epoch_is_finite_and_deterministic() {
        let e = noise_epoch(1, 640);
        let a = extract_features(&e, &FeatureConfig::default()).unwrap();
        let b = extract_features(&e, &FeatureConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.shape(), (19, 14));
        assert!(a.values.is_finite());
        assert!(a.flags.is_empty());
        for c in 0..19 {
            let pe = a.get(c, Feature::PermEntropy);
            assert!((0.0..=1.0).contains(&pe));
            assert!(a.get(c, Feature::Lzc) >= 0.0);
        }
    }

    #[test]
    fn constant_channel_gets_sentinels() {
        let mut e = noise_epoch(2, 640);
        e.data[4] = vec![0.0; 640];
        let m = extract_features(&e, &FeatureConfig::default()).unwrap();
        assert_eq!(m.get(4, Feature::Variance), 0.0);
        assert_eq!(m.get(4, Feature::LineLength), 0.0);
        assert_eq!(m.get(4, Feature::Mobility), 0.0);
        assert_eq!(m.get(4, Feature::Complexity), 0.0);
        let flagged: Vec<Feature> = m.flags.iter().map(|f| f.feature).collect();
        for f in [Feature::Mobility, Feature::Complexity, Feature::Kfd, Feature::Hfd, Feature::Dfa] {
            assert!(flagged.contains(&f), "{f:?} not flagged");
        }
        assert!(m.flags.iter().all(|f| f.channel == 4));
        assert!(m.values.is_finite());
    }

    #[test]
    fn matrix_matches_individual_operations() {
        let e = noise_epoch(3, 640);
        let cfg = FeatureConfig::default();
        let m = extract_features(&e, &cfg).unwrap();
        let x = &e.data[7];
        let fs = e.sample_rate_hz;
        let expect = [
            variance(x).unwrap(),
            line_length(x).unwrap(),
            hjorth_mobility(x, fs).unwrap(),
            hjorth_complexity(x, fs).unwrap(),
            katz_fd(x).unwrap(),
            higuchi_fd(x, 10).unwrap(),
            dfa_exponent(x, &[4, 8, 16, 32, 64]).unwrap(),
            lzc(x).unwrap(),
            perm_entropy(x, 3, 1).unwrap(),
            band_power(x, &Band::Delta.spec(), fs, 4).unwrap(),
            band_power(x, &Band::Theta.spec(), fs, 4).unwrap(),
            band_power(x, &Band::Alpha.spec(), fs, 4).unwrap(),
            band_power(x, &Band::Beta.spec(), fs, 4).unwrap(),
            band_power(x, &Band::Gamma.spec(), fs, 4).unwrap(),
        ];
        assert_eq!(m.values.row_slice(7), &expect);
    }

    #[test]
    fn too_short_epoch_propagates() {
        let e = noise_epoch(4, 10);
        assert!(matches!(
            extract_features(&e, &FeatureConfig::default()),
            Err(FeatureError::TooShort { .. })
        ));
    }

    #[test]
    fn scaler_standardises_pooled_rows() {
        let a = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        let b = Tensor::from_rows(&[vec![5.0, 5.0]]);
        let s = FeatureScaler::fit([&a, &b]).unwrap();
        assert!((s.mean[0] - 3.0).abs() < 1e-12);
        assert!((s.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.std[1], 1.0);
        let t = s.transform(&a);
        assert!((t.get(1, 0)).abs() < 1e-12);
        assert_eq!(t.get(0, 1), 0.0);
        assert!(FeatureScaler::fit(std::iter::empty::<&Tensor>()).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn amplitude_scaling(
            x in prop::collection::vec(-10.0f64..10.0, 300),
            c in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        ) {
            let y: Vec<f64> = x.iter().map(|v| c * v).collect();
            let fs = 128.0;
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(1.0);
            prop_assert!(rel(variance(&y).unwrap(), c * c * variance(&x).unwrap()));
            prop_assert!(rel(line_length(&y).unwrap(), c.abs() * line_length(&x).unwrap()));
            prop_assert!(rel(hjorth_mobility(&y, fs).unwrap(), hjorth_mobility(&x, fs).unwrap()));
            prop_assert!(rel(hjorth_complexity(&y, fs).unwrap(), hjorth_complexity(&x, fs).unwrap()));
            prop_assert!(rel(katz_fd(&y).unwrap(), katz_fd(&x).unwrap()));
            prop_assert!(rel(higuchi_fd(&y, 10).unwrap(), higuchi_fd(&x, 10).unwrap()));
            prop_assert!(rel(dfa_exponent(&y, &[4, 8, 16, 32, 64]).unwrap(),
                             dfa_exponent(&x, &[4, 8, 16, 32, 64]).unwrap()));
            if c > 0.0 {
                prop_assert_eq!(lzc(&y).unwrap(), lzc(&x).unwrap());
                prop_assert_eq!(perm_entropy(&y, 3, 1).unwrap(), perm_entropy(&x, 3, 1).unwrap());
            }
        }

        #[test]
        fn reversal_invariance(x in prop::collection::vec(-10.0f64..10.0, 640)) {
            let r: Vec<f64> = x.iter().rev().copied().collect();
            prop_assert!((variance(&r).unwrap() - variance(&x).unwrap()).abs() <= 1e-12 * variance(&x).unwrap());
            prop_assert!((line_length(&r).unwrap() - line_length(&x).unwrap()).abs() <= 1e-12 * line_length(&x).unwrap());
            // zero-phase filtering is reversal symmetric up to edge handling
            for band in Band::ALL {
                let bp_x = band_power(&x, &band.spec(), 128.0, 4).unwrap();
                let bp_r = band_power(&r, &band.spec(), 128.0, 4).unwrap();
                prop_assert!((bp_x - bp_r).abs() < 0.05, "{:?}: {} vs {}", band, bp_x, bp_r);
            }
            // median binarisation commutes with reversal
            let mut b = binarize_median(&x);
            b.reverse();
            prop_assert_eq!(b, binarize_median(&r));
        }

        #[test]
        fn lz_count_invariant_under_symbol_swap(bits in prop::collection::vec(0u8..2, 1..200)) {
            let flipped: Vec<u8> = bits.iter().map(|b| 1 - b).collect();
            prop_assert_eq!(lz_phrase_count(&bits), lz_phrase_count(&flipped));
        }

        #[test]
        fn perm_entropy_in_unit_interval(x in prop::collection::vec(-1.0f64..1.0, 5..200), d in 2usize..5) {
            if let Ok(h) = perm_entropy(&x, d, 1) {
                prop_assert!((0.0..=1.0).contains(&h));
            }
        }
    }
}
