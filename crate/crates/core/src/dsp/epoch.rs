use serde::{Deserialize, Serialize};

use crate::error::DspError;
use crate::recording::{Label, Recording};

/// One fixed-length, per-channel z-scored segment of a recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    /// `[channel][sample]`.
    pub data: Vec<Vec<f64>>,
    pub segment_index: usize,
}

impl Epoch {
    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

/// Samples per epoch: `round(epoch_s * fs)`.
pub fn epoch_len(epoch_s: f64, sample_rate_hz: f64) -> usize {
    (epoch_s * sample_rate_hz).round() as usize
}

/// Hop between epoch starts: `floor(n_t * (1 - overlap))`, at least one sample.
pub fn epoch_hop(n_t: usize, overlap: f64) -> usize {
    ((n_t as f64 * (1.0 - overlap)).floor() as usize).max(1)
}

/// Per-channel z-score with population standard deviation. Constant channels
/// map to zeros.
pub fn zscore(channel: &[f64]) -> Vec<f64> {
    let n = channel.len() as f64;
    if channel.is_empty() {
        return Vec::new();
    }
    let mean = channel.iter().sum::<f64>() / n;
    let var = channel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = channel.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(std > 1e-12 * scale) {
        return vec![0.0; channel.len()];
    }
    channel.iter().map(|v| (v - mean) / std).collect()
}

/// Slides a window of `epoch_s` seconds with fractional `overlap` over the
/// recording, z-scoring each channel of every window. A trailing partial
/// window is discarded.
pub fn segment_epochs(rec: &Recording, epoch_s: f64, overlap: f64) -> Result<Vec<Epoch>, DspError> {
    if !(epoch_s > 0.0) || !(0.0..1.0).contains(&overlap) {
        return Err(DspError::InvalidParameter(format!(
            "epoch length {epoch_s} s / overlap {overlap} out of range"
        )));
    }
    let n_t = epoch_len(epoch_s, rec.sample_rate_hz);
    let n = rec.n_samples();
    if n_t == 0 || n < n_t {
        return Err(DspError::TooShortSignal {
            needed: n_t,
            got: n,
        });
    }
    let hop = epoch_hop(n_t, overlap);
    let count = (n - n_t) / hop + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * hop;
            Epoch {
                subject_id: rec.subject_id.clone(),
                label: rec.label,
                sample_rate_hz: rec.sample_rate_hz,
                data: rec
                    .data
                    .iter()
                    .map(|row| zscore(&row[start..start + n_t]))
                    .collect(),
                segment_index: k,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::CHANNELS;
    use proptest::prelude::*;

    fn recording(seconds: f64, fs: f64) -> Recording {
        let n = (seconds * fs).round() as usize;
        Recording {
            subject_id: "s01".into(),
            label: Label::Mdd,
            sample_rate_hz: fs,
            channel_names: CHANNELS.iter().map(|s| s.to_string()).collect(),
            data: (0..19)
                .map(|c| (0..n).map(|i| ((i * (c + 3)) % 17) as f64).collect())
                .collect(),
        }
    }

    #[test]
    fn epoch_count_follows_hop() {
        assert_eq!(segment_epochs(&recording(20.0, 128.0), 5.0, 0.5).unwrap().len(), 7);
        assert_eq!(segment_epochs(&recording(5.0, 128.0), 5.0, 0.5).unwrap().len(), 1);
        assert!(matches!(
            segment_epochs(&recording(4.9, 128.0), 5.0, 0.5),
            Err(DspError::TooShortSignal { .. })
        ));
    }

    #[test]
    fn consecutive_epochs_overlap_by_half() {
        let rec = recording(20.0, 128.0);
        let n_t = epoch_len(5.0, 128.0);
        let hop = epoch_hop(n_t, 0.5);
        assert_eq!(n_t - hop, n_t / 2);
        let epochs = segment_epochs(&rec, 5.0, 0.5).unwrap();
        for (k, e) in epochs.iter().enumerate() {
            assert_eq!(e.segment_index, k);
            assert_eq!(e.n_samples(), n_t);
            assert_eq!(e.data[2], zscore(&rec.data[2][k * hop..k * hop + n_t]));
        }
    }

    #[test]
    fn odd_epoch_length_uses_floor_hop() {
        assert_eq!(epoch_len(5.0, 160.3), 802);
        assert_eq!(epoch_hop(801, 0.5), 400);
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0]);
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(zscore(&[7.0, 7.0, 7.0]), vec![0.0; 3]);
        assert_eq!(zscore(&[0.1, 0.1, 0.1]), vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn zscore_is_idempotent(x in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let once = zscore(&x);
            let twice = zscore(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn zscore_moments(x in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let z = zscore(&x);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var.abs() < 1e-12 || (var - 1.0).abs() < 1e-6);
        }
    }
}
