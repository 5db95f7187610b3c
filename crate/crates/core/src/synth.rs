//! Synthetic two-class EEG generator.
//!
//! HC recordings carry a strong alpha rhythm driven by one source shared by
//! every channel, so inter-hemispheric phase coupling is high. MDD
//! recordings carry a weaker alpha rhythm and a frontal theta rhythm, both
//! from independent left, right and frontal sources. Both share pink-ish background noise, a common-mode
//! component and 50 Hz line interference.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::recording::{Label, Recording, CHANNELS};
use crate::trainer::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub alpha_hz: f64,
    pub hc_alpha_amplitude: f64,
    pub mdd_alpha_amplitude: f64,
    /// Frontal-central theta rhythm present only in MDD recordings.
    pub mdd_theta_hz: f64,
    pub mdd_theta_amplitude: f64,
    /// Standard deviation of the per-sample phase increment noise (rad).
    pub phase_diffusion: f64,
    pub background_ar: f64,
    pub common_noise: f64,
    pub line_noise: f64,
    /// Output scale in microvolts.
    pub scale_uv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: 160.0,
            duration_s: 60.0,
            alpha_hz: 10.0,
            hc_alpha_amplitude: 1.6,
            mdd_alpha_amplitude: 0.6,
            mdd_theta_hz: 6.0,
            mdd_theta_amplitude: 1.2,
            phase_diffusion: 0.02,
            background_ar: 0.95,
            common_noise: 0.3,
            line_noise: 0.2,
            scale_uv: 10.0,
        }
    }
}

/// Posterior channels carry the most alpha.
fn alpha_weight(name: &str) -> f64 {
    match name {
        "O1" | "O2" => 1.0,
        "P3" | "P4" | "Pz" => 0.9,
        "T5" | "T6" => 0.75,
        "C3" | "C4" | "Cz" => 0.6,
        "T3" | "T4" => 0.5,
        "F3" | "F4" | "Fz" | "F7" | "F8" => 0.4,
        _ => 0.3,
    }
}

/// Theta is strongest over frontal and central sites.
fn theta_weight(name: &str) -> f64 {
    match name {
        "Fz" | "F3" | "F4" | "Cz" => 1.0,
        "Fp1" | "Fp2" | "F7" | "F8" | "C3" | "C4" => 0.8,
        "T3" | "T4" | "Pz" | "P3" | "P4" => 0.6,
        _ => 0.5,
    }
}

/// Mixing weights onto the (left, right, frontal) sources used for MDD.
fn mdd_sources(name: &str) -> [f64; 3] {
    match name {
        "Fp1" | "Fp2" | "F3" | "F4" | "F7" | "F8" | "Fz" => [0.0, 0.0, 1.0],
        "C3" | "P3" | "O1" | "T3" | "T5" => [1.0, 0.0, 0.0],
        "C4" | "P4" | "O2" | "T4" | "T6" => [0.0, 1.0, 0.0],
        _ => [0.5, 0.5, 0.0],
    }
}

/// A narrowband oscillation whose phase follows a random walk.
fn oscillator(n: usize, freq_hz: f64, fs: f64, diffusion: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let step = 2.0 * PI * freq_hz / fs;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let jitter = Normal::new(0.0, diffusion).expect("diffusion is finite and non-negative");
    (0..n)
        .map(|_| {
            phase += step + jitter.sample(rng);
            phase.sin()
        })
        .collect()
}

fn ar1(n: usize, coef: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gain = (1.0 - coef * coef).sqrt();
    let mut state = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            state = coef * state + gain * w;
            state
        })
        .collect()
}

/// One subject's recording, fully determined by `seed`.
pub fn synth_recording(subject_id: &str, label: Label, cfg: &SynthConfig, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = cfg.sample_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;
    let freq = cfg.alpha_hz + rng.random_range(-0.5..0.5);
    let n_sources = match label {
        Label::Hc => 1,
        Label::Mdd => 3,
    };
    let sources: Vec<Vec<f64>> = (0..n_sources)
        .map(|_| oscillator(n, freq, fs, cfg.phase_diffusion, &mut rng))
        .collect();
    let theta: Vec<Vec<f64>> = (0..n_sources)
        .map(|_| oscillator(n, cfg.mdd_theta_hz, fs, cfg.phase_diffusion, &mut rng))
        .collect();
    let common = ar1(n, cfg.background_ar, &mut rng);
    let line_phase = rng.random_range(0.0..2.0 * PI);
    let data = CHANNELS
        .iter()
        .map(|name| {
            let w = alpha_weight(name);
            let theta_w = theta_weight(name);
            let background = ar1(n, cfg.background_ar, &mut rng);
            let white: Vec<f64> = (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            (0..n)
                .map(|t| {
                    let alpha = match label {
                        Label::Hc => cfg.hc_alpha_amplitude * w * sources[0][t],
                        Label::Mdd => {
                            let mix = mdd_sources(name);
                            (0..3)
                                .map(|s| {
                                    mix[s]
                                        * (cfg.mdd_alpha_amplitude * w * sources[s][t]
                                            + cfg.mdd_theta_amplitude * theta_w * theta[s][t])
                                })
                                .sum::<f64>()
                        }
                    };
                    let line = cfg.line_noise * (2.0 * PI * 50.0 * t as f64 / fs + line_phase).sin();
                    cfg.scale_uv * (alpha + background[t] + white[t] + cfg.common_noise * common[t] + line)
                })
                .collect()
        })
        .collect();
    Recording {
        subject_id: subject_id.to_string(),
        label,
        sample_rate_hz: fs,
        channel_names: CHANNELS.iter().map(|s| s.to_string()).collect(),
        data,
    }
}

/// `n_subjects / 2` subjects per class, ids `hc01..`, `mdd01..`.
pub fn synth_dataset(n_subjects: usize, cfg: &SynthConfig, seed: u64) -> Vec<Recording> {
    let per_class = n_subjects / 2;
    Label::ALL
        .iter()
        .flat_map(|&label| {
            (0..per_class).map(move |i| {
                let id = format!("{}{:02}", label.name().to_lowercase(), i + 1);
                synth_recording(&id, label, cfg, mix_seed(&[seed, label.index() as u64, i as u64]))
            })
        })
        .collect()
}
