//! Shared fixtures for the benchmarks.

use expanet_core::dsp::{preprocess_recording, DspConfig};
use expanet_core::synth::{synth_recording, SynthConfig};
use expanet_core::{Epoch, Label};

/// Preprocessed epochs of one synthetic recording of `duration_s` seconds.
pub fn epochs(label: Label, duration_s: f64) -> Vec<Epoch> {
    let cfg = SynthConfig {
        duration_s,
        ..SynthConfig::default()
    };
    let rec = synth_recording("bench", label, &cfg, 1);
    preprocess_recording(&rec, &DspConfig::default()).expect("synthetic recording preprocesses")
}
