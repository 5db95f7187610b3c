//! EEG to graph pipeline, an edge-gated graph attention classifier trained
//! with a small reverse-mode autodiff engine, and mask-based explanations.
//!
//! Stages, in order: [`dsp`] (filtering and epoching), [`features`] and
//! [`connectivity`] (one [`BrainGraph`] per epoch), [`model`] and
//! [`trainer`] (classification and cross-validation), [`explain`]
//! (saliency), [`io`] (file formats and reports).

pub mod autodiff;
pub mod connectivity;
pub mod dsp;
pub mod error;
pub mod explain;
pub mod features;
pub mod io;
pub mod model;
pub mod recording;
pub mod synth;
pub mod trainer;

pub use autodiff::Tensor;
pub use connectivity::BrainGraph;
pub use dsp::Epoch;
pub use error::{Error, Result};
pub use explain::{MaskSet, SaliencyBundle};
pub use model::{ModelConfig, ModelParams};
pub use recording::{Label, Montage, Recording};
pub use trainer::{FoldPlan, MetricsTable};
