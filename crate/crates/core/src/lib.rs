//! Breath-by-breath ventilator mode classification from flow and pressure
//! waveforms.
//!
//! The pipeline: parse waveform and annotation files ([`io`]), derive
//! per-breath metadata ([`breath`]), compute seven per-breath and windowed
//! features ([`features`]), classify with a random forest ([`forest`]) and
//! smooth the label sequence ([`smoothing`]). [`eval`], [`ablation`] and
//! [`synth`] support experiments.

pub mod ablation;
pub mod breath;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod io;
pub mod mode;
pub mod pipeline;
pub mod smoothing;
pub mod synth;

pub use breath::{Breath, BreathMetadata};
pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector, N_FEATURES};
pub use forest::{BreathClassifier, ForestConfig, RandomForestModel};
pub use io::SamplingSpec;
pub use mode::{VentMode, CLASSES, N_CLASSES};
pub use pipeline::PipelineConfig;
pub use smoothing::{SmoothingConfig, SmoothingVariant};
