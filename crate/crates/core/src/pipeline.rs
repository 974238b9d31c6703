//! Glue between datasets, features, the forest and smoothing.

use serde::{Deserialize, Serialize};

use crate::breath::Breath;
use crate::dataset::{FileEntries, LabeledDataset};
use crate::error::{Error, Result};
use crate::features::{breath_stats, window_features, BreathStats, FeatureConfig, FeatureVector, N_FEATURES};
use crate::forest::{train_forest, BreathClassifier, ForestConfig, RandomForestModel};
use crate::io::PredictionRow;
use crate::mode::VentMode;
use crate::smoothing::{smooth, SmoothingConfig};

/// Breaths reduced to the per-breath statistics the features need.
pub type StatsDataset = LabeledDataset<BreathStats>;
/// Breaths with their full feature vectors.
pub type FeatureDataset = LabeledDataset<FeatureVector>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub forest: ForestConfig,
    pub smoothing: SmoothingConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.smoothing.validate()?;
        self.features.validate(crate::io::SamplingSpec::default())
    }
}

pub fn to_stats(ds: &LabeledDataset<Breath>, config: &FeatureConfig) -> StatsDataset {
    ds.map(|b| breath_stats(b, config))
}

/// Windowed features, computed per file over the breaths present.
pub fn featurize(ds: &StatsDataset, config: &FeatureConfig) -> FeatureDataset {
    ds.map_files(|f| {
        let stats: Vec<BreathStats> = f.entries.iter().map(|e| e.breath).collect();
        window_features(&stats, config)
    })
}

pub fn training_matrix(ds: &FeatureDataset) -> (Vec<[f64; N_FEATURES]>, Vec<VentMode>) {
    ds.entries().map(|(_, e)| (e.breath.to_array(), e.mode)).unzip()
}

pub fn train_on_features(ds: &FeatureDataset, config: &ForestConfig) -> Result<RandomForestModel> {
    let (x, y) = training_matrix(ds);
    train_forest(&x, &y, config)
}

pub fn train(ds: &StatsDataset, config: &PipelineConfig) -> Result<RandomForestModel> {
    train_on_features(&featurize(ds, &config.features), &config.forest)
}

/// Classify one file's breaths and smooth the sequence.
pub fn predict_file<C: BreathClassifier + ?Sized>(
    classifier: &C,
    file_id: &str,
    ordinals: &[u64],
    features: &[FeatureVector],
    smoothing: &SmoothingConfig,
) -> Result<Vec<PredictionRow>> {
    let mut raw = Vec::with_capacity(features.len());
    let mut votes = Vec::with_capacity(features.len());
    for (row, f) in features.iter().enumerate() {
        let p = classifier.classify(&f.to_array()).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { row },
            other => other,
        })?;
        raw.push(p.mode);
        votes.push(p.fractions());
    }
    let smoothed = smooth(&raw, smoothing);
    Ok(ordinals
        .iter()
        .zip(raw.into_iter().zip(smoothed))
        .zip(votes)
        .map(|((o, (r, s)), v)| PredictionRow {
            file_id: file_id.to_string(),
            breath_ordinal: *o,
            raw_mode: r,
            smoothed_mode: s,
            votes: v,
        })
        .collect())
}

pub(crate) fn predict_entries<C: BreathClassifier + ?Sized>(
    classifier: &C,
    file: &FileEntries<FeatureVector>,
    smoothing: &SmoothingConfig,
) -> Result<Vec<PredictionRow>> {
    let ordinals: Vec<u64> = file.entries.iter().map(|e| e.breath_ordinal).collect();
    let features: Vec<FeatureVector> = file.entries.iter().map(|e| e.breath).collect();
    predict_file(classifier, &file.file_id, &ordinals, &features, smoothing)
}
