//! Confusion-matrix metrics, patient-grouped splitting and k-fold
//! cross-validation.
//!
//! Per-class metrics are one-vs-rest. Any ratio with a zero denominator is
//! reported as 0. Values are kept at full precision; rounding to three
//! decimals happens only in [`MetricsReport::to_table`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::forest::BreathClassifier;
use crate::io::PredictionRow;
use crate::mode::{VentMode, CLASSES, N_CLASSES};
use crate::pipeline::{featurize, predict_entries, train_on_features, FeatureDataset, PipelineConfig, StatsDataset};
use crate::smoothing::SmoothingConfig;

/// Rows are true classes, columns predicted classes, in class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: VentMode, predicted: VentMode) -> Result<()> {
        let (Some(t), Some(p)) = (truth.class_index(), predicted.class_index()) else {
            return Err(Error::OtherLabel);
        };
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (VentMode, VentMode)>) -> Result<Self> {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub mode: VentMode,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    /// True breaths of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Mean of the one-vs-rest accuracies.
    pub macro_accuracy: f64,
    /// Multiclass accuracy: trace / total.
    pub overall_accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn unweighted_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let per_class: Vec<ClassMetrics> = (0..N_CLASSES)
        .map(|c| {
            let tp = cm.counts[c][c];
            let fn_ = cm.row_sum(c) - tp;
            let fp = cm.col_sum(c) - tp;
            let tn = total - tp - fn_ - fp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                mode: CLASSES[c],
                f1: f1_score(precision, recall),
                accuracy: ratio(tp + tn, total),
                precision,
                recall,
                specificity: ratio(tn, tn + fp),
                support: tp + fn_,
            }
        })
        .collect();
    let trace: u64 = (0..N_CLASSES).map(|c| cm.counts[c][c]).sum();
    Ok(MetricsReport {
        macro_f1: unweighted_mean(&per_class.iter().map(|m| m.f1).collect::<Vec<_>>()),
        macro_accuracy: unweighted_mean(&per_class.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
        overall_accuracy: ratio(trace, total),
        total,
        per_class,
    })
}

impl MetricsReport {
    pub fn class(&self, mode: VentMode) -> &ClassMetrics {
        let idx = mode.class_index().expect("trainable class");
        &self.per_class[idx]
    }

    pub fn f1s(&self) -> [f64; N_CLASSES] {
        std::array::from_fn(|i| self.per_class[i].f1)
    }

    /// Element-wise mean of several reports (fold averaging).
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| unweighted_mean(&reports.iter().map(f).collect::<Vec<_>>());
        let per_class = (0..N_CLASSES)
            .map(|c| ClassMetrics {
                mode: CLASSES[c],
                f1: avg(&|r| r.per_class[c].f1),
                accuracy: avg(&|r| r.per_class[c].accuracy),
                precision: avg(&|r| r.per_class[c].precision),
                recall: avg(&|r| r.per_class[c].recall),
                specificity: avg(&|r| r.per_class[c].specificity),
                support: reports.iter().map(|r| r.per_class[c].support).sum(),
            })
            .collect();
        Some(MetricsReport {
            per_class,
            macro_f1: avg(&|r| r.macro_f1),
            macro_accuracy: avg(&|r| r.macro_accuracy),
            overall_accuracy: avg(&|r| r.overall_accuracy),
            total: reports.iter().map(|r| r.total).sum(),
        })
    }

    /// CSV in the column order `mode,f1,accuracy,precision,recall,specificity`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,f1,accuracy,precision,recall,specificity\n");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.mode, m.f1, m.accuracy, m.precision, m.recall, m.specificity
            );
        }
        s
    }

    /// Human-readable table rounded to three decimals.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<6}{:>10}{:>10}{:>10}{:>10}{:>12}\n",
            "Mode", "F1", "Accuracy", "Precision", "Recall", "Specificity"
        );
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<6}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>12.3}",
                m.mode.as_str().to_uppercase(),
                m.f1,
                m.accuracy,
                m.precision,
                m.recall,
                m.specificity
            );
        }
        let _ = writeln!(
            s,
            "macro F1 {:.4}  macro accuracy {:.4}  overall accuracy {:.4}  breaths {}",
            self.macro_f1, self.macro_accuracy, self.overall_accuracy, self.total
        );
        s
    }
}

/// Split so that every breath of a patient lands on the same side.
pub fn split_by_patient<B: Clone>(
    ds: &LabeledDataset<B>,
    test_patient_ids: &[&str],
) -> Result<(LabeledDataset<B>, LabeledDataset<B>)> {
    let known: BTreeSet<&str> = ds.patient_ids().collect();
    if let Some(bad) = test_patient_ids.iter().find(|p| !known.contains(*p)) {
        return Err(Error::UnknownPatient(bad.to_string()));
    }
    let test: BTreeSet<&str> = test_patient_ids.iter().copied().collect();
    let train: BTreeSet<&str> = known.difference(&test).copied().collect();
    Ok((ds.select_patients(&train), ds.select_patients(&test)))
}

/// Raw and smoothed results of running a classifier over a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub raw: MetricsReport,
    pub smoothed: MetricsReport,
    pub raw_confusion: ConfusionMatrix,
    pub smoothed_confusion: ConfusionMatrix,
    pub predictions: Vec<PredictionRow>,
}

/// Predict every breath (per file, in order), smooth, and score.
pub fn evaluate_model<C: BreathClassifier + ?Sized>(
    classifier: &C,
    ds: &FeatureDataset,
    smoothing: &SmoothingConfig,
) -> Result<Evaluation> {
    if ds.entries().any(|(_, e)| e.mode == VentMode::Other) {
        return Err(Error::OtherLabel);
    }
    let mut raw_cm = ConfusionMatrix::default();
    let mut smooth_cm = ConfusionMatrix::default();
    let mut predictions = Vec::with_capacity(ds.len());
    for file in ds.files() {
        let rows = predict_entries(classifier, file, smoothing)?;
        for (e, r) in file.entries.iter().zip(&rows) {
            raw_cm.add(e.mode, r.raw_mode)?;
            smooth_cm.add(e.mode, r.smoothed_mode)?;
        }
        predictions.extend(rows);
    }
    Ok(Evaluation {
        raw: per_class_metrics(&raw_cm)?,
        smoothed: per_class_metrics(&smooth_cm)?,
        raw_confusion: raw_cm,
        smoothed_confusion: smooth_cm,
        predictions,
    })
}

pub fn evaluate_stats<C: BreathClassifier + ?Sized>(
    classifier: &C,
    ds: &StatsDataset,
    config: &PipelineConfig,
) -> Result<Evaluation> {
    evaluate_model(classifier, &featurize(ds, &config.features), &config.smoothing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Patient,
    Breath,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "patient" => Ok(Self::Patient),
            "breath" => Ok(Self::Breath),
            _ => Err(format!("unknown grouping {s:?}")),
        }
    }
}

/// Deterministic fold index for each of `n_groups` groups: a seeded
/// shuffle dealt round-robin, so fold sizes differ by at most one.
pub fn assign_folds(n_groups: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || n_groups < k {
        return Err(Error::NotEnoughGroups { groups: n_groups, k });
    }
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n_groups];
    for (pos, g) in order.into_iter().enumerate() {
        fold[g] = pos % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub raw: MetricsReport,
    pub smoothed: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub k: usize,
    pub grouping: Grouping,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_raw: MetricsReport,
    pub mean_smoothed: MetricsReport,
}

/// k-fold cross-validation. Features are computed per file on the full
/// dataset before folds are cut. With breath grouping, a held-out breath's
/// windows therefore include neighbours that sit in the training folds.
pub fn kfold_cv(
    ds: &StatsDataset,
    k: usize,
    grouping: Grouping,
    seed: u64,
    config: &PipelineConfig,
) -> Result<CvOutcome> {
    let feats = featurize(ds, &config.features);

    // group id per (file, entry)
    let group_of: Vec<Vec<usize>> = match grouping {
        Grouping::Patient => {
            let patients: Vec<&str> = feats.patient_ids().collect();
            feats
                .files()
                .iter()
                .map(|f| {
                    let g = patients.iter().position(|p| *p == f.patient_id).expect("indexed patient");
                    vec![g; f.entries.len()]
                })
                .collect()
        }
        Grouping::Breath => {
            let mut next = 0;
            feats
                .files()
                .iter()
                .map(|f| {
                    let ids: Vec<usize> = (next..next + f.entries.len()).collect();
                    next += f.entries.len();
                    ids
                })
                .collect()
        }
    };
    let n_groups = match grouping {
        Grouping::Patient => feats.patient_ids().count(),
        Grouping::Breath => feats.len(),
    };
    let folds = assign_folds(n_groups, k, seed)?;

    let run_fold = |fold: usize| -> Result<FoldResult> {
        let train = feats.retain(|fi, ei, _| folds[group_of[fi][ei]] != fold);
        let test = feats.retain(|fi, ei, _| folds[group_of[fi][ei]] == fold);
        let model = train_on_features(&train, &config.forest)?;
        let eval = evaluate_model(&model, &test, &config.smoothing)?;
        Ok(FoldResult {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            raw: eval.raw,
            smoothed: eval.smoothed,
        })
    };

    #[cfg(feature = "parallel")]
    let results: Vec<FoldResult> = {
        use rayon::prelude::*;
        (0..k).into_par_iter().map(run_fold).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<FoldResult> = (0..k).map(run_fold).collect::<Result<_>>()?;

    let raws: Vec<MetricsReport> = results.iter().map(|r| r.raw.clone()).collect();
    let smooths: Vec<MetricsReport> = results.iter().map(|r| r.smoothed.clone()).collect();
    Ok(CvOutcome {
        k,
        grouping,
        seed,
        mean_raw: MetricsReport::mean(&raws).expect("k ≥ 2"),
        mean_smoothed: MetricsReport::mean(&smooths).expect("k ≥ 2"),
        folds: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FileEntries, Labeled};
    use crate::forest::Prediction;
    use crate::io::BreathFlags;
    use approx::assert_relative_eq;

    fn round3(v: f64) -> f64 {
        (v * 1000.0).round() / 1000.0
    }

    #[test]
    fn f1_identity_and_reference_rows() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert_eq!(round3(f1_score(0.767, 0.952)), 0.850);
        assert_eq!(round3(f1_score(0.983, 0.996)), 0.989);
    }

    #[test]
    fn diagonal_confusion_is_perfect() {
        let mut cm = ConfusionMatrix::default();
        for c in 0..N_CLASSES {
            cm.counts[c][c] = 10 + c as u64;
        }
        let r = per_class_metrics(&cm).unwrap();
        for m in &r.per_class {
            assert_eq!((m.f1, m.accuracy, m.precision, m.recall, m.specificity), (1.0, 1.0, 1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.overall_accuracy, 1.0);
    }

    #[test]
    fn two_class_toy() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0] = [8, 2, 0, 0, 0];
        cm.counts[1] = [1, 9, 0, 0, 0];
        let r = per_class_metrics(&cm).unwrap();
        let c0 = &r.per_class[0];
        assert_relative_eq!(c0.precision, 8.0 / 9.0);
        assert_relative_eq!(c0.recall, 0.8);
        assert_eq!(round3(c0.f1), 0.842);
        // absent classes: every ratio has a zero numerator or denominator
        assert_eq!(r.per_class[3].f1, 0.0);
        assert_eq!(r.per_class[3].specificity, 1.0);
    }

    #[test]
    fn empty_confusion_errors() {
        assert!(matches!(per_class_metrics(&ConfusionMatrix::default()), Err(Error::EmptyConfusion)));
    }

    #[test]
    fn macro_of_reported_f1s() {
        let m = unweighted_mean(&[0.999, 0.989, 0.975, 0.85, 0.994]);
        assert!((m - 0.9614).abs() < 1e-4);
    }

    #[test]
    fn folds_deterministic_and_balanced() {
        let a = assign_folds(103, 10, 7).unwrap();
        assert_eq!(a, assign_folds(103, 10, 7).unwrap());
        assert_ne!(a, assign_folds(103, 10, 8).unwrap());
        let mut sizes = [0; 10];
        for f in &a {
            sizes[*f] += 1;
        }
        assert!(sizes.iter().all(|s| *s == 10 || *s == 11));
        assert!(matches!(assign_folds(5, 10, 0), Err(Error::NotEnoughGroups { groups: 5, k: 10 })));
    }

    fn toy(patients: usize, per_patient: usize) -> LabeledDataset<u32> {
        let files = (0..patients)
            .map(|p| FileEntries {
                patient_id: format!("p{p}"),
                file_id: format!("f{p}"),
                entries: (0..per_patient as u64)
                    .map(|i| Labeled {
                        breath_ordinal: i,
                        breath: p as u32,
                        mode: CLASSES[p % 5],
                        flags: BreathFlags::NONE,
                    })
                    .collect(),
            })
            .collect();
        LabeledDataset::from_files(files).unwrap()
    }

    #[test]
    fn patient_split() {
        let ds = toy(4, 5);
        let (train, test) = split_by_patient(&ds, &["p2", "p3"]).unwrap();
        assert_eq!(test.len(), 10);
        assert!(test.entries().all(|(_, e)| e.breath >= 2));
        assert!(train.entries().all(|(_, e)| e.breath < 2));
        let (train, test) = split_by_patient(&ds, &[]).unwrap();
        assert_eq!((train.len(), test.len()), (20, 0));
        assert!(matches!(split_by_patient(&ds, &["zz"]), Err(Error::UnknownPatient(_))));
    }

    struct Constant(VentMode);

    impl BreathClassifier for Constant {
        fn classify(&self, _: &[f64; 7]) -> Result<Prediction> {
            let mut votes = [0; N_CLASSES];
            votes[self.0.class_index().unwrap()] = 1;
            Ok(Prediction::from_votes(votes))
        }
    }

    #[test]
    fn constant_model_metrics() {
        let ds = toy(5, 4).map(|_| crate::features::FeatureVector::default());
        let e = evaluate_model(&Constant(VentMode::Vc), &ds, &SmoothingConfig::none()).unwrap();
        assert_eq!(e.raw.class(VentMode::Vc).recall, 1.0);
        assert_eq!(e.raw.class(VentMode::Vc).specificity, 0.0);
        assert_eq!(e.predictions.len(), 20);
    }

    #[test]
    fn other_label_rejected() {
        let files = vec![FileEntries {
            patient_id: "p".into(),
            file_id: "f".into(),
            entries: vec![Labeled {
                breath_ordinal: 0,
                breath: crate::features::FeatureVector::default(),
                mode: VentMode::Other,
                flags: BreathFlags::NONE,
            }],
        }];
        let ds = LabeledDataset::from_files(files).unwrap();
        assert!(matches!(
            evaluate_model(&Constant(VentMode::Vc), &ds, &SmoothingConfig::none()),
            Err(Error::OtherLabel)
        ));
    }
}
