//! Training-set ablation experiments.
//!
//! * Random ablation removes the same fraction of breaths from every class
//!   and retrains, tracing how per-class F1 on an untouched test set
//!   responds to missing data.
//! * First-m ablation keeps, within each file, only the first `m` breaths of
//!   a given mode, and sweeps `m` for one mode at a time.
//!
//! Ablation runs on per-breath statistics by default, so the windowed
//! features of the survivors are recomputed with the gaps closed. With
//! [`FeatureLevel::Frozen`] features are computed once on the full training
//! set and rows are removed afterwards.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::mode::{VentMode, CLASSES, N_CLASSES};
use crate::pipeline::{featurize, train_on_features, FeatureDataset, PipelineConfig, StatsDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomAblationConfig {
    pub fraction_removed: f64,
    pub seed: u64,
}

impl RandomAblationConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fraction_removed) {
            return Err(Error::InvalidConfig(format!(
                "fraction removed must be in [0, 1), got {}",
                self.fraction_removed
            )));
        }
        Ok(())
    }
}

/// Breaths removed from a class of `count` at `fraction`: ⌊fraction·count⌋,
/// with a 1e-9 allowance so that e.g. 0.29·100 removes 29.
pub fn removal_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64) + 1e-9).floor().min(count as f64) as usize
}

/// Remove `⌊fraction·n_c⌋` breaths uniformly at random from each class `c`,
/// independently per class. Survivors keep their order.
pub fn random_ablate<B: Clone>(ds: &LabeledDataset<B>, config: &RandomAblationConfig) -> Result<LabeledDataset<B>> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    // flat positions of each class's breaths
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (pos, (_, e)) in ds.entries().enumerate() {
        if let Some(c) = e.mode.class_index() {
            by_class[c].push(pos);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut removed = vec![false; ds.len()];
    for positions in &by_class {
        let k = removal_count(config.fraction_removed, positions.len());
        for i in rand::seq::index::sample(&mut rng, positions.len(), k) {
            removed[positions[i]] = true;
        }
    }
    let mut pos = 0;
    let mut offsets = Vec::with_capacity(ds.files().len());
    for f in ds.files() {
        offsets.push(pos);
        pos += f.entries.len();
    }
    Ok(ds.retain(|fi, ei, _| !removed[offsets[fi] + ei]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstMRule {
    /// The first `m` breaths of the mode in the file, wherever they occur.
    #[default]
    Occurrences,
    /// Only breaths from the file's first contiguous run of the mode.
    FirstRun,
}

/// Within each file keep only the first `m` breaths labelled `mode`;
/// other modes are untouched.
pub fn first_m_ablate<B: Clone>(ds: &LabeledDataset<B>, mode: VentMode, m: usize, rule: FirstMRule) -> LabeledDataset<B> {
    let mut current_file = usize::MAX;
    let mut seen = 0usize;
    let mut run_closed = false;
    let mut prev_was_mode = false;
    ds.retain(|fi, _, e| {
        if fi != current_file {
            current_file = fi;
            seen = 0;
            run_closed = false;
            prev_was_mode = false;
        }
        if e.mode != mode {
            if prev_was_mode {
                run_closed = true;
            }
            prev_was_mode = false;
            return true;
        }
        prev_was_mode = true;
        if rule == FirstMRule::FirstRun && run_closed {
            return false;
        }
        seen += 1;
        seen <= m
    })
}

/// Per-mode `m` values for a combined first-m reduction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstMConfig {
    pub m_per_mode: BTreeMap<VentMode, usize>,
    #[serde(default)]
    pub rule: FirstMRule,
}

impl Default for FirstMConfig {
    /// VC 450, PC 120, PS 1200, CPAP 160, PAV 80.
    fn default() -> Self {
        Self {
            m_per_mode: [
                (VentMode::Vc, 450),
                (VentMode::Pc, 120),
                (VentMode::Ps, 1200),
                (VentMode::Cpap, 160),
                (VentMode::Pav, 80),
            ]
            .into_iter()
            .collect(),
            rule: FirstMRule::Occurrences,
        }
    }
}

impl FirstMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_per_mode.values().any(|m| *m == 0) {
            return Err(Error::InvalidConfig("every m must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn first_m_ablate_all<B: Clone>(ds: &LabeledDataset<B>, config: &FirstMConfig) -> Result<LabeledDataset<B>> {
    config.validate()?;
    let mut out = ds.clone();
    for (mode, m) in &config.m_per_mode {
        out = first_m_ablate(&out, *mode, *m, config.rule);
    }
    Ok(out)
}

/// Kept counts and reduction relative to the original training set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub kept: [usize; N_CLASSES],
    pub kept_total: usize,
    pub original_total: usize,
    /// Percent reduction of the whole set.
    pub reduction_pct: f64,
    /// Per-class original counts and percent reductions, when known.
    pub original: Option<[usize; N_CLASSES]>,
    pub class_reduction_pct: Option<[f64; N_CLASSES]>,
}

fn pct_reduction(kept: usize, original: usize) -> f64 {
    if original == 0 {
        0.0
    } else {
        100.0 * (original as f64 - kept as f64) / original as f64
    }
}

impl ReductionReport {
    pub fn from_totals(kept: [usize; N_CLASSES], original_total: usize) -> Self {
        let kept_total = kept.iter().sum();
        Self {
            kept,
            kept_total,
            original_total,
            reduction_pct: pct_reduction(kept_total, original_total),
            original: None,
            class_reduction_pct: None,
        }
    }

    pub fn from_counts(kept: [usize; N_CLASSES], original: [usize; N_CLASSES]) -> Self {
        let mut r = Self::from_totals(kept, original.iter().sum());
        r.original = Some(original);
        r.class_reduction_pct = Some(std::array::from_fn(|c| pct_reduction(kept[c], original[c])));
        r
    }

    pub fn between<B>(before: &LabeledDataset<B>, after: &LabeledDataset<B>) -> Self {
        Self::from_counts(after.class_counts(), before.class_counts())
    }
}

impl std::fmt::Display for ReductionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<6}{:>12}{:>12}", "Mode", "Kept", "Reduction")?;
        for (c, mode) in CLASSES.iter().enumerate() {
            let red = self
                .class_reduction_pct
                .map(|r| format!("-{:.2}%", r[c]))
                .unwrap_or_default();
            writeln!(f, "{:<6}{:>12}{:>12}", mode.as_str().to_uppercase(), self.kept[c], red)?;
        }
        writeln!(
            f,
            "total {} of {} (-{:.2}%)",
            self.kept_total, self.original_total, self.reduction_pct
        )
    }
}

/// Which representation ablation removes rows from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLevel {
    /// Remove breaths, then recompute windowed features over survivors.
    #[default]
    Recompute,
    /// Compute features on the full set, then remove rows.
    Frozen,
}

/// One point of the missing-data curve. `f1` is `None` when ablation left
/// a class without training breaths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub train_counts: [usize; N_CLASSES],
    pub f1: Option<[f64; N_CLASSES]>,
    pub raw_f1: Option<[f64; N_CLASSES]>,
}

fn ablated_features(
    train: &StatsDataset,
    frozen: &FeatureDataset,
    level: FeatureLevel,
    config: &PipelineConfig,
    ablate: impl Fn(&StatsDataset) -> Result<StatsDataset>,
    ablate_frozen: impl Fn(&FeatureDataset) -> Result<FeatureDataset>,
) -> Result<FeatureDataset> {
    match level {
        FeatureLevel::Recompute => Ok(featurize(&ablate(train)?, &config.features)),
        FeatureLevel::Frozen => ablate_frozen(frozen),
    }
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Ablate → retrain → evaluate on the untouched test set, per fraction.
/// With several seeds each point is the mean over one ablation per seed.
pub fn missing_data_curve(
    train: &StatsDataset,
    test: &StatsDataset,
    fractions: &[f64],
    seeds: &[u64],
    level: FeatureLevel,
    config: &PipelineConfig,
) -> Result<Vec<CurvePoint>> {
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("fractions must be sorted ascending".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one ablation seed is required".into()));
    }
    let test_feats = featurize(test, &config.features);
    let frozen = match level {
        FeatureLevel::Frozen => featurize(train, &config.features),
        FeatureLevel::Recompute => FeatureDataset::default(),
    };
    let jobs: Vec<(f64, u64)> = fractions
        .iter()
        .flat_map(|f| seeds.iter().map(move |s| (*f, *s)))
        .collect();
    let runs = parallel_map(&jobs, |&(fraction, seed)| -> Result<CurvePoint> {
        let abl = RandomAblationConfig {
            fraction_removed: fraction,
            seed,
        };
        let feats = ablated_features(
            train,
            &frozen,
            level,
            config,
            |d| random_ablate(d, &abl),
            |d| random_ablate(d, &abl),
        )?;
        score_point(fraction, &feats, &test_feats, config)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(runs.chunks(seeds.len()).map(mean_point).collect())
}

fn mean_point(runs: &[CurvePoint]) -> CurvePoint {
    let mean = |get: fn(&CurvePoint) -> Option<[f64; N_CLASSES]>| -> Option<[f64; N_CLASSES]> {
        let all: Option<Vec<[f64; N_CLASSES]>> = runs.iter().map(get).collect();
        all.map(|v| std::array::from_fn(|c| v.iter().map(|a| a[c]).sum::<f64>() / v.len() as f64))
    };
    CurvePoint {
        fraction: runs[0].fraction,
        train_counts: runs[0].train_counts,
        f1: mean(|p| p.f1),
        raw_f1: mean(|p| p.raw_f1),
    }
}

fn score_point(x: f64, train: &FeatureDataset, test: &FeatureDataset, config: &PipelineConfig) -> Result<CurvePoint> {
    let train_counts = train.class_counts();
    if train_counts.contains(&0) {
        return Ok(CurvePoint {
            fraction: x,
            train_counts,
            f1: None,
            raw_f1: None,
        });
    }
    let model = train_on_features(train, &config.forest)?;
    let eval = evaluate_model(&model, test, &config.smoothing)?;
    Ok(CurvePoint {
        fraction: x,
        train_counts,
        f1: Some(eval.smoothed.f1s()),
        raw_f1: Some(eval.raw.f1s()),
    })
}

/// `fraction,f1_vc,f1_pc,f1_ps,f1_cpap,f1_pav`; degenerate points have
/// empty F1 fields.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], mut sink: W) -> Result<()> {
    writeln!(sink, "fraction,f1_vc,f1_pc,f1_ps,f1_cpap,f1_pav")?;
    for p in points {
        write!(sink, "{}", p.fraction)?;
        match p.f1 {
            Some(f1) => f1.iter().try_for_each(|v| write!(sink, ",{v:.6}"))?,
            None => write!(sink, ",,,,,")?,
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub train_count: usize,
    pub f1: Option<f64>,
}

/// Vary `m` for one mode with every other mode's breaths left as they are.
pub fn sweep_first_m(
    train: &StatsDataset,
    test: &StatsDataset,
    mode: VentMode,
    m_grid: &[usize],
    rule: FirstMRule,
    config: &PipelineConfig,
) -> Result<Vec<SweepPoint>> {
    let Some(class) = mode.class_index() else {
        return Err(Error::UntrainableLabel(mode.to_string()));
    };
    if m_grid.is_empty() || m_grid.contains(&0) {
        return Err(Error::InvalidConfig("m grid must be nonempty with every m ≥ 1".into()));
    }
    let test_feats = featurize(test, &config.features);
    let points = parallel_map(m_grid, |&m| -> Result<SweepPoint> {
        let feats = featurize(&first_m_ablate(train, mode, m, rule), &config.features);
        let p = score_point(m as f64, &feats, &test_feats, config)?;
        Ok(SweepPoint {
            m,
            train_count: p.train_counts[class],
            f1: p.f1.map(|f| f[class]),
        })
    });
    points.into_iter().collect()
}

/// `m,f1_<mode>`
pub fn write_sweep_csv<W: Write>(mode: VentMode, points: &[SweepPoint], mut sink: W) -> Result<()> {
    writeln!(sink, "m,f1_{mode}")?;
    for p in points {
        match p.f1 {
            Some(v) => writeln!(sink, "{},{v:.6}", p.m)?,
            None => writeln!(sink, "{},", p.m)?,
        }
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FileEntries, Labeled};
    use crate::io::BreathFlags;

    fn ds_from(files: Vec<(&str, Vec<VentMode>)>) -> LabeledDataset<usize> {
        let mut k = 0;
        LabeledDataset::from_files(
            files
                .into_iter()
                .map(|(id, modes)| FileEntries {
                    patient_id: format!("p_{id}"),
                    file_id: id.to_string(),
                    entries: modes
                        .into_iter()
                        .enumerate()
                        .map(|(i, mode)| {
                            k += 1;
                            Labeled {
                                breath_ordinal: i as u64,
                                breath: k,
                                mode,
                                flags: BreathFlags::NONE,
                            }
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn repeat(m: VentMode, n: usize) -> Vec<VentMode> {
        vec![m; n]
    }

    fn balanced() -> LabeledDataset<usize> {
        ds_from(CLASSES.iter().map(|m| (m.as_str(), repeat(*m, 100))).collect())
    }

    #[test]
    fn zero_fraction_is_identity() {
        let ds = balanced();
        let out = random_ablate(&ds, &RandomAblationConfig { fraction_removed: 0.0, seed: 3 }).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn half_of_each_class() {
        let out = random_ablate(&balanced(), &RandomAblationConfig { fraction_removed: 0.5, seed: 3 }).unwrap();
        assert_eq!(out.class_counts(), [50; 5]);
    }

    #[test]
    fn seeds_change_survivors_not_counts() {
        let ds = balanced();
        let a = random_ablate(&ds, &RandomAblationConfig { fraction_removed: 0.9, seed: 1 }).unwrap();
        let b = random_ablate(&ds, &RandomAblationConfig { fraction_removed: 0.9, seed: 2 }).unwrap();
        assert_eq!(a.class_counts(), b.class_counts());
        assert_eq!(a.class_counts(), [10; 5]);
        assert_ne!(a, b);
        let a2 = random_ablate(&ds, &RandomAblationConfig { fraction_removed: 0.9, seed: 1 }).unwrap();
        assert_eq!(a, a2);
        // survivor order preserved
        for f in a.files() {
            assert!(f.entries.windows(2).all(|w| w[0].breath < w[1].breath));
        }
    }

    #[test]
    fn fraction_one_rejected() {
        assert!(random_ablate(&balanced(), &RandomAblationConfig { fraction_removed: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn removal_count_floor() {
        assert_eq!(removal_count(0.29, 100), 29);
        assert_eq!(removal_count(0.5, 7), 3);
        assert_eq!(removal_count(0.99, 100), 99);
    }

    #[test]
    fn first_m_cases() {
        let ds = ds_from(vec![("a", repeat(VentMode::Vc, 300)), ("b", repeat(VentMode::Ps, 1000))]);
        let vc = first_m_ablate(&ds, VentMode::Vc, 450, FirstMRule::Occurrences);
        assert_eq!(vc.class_counts()[0], 300);
        let ps = first_m_ablate(&ds, VentMode::Ps, 120, FirstMRule::Occurrences);
        assert_eq!(ps.class_counts()[2], 120);
        let kept: Vec<u64> = ps.files()[1].entries.iter().map(|e| e.breath_ordinal).collect();
        assert_eq!(kept, (0..120).collect::<Vec<_>>());
    }

    #[test]
    fn first_m_rules_differ_on_revisits() {
        let mut modes = repeat(VentMode::Pc, 5);
        modes.extend(repeat(VentMode::Ps, 3));
        modes.extend(repeat(VentMode::Pc, 5));
        let ds = ds_from(vec![("a", modes)]);
        let occ = first_m_ablate(&ds, VentMode::Pc, 8, FirstMRule::Occurrences);
        assert_eq!(occ.class_counts(), [0, 8, 3, 0, 0]);
        let run = first_m_ablate(&ds, VentMode::Pc, 8, FirstMRule::FirstRun);
        assert_eq!(run.class_counts(), [0, 5, 3, 0, 0]);
        // identical when each file has a single run
        let single = ds_from(vec![("a", repeat(VentMode::Pc, 20))]);
        assert_eq!(
            first_m_ablate(&single, VentMode::Pc, 8, FirstMRule::Occurrences),
            first_m_ablate(&single, VentMode::Pc, 8, FirstMRule::FirstRun)
        );
    }

    #[test]
    fn first_m_idempotent() {
        let mut modes = repeat(VentMode::Cpap, 40);
        modes.extend(repeat(VentMode::Pav, 10));
        modes.extend(repeat(VentMode::Cpap, 40));
        let ds = ds_from(vec![("a", modes.clone()), ("b", modes)]);
        for rule in [FirstMRule::Occurrences, FirstMRule::FirstRun] {
            let once = first_m_ablate(&ds, VentMode::Cpap, 50, rule);
            assert_eq!(first_m_ablate(&once, VentMode::Cpap, 50, rule), once);
        }
    }

    #[test]
    fn reported_reduction_arithmetic() {
        let r = ReductionReport::from_totals([6079, 2154, 27892, 3040, 1120], 140_928);
        assert_eq!(r.kept_total, 40_285);
        assert!((r.reduction_pct - 71.41).abs() < 0.01);
    }

    #[test]
    fn curve_csv_format() {
        let pts = vec![
            CurvePoint {
                fraction: 0.5,
                train_counts: [1; 5],
                f1: Some([1.0, 0.5, 0.25, 0.0, 1.0]),
                raw_f1: None,
            },
            CurvePoint {
                fraction: 0.99,
                train_counts: [0; 5],
                f1: None,
                raw_f1: None,
            },
        ];
        let mut out = Vec::new();
        write_curve_csv(&pts, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "fraction,f1_vc,f1_pc,f1_ps,f1_cpap,f1_pav\n0.5,1.000000,0.500000,0.250000,0.000000,1.000000\n0.99,,,,,\n"
        );
        let mut out = Vec::new();
        write_sweep_csv(VentMode::Ps, &[SweepPoint { m: 120, train_count: 3, f1: Some(0.9) }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "m,f1_ps\n120,0.900000\n");
    }
}
