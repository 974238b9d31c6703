use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use ventmode::ablation::{
    first_m_ablate_all, missing_data_curve, sweep_first_m, write_curve_csv, write_sweep_csv, FirstMConfig,
    ReductionReport,
};
use ventmode::dataset::DatasetSummary;
use ventmode::eval::{evaluate_stats, kfold_cv, ConfusionMatrix, CvOutcome, MetricsReport};
use ventmode::features::{breath_stats, window_features, write_feature_dump, FeatureDumpRow};
use ventmode::forest::{deserialize_model, serialize_model};
use ventmode::io::{write_annotations, write_predictions, write_waveform_file, BreathAnnotation, PredictionRow};
use ventmode::pipeline::{featurize, predict_file, train_on_features, StatsDataset};
use ventmode::synth::{cohort_plan, generate_patient, CohortConfig};
use ventmode::{Breath, Error, FeatureConfig, PipelineConfig, RandomForestModel, SamplingSpec, VentMode, CLASSES};

use crate::args::*;
use crate::data::{load_split, load_stats, load_with, read_waveform, waveform_paths};
use crate::error::{CliError, CliResult};
use crate::manifest::{create, unix_now, write_json, write_sidecar, RunManifest};

pub struct Run {
    pub manifest: RunManifest,
    pub started: f64,
}

impl Run {
    pub fn new(command: &Command, argv: Vec<String>) -> CliResult<Self> {
        let config = serde_json::to_value(command)?;
        // the enum is externally tagged; keep only the flags
        let config = match config {
            serde_json::Value::Object(mut m) if m.len() == 1 => m.remove(command.name()).unwrap_or_default(),
            other => other,
        };
        Ok(Self { manifest: RunManifest::new(command.name(), argv, config), started: unix_now() })
    }
}

pub fn dispatch(command: &Command, run: &mut Run) -> CliResult<()> {
    match command {
        Command::Train(a) => train(a, run),
        Command::Predict(a) => predict(a, run),
        Command::Evaluate(a) => evaluate(a, run),
        Command::Cv(a) => cv(a, run),
        Command::AblateRandom(a) => ablate_random(a, run),
        Command::AblateFirstM(a) => ablate_first_m(a, run),
        Command::SweepFirstM(a) => sweep(a, run),
        Command::Synth(a) => synth(a, run),
        Command::Summarize(a) => summarize(a, run),
    }
}

fn pipeline(forest: &ForestArgs, smooth: Option<&SmoothArgs>) -> CliResult<PipelineConfig> {
    let config = PipelineConfig {
        features: FeatureConfig::default(),
        forest: forest.config(),
        smoothing: smooth.map(SmoothArgs::config).unwrap_or_default(),
    };
    config.validate()?;
    Ok(config)
}

fn load_model(path: &Path) -> CliResult<RandomForestModel> {
    let file = File::open(path).map_err(|e| CliError::model(format!("{}: {e}", path.display())))?;
    deserialize_model(BufReader::new(file)).map_err(|e| CliError::model(format!("{}: {e}", path.display())))
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> ventmode::Result<()>,
{
    let mut w = BufWriter::new(create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn train(a: &TrainArgs, run: &mut Run) -> CliResult<()> {
    let config = pipeline(&a.forest, None)?;
    let (ds, inputs) = load_stats(&a.data, &config.features)?;
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;
    let feats = featurize(&ds, &config.features);
    let model = train_on_features(&feats, &config.forest)?;
    write_with(&a.model, |w| serialize_model(&model, w))?;
    write_sidecar(&run.manifest, &a.model, run.started)?;
    if let Some(path) = &a.feature_dump {
        let rows = feats.entries().map(|(f, e)| FeatureDumpRow {
            file_id: &f.file_id,
            breath_ordinal: e.breath_ordinal,
            features: &e.breath,
            label: e.mode,
        });
        write_with(path, |w| write_feature_dump(rows, w))?;
    }
    eprintln!("trained {} trees on {} breaths", model.trees.len(), feats.len());
    Ok(())
}

struct FilePredictions {
    rows: Vec<PredictionRow>,
    degenerate: usize,
    truncated: usize,
}

fn predict(a: &PredictArgs, run: &mut Run) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let spec = SamplingSpec::new(a.rate)?;
    let features = FeatureConfig::default();
    features.validate(spec)?;
    let smoothing = a.smooth.config();
    smoothing.validate()?;
    let paths = waveform_paths(&a.data)?;
    run.manifest.pipeline = Some(PipelineConfig { features, forest: model.config, smoothing });
    run.manifest.inputs = paths.iter().map(|p| p.path.display().to_string()).collect();
    run.manifest.inputs.push(a.model.display().to_string());

    let per_file: Vec<CliResult<FilePredictions>> = paths
        .par_iter()
        .map(|p| {
            let file = read_waveform(p, spec)?;
            let mut ordinals = Vec::with_capacity(file.breaths.len());
            let mut stats = Vec::with_capacity(file.breaths.len());
            let mut degenerate = 0;
            for rec in file.breaths {
                match Breath::new(rec.flow, rec.pressure, file.spec) {
                    Ok(b) => {
                        ordinals.push(rec.breath_ordinal);
                        stats.push(breath_stats(&b, &features));
                    }
                    Err(Error::DegenerateBreath { .. }) => degenerate += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            let feats = window_features(&stats, &features);
            let rows = predict_file(&model, &file.file_id, &ordinals, &feats, &smoothing)
                .map_err(|e| CliError::from(e).context(p.path.display()))?;
            Ok(FilePredictions { rows, degenerate, truncated: file.truncated })
        })
        .collect();

    let mut rows = Vec::new();
    let (mut degenerate, mut truncated) = (0, 0);
    for r in per_file {
        let r = r?;
        rows.extend(r.rows);
        degenerate += r.degenerate;
        truncated += r.truncated;
    }
    if degenerate > 0 {
        eprintln!("warning: {degenerate} degenerate breaths skipped");
    }
    if truncated > 0 {
        eprintln!("warning: {truncated} unterminated breath blocks dropped");
    }
    write_with(&a.out, |w| write_predictions(&rows, w))?;
    write_sidecar(&run.manifest, &a.out, run.started)?;
    eprintln!("classified {} breaths in {} files", rows.len(), paths.len());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    manifest: &'a RunManifest,
    seed: u64,
    /// Macro-F1 after smoothing (equal to the raw value with `--smooth none`).
    macro_f1: f64,
    raw: &'a MetricsReport,
    smoothed: &'a MetricsReport,
    raw_confusion: &'a ConfusionMatrix,
    smoothed_confusion: &'a ConfusionMatrix,
    classes: [VentMode; 5],
}

fn evaluate(a: &EvaluateArgs, run: &mut Run) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let config = PipelineConfig { features: FeatureConfig::default(), forest: model.config, smoothing: a.smooth.config() };
    config.validate()?;
    let (ds, mut inputs) = load_stats(&a.data, &config.features)?;
    inputs.push(a.model.display().to_string());
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;

    let ev = evaluate_stats(&model, &ds, &config)?;
    let report = EvaluateReport {
        manifest: &run.manifest,
        seed: model.config.seed,
        macro_f1: ev.smoothed.macro_f1,
        raw: &ev.raw,
        smoothed: &ev.smoothed,
        raw_confusion: &ev.raw_confusion,
        smoothed_confusion: &ev.smoothed_confusion,
        classes: CLASSES,
    };
    write_json(&a.out, &report)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, ev.smoothed.to_csv())?;
    }
    if let Some(path) = &a.predictions {
        write_with(path, |w| write_predictions(&ev.predictions, w))?;
    }
    println!("raw\n{}", ev.raw.to_table());
    println!("smoothed\n{}", ev.smoothed.to_table());
    Ok(())
}

#[derive(Serialize)]
struct CvReport<'a> {
    manifest: &'a RunManifest,
    seed: u64,
    macro_f1: f64,
    #[serde(flatten)]
    outcome: &'a CvOutcome,
}

fn cv(a: &CvArgs, run: &mut Run) -> CliResult<()> {
    let config = pipeline(&a.forest, Some(&a.smooth))?;
    let (ds, inputs) = load_stats(&a.data, &config.features)?;
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;
    let outcome = kfold_cv(&ds, a.k, a.grouping.into(), a.forest.seed, &config)?;
    let report = CvReport {
        manifest: &run.manifest,
        seed: a.forest.seed,
        macro_f1: outcome.mean_smoothed.macro_f1,
        outcome: &outcome,
    };
    write_json(&a.out, &report)?;
    for f in &outcome.folds {
        println!(
            "fold {:>2}  train {:>7}  test {:>7}  raw macro F1 {:.4}  smoothed {:.4}",
            f.fold, f.n_train, f.n_test, f.raw.macro_f1, f.smoothed.macro_f1
        );
    }
    println!("mean smoothed\n{}", outcome.mean_smoothed.to_table());
    Ok(())
}

fn ablate_random(a: &AblateRandomArgs, run: &mut Run) -> CliResult<()> {
    if a.repeats == 0 {
        return Err(CliError::usage("--repeats must be at least 1"));
    }
    let config = pipeline(&a.forest, Some(&a.smooth))?;
    let (train, test, inputs) = load_split(&a.data, &a.test, &config.features)?;
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;
    let seeds: Vec<u64> = (0..a.repeats).map(|r| a.forest.seed.wrapping_add(r)).collect();
    let points = missing_data_curve(&train, &test, &a.fractions, &seeds, a.level.into(), &config)?;
    write_with(&a.out, |w| write_curve_csv(&points, w))?;
    write_sidecar(&run.manifest, &a.out, run.started)?;
    for p in &points {
        match p.f1 {
            Some(f) => println!("{:>6.3}  {}", p.fraction, fmt_f1(&f)),
            None => println!("{:>6.3}  (a class has no training breaths)", p.fraction),
        }
    }
    Ok(())
}

fn fmt_f1(f: &[f64]) -> String {
    f.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn parse_m_pairs(pairs: &[String]) -> CliResult<BTreeMap<VentMode, usize>> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let (mode, m) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--m expects mode=count pairs, got {pair:?}")))?;
        let mode: VentMode = mode.trim().parse().map_err(CliError::usage)?;
        let m: usize = m
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--m: {m:?} is not a count")))?;
        if out.insert(mode, m).is_some() {
            return Err(CliError::usage(format!("--m lists {mode} twice")));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct FirstMReport<'a> {
    manifest: &'a RunManifest,
    seed: u64,
    reduction: &'a ReductionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<&'a MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothed: Option<&'a MetricsReport>,
}

fn ablate_first_m(a: &AblateFirstMArgs, run: &mut Run) -> CliResult<()> {
    let config = pipeline(&a.forest, Some(&a.smooth))?;
    let first_m = FirstMConfig { m_per_mode: parse_m_pairs(&a.m)?, rule: a.rule.into() };
    first_m.validate()?;
    let has_test = a.test.test_data.is_some() || !a.test.test_patients.is_empty();
    let (train, test, inputs) = if has_test {
        let (tr, te, inputs) = load_split(&a.data, &a.test, &config.features)?;
        (tr, Some(te), inputs)
    } else {
        let (tr, inputs) = load_stats(&a.data, &config.features)?;
        (tr, None, inputs)
    };
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;

    let reduced = first_m_ablate_all(&train, &first_m)?;
    let reduction = ReductionReport::between(&train, &reduced);
    let ev = match &test {
        Some(test) => {
            let model = train_on_features(&featurize(&reduced, &config.features), &config.forest)?;
            Some(evaluate_stats(&model, test, &config)?)
        }
        None => None,
    };
    let report = FirstMReport {
        manifest: &run.manifest,
        seed: a.forest.seed,
        reduction: &reduction,
        macro_f1: ev.as_ref().map(|e| e.smoothed.macro_f1),
        raw: ev.as_ref().map(|e| &e.raw),
        smoothed: ev.as_ref().map(|e| &e.smoothed),
    };
    write_json(&a.out, &report)?;
    if let Some(path) = &a.reduced_annotations {
        write_with(path, |w| write_annotations(&survivor_annotations(&reduced), w))?;
    }
    print!("{reduction}");
    if let Some(ev) = &ev {
        println!("smoothed\n{}", ev.smoothed.to_table());
    }
    Ok(())
}

fn survivor_annotations(ds: &StatsDataset) -> Vec<BreathAnnotation> {
    ds.entries()
        .map(|(f, e)| BreathAnnotation {
            file_id: f.file_id.clone(),
            breath_ordinal: e.breath_ordinal,
            mode: e.mode,
            flags: e.flags,
        })
        .collect()
}

fn sweep(a: &SweepFirstMArgs, run: &mut Run) -> CliResult<()> {
    let config = pipeline(&a.forest, Some(&a.smooth))?;
    let (train, test, inputs) = load_split(&a.data, &a.test, &config.features)?;
    run.manifest.pipeline = Some(config);
    run.manifest.inputs = inputs;
    let points = sweep_first_m(&train, &test, a.mode, &a.grid, a.rule.into(), &config)?;
    write_with(&a.out, |w| write_sweep_csv(a.mode, &points, w))?;
    write_sidecar(&run.manifest, &a.out, run.started)?;
    for p in &points {
        match p.f1 {
            Some(f) => println!("m {:>6}  kept {:>7}  F1 {f:.4}", p.m, p.train_count),
            None => println!("m {:>6}  kept {:>7}  (a class has no training breaths)", p.m, p.train_count),
        }
    }
    Ok(())
}

fn synth(a: &SynthArgs, run: &mut Run) -> CliResult<()> {
    let spec = SamplingSpec::new(a.rate)?;
    let cohort = CohortConfig {
        patients_per_mode: a.patients_per_mode,
        breaths_per_patient: a.breaths,
        timing_jitter: a.jitter,
        amplitude_noise: a.noise,
        artifact_rate: a.artifacts,
        seed: a.seed,
        id_offset: a.id_offset,
    };
    let plan: Vec<_> = cohort_plan(&cohort)
        .into_iter()
        .filter(|(_, _, c)| a.modes.contains(&c.mode))
        .map(|(p, f, c)| (p, f, ventmode::synth::SynthConfig { spec, ..c }))
        .collect();
    let annotations_path = a.annotations.clone().unwrap_or_else(|| a.out.join("annotations.csv"));

    let written: Vec<CliResult<Vec<BreathAnnotation>>> = plan
        .par_iter()
        .map(|(patient, file_id, config)| {
            let (file, ann) = generate_patient(config, patient, file_id)?;
            let path = a.out.join(patient).join(format!("{file_id}.txt"));
            write_with(&path, |w| write_waveform_file(&file, w))?;
            Ok(ann)
        })
        .collect();
    let mut annotations = Vec::new();
    for w in written {
        annotations.extend(w?);
    }
    write_with(&annotations_path, |w| write_annotations(&annotations, w))?;
    write_sidecar(&run.manifest, &annotations_path, run.started)?;
    eprintln!(
        "wrote {} files, {} breaths, annotations at {}",
        plan.len(),
        annotations.len(),
        annotations_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Summary<'a> {
    Dataset(&'a DatasetSummary),
    Reduction(&'a ReductionReport),
}

#[derive(Serialize)]
struct SummaryReport<'a> {
    manifest: &'a RunManifest,
    summary: Summary<'a>,
}

fn summarize(a: &SummarizeArgs, run: &mut Run) -> CliResult<()> {
    if !a.kept.is_empty() {
        let kept: [usize; 5] = a
            .kept
            .as_slice()
            .try_into()
            .map_err(|_| CliError::usage(format!("--kept takes 5 counts (VC,PC,PS,CPAP,PAV), got {}", a.kept.len())))?;
        let original = a.original_total.ok_or_else(|| CliError::usage("--kept requires --original-total"))?;
        let report = ReductionReport::from_totals(kept, original);
        print!("{report}");
        if let Some(out) = &a.out {
            write_json(out, &SummaryReport { manifest: &run.manifest, summary: Summary::Reduction(&report) })?;
        }
        return Ok(());
    }
    let (Some(data), Some(annotations)) = (&a.data, &a.annotations) else {
        return Err(CliError::usage("summarize needs --data and --annotations, or --kept and --original-total"));
    };
    let (ds, inputs) = load_with(data, annotations, a.rate, false, |_| ())?;
    run.manifest.inputs = inputs;
    let summary = ds.summary();
    print!("{summary}");
    if let Some(out) = &a.out {
        write_json(out, &SummaryReport { manifest: &run.manifest, summary: Summary::Dataset(&summary) })?;
    }
    Ok(())
}
