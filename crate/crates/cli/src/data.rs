use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ventmode::dataset::{join_dataset_with, AnnotationIndex, JoinOutcome};
use ventmode::eval::split_by_patient;
use ventmode::features::breath_stats;
use ventmode::io::{parse_annotations, parse_waveform_file, BreathAnnotation, WaveformFile};
use ventmode::pipeline::StatsDataset;
use ventmode::{Breath, FeatureConfig, SamplingSpec};

use crate::args::{DataArgs, TestDataArgs};
use crate::error::{CliError, CliResult};

/// One waveform file found under a data directory.
#[derive(Debug, Clone)]
pub struct WaveformPath {
    pub patient_id: String,
    pub file_id: String,
    pub path: PathBuf,
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::from(e).context(dir.display()))? {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `DIR/<patient_id>/<file_id>.txt`, sorted by patient then file.
pub fn waveform_paths(dir: &Path) -> CliResult<Vec<WaveformPath>> {
    let mut out = Vec::new();
    for patient_dir in sorted_entries(dir)? {
        if !patient_dir.is_dir() {
            continue;
        }
        let patient_id = patient_dir.file_name().unwrap().to_string_lossy().into_owned();
        for path in sorted_entries(&patient_dir)? {
            if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
                out.push(WaveformPath { patient_id: patient_id.clone(), file_id: stem(&path), path });
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::from(ventmode::Error::Structural(format!(
            "no waveform files under {}",
            dir.display()
        ))));
    }
    Ok(out)
}

pub fn read_waveform(p: &WaveformPath, spec: SamplingSpec) -> CliResult<WaveformFile> {
    let file = File::open(&p.path).map_err(|e| CliError::from(e).context(p.path.display()))?;
    parse_waveform_file(BufReader::new(file), &p.patient_id, &p.file_id, spec)
        .map_err(|e| CliError::from(e).context(p.path.display()))
}

/// Annotation files: the path itself, or every `*.csv` inside it.
pub fn annotation_paths(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_dir() {
        Ok(sorted_entries(path)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
            .collect())
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub fn load_annotations(path: &Path) -> CliResult<Vec<BreathAnnotation>> {
    let mut out = Vec::new();
    for p in annotation_paths(path)? {
        let file = File::open(&p).map_err(|e| CliError::from(e).context(p.display()))?;
        out.extend(parse_annotations(file).map_err(|e| CliError::from(e).context(p.display()))?);
    }
    Ok(out)
}

fn warn_join<B>(outcome: &JoinOutcome<B>) {
    let notes = [
        (outcome.unannotated, "breaths without annotations skipped"),
        (outcome.filtered_other, "breaths labelled other skipped"),
        (outcome.degenerate, "degenerate breaths skipped"),
        (outcome.truncated, "unterminated breath blocks dropped"),
    ];
    for (n, what) in notes {
        if n > 0 {
            eprintln!("warning: {n} {what}");
        }
    }
}

/// Parse and join a data directory, converting each breath as it is read.
pub fn load_with<B>(
    data: &Path,
    annotations: &Path,
    rate: f64,
    filter_other: bool,
    convert: impl FnMut(Breath) -> B,
) -> CliResult<(ventmode::LabeledDataset<B>, Vec<String>)> {
    let spec = SamplingSpec::new(rate)?;
    let paths = waveform_paths(data)?;
    let index = AnnotationIndex::new(load_annotations(annotations)?)?;
    let mut failure = None;
    let files = paths.iter().map_while(|p| match read_waveform(p, spec) {
        Ok(f) => Some(f),
        Err(e) => {
            failure = Some(e);
            None
        }
    });
    let outcome = join_dataset_with(files, &index, filter_other, convert);
    if let Some(e) = failure {
        return Err(e);
    }
    let outcome = outcome?;
    warn_join(&outcome);
    let mut inputs: Vec<String> = paths.iter().map(|p| p.path.display().to_string()).collect();
    inputs.extend(annotation_paths(annotations)?.iter().map(|p| p.display().to_string()));
    Ok((outcome.dataset, inputs))
}

/// Per-breath statistics for every annotated, trainable breath.
pub fn load_stats(args: &DataArgs, features: &FeatureConfig) -> CliResult<(StatsDataset, Vec<String>)> {
    load_with(&args.data, &args.annotations, args.rate, true, |b| breath_stats(&b, features))
}

/// Training and held-out sets, from a second directory or by patient id.
pub fn load_split(
    args: &DataArgs,
    test: &TestDataArgs,
    features: &FeatureConfig,
) -> CliResult<(StatsDataset, StatsDataset, Vec<String>)> {
    let (ds, mut inputs) = load_stats(args, features)?;
    if let (Some(data), Some(ann)) = (&test.test_data, &test.test_annotations) {
        let (held_out, more) = load_with(data, ann, args.rate, true, |b| breath_stats(&b, features))?;
        inputs.extend(more);
        return Ok((ds, held_out, inputs));
    }
    if test.test_patients.is_empty() {
        return Err(CliError::usage("a held-out set is required: pass --test-data/--test-annotations or --test-patients"));
    }
    let ids: BTreeSet<&str> = test.test_patients.iter().map(String::as_str).collect();
    let ids: Vec<&str> = ids.into_iter().collect();
    let (train, held_out) = split_by_patient(&ds, &ids)?;
    Ok((train, held_out, inputs))
}
