//! Labelled breath datasets: joining waveform files with annotations,
//! patient/file indexing and per-mode count summaries.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::Serialize;

use crate::breath::Breath;
use crate::error::{Error, Result};
use crate::io::{BreathAnnotation, BreathFlags, WaveformFile};
use crate::mode::{VentMode, CLASSES, N_CLASSES};

/// One labelled breath. `B` is the per-breath payload: a full [`Breath`]
/// straight out of the join, or a reduced representation such as
/// [`crate::features::BreathStats`] once samples are no longer needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<B> {
    pub breath_ordinal: u64,
    pub breath: B,
    pub mode: VentMode,
    pub flags: BreathFlags,
}

/// All labelled breaths of one waveform file, in breath order.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEntries<B> {
    pub patient_id: String,
    pub file_id: String,
    pub entries: Vec<Labeled<B>>,
}

/// Breaths grouped by file, files grouped by patient.
///
/// Immutable once built; every transformation returns a new dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<B> {
    files: Vec<FileEntries<B>>,
    patients: Vec<(String, Range<usize>)>,
}

impl<B> Default for LabeledDataset<B> {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            patients: Vec::new(),
        }
    }
}

impl<B> LabeledDataset<B> {
    /// Build from per-file entry lists. Files of the same patient are
    /// grouped together (stable with respect to first appearance); empty
    /// files are discarded.
    pub fn from_files(files: Vec<FileEntries<B>>) -> Result<Self> {
        let mut seen_files = HashSet::new();
        let mut order: Vec<String> = Vec::new();
        let mut by_patient: HashMap<String, Vec<FileEntries<B>>> = HashMap::new();
        for f in files {
            if !seen_files.insert(f.file_id.clone()) {
                return Err(Error::Structural(format!("file id {:?} appears twice", f.file_id)));
            }
            if let Some(w) = f.entries.windows(2).find(|w| w[0].breath_ordinal >= w[1].breath_ordinal) {
                return Err(Error::Structural(format!(
                    "file {:?}: breath ordinals out of order ({} then {})",
                    f.file_id, w[0].breath_ordinal, w[1].breath_ordinal
                )));
            }
            if f.entries.is_empty() {
                continue;
            }
            if !by_patient.contains_key(&f.patient_id) {
                order.push(f.patient_id.clone());
            }
            by_patient.entry(f.patient_id.clone()).or_default().push(f);
        }

        let mut out = Vec::new();
        let mut patients = Vec::new();
        for p in order {
            let start = out.len();
            out.extend(by_patient.remove(&p).unwrap_or_default());
            patients.push((p, start..out.len()));
        }
        Ok(Self {
            files: out,
            patients,
        })
    }

    pub fn files(&self) -> &[FileEntries<B>] {
        &self.files
    }

    pub fn into_files(self) -> Vec<FileEntries<B>> {
        self.files
    }

    /// Total number of labelled breaths.
    pub fn len(&self) -> usize {
        self.files.iter().map(|f| f.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.iter().map(|(p, _)| p.as_str())
    }

    /// Files belonging to `patient_id`.
    pub fn patient_files(&self, patient_id: &str) -> Option<&[FileEntries<B>]> {
        self.patients
            .iter()
            .find(|(p, _)| p == patient_id)
            .map(|(_, r)| &self.files[r.clone()])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&FileEntries<B>, &Labeled<B>)> {
        self.files.iter().flat_map(|f| f.entries.iter().map(move |e| (f, e)))
    }

    pub fn labels(&self) -> Vec<VentMode> {
        self.entries().map(|(_, e)| e.mode).collect()
    }

    /// Breath counts per trainable class.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for (_, e) in self.entries() {
            if let Some(c) = e.mode.class_index() {
                counts[c] += 1;
            }
        }
        counts
    }

    pub fn map<C>(&self, mut f: impl FnMut(&B) -> C) -> LabeledDataset<C> {
        LabeledDataset {
            files: self
                .files
                .iter()
                .map(|file| FileEntries {
                    patient_id: file.patient_id.clone(),
                    file_id: file.file_id.clone(),
                    entries: file
                        .entries
                        .iter()
                        .map(|e| Labeled {
                            breath_ordinal: e.breath_ordinal,
                            breath: f(&e.breath),
                            mode: e.mode,
                            flags: e.flags,
                        })
                        .collect(),
                })
                .collect(),
            patients: self.patients.clone(),
        }
    }

    /// Map whole files at once; `f` receives each file's entries in order
    /// and must return one payload per entry.
    pub fn map_files<C>(&self, mut f: impl FnMut(&FileEntries<B>) -> Vec<C>) -> LabeledDataset<C> {
        LabeledDataset {
            files: self
                .files
                .iter()
                .map(|file| {
                    let payloads = f(file);
                    assert_eq!(payloads.len(), file.entries.len(), "map_files must preserve length");
                    FileEntries {
                        patient_id: file.patient_id.clone(),
                        file_id: file.file_id.clone(),
                        entries: file
                            .entries
                            .iter()
                            .zip(payloads)
                            .map(|(e, breath)| Labeled {
                                breath_ordinal: e.breath_ordinal,
                                breath,
                                mode: e.mode,
                                flags: e.flags,
                            })
                            .collect(),
                    }
                })
                .collect(),
            patients: self.patients.clone(),
        }
    }
}

impl<B: Clone> LabeledDataset<B> {
    /// Keep entries for which `keep(file_index, entry_index, entry)` holds,
    /// preserving order. Files left empty are dropped.
    pub fn retain(&self, mut keep: impl FnMut(usize, usize, &Labeled<B>) -> bool) -> Self {
        let files = self
            .files
            .iter()
            .enumerate()
            .map(|(fi, f)| FileEntries {
                patient_id: f.patient_id.clone(),
                file_id: f.file_id.clone(),
                entries: f
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(ei, e)| keep(fi, *ei, e))
                    .map(|(_, e)| e.clone())
                    .collect(),
            })
            .collect();
        Self::from_files(files).expect("subset of a valid dataset is valid")
    }

    pub fn select_patients(&self, ids: &BTreeSet<&str>) -> Self {
        let files = self
            .files
            .iter()
            .filter(|f| ids.contains(f.patient_id.as_str()))
            .cloned()
            .collect();
        Self::from_files(files).expect("subset of a valid dataset is valid")
    }

    /// Concatenate datasets with disjoint file ids.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        Self::from_files(parts.iter().flat_map(|d| d.files.iter().cloned()).collect())
    }
}

impl<B> LabeledDataset<B> {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary::from_dataset(self)
    }
}

/// Per-(file, breath) lookup of annotations.
#[derive(Debug, Default)]
pub struct AnnotationIndex {
    by_key: HashMap<(String, u64), (VentMode, BreathFlags)>,
}

impl AnnotationIndex {
    pub fn new(annotations: impl IntoIterator<Item = BreathAnnotation>) -> Result<Self> {
        let mut by_key = HashMap::new();
        for a in annotations {
            let key = (a.file_id, a.breath_ordinal);
            if by_key.contains_key(&key) {
                return Err(Error::DuplicateAnnotation {
                    file_id: key.0,
                    breath_ordinal: key.1,
                });
            }
            by_key.insert(key, (a.mode, a.flags));
        }
        Ok(Self { by_key })
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    pub fn get(&self, file_id: &str, ordinal: u64) -> Option<(VentMode, BreathFlags)> {
        // allocation-free lookup would need a borrowed key type; fine at this scale
        self.by_key.get(&(file_id.to_string(), ordinal)).copied()
    }
}

/// Result of joining waveforms with annotations.
#[derive(Debug)]
pub struct JoinOutcome<B> {
    pub dataset: LabeledDataset<B>,
    /// Breaths present in a waveform file with no matching annotation.
    pub unannotated: usize,
    /// Annotated breaths dropped because their label was `Other`.
    pub filtered_other: usize,
    /// Annotated breaths with fewer than two samples.
    pub degenerate: usize,
    /// Unterminated breath blocks reported by the parser.
    pub truncated: usize,
}

/// Match breaths to annotations by `(file_id, breath_ordinal)`.
pub fn join_dataset(
    files: Vec<WaveformFile>,
    annotations: &[BreathAnnotation],
    filter_other: bool,
) -> Result<JoinOutcome<Breath>> {
    let index = AnnotationIndex::new(annotations.iter().cloned())?;
    join_dataset_with(files, &index, filter_other, |b| b)
}

/// Streaming form of [`join_dataset`]: files are consumed one at a time and
/// each breath is converted with `convert` straight away, so raw samples
/// need not be held for the whole dataset.
pub fn join_dataset_with<B, I, F>(
    files: I,
    index: &AnnotationIndex,
    filter_other: bool,
    mut convert: F,
) -> Result<JoinOutcome<B>>
where
    I: IntoIterator<Item = WaveformFile>,
    F: FnMut(Breath) -> B,
{
    let mut matched: HashSet<(String, u64)> = HashSet::new();
    let mut out_files = Vec::new();
    let (mut unannotated, mut filtered_other, mut degenerate, mut truncated) = (0, 0, 0, 0);

    for file in files {
        truncated += file.truncated;
        let mut entries = Vec::with_capacity(file.breaths.len());
        for rec in file.breaths {
            let Some((mode, flags)) = index.get(&file.file_id, rec.breath_ordinal) else {
                unannotated += 1;
                continue;
            };
            matched.insert((file.file_id.clone(), rec.breath_ordinal));
            if filter_other && mode == VentMode::Other {
                filtered_other += 1;
                continue;
            }
            match Breath::new(rec.flow, rec.pressure, file.spec) {
                Ok(b) => entries.push(Labeled {
                    breath_ordinal: rec.breath_ordinal,
                    breath: convert(b),
                    mode,
                    flags,
                }),
                Err(Error::DegenerateBreath { .. }) => degenerate += 1,
                Err(e) => return Err(e),
            }
        }
        out_files.push(FileEntries {
            patient_id: file.patient_id,
            file_id: file.file_id,
            entries,
        });
    }

    if matched.len() != index.len() {
        let mut missing: Vec<(String, u64)> = index
            .by_key
            .keys()
            .filter(|k| !matched.contains(*k))
            .cloned()
            .collect();
        missing.sort();
        return Err(Error::Join { missing });
    }

    Ok(JoinOutcome {
        dataset: LabeledDataset::from_files(out_files)?,
        unannotated,
        filtered_other,
        degenerate,
        truncated,
    })
}

/// Counts for one label: patients contributing breaths, breaths and flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ModeCounts {
    pub patients: usize,
    pub breaths: usize,
    pub pva: usize,
    pub suction: usize,
    pub cough: usize,
}

/// Per-mode descriptive statistics: patients, breaths and flag counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    /// Keyed by mode name, in class order followed by `other`.
    pub modes: BTreeMap<VentMode, ModeCounts>,
    /// Per-file breath counts by label.
    pub per_file: Vec<(String, BTreeMap<VentMode, usize>)>,
}

impl DatasetSummary {
    pub fn from_dataset<B>(ds: &LabeledDataset<B>) -> Self {
        let mut modes: BTreeMap<VentMode, ModeCounts> = BTreeMap::new();
        let mut patients: BTreeMap<VentMode, BTreeSet<&str>> = BTreeMap::new();
        let mut per_file = Vec::new();
        for f in ds.files() {
            let mut counts: BTreeMap<VentMode, usize> = BTreeMap::new();
            for e in &f.entries {
                *counts.entry(e.mode).or_default() += 1;
                let c = modes.entry(e.mode).or_default();
                c.breaths += 1;
                c.pva += usize::from(e.flags.pva);
                c.suction += usize::from(e.flags.suction);
                c.cough += usize::from(e.flags.cough);
                patients.entry(e.mode).or_default().insert(&f.patient_id);
            }
            per_file.push((f.file_id.clone(), counts));
        }
        for (mode, set) in patients {
            modes.entry(mode).or_default().patients = set.len();
        }
        Self { modes, per_file }
    }

    pub fn counts(&self, mode: VentMode) -> ModeCounts {
        self.modes.get(&mode).copied().unwrap_or_default()
    }

    pub fn total_breaths(&self) -> usize {
        self.modes.values().map(|c| c.breaths).sum()
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut cols: Vec<VentMode> = CLASSES.to_vec();
        if self.modes.contains_key(&VentMode::Other) {
            cols.push(VentMode::Other);
        }
        write!(f, "{:<16}", "")?;
        for m in &cols {
            write!(f, "{:>10}", m.as_str().to_uppercase())?;
        }
        writeln!(f)?;
        type Row = (&'static str, fn(&ModeCounts) -> usize);
        let rows: [Row; 5] = [
            ("Patients", |c| c.patients),
            ("Total Breaths", |c| c.breaths),
            ("PVA Breaths", |c| c.pva),
            ("Suction Breaths", |c| c.suction),
            ("Cough Breaths", |c| c.cough),
        ];
        for (name, get) in rows {
            write!(f, "{name:<16}")?;
            for m in &cols {
                write!(f, "{:>10}", get(&self.counts(*m)))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
