use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ventmode::ablation::{FeatureLevel, FirstMRule};
use ventmode::eval::Grouping;
use ventmode::{ForestConfig, SmoothingConfig, SmoothingVariant, VentMode};

#[derive(Debug, Parser)]
#[command(name = "ventmode", version, about = "Breath-by-breath ventilator mode classification")]
pub struct Cli {
    /// Worker threads (default: all available cores). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a random forest on annotated waveforms.
    Train(TrainArgs),
    /// Classify every breath of a set of waveform files.
    Predict(PredictArgs),
    /// Score a trained model against annotated waveforms.
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation on annotated waveforms.
    Cv(CvArgs),
    /// Random training-set ablation curve (per-class F1 vs fraction removed).
    AblateRandom(AblateRandomArgs),
    /// Keep only the first m breaths of each mode per file.
    AblateFirstM(AblateFirstMArgs),
    /// F1 of one mode as its first-m cutoff varies.
    SweepFirstM(SweepFirstMArgs),
    /// Generate a synthetic cohort of waveform and annotation files.
    Synth(SynthArgs),
    /// Dataset summary table, or reduction arithmetic from kept counts.
    Summarize(SummarizeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Cv(_) => "cv",
            Command::AblateRandom(_) => "ablate-random",
            Command::AblateFirstM(_) => "ablate-first-m",
            Command::SweepFirstM(_) => "sweep-first-m",
            Command::Synth(_) => "synth",
            Command::Summarize(_) => "summarize",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Waveform directory laid out as DIR/<patient_id>/<file_id>.txt
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Annotation CSV, or a directory of them
    #[arg(long, value_name = "DIR")]
    pub annotations: PathBuf,
    /// Sampling rate of the waveform files in Hz
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestDataArgs {
    /// Held-out waveform directory
    #[arg(long, value_name = "DIR", requires = "test_annotations", conflicts_with = "test_patients")]
    pub test_data: Option<PathBuf>,
    /// Annotations for --test-data
    #[arg(long, value_name = "DIR", requires = "test_data")]
    pub test_annotations: Option<PathBuf>,
    /// Comma-separated patient ids to hold out of --data instead
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub test_patients: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 30)]
    pub trees: usize,
    /// Features tried per split
    #[arg(long, default_value_t = 2)]
    pub mtry: usize,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ForestArgs {
    pub fn config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            mtry: self.mtry,
            min_samples_leaf: self.min_samples_leaf,
            max_depth: self.max_depth,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothArg {
    Lookahead,
    Lookbehind,
    None,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothArgs {
    #[arg(long, value_enum, default_value = "lookahead")]
    pub smooth: SmoothArg,
    /// Smoothing window in breaths
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Fraction of the look-ahead window needed to relabel
    #[arg(long, default_value_t = 0.6)]
    pub x: f64,
}

impl SmoothArgs {
    pub fn config(&self) -> SmoothingConfig {
        SmoothingConfig {
            n: self.n,
            x: self.x,
            variant: match self.smooth {
                SmoothArg::Lookahead => SmoothingVariant::LookAhead,
                SmoothArg::Lookbehind => SmoothingVariant::LookBehind,
                SmoothArg::None => SmoothingVariant::None,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Where to write the model
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Also write the training feature matrix as CSV
    #[arg(long, value_name = "PATH")]
    pub feature_dump: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Predictions CSV
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub smooth: SmoothArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Report (JSON)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Per-class metrics as CSV
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Per-breath predictions CSV
    #[arg(long, value_name = "PATH")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingArg {
    Patient,
    Breath,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::Patient => Grouping::Patient,
            GroupingArg::Breath => Grouping::Breath,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "patient")]
    pub grouping: GroupingArg,
    /// Report (JSON)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelArg {
    Recompute,
    Frozen,
}

impl From<LevelArg> for FeatureLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Recompute => FeatureLevel::Recompute,
            LevelArg::Frozen => FeatureLevel::Frozen,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AblateRandomArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub test: TestDataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Fractions of each class to remove, ascending
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95,0.99"
    )]
    pub fractions: Vec<f64>,
    /// Ablation repeats per fraction (seeds seed..seed+repeats), averaged
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// Recompute windowed features after removal, or remove feature rows
    #[arg(long, value_enum, default_value = "recompute")]
    pub level: LevelArg,
    /// Curve CSV
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Occurrences,
    FirstRun,
}

impl From<RuleArg> for FirstMRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Occurrences => FirstMRule::Occurrences,
            RuleArg::FirstRun => FirstMRule::FirstRun,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AblateFirstMArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub test: TestDataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Per-mode cutoffs as mode=m pairs
    #[arg(long, value_delimiter = ',', default_value = "vc=450,pc=120,ps=1200,cpap=160,pav=80")]
    pub m: Vec<String>,
    #[arg(long, value_enum, default_value = "occurrences")]
    pub rule: RuleArg,
    /// Report (JSON)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Write the surviving annotations here
    #[arg(long, value_name = "PATH")]
    pub reduced_annotations: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepFirstMArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub test: TestDataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, value_parser = parse_mode)]
    pub mode: VentMode,
    /// Cutoffs to try
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    #[arg(long, value_enum, default_value = "occurrences")]
    pub rule: RuleArg,
    /// Sweep CSV
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory for DIR/<patient_id>/<file_id>.txt
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Annotation CSV path (default: <out>/annotations.csv)
    #[arg(long, value_name = "PATH")]
    pub annotations: Option<PathBuf>,
    /// Modes to generate
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "vc,pc,ps,cpap,pav")]
    pub modes: Vec<VentMode>,
    #[arg(long, default_value_t = 20)]
    pub patients_per_mode: usize,
    #[arg(long, default_value_t = 2000)]
    pub breaths: usize,
    /// Relative timing jitter
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    /// Relative amplitude noise
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Fraction of breaths with a cough, suction or noise artifact
    #[arg(long, default_value_t = 0.05)]
    pub artifacts: f64,
    /// First patient number, so separate cohorts get distinct ids
    #[arg(long, default_value_t = 0)]
    pub id_offset: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[arg(long, value_name = "DIR", requires = "annotations")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
    /// Kept counts for VC,PC,PS,CPAP,PAV
    #[arg(long, value_delimiter = ',', requires = "original_total", conflicts_with = "data")]
    pub kept: Vec<usize>,
    /// Size of the original training set
    #[arg(long)]
    pub original_total: Option<usize>,
    /// Also write the summary as JSON
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<VentMode, String> {
    let mode: VentMode = s.parse()?;
    if mode.class_index().is_none() {
        return Err(format!("{s} is not a trainable mode"));
    }
    Ok(mode)
}
