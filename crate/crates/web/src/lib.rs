//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and strings and returns a JSON string,
//! so the page needs no bundler. The `*_json` functions are the same
//! operations with Rust errors, usable (and tested) off the browser.

use std::sync::OnceLock;

use serde::Serialize;
use ventmode::features::{breath_stats, window_features, BreathStats};
use ventmode::pipeline::{predict_file, train};
use ventmode::smoothing::{latency_bound, smooth};
use ventmode::synth::{cohort_stats, derive_seed, generate_patient, generate_session, CohortConfig, SynthConfig};
use ventmode::{Breath, BreathMetadata, FeatureConfig, PipelineConfig, RandomForestModel, SmoothingConfig, VentMode};
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse_mode(s: &str) -> Res<VentMode> {
    let mode: VentMode = s.trim().parse()?;
    mode.class_index().map(|_| mode).ok_or_else(|| format!("{s} is not a trainable mode"))
}

fn smoothing(n: usize, x: f64, variant: &str) -> Res<SmoothingConfig> {
    let config = SmoothingConfig { n, x, variant: variant.parse()? };
    config.validate().map_err(err)?;
    Ok(config)
}

#[derive(Serialize)]
pub struct BreathView {
    pub mode: VentMode,
    pub dt_s: f64,
    pub flow: Vec<f64>,
    pub pressure: Vec<f64>,
    pub x0_index: usize,
    pub meta: BreathMetadata,
    pub stats: BreathStats,
}

/// One synthetic breath (the `index`-th of a patient's sequence) with its
/// metadata and per-breath statistics.
pub fn breath_json(mode: &str, seed: u64, index: usize, noise: f64) -> Res<String> {
    let mode = parse_mode(mode)?;
    let config = SynthConfig {
        amplitude_noise: noise,
        artifact_rate: 0.0,
        ..SynthConfig::for_mode(mode, index + 1, seed)
    };
    let (file, _) = generate_patient(&config, "demo", "demo").map_err(err)?;
    let rec = file.breaths.into_iter().last().ok_or("no breath generated")?;
    let breath = Breath::new(rec.flow, rec.pressure, file.spec).map_err(err)?;
    let view = BreathView {
        mode,
        dt_s: file.spec.dt_s(),
        flow: breath.flow().to_vec(),
        pressure: breath.pressure().to_vec(),
        x0_index: breath.x0_index(),
        meta: *breath.meta(),
        stats: breath_stats(&breath, &FeatureConfig::default()),
    };
    serde_json::to_string(&view).map_err(err)
}

#[derive(Serialize)]
struct Smoothed {
    smoothed: Vec<VentMode>,
    latency_s: f64,
}

/// Smooth a comma-separated label sequence such as `"vc,vc,ps,vc"`.
pub fn smooth_json(labels: &str, n: usize, x: f64, variant: &str) -> Res<String> {
    let config = smoothing(n, x, variant)?;
    let raw = labels
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_mode)
        .collect::<Res<Vec<_>>>()?;
    let out = Smoothed { smoothed: smooth(&raw, &config), latency_s: latency_bound(&config, 18.0) };
    serde_json::to_string(&out).map_err(err)
}

fn demo_model() -> Res<&'static RandomForestModel> {
    static MODEL: OnceLock<Res<RandomForestModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let cohort = CohortConfig { patients_per_mode: 4, breaths_per_patient: 300, seed: 7, ..CohortConfig::default() };
            let config = PipelineConfig::default();
            let ds = cohort_stats(&cohort, &config.features).map_err(err)?;
            train(&ds, &config).map_err(err)
        })
        .as_ref()
        .map_err(Clone::clone)
}

#[derive(Serialize)]
pub struct SessionView {
    pub truth: Vec<VentMode>,
    pub raw: Vec<VentMode>,
    pub smoothed: Vec<VentMode>,
    /// Vote fraction of the winning class for each breath.
    pub confidence: Vec<f64>,
    pub raw_accuracy: f64,
    pub smoothed_accuracy: f64,
}

fn accuracy(truth: &[VentMode], pred: &[VentMode]) -> f64 {
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Generate a session that walks through `modes` (comma-separated), one
/// segment per entry, and classify it with a forest trained on a small
/// built-in cohort.
pub fn classify_session_json(
    modes: &str,
    breaths_per_segment: usize,
    seed: u64,
    noise: f64,
    n: usize,
    x: f64,
    variant: &str,
) -> Res<String> {
    let smoothing = smoothing(n, x, variant)?;
    let segments = modes
        .split(',')
        .enumerate()
        .map(|(i, m)| {
            Ok(SynthConfig {
                amplitude_noise: noise,
                ..SynthConfig::for_mode(parse_mode(m)?, breaths_per_segment, derive_seed(seed, i as u64))
            })
        })
        .collect::<Res<Vec<_>>>()?;
    let (file, annotations) = generate_session(&segments, "demo", "demo").map_err(err)?;
    let features = FeatureConfig::default();
    let mut stats = Vec::with_capacity(file.breaths.len());
    let mut ordinals = Vec::with_capacity(file.breaths.len());
    for rec in file.breaths {
        ordinals.push(rec.breath_ordinal);
        let b = Breath::new(rec.flow, rec.pressure, file.spec).map_err(err)?;
        stats.push(breath_stats(&b, &features));
    }
    let rows = predict_file(demo_model()?, "demo", &ordinals, &window_features(&stats, &features), &smoothing)
        .map_err(err)?;
    let truth: Vec<VentMode> = annotations.iter().map(|a| a.mode).collect();
    let raw: Vec<VentMode> = rows.iter().map(|r| r.raw_mode).collect();
    let smoothed: Vec<VentMode> = rows.iter().map(|r| r.smoothed_mode).collect();
    let view = SessionView {
        raw_accuracy: accuracy(&truth, &raw),
        smoothed_accuracy: accuracy(&truth, &smoothed),
        confidence: rows.iter().map(|r| r.votes.iter().copied().fold(0.0, f64::max)).collect(),
        truth,
        raw,
        smoothed,
    };
    serde_json::to_string(&view).map_err(err)
}

fn js<T>(r: Res<T>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn breath(mode: &str, seed: u32, index: u32, noise: f64) -> Result<String, JsValue> {
    js(breath_json(mode, seed.into(), index as usize, noise))
}

#[wasm_bindgen]
pub fn smooth_labels(labels: &str, n: u32, x: f64, variant: &str) -> Result<String, JsValue> {
    js(smooth_json(labels, n as usize, x, variant))
}

#[wasm_bindgen]
pub fn classify_session(
    modes: &str,
    breaths_per_segment: u32,
    seed: u32,
    noise: f64,
    n: u32,
    x: f64,
    variant: &str,
) -> Result<String, JsValue> {
    js(classify_session_json(modes, breaths_per_segment as usize, seed.into(), noise, n as usize, x, variant))
}
