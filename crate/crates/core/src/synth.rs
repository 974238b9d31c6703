//! Seeded synthetic flow/pressure waveforms for the five modes.
//!
//! The templates are simple single-compartment shapes, not a lung model:
//!
//! * VC: square or descending-ramp flow, pressure from resistance plus
//!   elastance, machine-timed.
//! * PC: square inspiratory pressure, exponentially decaying flow, fixed
//!   inspiratory time.
//! * PS: the PC shape with patient-jittered inspiratory time and onset.
//! * CPAP: pressure close to PEEP, sinusoidal patient-driven flow, irregular
//!   timing.
//! * PAV: PS breaths with a zero-flow hold at elevated pressure every
//!   `plateau_every` breaths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{join_dataset_with, AnnotationIndex, LabeledDataset};
use crate::error::{Error, Result};
use crate::features::{breath_stats, FeatureConfig};
use crate::io::{BreathAnnotation, BreathFlags, RawBreathRecord, SamplingSpec, WaveformFile};
use crate::mode::{VentMode, CLASSES};
use crate::pipeline::StatsDataset;

/// cmH2O per L/s
const RESISTANCE: f64 = 10.0;
/// L per cmH2O
const COMPLIANCE: f64 = 0.05;
/// Expiratory time constant (s).
const TAU_EXP: f64 = 0.4;
const PLATEAU_HOLD_S: f64 = 0.4;
/// White-noise scale per unit of `amplitude_noise`: L/min and cmH2O.
const FLOW_NOISE: f64 = 4.0;
const PRESSURE_NOISE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mode: VentMode,
    pub n_breaths: usize,
    /// Breaths per minute.
    pub respiratory_rate: f64,
    /// cmH2O
    pub peep: f64,
    /// VC and CPAP: peak flow in L/min. PC, PS and PAV: driving pressure
    /// above PEEP in cmH2O.
    pub pip_or_flow_target: f64,
    /// Relative spread of breath timing.
    pub timing_jitter: f64,
    /// Relative per-breath amplitude spread; also scales the white noise.
    pub amplitude_noise: f64,
    /// Fraction of breaths given an artifact.
    pub artifact_rate: f64,
    pub seed: u64,
    /// PAV only: every `plateau_every`-th breath carries a hold.
    pub plateau_every: usize,
    pub spec: SamplingSpec,
}

impl SynthConfig {
    /// Typical settings for `mode` with the default jitter, 5% noise and
    /// 5% artifacts.
    pub fn for_mode(mode: VentMode, n_breaths: usize, seed: u64) -> Self {
        let target = match mode {
            VentMode::Vc => 50.0,
            VentMode::Cpap => 30.0,
            _ => 15.0,
        };
        Self {
            mode,
            n_breaths,
            respiratory_rate: 18.0,
            peep: 5.0,
            pip_or_flow_target: target,
            timing_jitter: 0.1,
            amplitude_noise: 0.05,
            artifact_rate: 0.05,
            seed,
            plateau_every: 5,
            spec: SamplingSpec::default(),
        }
    }

    /// The same settings with jitter, noise and artifacts switched off.
    pub fn clean(self) -> Self {
        Self {
            timing_jitter: 0.0,
            amplitude_noise: 0.0,
            artifact_rate: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == VentMode::Other {
            return Err(Error::UntrainableLabel(self.mode.to_string()));
        }
        let positive = [self.respiratory_rate, self.pip_or_flow_target];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.peep.is_finite() && self.peep >= 0.0) {
            return Err(Error::InvalidConfig("rates and amplitudes must be positive".into()));
        }
        let fractions = [self.timing_jitter, self.amplitude_noise, self.artifact_rate];
        if fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::InvalidConfig("jitter, noise and artifact rate must lie in [0, 1)".into()));
        }
        if self.plateau_every == 0 {
            return Err(Error::InvalidConfig("plateau_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Cough,
    Suction,
    Noise,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// `1 + spread·z`, kept away from zero.
fn scaled(rng: &mut ChaCha8Rng, spread: f64) -> f64 {
    (1.0 + spread * normal(rng)).clamp(0.5, 1.5)
}

/// Per-patient variation around the configured settings, drawn once.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Profile {
    resistance: f64,
    compliance: f64,
    itime: f64,
    rate: f64,
    descending_ramp: bool,
}

impl Profile {
    fn draw(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let spread = if config.amplitude_noise > 0.0 || config.timing_jitter > 0.0 { 0.15 } else { 0.0 };
        let base_itime = if config.mode == VentMode::Cpap { 1.1 } else { 1.0 };
        Self {
            resistance: RESISTANCE * scaled(rng, spread),
            compliance: COMPLIANCE * scaled(rng, spread),
            itime: base_itime * scaled(rng, spread),
            rate: config.respiratory_rate * scaled(rng, spread),
            descending_ramp: rng.random_bool(0.5),
        }
    }
}

/// Stateful generator for one patient's breath sequence.
#[derive(Debug, Clone)]
pub struct BreathGenerator {
    config: SynthConfig,
    profile: Profile,
    rng: ChaCha8Rng,
    index: usize,
}

impl BreathGenerator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let profile = Profile::draw(&config, &mut rng);
        Ok(Self {
            config,
            profile,
            rng,
            index: 0,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Next clean breath (no artifact) and its position in the sequence.
    pub fn next_clean(&mut self) -> (Vec<f64>, Vec<f64>) {
        let i = self.index;
        self.index += 1;
        template(&self.config, &self.profile, i, &mut self.rng)
    }

    /// Next breath with artifacts applied at the configured rate.
    pub fn next_breath(&mut self, ordinal: u64) -> (RawBreathRecord, BreathFlags) {
        let (flow, pressure) = self.next_clean();
        let mut rec = RawBreathRecord {
            breath_ordinal: ordinal,
            flow,
            pressure,
        };
        let mut flags = BreathFlags::NONE;
        if self.config.artifact_rate > 0.0 && self.rng.random_bool(self.config.artifact_rate) {
            let kind = match self.rng.random_range(0..3) {
                0 => ArtifactKind::Cough,
                1 => ArtifactKind::Suction,
                _ => ArtifactKind::Noise,
            };
            rec = inject_artifact(&rec, kind, 1.0, &mut self.rng);
            flags.cough = kind == ArtifactKind::Cough;
            flags.suction = kind == ArtifactKind::Suction;
        }
        (rec, flags)
    }
}

fn samples(seconds: f64, spec: SamplingSpec) -> usize {
    ((seconds * spec.rate_hz()).round() as usize).max(1)
}

/// One clean breath for `config.mode`.
fn template(config: &SynthConfig, p: &Profile, i: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let spec = config.spec;
    let dt = spec.dt_s();
    let amp = scaled(rng, config.amplitude_noise);
    let (timing, itime_jitter) = match config.mode {
        VentMode::Vc | VentMode::Pc => (config.timing_jitter, 0.0),
        VentMode::Ps | VentMode::Pav => (config.timing_jitter, config.timing_jitter),
        _ => (2.0 * config.timing_jitter, 2.0 * config.timing_jitter),
    };
    let period = 60.0 / p.rate * scaled(rng, timing);
    let ti = p.itime * scaled(rng, itime_jitter);
    let n_insp = samples(ti, spec);
    let peep = config.peep;
    let target = config.pip_or_flow_target * amp;

    let mut flow = Vec::new();
    let mut pressure = Vec::new();
    let mut volume = 0.0; // L
    match config.mode {
        VentMode::Vc => {
            for k in 0..n_insp {
                let frac = k as f64 / n_insp as f64;
                let q = if p.descending_ramp { target * (1.0 - 0.5 * frac) } else { target };
                volume += q / 60.0 * dt;
                flow.push(q);
                pressure.push(peep + p.resistance * q / 60.0 + volume / p.compliance);
            }
        }
        VentMode::Pc | VentMode::Ps | VentMode::Pav => {
            let tau = p.resistance * p.compliance;
            for k in 0..n_insp {
                let q = 60.0 * target / p.resistance * (-(k as f64) * dt / tau).exp();
                volume += q / 60.0 * dt;
                flow.push(q);
                pressure.push(peep + target);
            }
            if config.mode == VentMode::Pav && (i + 1).is_multiple_of(config.plateau_every) {
                for _ in 0..samples(PLATEAU_HOLD_S, spec) {
                    flow.push(0.0);
                    pressure.push(peep + target);
                }
            }
        }
        VentMode::Cpap | VentMode::Other => {
            for k in 0..n_insp {
                let s = (std::f64::consts::PI * (k as f64 + 0.5) / n_insp as f64).sin();
                let q = target * s;
                volume += q / 60.0 * dt;
                flow.push(q);
                pressure.push(peep - 0.8 * s);
            }
        }
    }

    // expiration
    let n_exp = samples((period - ti).max(0.6), spec);
    let p_end = *pressure.last().unwrap_or(&peep);
    for k in 0..n_exp {
        let t = (k as f64 + 0.5) * dt;
        if config.mode == VentMode::Cpap {
            let s = (std::f64::consts::PI * (k as f64 + 0.5) / n_exp as f64).sin();
            flow.push(-volume * 60.0 * std::f64::consts::PI / (2.0 * n_exp as f64 * dt) * s);
            pressure.push(peep + 0.4 * s);
        } else {
            flow.push(-60.0 * volume / TAU_EXP * (-t / TAU_EXP).exp());
            pressure.push(peep + (p_end - peep) * (-t / 0.05).exp());
        }
    }

    if config.amplitude_noise > 0.0 {
        let (fs, ps) = (FLOW_NOISE * config.amplitude_noise, PRESSURE_NOISE * config.amplitude_noise);
        for v in flow.iter_mut() {
            *v += fs * normal(rng);
        }
        for v in pressure.iter_mut() {
            *v += ps * normal(rng);
        }
    }
    (flow, pressure)
}

/// Draw one breath from a fresh generator state: the `index`-th breath of
/// the sequence `config` describes.
pub fn generate_breath(config: &SynthConfig, index: usize) -> Result<(RawBreathRecord, BreathFlags)> {
    let mut gen = BreathGenerator::new(*config)?;
    for _ in 0..index {
        gen.next_breath(0);
    }
    Ok(gen.next_breath(index as u64))
}

/// Perturb a breath.
///
/// * Cough: a biphasic flow spike well above the breath's peak flow.
/// * Suction: the breath cut short with a negative flow bias.
/// * Noise: additive Gaussian noise on both channels, scaled by `amplitude`.
pub fn inject_artifact(
    breath: &RawBreathRecord,
    kind: ArtifactKind,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> RawBreathRecord {
    let mut out = breath.clone();
    let n = out.flow.len();
    match kind {
        ArtifactKind::Cough => {
            let peak = out.flow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let spike = (1.0 + amplitude) * peak + 20.0;
            let width = 3.min(n);
            let start = rng.random_range(0..=(n - width));
            for k in 0..width {
                let sign = if k < width.div_ceil(2) { 1.0 } else { -1.0 };
                out.flow[start + k] = sign * spike;
                out.pressure[start + k] += 10.0 * amplitude;
            }
        }
        ArtifactKind::Suction => {
            let keep = ((n as f64 * rng.random_range(0.4..0.7)) as usize).max(2).min(n);
            out.flow.truncate(keep);
            out.pressure.truncate(keep);
            for v in out.flow.iter_mut() {
                *v -= 10.0 * amplitude;
            }
            for v in out.pressure.iter_mut() {
                *v -= 3.0 * amplitude;
            }
        }
        ArtifactKind::Noise => {
            if amplitude > 0.0 {
                for v in out.flow.iter_mut() {
                    *v += 5.0 * amplitude * normal(rng);
                }
                for v in out.pressure.iter_mut() {
                    *v += 2.0 * amplitude * normal(rng);
                }
            }
        }
    }
    out
}

/// One file of consecutive segments, one per config, with ordinals running
/// on across segments.
pub fn generate_session(
    configs: &[SynthConfig],
    patient_id: &str,
    file_id: &str,
) -> Result<(WaveformFile, Vec<BreathAnnotation>)> {
    let Some(first) = configs.first() else {
        return Err(Error::InvalidConfig("a session needs at least one segment".into()));
    };
    if configs.iter().any(|c| c.spec != first.spec) {
        return Err(Error::InvalidConfig("segments must share a sampling rate".into()));
    }
    let mut breaths = Vec::new();
    let mut annotations = Vec::new();
    for config in configs {
        let mut gen = BreathGenerator::new(*config)?;
        for _ in 0..config.n_breaths {
            let ordinal = breaths.len() as u64;
            let (rec, flags) = gen.next_breath(ordinal);
            breaths.push(rec);
            annotations.push(BreathAnnotation {
                file_id: file_id.to_string(),
                breath_ordinal: ordinal,
                mode: config.mode,
                flags,
            });
        }
    }
    Ok((
        WaveformFile {
            patient_id: patient_id.to_string(),
            file_id: file_id.to_string(),
            spec: first.spec,
            breaths,
            truncated: 0,
        },
        annotations,
    ))
}

pub fn generate_patient(
    config: &SynthConfig,
    patient_id: &str,
    file_id: &str,
) -> Result<(WaveformFile, Vec<BreathAnnotation>)> {
    generate_session(std::slice::from_ref(config), patient_id, file_id)
}

/// A cohort of single-mode patients, one file each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub patients_per_mode: usize,
    pub breaths_per_patient: usize,
    pub timing_jitter: f64,
    pub amplitude_noise: f64,
    pub artifact_rate: f64,
    pub seed: u64,
    /// Prefix for patient ids, so train and test cohorts cannot collide.
    #[serde(default)]
    pub id_offset: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            patients_per_mode: 20,
            breaths_per_patient: 2000,
            timing_jitter: 0.1,
            amplitude_noise: 0.05,
            artifact_rate: 0.05,
            seed: 0,
            id_offset: 0,
        }
    }
}

/// SplitMix64 step, used to give every patient its own stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Patient configs for a cohort, with their patient and file ids.
pub fn cohort_plan(cohort: &CohortConfig) -> Vec<(String, String, SynthConfig)> {
    let mut plan = Vec::new();
    for (m, mode) in CLASSES.iter().enumerate() {
        for k in 0..cohort.patients_per_mode {
            let id = cohort.id_offset + k;
            let stream = (m * 1_000_003 + id) as u64;
            let config = SynthConfig {
                timing_jitter: cohort.timing_jitter,
                amplitude_noise: cohort.amplitude_noise,
                artifact_rate: cohort.artifact_rate,
                ..SynthConfig::for_mode(*mode, cohort.breaths_per_patient, derive_seed(cohort.seed, stream))
            };
            let patient = format!("{mode}_{id:03}");
            let file = format!("{patient}_0");
            plan.push((patient, file, config));
        }
    }
    plan
}

/// Generate every patient in the plan; order follows [`cohort_plan`].
pub fn generate_cohort(cohort: &CohortConfig) -> Result<Vec<(WaveformFile, Vec<BreathAnnotation>)>> {
    let plan = cohort_plan(cohort);
    let one = |(p, f, c): &(String, String, SynthConfig)| generate_patient(c, p, f);
    #[cfg(feature = "parallel")]
    let out: Vec<Result<_>> = {
        use rayon::prelude::*;
        plan.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<_>> = plan.iter().map(one).collect();
    out.into_iter().collect()
}

/// Generate a cohort straight into per-breath statistics, one patient at a
/// time, without keeping raw samples around.
pub fn cohort_stats(cohort: &CohortConfig, features: &FeatureConfig) -> Result<StatsDataset> {
    let plan = cohort_plan(cohort);
    let one = |(p, f, c): &(String, String, SynthConfig)| -> Result<StatsDataset> {
        let (file, ann) = generate_patient(c, p, f)?;
        let index = AnnotationIndex::new(ann)?;
        Ok(join_dataset_with([file], &index, true, |b| breath_stats(&b, features))?.dataset)
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<StatsDataset>> = {
        use rayon::prelude::*;
        plan.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<StatsDataset>> = plan.iter().map(one).collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    LabeledDataset::concat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::breath::Breath;
    use crate::features::extract_features;
    use crate::io::{parse_waveform_file, write_waveform_file};

    fn breaths(config: &SynthConfig) -> Vec<Breath> {
        let (file, _) = generate_patient(config, "p", "f").unwrap();
        file.breaths
            .into_iter()
            .map(|r| Breath::new(r.flow, r.pressure, file.spec).unwrap())
            .collect()
    }

    fn clean(mode: VentMode, n: usize) -> SynthConfig {
        SynthConfig::for_mode(mode, n, 7).clean()
    }

    #[test]
    fn vc_constant_slope() {
        let cfg = FeatureConfig::default();
        for b in breaths(&clean(VentMode::Vc, 10)) {
            let s = breath_stats(&b, &cfg);
            assert!(s.pressure_var > 0.0);
            assert!(s.slope_var < 1e-6, "{}", s.slope_var);
        }
    }

    #[test]
    fn cpap_low_pressure_variance() {
        let cfg = FeatureConfig::default();
        for b in breaths(&clean(VentMode::Cpap, 10)) {
            assert!(breath_stats(&b, &cfg).pressure_var < 1.0);
        }
    }

    #[test]
    fn pav_plateau_every_fifth() {
        let cfg = FeatureConfig::default();
        let bs = breaths(&clean(VentMode::Pav, 20));
        let flags: Vec<bool> = bs.iter().map(|b| breath_stats(b, &cfg).plateau).collect();
        let expected: Vec<bool> = (0..20).map(|i| i % 5 == 4).collect();
        assert_eq!(flags, expected);
        let f = extract_features(&bs, &cfg);
        assert_eq!(f[19].f6_n_plateaus_w20, 4.0);
    }

    #[test]
    fn noisy_pav_plateaus_detected() {
        let cfg = FeatureConfig::default();
        let config = SynthConfig {
            artifact_rate: 0.0,
            ..SynthConfig::for_mode(VentMode::Pav, 200, 3)
        };
        let n = breaths(&config).iter().filter(|b| breath_stats(b, &cfg).plateau).count();
        assert_eq!(n, 40);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::for_mode(VentMode::Pc, 100, 1);
        let write = || {
            let (file, _) = generate_patient(&cfg, "p", "f").unwrap();
            let mut out = Vec::new();
            write_waveform_file(&file, &mut out).unwrap();
            out
        };
        assert_eq!(write(), write());
        let other = SynthConfig { seed: 2, ..cfg };
        let (a, _) = generate_patient(&cfg, "p", "f").unwrap();
        let (b, _) = generate_patient(&other, "p", "f").unwrap();
        assert_ne!(a.breaths[0].flow, b.breaths[0].flow);
    }

    #[test]
    fn generate_breath_matches_sequence() {
        let cfg = SynthConfig::for_mode(VentMode::Ps, 10, 4);
        let (file, _) = generate_patient(&cfg, "p", "f").unwrap();
        let (rec, _) = generate_breath(&cfg, 6).unwrap();
        assert_eq!(rec, file.breaths[6]);
    }

    #[test]
    fn parses_cleanly() {
        for mode in CLASSES {
            let cfg = SynthConfig {
                artifact_rate: 0.3,
                ..SynthConfig::for_mode(mode, 50, 9)
            };
            let (file, ann) = generate_patient(&cfg, "p", "f").unwrap();
            let mut out = Vec::new();
            write_waveform_file(&file, &mut out).unwrap();
            let parsed = parse_waveform_file(&out[..], "p", "f", file.spec).unwrap();
            assert_eq!(parsed.truncated, 0);
            assert_eq!(parsed.breaths.len(), 50);
            assert_eq!(ann.len(), 50);
            assert!(ann.iter().all(|a| a.mode == mode));
            for r in &parsed.breaths {
                Breath::new(r.flow.clone(), r.pressure.clone(), file.spec).unwrap();
            }
        }
    }

    #[test]
    fn mixed_session_switches_labels() {
        let a = SynthConfig::for_mode(VentMode::Vc, 500, 1);
        let b = SynthConfig::for_mode(VentMode::Ps, 500, 2);
        let (file, ann) = generate_session(&[a, b], "p", "f").unwrap();
        assert_eq!(file.breaths.len(), 1000);
        assert_eq!(ann[499].mode, VentMode::Vc);
        assert_eq!(ann[500].mode, VentMode::Ps);
        assert!(ann.iter().enumerate().all(|(i, a)| a.breath_ordinal == i as u64));
    }

    #[test]
    fn artifacts() {
        let (rec, _) = generate_breath(&SynthConfig::for_mode(VentMode::Vc, 1, 5).clean(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(inject_artifact(&rec, ArtifactKind::Noise, 0.0, &mut rng), rec);
        let max = |r: &RawBreathRecord| r.flow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cough = inject_artifact(&rec, ArtifactKind::Cough, 1.0, &mut rng);
        assert!(max(&cough) > max(&rec));
        let suction = inject_artifact(&rec, ArtifactKind::Suction, 1.0, &mut rng);
        assert!(suction.flow.len() < rec.flow.len());
        let noisy = inject_artifact(&rec, ArtifactKind::Noise, 1.0, &mut rng);
        assert!(noisy.flow.iter().chain(&noisy.pressure).all(|v| v.is_finite()));
        assert_ne!(noisy, rec);
    }

    #[test]
    fn clean_templates_separate() {
        let cfg = FeatureConfig::default();
        let last = |mode| *extract_features(&breaths(&clean(mode, 120)), &cfg).last().unwrap();
        let [vc, pc, ps, cpap, pav] = CLASSES.map(last);
        // f1 singles out VC
        for other in [pc, ps, cpap, pav] {
            assert!(vc.f1_insp_flow_slope_var < 1.0 && other.f1_insp_flow_slope_var > 100.0);
        }
        // f2 singles out CPAP
        for other in [vc, pc, ps, pav] {
            assert!(cpap.f2_pressure_var < 1.0 && other.f2_pressure_var > 5.0);
        }
        // f6 singles out PAV
        assert_eq!(pav.f6_n_plateaus_w20, 4.0);
        for other in [vc, pc, ps, cpap] {
            assert_eq!(other.f6_n_plateaus_w20, 0.0);
        }
        // f7 separates PC from PS once jitter is on
        let jittered = |mode| {
            let c = SynthConfig {
                amplitude_noise: 0.0,
                artifact_rate: 0.0,
                ..SynthConfig::for_mode(mode, 120, 7)
            };
            extract_features(&breaths(&c), &cfg).last().unwrap().f7_pressure_itime_var_w100
        };
        assert!(pc.f7_pressure_itime_var_w100 < 1e-12);
        assert!(jittered(VentMode::Pc) < 1e-12);
        assert!(jittered(VentMode::Ps) > 1e-3);
    }

    #[test]
    fn cohort_counts() {
        let cohort = CohortConfig {
            patients_per_mode: 10,
            breaths_per_patient: 20,
            ..CohortConfig::default()
        };
        let out = generate_cohort(&cohort).unwrap();
        assert_eq!(out.len(), 50);
        let files: Vec<_> = out.iter().map(|(f, _)| f.clone()).collect();
        let ann: Vec<_> = out.into_iter().flat_map(|(_, a)| a).collect();
        let joined = crate::dataset::join_dataset(files, &ann, true).unwrap();
        let summary = joined.dataset.summary();
        for mode in CLASSES {
            let c = summary.counts(mode);
            assert_eq!((c.patients, c.breaths), (10, 200));
        }
    }

    #[test]
    fn invalid_configs() {
        let base = SynthConfig::for_mode(VentMode::Vc, 10, 0);
        for bad in [
            SynthConfig { respiratory_rate: 0.0, ..base },
            SynthConfig { timing_jitter: 1.0, ..base },
            SynthConfig { plateau_every: 0, ..base },
            SynthConfig { mode: VentMode::Other, ..base },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
