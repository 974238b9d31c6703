//! The seven-feature breath representation.
//!
//! Two per-breath statistics (inspiratory flow slope variance, pressure
//! variance) and five statistics over trailing windows of 10, 20 and 100
//! breaths. Windows are trailing and inclusive of the current breath, and
//! never cross file boundaries. Every variance is a population variance;
//! a window holding fewer than two values has variance 0.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::breath::{argmax, Breath, BreathMetadata};
use crate::error::{Error, Result};
use crate::io::SamplingSpec;
use crate::mode::VentMode;

pub const N_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "insp_flow_slope_var",
    "pressure_var",
    "var_of_slope_var_w10",
    "itime_var_w10",
    "pressure_itime_var_w10",
    "n_plateaus_w20",
    "pressure_itime_var_w100",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub slope_window_s: f64,
    pub pressure_itime_fraction: f64,
    pub short_window: usize,
    pub med_window: usize,
    pub long_window: usize,
    pub plateau_min_duration_s: f64,
    /// L/min
    pub plateau_flow_eps: f64,
    /// cmH2O above PEEP
    pub plateau_pressure_margin: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            slope_window_s: 0.08,
            pressure_itime_fraction: 0.4,
            short_window: 10,
            med_window: 20,
            long_window: 100,
            plateau_min_duration_s: 0.3,
            plateau_flow_eps: 1.0,
            plateau_pressure_margin: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self, spec: SamplingSpec) -> Result<()> {
        let positive = [
            self.slope_window_s,
            self.pressure_itime_fraction,
            self.plateau_min_duration_s,
            self.plateau_flow_eps,
            self.plateau_pressure_margin,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.short_window == 0
            || self.med_window == 0
            || self.long_window == 0
        {
            return Err(Error::InvalidConfig("feature parameters must be positive".into()));
        }
        let block = self.slope_window_s * spec.rate_hz();
        if (block - block.round()).abs() > 1e-9 || block.round() < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "slope window of {} s is {block} samples at {} Hz; need an integer ≥ 2",
                self.slope_window_s,
                spec.rate_hz()
            )));
        }
        Ok(())
    }

    pub fn slope_block_len(&self, spec: SamplingSpec) -> usize {
        (self.slope_window_s * spec.rate_hz()).round().max(2.0) as usize
    }

    fn plateau_min_samples(&self, spec: SamplingSpec) -> usize {
        ((self.plateau_min_duration_s * spec.rate_hz()) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f1_insp_flow_slope_var: f64,
    pub f2_pressure_var: f64,
    pub f3_var_of_slope_var_w10: f64,
    pub f4_itime_var_w10: f64,
    pub f5_pressure_itime_var_w10: f64,
    pub f6_n_plateaus_w20: f64,
    pub f7_pressure_itime_var_w100: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.f1_insp_flow_slope_var,
            self.f2_pressure_var,
            self.f3_var_of_slope_var_w10,
            self.f4_itime_var_w10,
            self.f5_pressure_itime_var_w10,
            self.f6_n_plateaus_w20,
            self.f7_pressure_itime_var_w100,
        ]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        Self {
            f1_insp_flow_slope_var: a[0],
            f2_pressure_var: a[1],
            f3_var_of_slope_var_w10: a[2],
            f4_itime_var_w10: a[3],
            f5_pressure_itime_var_w10: a[4],
            f6_n_plateaus_w20: a[5],
            f7_pressure_itime_var_w100: a[6],
        }
    }
}

/// Population variance; 0 for fewer than two values.
pub fn population_variance(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().into_iter().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.into_iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Least-squares slopes (L/min/s) of consecutive, non-overlapping blocks of
/// the inspiratory flow. A short trailing block is discarded.
pub fn block_slopes(insp_flow: &[f64], spec: SamplingSpec, config: &FeatureConfig) -> Vec<f64> {
    let b = config.slope_block_len(spec);
    let dt = spec.dt_s();
    // centred sample times: k - (b-1)/2, scaled by dt
    let t_mean = (b as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..b).map(|k| (k as f64 - t_mean).powi(2)).sum::<f64>() * dt * dt;
    insp_flow
        .chunks_exact(b)
        .map(|block| {
            let y_mean = block.iter().sum::<f64>() / b as f64;
            let sxy: f64 = block
                .iter()
                .enumerate()
                .map(|(k, y)| (k as f64 - t_mean) * dt * (y - y_mean))
                .sum();
            sxy / sxx
        })
        .collect()
}

pub fn insp_flow_slope_variance(breath: &Breath, config: &FeatureConfig) -> f64 {
    population_variance(block_slopes(breath.inspiratory_flow(), breath.spec(), config))
}

pub fn pressure_variance(breath: &Breath) -> f64 {
    population_variance(breath.pressure().iter().copied())
}

/// Time (s) pressure spends above `PEEP + fraction·(PIP − PEEP)`, counting
/// every qualifying sample whether or not the run is contiguous.
pub fn pressure_itime(breath: &Breath, meta: &BreathMetadata, config: &FeatureConfig) -> f64 {
    if meta.pip <= meta.peep {
        return 0.0;
    }
    let threshold = meta.peep + config.pressure_itime_fraction * (meta.pip - meta.peep);
    let above = breath.pressure().iter().filter(|p| **p > threshold).count();
    above as f64 * breath.spec().dt_s()
}

/// True when the breath contains an inspiratory hold: a run of at least
/// `plateau_min_duration_s` with `|flow| < plateau_flow_eps` and pressure
/// at least `plateau_pressure_margin` above PEEP. The run must begin at or
/// after peak inspiratory flow and no later than `x0`; it may extend into
/// the expiratory part of the breath, since a zero-flow hold usually
/// triggers the `x0` boundary itself.
pub fn detect_plateau(breath: &Breath, meta: &BreathMetadata, config: &FeatureConfig) -> bool {
    let flow = breath.flow();
    let pressure = breath.pressure();
    let min_run = config.plateau_min_samples(breath.spec());
    let peak = argmax(flow);
    let last_start = breath.x0_index().min(flow.len().saturating_sub(1));
    let floor = meta.peep + config.plateau_pressure_margin;

    let qualifies = |i: usize| flow[i].abs() < config.plateau_flow_eps && pressure[i] >= floor;
    let mut i = peak;
    while i <= last_start {
        if !qualifies(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < flow.len() && qualifies(i) {
            i += 1;
        }
        if i - start >= min_run {
            return true;
        }
    }
    false
}

/// The per-breath quantities the windowed features are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathStats {
    pub slope_var: f64,
    pub pressure_var: f64,
    /// Flow-based inspiratory time (s).
    pub itime: f64,
    /// Pressure-based inspiratory time (s).
    pub pressure_itime: f64,
    pub plateau: bool,
}

pub fn breath_stats(breath: &Breath, config: &FeatureConfig) -> BreathStats {
    let meta = breath.meta();
    BreathStats {
        slope_var: insp_flow_slope_variance(breath, config),
        pressure_var: pressure_variance(breath),
        itime: meta.itime_s,
        pressure_itime: pressure_itime(breath, meta, config),
        plateau: detect_plateau(breath, meta, config),
    }
}

/// Batch windowed features over one file's per-breath statistics.
pub fn window_features(stats: &[BreathStats], config: &FeatureConfig) -> Vec<FeatureVector> {
    let window = |i: usize, w: usize| &stats[(i + 1).saturating_sub(w)..=i];
    (0..stats.len())
        .map(|i| {
            let short = window(i, config.short_window);
            let med = window(i, config.med_window);
            let long = window(i, config.long_window);
            FeatureVector {
                f1_insp_flow_slope_var: stats[i].slope_var,
                f2_pressure_var: stats[i].pressure_var,
                f3_var_of_slope_var_w10: population_variance(short.iter().map(|s| s.slope_var)),
                f4_itime_var_w10: population_variance(short.iter().map(|s| s.itime)),
                f5_pressure_itime_var_w10: population_variance(short.iter().map(|s| s.pressure_itime)),
                f6_n_plateaus_w20: med.iter().filter(|s| s.plateau).count() as f64,
                f7_pressure_itime_var_w100: population_variance(long.iter().map(|s| s.pressure_itime)),
            }
        })
        .collect()
}

/// Features for one file's breaths, in order.
pub fn extract_features(breaths: &[Breath], config: &FeatureConfig) -> Vec<FeatureVector> {
    let stats: Vec<BreathStats> = breaths.iter().map(|b| breath_stats(b, config)).collect();
    window_features(&stats, config)
}

/// Fixed-capacity trailing window.
#[derive(Debug, Clone)]
struct Trailing<T> {
    cap: usize,
    buf: VecDeque<T>,
}

impl<T: Copy> Trailing<T> {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            buf: VecDeque::with_capacity(cap),
        }
    }

    fn push(&mut self, v: T) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
    }

    fn iter(&self) -> impl Iterator<Item = T> + Clone + '_ {
        self.buf.iter().copied()
    }
}

/// Live feature extraction: push breaths one at a time, in order. Call
/// [`FeatureStream::reset`] at each file boundary.
#[derive(Debug, Clone)]
pub struct FeatureStream {
    config: FeatureConfig,
    slope_var: Trailing<f64>,
    itime: Trailing<f64>,
    pitime_short: Trailing<f64>,
    pitime_long: Trailing<f64>,
    plateau: Trailing<bool>,
    plateau_count: usize,
}

impl FeatureStream {
    pub fn new(config: FeatureConfig) -> Self {
        Self {
            config,
            slope_var: Trailing::new(config.short_window),
            itime: Trailing::new(config.short_window),
            pitime_short: Trailing::new(config.short_window),
            pitime_long: Trailing::new(config.long_window),
            plateau: Trailing::new(config.med_window),
            plateau_count: 0,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.config);
    }

    pub fn push(&mut self, breath: &Breath) -> FeatureVector {
        self.push_stats(breath_stats(breath, &self.config))
    }

    pub fn push_stats(&mut self, s: BreathStats) -> FeatureVector {
        if self.plateau.buf.len() == self.plateau.cap && self.plateau.buf.front() == Some(&true) {
            self.plateau_count -= 1;
        }
        self.plateau.push(s.plateau);
        self.plateau_count += usize::from(s.plateau);
        self.slope_var.push(s.slope_var);
        self.itime.push(s.itime);
        self.pitime_short.push(s.pressure_itime);
        self.pitime_long.push(s.pressure_itime);
        FeatureVector {
            f1_insp_flow_slope_var: s.slope_var,
            f2_pressure_var: s.pressure_var,
            f3_var_of_slope_var_w10: population_variance(self.slope_var.iter()),
            f4_itime_var_w10: population_variance(self.itime.iter()),
            f5_pressure_itime_var_w10: population_variance(self.pitime_short.iter()),
            f6_n_plateaus_w20: self.plateau_count as f64,
            f7_pressure_itime_var_w100: population_variance(self.pitime_long.iter()),
        }
    }
}

pub const FEATURE_DUMP_HEADER: &str = "file_id,breath_ordinal,f1,f2,f3,f4,f5,f6,f7,label";

pub struct FeatureDumpRow<'a> {
    pub file_id: &'a str,
    pub breath_ordinal: u64,
    pub features: &'a FeatureVector,
    pub label: VentMode,
}

pub fn write_feature_dump<'a, W: Write>(
    rows: impl IntoIterator<Item = FeatureDumpRow<'a>>,
    mut sink: W,
) -> Result<()> {
    writeln!(sink, "{FEATURE_DUMP_HEADER}")?;
    for r in rows {
        write!(sink, "{},{}", r.file_id, r.breath_ordinal)?;
        for v in r.features.to_array() {
            write!(sink, ",{v}")?;
        }
        writeln!(sink, ",{}", r.label)?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> SamplingSpec {
        SamplingSpec::default()
    }

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    fn breath(flow: Vec<f64>, pressure: Vec<f64>) -> Breath {
        Breath::new(flow, pressure, spec()).unwrap()
    }

    #[test]
    fn default_config_valid() {
        cfg().validate(spec()).unwrap();
        assert_eq!(cfg().slope_block_len(spec()), 4);
        let bad = FeatureConfig {
            slope_window_s: 0.05,
            ..cfg()
        };
        assert!(bad.validate(spec()).is_err());
    }

    #[test]
    fn ramp_slopes_constant() {
        let flow: Vec<f64> = (0..40).map(|k| 100.0 * k as f64 * 0.02).collect();
        let slopes = block_slopes(&flow, spec(), &cfg());
        assert_eq!(slopes.len(), 10);
        for s in slopes {
            assert_relative_eq!(s, 100.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn short_tail_discarded() {
        assert_eq!(block_slopes(&[1.0; 7], spec(), &cfg()).len(), 1);
        assert!(block_slopes(&[1.0; 3], spec(), &cfg()).is_empty());
    }

    #[test]
    fn piecewise_ramp_slopes() {
        // 4 samples rising at 50 L/min/s then 4 falling at −50
        let up: Vec<f64> = (0..4).map(|k| 10.0 + 50.0 * 0.02 * k as f64).collect();
        let down: Vec<f64> = (0..4).map(|k| 20.0 - 50.0 * 0.02 * k as f64).collect();
        let flow: Vec<f64> = up.into_iter().chain(down).collect();
        let slopes = block_slopes(&flow, spec(), &cfg());
        assert_eq!(slopes.len(), 2);
        assert_relative_eq!(slopes[0], 50.0, max_relative = 1e-9);
        assert_relative_eq!(slopes[1], -50.0, max_relative = 1e-9);
        assert_relative_eq!(population_variance(slopes), 2500.0, max_relative = 1e-9);
    }

    #[test]
    fn slope_variance_of_ramp_breath() {
        let mut flow: Vec<f64> = (0..40).map(|k| 5.0 + 100.0 * k as f64 * 0.02).collect();
        flow.extend([-10.0; 20]);
        let b = breath(flow, vec![5.0; 60]);
        assert!(insp_flow_slope_variance(&b, &cfg()).abs() < 1e-9);
    }

    #[test]
    fn single_block_inspiration() {
        let mut flow = vec![10.0, 20.0, 30.0, 40.0, 50.0];
        flow.extend([-10.0; 5]);
        let b = breath(flow, vec![5.0; 10]);
        assert_eq!(insp_flow_slope_variance(&b, &cfg()), 0.0);
    }

    #[test]
    fn pressure_variance_cases() {
        let flow = vec![10.0, 20.0, -5.0, -1.0];
        assert_eq!(pressure_variance(&breath(flow.clone(), vec![7.0; 4])), 0.0);
        let b = breath(flow.clone(), vec![5.0, 5.0, 25.0, 25.0]);
        assert_relative_eq!(pressure_variance(&b), 100.0);
        let shifted = breath(flow, vec![105.0, 105.0, 125.0, 125.0]);
        assert_relative_eq!(pressure_variance(&shifted), 100.0, max_relative = 1e-12);
    }

    #[test]
    fn pressure_itime_threshold() {
        // PEEP 5, PIP 25 → threshold 13; 30 samples above it at 50 Hz
        let mut pressure = vec![25.0; 30];
        pressure.extend(vec![5.0; 70]);
        let mut flow = vec![30.0; 30];
        flow.extend(vec![-10.0; 70]);
        let b = breath(flow, pressure);
        assert_eq!(b.meta().peep, 5.0);
        assert_eq!(b.meta().pip, 25.0);
        assert_relative_eq!(pressure_itime(&b, b.meta(), &cfg()), 0.6, max_relative = 1e-12);
    }

    #[test]
    fn pressure_itime_counts_noncontiguous() {
        let pressure = vec![5.0, 25.0, 5.0, 25.0, 5.0, 25.0, 5.0, 5.0];
        let flow = vec![10.0, 20.0, 30.0, 20.0, 10.0, 5.0, -5.0, -5.0];
        let b = breath(flow, pressure);
        assert_relative_eq!(pressure_itime(&b, b.meta(), &cfg()), 3.0 * 0.02, max_relative = 1e-12);
    }

    #[test]
    fn pressure_itime_flat_and_full() {
        let b = breath(vec![10.0, 20.0, -5.0, -5.0], vec![5.0; 4]);
        assert_eq!(pressure_itime(&b, b.meta(), &cfg()), 0.0);
        // all 100 samples above threshold: meta with a PEEP below the signal
        let b = breath(vec![20.0; 100], vec![20.0; 100]);
        let meta = BreathMetadata {
            peep: 5.0,
            pip: 20.0,
            ..*b.meta()
        };
        assert_relative_eq!(pressure_itime(&b, &meta, &cfg()), 2.0, max_relative = 1e-12);
    }

    fn hold_breath(hold_pressure: f64) -> Breath {
        // 0.6 s of inspiration, a 0.4 s zero-flow hold, then expiration
        let mut flow = vec![40.0; 30];
        let mut pressure: Vec<f64> = (0..30).map(|k| 8.0 + 0.5 * k as f64).collect();
        flow.extend(vec![0.0; 20]);
        pressure.extend(vec![hold_pressure; 20]);
        flow.extend((0..50).map(|k| -30.0 * (-(k as f64) / 10.0).exp()));
        pressure.extend(vec![5.0; 50]);
        breath(flow, pressure)
    }

    #[test]
    fn plateau_hold_detected() {
        let b = hold_breath(18.0);
        assert!(detect_plateau(&b, b.meta(), &cfg()));
    }

    #[test]
    fn plateau_requires_elevated_pressure() {
        let b = hold_breath(5.0);
        assert!(!detect_plateau(&b, b.meta(), &cfg()));
    }

    #[test]
    fn no_plateau_in_support_breath() {
        // decaying inspiratory flow, square pressure, no hold
        let mut flow: Vec<f64> = (0..50).map(|k| 60.0 * (-(k as f64) * 0.02 / 0.5).exp()).collect();
        let mut pressure = vec![15.0; 50];
        flow.extend((0..100).map(|k| -40.0 * (-(k as f64) * 0.02 / 0.4).exp() - 0.01));
        pressure.extend(vec![5.0; 100]);
        let b = breath(flow, pressure);
        assert!(!detect_plateau(&b, b.meta(), &cfg()));
    }

    #[test]
    fn short_hold_not_a_plateau() {
        let mut flow = vec![40.0; 30];
        let mut pressure = vec![15.0; 30];
        flow.extend(vec![0.0; 10]);
        pressure.extend(vec![15.0; 10]);
        flow.extend(vec![-20.0; 40]);
        pressure.extend(vec![5.0; 40]);
        let b = breath(flow, pressure);
        assert!(!detect_plateau(&b, b.meta(), &cfg()));
    }

    fn stats(itime: f64) -> BreathStats {
        BreathStats {
            slope_var: 3.0,
            pressure_var: 2.0,
            itime,
            pressure_itime: itime * 0.9,
            plateau: false,
        }
    }

    #[test]
    fn identical_breaths_have_zero_window_variance() {
        let f = window_features(&[stats(1.0); 5], &cfg());
        for v in &f {
            assert_eq!(v.f3_var_of_slope_var_w10, 0.0);
            assert_eq!(v.f4_itime_var_w10, 0.0);
            assert_eq!(v.f5_pressure_itime_var_w10, 0.0);
            assert_eq!(v.f7_pressure_itime_var_w100, 0.0);
            assert_eq!(v.f6_n_plateaus_w20, 0.0);
        }
    }

    #[test]
    fn first_breath_windows_degenerate() {
        let seq: Vec<_> = [1.0, 1.5, 0.7].iter().map(|t| stats(*t)).collect();
        let f = window_features(&seq, &cfg());
        assert_eq!(f[0].f3_var_of_slope_var_w10, 0.0);
        assert_eq!(f[0].f4_itime_var_w10, 0.0);
        assert_eq!(f[0].f5_pressure_itime_var_w10, 0.0);
        assert_eq!(f[0].f7_pressure_itime_var_w100, 0.0);
        assert!(f[1].f4_itime_var_w10 > 0.0);
    }

    #[test]
    fn alternating_itime_window() {
        let seq: Vec<_> = (0..120).map(|i| stats(if i % 2 == 0 { 1.0 } else { 1.2 })).collect();
        let f = window_features(&seq, &cfg());
        for v in &f[9..] {
            // five of each value in every full window: variance 0.1²
            assert_relative_eq!(v.f4_itime_var_w10, 0.01, max_relative = 1e-9);
        }
    }

    #[test]
    fn plateau_count_in_window() {
        let seq: Vec<_> = (0..40)
            .map(|i| BreathStats {
                plateau: i % 5 == 4,
                ..stats(1.0)
            })
            .collect();
        let f = window_features(&seq, &cfg());
        assert_eq!(f[19].f6_n_plateaus_w20, 4.0);
        assert_eq!(f[39].f6_n_plateaus_w20, 4.0);
        assert_eq!(f[4].f6_n_plateaus_w20, 1.0);
    }

    #[test]
    fn feature_dump_format() {
        let fv = FeatureVector::from_array([1.0, 2.5, 0.0, 0.0, 0.0, 3.0, 0.25]);
        let mut out = Vec::new();
        write_feature_dump(
            [FeatureDumpRow {
                file_id: "f1",
                breath_ordinal: 7,
                features: &fv,
                label: VentMode::Pav,
            }],
            &mut out,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{FEATURE_DUMP_HEADER}\nf1,7,1,2.5,0,0,0,3,0.25,pav\n")
        );
    }
}
