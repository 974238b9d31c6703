//! Per-breath physiologic metadata: PEEP, PIP, inspiratory and expiratory
//! times and tidal volumes, derived from the raw flow and pressure samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SamplingSpec;

/// How PEEP is read off a breath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeepStrategy {
    /// Minimum pressure over the whole breath.
    #[default]
    Minimum,
    /// Mean of the last `k` expiratory samples.
    EndExpiratoryMean(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathMetadata {
    /// cmH2O
    pub peep: f64,
    /// cmH2O
    pub pip: f64,
    pub itime_s: f64,
    pub etime_s: f64,
    /// Inhaled volume in mL.
    pub tvi_ml: f64,
    /// Exhaled volume in mL.
    pub tve_ml: f64,
}

/// One breath: the raw channels plus everything derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Breath {
    flow: Vec<f64>,
    pressure: Vec<f64>,
    spec: SamplingSpec,
    x0_index: usize,
    meta: BreathMetadata,
}

impl Breath {
    pub fn new(flow: Vec<f64>, pressure: Vec<f64>, spec: SamplingSpec) -> Result<Self> {
        Self::with_strategy(flow, pressure, spec, PeepStrategy::Minimum)
    }

    pub fn with_strategy(
        flow: Vec<f64>,
        pressure: Vec<f64>,
        spec: SamplingSpec,
        peep: PeepStrategy,
    ) -> Result<Self> {
        let meta = compute_metadata_with(&flow, &pressure, spec, peep)?;
        let x0_index = find_x0(&flow);
        Ok(Self {
            flow,
            pressure,
            spec,
            x0_index,
            meta,
        })
    }

    pub fn flow(&self) -> &[f64] {
        &self.flow
    }

    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    pub fn spec(&self) -> SamplingSpec {
        self.spec
    }

    pub fn x0_index(&self) -> usize {
        self.x0_index
    }

    pub fn meta(&self) -> &BreathMetadata {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow.is_empty()
    }

    /// Inspiratory flow samples `[0, x0)`.
    pub fn inspiratory_flow(&self) -> &[f64] {
        &self.flow[..self.x0_index]
    }
}

/// Index of the first maximum of `values`.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inspiration to expiration boundary: the first sample strictly after peak
/// inspiratory flow whose flow is ≤ 0, or `flow.len()` when flow never
/// returns to zero.
pub fn find_x0(flow: &[f64]) -> usize {
    if flow.is_empty() {
        return 0;
    }
    let peak = argmax(flow);
    flow[peak + 1..]
        .iter()
        .position(|f| *f <= 0.0)
        .map_or(flow.len(), |p| peak + 1 + p)
}

pub fn compute_metadata(flow: &[f64], pressure: &[f64], spec: SamplingSpec) -> Result<BreathMetadata> {
    compute_metadata_with(flow, pressure, spec, PeepStrategy::Minimum)
}

pub fn compute_metadata_with(
    flow: &[f64],
    pressure: &[f64],
    spec: SamplingSpec,
    strategy: PeepStrategy,
) -> Result<BreathMetadata> {
    if flow.len() != pressure.len() {
        return Err(Error::Structural(format!(
            "flow has {} samples but pressure has {}",
            flow.len(),
            pressure.len()
        )));
    }
    if flow.len() < 2 {
        return Err(Error::DegenerateBreath { len: flow.len() });
    }
    let n = flow.len();
    let x0 = find_x0(flow);
    let dt = spec.dt_s();

    let min_pressure = pressure.iter().copied().fold(f64::INFINITY, f64::min);
    let peep = match strategy {
        PeepStrategy::Minimum => min_pressure,
        PeepStrategy::EndExpiratoryMean(k) => {
            let tail = &pressure[x0.min(n - 1)..];
            let tail = &tail[tail.len().saturating_sub(k.max(1))..];
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    };
    let pip = pressure[..x0]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(peep);

    // L/min · s → mL
    let to_ml = dt / 60.0 * 1000.0;
    let tvi_ml = flow[..x0].iter().map(|f| f.max(0.0)).sum::<f64>() * to_ml;
    let tve_ml = flow[x0..].iter().map(|f| (-f).max(0.0)).sum::<f64>() * to_ml;

    Ok(BreathMetadata {
        peep,
        pip,
        itime_s: x0 as f64 * dt,
        etime_s: (n - x0) as f64 * dt,
        tvi_ml,
        tve_ml,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec() -> SamplingSpec {
        SamplingSpec::new(50.0).unwrap()
    }

    #[test]
    fn x0_first_non_positive_after_peak() {
        assert_eq!(find_x0(&[10.0, 20.0, 30.0, -5.0, -10.0]), 3);
        assert_eq!(find_x0(&[5.0, 5.0, 5.0]), 3);
        assert_eq!(find_x0(&[-2.0, 15.0, 30.0, 15.0, 0.0, -20.0]), 4);
    }

    #[test]
    fn x0_ignores_trigger_dip() {
        // negative dip before the peak must not end inspiration
        let flow = [-3.0, -1.0, 10.0, 40.0, 20.0, 5.0, -8.0];
        assert_eq!(find_x0(&flow), 6);
    }

    #[test]
    fn constant_pressure() {
        let m = compute_metadata(&[10.0, 5.0, -5.0, -1.0], &[5.0; 4], spec()).unwrap();
        assert_eq!(m.peep, 5.0);
        assert_eq!(m.pip, 5.0);
    }

    #[test]
    fn rectangular_flow_one_second() {
        let mut flow = vec![30.0; 50];
        flow.extend(vec![0.0; 50]);
        let pressure = vec![5.0; 100];
        let m = compute_metadata(&flow, &pressure, spec()).unwrap();
        assert_eq!(find_x0(&flow), 50);
        assert_relative_eq!(m.tvi_ml, 500.0, max_relative = 1e-12);
        assert_relative_eq!(m.itime_s, 1.0, max_relative = 1e-12);
        assert_relative_eq!(m.etime_s, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn half_sine_volumes_match_closed_form() {
        // inspiration: A sin(pi t / Ti) for Ti = 1 s; expiration: -B sin(pi t / Te), Te = 2 s
        let (a, ti, b, te) = (60.0, 1.0, 30.0, 2.0);
        let dt = 0.02;
        let mut flow = Vec::new();
        let ni = (ti / dt) as usize;
        let ne = (te / dt) as usize;
        for k in 0..ni {
            flow.push(a * (std::f64::consts::PI * k as f64 * dt / ti).sin());
        }
        for k in 0..ne {
            flow.push(-b * (std::f64::consts::PI * k as f64 * dt / te).sin());
        }
        let pressure = vec![5.0; flow.len()];
        let m = compute_metadata(&flow, &pressure, spec()).unwrap();
        // ∫ A sin(pi t/T) dt = 2AT/pi (L/min · s) → mL
        let tvi = 2.0 * a * ti / std::f64::consts::PI / 60.0 * 1000.0;
        let tve = 2.0 * b * te / std::f64::consts::PI / 60.0 * 1000.0;
        assert_relative_eq!(m.tvi_ml, tvi, max_relative = 0.01);
        assert_relative_eq!(m.tve_ml, tve, max_relative = 0.01);
    }

    #[test]
    fn itime_from_x0() {
        let mut flow = vec![1.0; 50];
        flow[10] = 2.0;
        flow.extend(vec![-1.0; 25]);
        let m = compute_metadata(&flow, &vec![5.0; 75], spec()).unwrap();
        assert_relative_eq!(m.itime_s, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_breath_rejected() {
        assert!(matches!(
            compute_metadata(&[1.0], &[1.0], spec()),
            Err(Error::DegenerateBreath { len: 1 })
        ));
    }

    #[test]
    fn end_expiratory_peep_strategy() {
        let flow = [10.0, 30.0, 10.0, -10.0, -5.0, -1.0, 0.0];
        let pressure = [3.0, 20.0, 18.0, 8.0, 6.0, 6.0, 6.0];
        let m = compute_metadata_with(&flow, &pressure, spec(), PeepStrategy::EndExpiratoryMean(3))
            .unwrap();
        assert_relative_eq!(m.peep, 6.0);
        let m = compute_metadata(&flow, &pressure, spec()).unwrap();
        assert_relative_eq!(m.peep, 3.0);
    }

    fn breath_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec(-80.0f64..80.0, n),
                prop::collection::vec(0.0f64..40.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn flow_scaling_scales_volumes((flow, pressure) in breath_strategy(), k in 0.1f64..10.0) {
            let m = compute_metadata(&flow, &pressure, spec()).unwrap();
            let scaled: Vec<f64> = flow.iter().map(|f| f * k).collect();
            let ms = compute_metadata(&scaled, &pressure, spec()).unwrap();
            prop_assert_eq!(find_x0(&flow), find_x0(&scaled));
            prop_assert!((ms.tvi_ml - k * m.tvi_ml).abs() <= 1e-9 * (1.0 + ms.tvi_ml));
            prop_assert!((ms.tve_ml - k * m.tve_ml).abs() <= 1e-9 * (1.0 + ms.tve_ml));
        }

        #[test]
        fn metadata_invariants((flow, pressure) in breath_strategy()) {
            let m = compute_metadata(&flow, &pressure, spec()).unwrap();
            let x0 = find_x0(&flow);
            prop_assert!(x0 > 0 && x0 <= flow.len());
            prop_assert!(m.pip >= m.peep);
            prop_assert!(pressure.iter().all(|p| m.peep <= *p));
            prop_assert!(pressure[..x0].iter().all(|p| m.pip >= *p));
            prop_assert!(m.tvi_ml >= 0.0 && m.tve_ml >= 0.0);
            let total = flow.len() as f64 * spec().dt_s();
            prop_assert!((m.itime_s + m.etime_s - total).abs() <= spec().dt_s());
        }
    }
}
