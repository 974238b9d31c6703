//! Second-pass relabelling of per-breath predictions.
//!
//! Ventilator mode only changes when someone changes it, so an isolated
//! breath that disagrees with its neighbours is most likely a
//! misclassification.
//!
//! * Look-ahead: when breath `i` disagrees with the modal label of the
//!   previous `n` raw predictions, it takes the label held by at least a
//!   fraction `x` of the next `n` raw predictions (if any). A label is final
//!   once `n` further breaths have arrived.
//! * Look-behind: breath `i` takes the modal label of raw predictions
//!   `i-n ..= i`. No latency, but genuine switches lag by about `n/2`.
//!
//! Both rules read raw predictions only, so `s[i]` is a function of
//! `raw[i-n ..= i+n]`.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::VentMode;

const N_LABELS: usize = VentMode::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingVariant {
    #[default]
    LookAhead,
    LookBehind,
    None,
}

impl FromStr for SmoothingVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lookahead" => Ok(Self::LookAhead),
            "lookbehind" => Ok(Self::LookBehind),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown smoothing variant {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub n: usize,
    /// Fraction of the look-ahead window required to relabel.
    pub x: f64,
    pub variant: SmoothingVariant,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            n: 50,
            x: 0.6,
            variant: SmoothingVariant::LookAhead,
        }
    }
}

impl SmoothingConfig {
    pub fn none() -> Self {
        Self {
            variant: SmoothingVariant::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("smoothing window n must be at least 1".into()));
        }
        if !(self.x > 0.0 && self.x <= 1.0) {
            return Err(Error::InvalidConfig(format!("smoothing fraction x must be in (0, 1], got {}", self.x)));
        }
        Ok(())
    }
}

type Counts = [usize; N_LABELS];

/// Label with the highest count; ties go to `prefer` when it is among the
/// maxima, otherwise to the lowest label ordinal.
fn modal(counts: &Counts, prefer: Option<VentMode>) -> VentMode {
    let max = *counts.iter().max().unwrap_or(&0);
    if let Some(p) = prefer {
        if counts[p.ordinal()] == max {
            return p;
        }
    }
    VentMode::ALL[counts.iter().position(|c| *c == max).unwrap_or(0)]
}

/// The look-ahead decision for one breath given its neighbourhood counts.
fn look_ahead_decision(
    current: VentMode,
    previous: Option<VentMode>,
    behind: &Counts,
    ahead: &Counts,
    ahead_len: usize,
    x: f64,
) -> VentMode {
    let Some(prev) = previous else {
        return current;
    };
    if modal(behind, Some(prev)) == current || ahead_len == 0 {
        return current;
    }
    let best = modal(ahead, None);
    if ahead[best.ordinal()] as f64 / ahead_len as f64 >= x {
        best
    } else {
        current
    }
}

pub fn look_ahead_smooth(raw: &[VentMode], config: &SmoothingConfig) -> Vec<VentMode> {
    let n = config.n.max(1);
    let len = raw.len();
    let mut out = Vec::with_capacity(len);
    let mut behind: Counts = [0; N_LABELS];
    let mut ahead: Counts = [0; N_LABELS];
    // ahead window for i = 0 is raw[1 .. 1+n)
    for m in raw.iter().skip(1).take(n) {
        ahead[m.ordinal()] += 1;
    }
    for i in 0..len {
        if i > 0 {
            behind[raw[i - 1].ordinal()] += 1;
            if i > n {
                behind[raw[i - 1 - n].ordinal()] -= 1;
            }
            // slide the ahead window from [i, i+n) to [i+1, i+1+n)
            ahead[raw[i].ordinal()] -= 1;
            if i + n < len {
                ahead[raw[i + n].ordinal()] += 1;
            }
        }
        let ahead_len = (len - i - 1).min(n);
        let previous = i.checked_sub(1).map(|p| raw[p]);
        out.push(look_ahead_decision(raw[i], previous, &behind, &ahead, ahead_len, config.x));
    }
    out
}

pub fn look_behind_smooth(raw: &[VentMode], config: &SmoothingConfig) -> Vec<VentMode> {
    let n = config.n.max(1);
    let mut counts: Counts = [0; N_LABELS];
    let mut out = Vec::with_capacity(raw.len());
    for (i, m) in raw.iter().enumerate() {
        counts[m.ordinal()] += 1;
        if i > n {
            counts[raw[i - n - 1].ordinal()] -= 1;
        }
        out.push(modal(&counts, None));
    }
    out
}

pub fn smooth(raw: &[VentMode], config: &SmoothingConfig) -> Vec<VentMode> {
    match config.variant {
        SmoothingVariant::LookAhead => look_ahead_smooth(raw, config),
        SmoothingVariant::LookBehind => look_behind_smooth(raw, config),
        SmoothingVariant::None => raw.to_vec(),
    }
}

/// Worst-case delay (s) before a look-ahead label is final.
pub fn latency_bound(config: &SmoothingConfig, respiratory_rate_bpm: f64) -> f64 {
    config.n as f64 / (respiratory_rate_bpm / 60.0)
}

/// Incremental look-ahead smoothing for live use. Holds at most `2n + 1`
/// raw labels; each pushed label releases the breath `n` positions back.
#[derive(Debug, Clone)]
pub struct LookAheadStream {
    n: usize,
    x: f64,
    history: VecDeque<VentMode>,
    /// Index of `history[0]` in the full sequence.
    offset: usize,
    /// Next index to be finalised.
    next: usize,
}

impl LookAheadStream {
    pub fn new(config: &SmoothingConfig) -> Self {
        Self {
            n: config.n.max(1),
            x: config.x,
            history: VecDeque::new(),
            offset: 0,
            next: 0,
        }
    }

    /// Breaths received but not yet final.
    pub fn pending(&self) -> usize {
        self.offset + self.history.len() - self.next
    }

    fn decide(&self, i: usize, end: usize) -> VentMode {
        let at = |j: usize| self.history[j - self.offset];
        let mut behind: Counts = [0; N_LABELS];
        for j in i.saturating_sub(self.n)..i {
            behind[at(j).ordinal()] += 1;
        }
        let mut ahead: Counts = [0; N_LABELS];
        let ahead_end = end.min(i + 1 + self.n);
        for j in i + 1..ahead_end {
            ahead[at(j).ordinal()] += 1;
        }
        let previous = i.checked_sub(1).map(at);
        look_ahead_decision(at(i), previous, &behind, &ahead, ahead_end - i - 1, self.x)
    }

    /// Push the next raw label; returns `(index, smoothed)` if a breath
    /// became final.
    pub fn push(&mut self, label: VentMode) -> Option<(usize, VentMode)> {
        self.history.push_back(label);
        let end = self.offset + self.history.len();
        if end < self.next + self.n + 1 {
            return None;
        }
        let i = self.next;
        let out = self.decide(i, end);
        self.next += 1;
        while self.offset + self.n < self.next {
            self.history.pop_front();
            self.offset += 1;
        }
        Some((i, out))
    }

    /// End of sequence: finalise every pending breath.
    pub fn finish(mut self) -> Vec<(usize, VentMode)> {
        let end = self.offset + self.history.len();
        let mut out = Vec::new();
        while self.next < end {
            out.push((self.next, self.decide(self.next, end)));
            self.next += 1;
        }
        out
    }
}
