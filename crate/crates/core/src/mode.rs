use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ventilation mode label attached to a breath.
///
/// The first five variants are the trainable classes in their fixed order.
/// `Other` covers annotated modes that are excluded from modelling
/// (PRVC, volume support, APRV, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VentMode {
    Vc,
    Pc,
    Ps,
    Cpap,
    Pav,
    Other,
}

pub const N_CLASSES: usize = 5;

/// Trainable classes in reporting order. Class indices used throughout the crate
/// (confusion matrices, leaf counts, vote vectors) follow this order.
pub const CLASSES: [VentMode; N_CLASSES] = [
    VentMode::Vc,
    VentMode::Pc,
    VentMode::Ps,
    VentMode::Cpap,
    VentMode::Pav,
];

impl VentMode {
    /// Every label including `Other`, in tie-breaking order.
    pub const ALL: [VentMode; 6] = [
        VentMode::Vc,
        VentMode::Pc,
        VentMode::Ps,
        VentMode::Cpap,
        VentMode::Pav,
        VentMode::Other,
    ];

    /// Index into [`CLASSES`], or `None` for `Other`.
    pub fn class_index(self) -> Option<usize> {
        match self {
            VentMode::Vc => Some(0),
            VentMode::Pc => Some(1),
            VentMode::Ps => Some(2),
            VentMode::Cpap => Some(3),
            VentMode::Pav => Some(4),
            VentMode::Other => None,
        }
    }

    /// Position in [`VentMode::ALL`]; total, used for tie-breaking.
    pub fn ordinal(self) -> usize {
        self.class_index().unwrap_or(N_CLASSES)
    }

    pub fn from_class_index(idx: usize) -> Option<VentMode> {
        CLASSES.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VentMode::Vc => "vc",
            VentMode::Pc => "pc",
            VentMode::Ps => "ps",
            VentMode::Cpap => "cpap",
            VentMode::Pav => "pav",
            VentMode::Other => "other",
        }
    }

    /// Case-insensitive mapping from an annotation string. Anything that is
    /// not one of the five modelled modes becomes `Other`.
    pub fn from_label(label: &str) -> VentMode {
        match label.trim().to_ascii_lowercase().as_str() {
            "vc" => VentMode::Vc,
            "pc" => VentMode::Pc,
            "ps" => VentMode::Ps,
            "cpap" => VentMode::Cpap,
            "pav" => VentMode::Pav,
            _ => VentMode::Other,
        }
    }
}

impl fmt::Display for VentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strict parse: only the six canonical names are accepted.
impl FromStr for VentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mode = VentMode::from_label(s);
        if mode == VentMode::Other && !s.trim().eq_ignore_ascii_case("other") {
            return Err(format!("unknown ventilation mode {s:?}"));
        }
        Ok(mode)
    }
}
