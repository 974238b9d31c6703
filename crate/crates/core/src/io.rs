//! Text formats: marker-delimited waveform files, annotation CSV and the
//! predictions CSV.
//!
//! Waveform files hold one block per breath:
//!
//! ```text
//! BS, S:12
//! 4.52, 5.10
//! 10.33, 7.84
//! ...
//! BE
//! ```
//!
//! Each sample line is `<flow L/min>, <pressure cmH2O>`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::{VentMode, N_CLASSES};

pub const DEFAULT_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    rate_hz: f64,
    dt_s: f64,
}

impl SamplingSpec {
    pub fn new(rate_hz: f64) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("sampling rate must be positive, got {rate_hz}")));
        }
        Ok(Self {
            rate_hz,
            dt_s: 1.0 / rate_hz,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self::new(DEFAULT_RATE_HZ).expect("default rate is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBreathRecord {
    pub breath_ordinal: u64,
    pub flow: Vec<f64>,
    pub pressure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformFile {
    pub patient_id: String,
    pub file_id: String,
    pub spec: SamplingSpec,
    pub breaths: Vec<RawBreathRecord>,
    /// Unterminated breath blocks that were dropped while parsing.
    pub truncated: usize,
}

fn parse_sample(line: &str, line_no: usize) -> Result<(f64, f64)> {
    let mut parts = line.split(',');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected `<flow>, <pressure>`, got {line:?}"),
        });
    };
    let num = |tok: &str| -> Result<f64> {
        match tok.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                line: line_no,
                message: format!("invalid sample value {:?}", tok.trim()),
            }),
        }
    };
    Ok((num(a)?, num(b)?))
}

fn parse_breath_start(line: &str, line_no: usize) -> Result<u64> {
    // `BS, S:<ordinal>`
    let rest = line[2..].trim_start().trim_start_matches(',').trim();
    let ordinal = rest
        .strip_prefix("S:")
        .map(str::trim)
        .and_then(|s| s.parse::<u64>().ok());
    ordinal.ok_or_else(|| Error::Parse {
        line: line_no,
        message: format!("malformed breath start {line:?}"),
    })
}

/// Parse a waveform file. Only complete `BS … BE` blocks become breaths; a
/// block that is still open at end of input (or interrupted by another `BS`)
/// is dropped and counted in [`WaveformFile::truncated`].
pub fn parse_waveform_file<R: BufRead>(
    reader: R,
    patient_id: &str,
    file_id: &str,
    spec: SamplingSpec,
) -> Result<WaveformFile> {
    let mut breaths: Vec<RawBreathRecord> = Vec::new();
    let mut open: Option<RawBreathRecord> = None;
    let mut truncated = 0;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("BS") {
            if open.take().is_some() {
                truncated += 1;
            }
            let ordinal = parse_breath_start(line, line_no)?;
            if let Some(prev) = breaths.last() {
                if ordinal <= prev.breath_ordinal {
                    return Err(Error::Structural(format!(
                        "line {line_no}: breath ordinal {ordinal} does not increase (previous {})",
                        prev.breath_ordinal
                    )));
                }
            }
            open = Some(RawBreathRecord {
                breath_ordinal: ordinal,
                flow: Vec::new(),
                pressure: Vec::new(),
            });
        } else if line == "BE" {
            let Some(rec) = open.take() else {
                return Err(Error::Structural(format!("line {line_no}: BE without BS")));
            };
            if rec.flow.is_empty() {
                return Err(Error::Structural(format!(
                    "line {line_no}: breath {} has no samples",
                    rec.breath_ordinal
                )));
            }
            breaths.push(rec);
        } else {
            let (f, p) = parse_sample(line, line_no)?;
            let Some(rec) = open.as_mut() else {
                return Err(Error::Structural(format!("line {line_no}: sample outside a breath block")));
            };
            rec.flow.push(f);
            rec.pressure.push(p);
        }
    }
    if open.is_some() {
        truncated += 1;
    }
    if breaths.is_empty() {
        return Err(Error::Structural("no breaths".into()));
    }
    Ok(WaveformFile {
        patient_id: patient_id.to_string(),
        file_id: file_id.to_string(),
        spec,
        breaths,
        truncated,
    })
}

/// Inverse of [`parse_waveform_file`]. Samples are written with the shortest
/// representation that parses back to the identical `f64`.
pub fn write_waveform_file<W: Write>(file: &WaveformFile, mut sink: W) -> Result<()> {
    for b in &file.breaths {
        writeln!(sink, "BS, S:{}", b.breath_ordinal)?;
        for (f, p) in b.flow.iter().zip(&b.pressure) {
            writeln!(sink, "{f}, {p}")?;
        }
        writeln!(sink, "BE")?;
    }
    sink.flush()?;
    Ok(())
}

/// Pass-through event flags carried alongside the mode label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BreathFlags {
    pub pva: bool,
    pub suction: bool,
    pub cough: bool,
}

impl BreathFlags {
    pub const NONE: BreathFlags = BreathFlags {
        pva: false,
        suction: false,
        cough: false,
    };

    pub fn parse(field: &str) -> std::result::Result<Self, String> {
        let mut flags = BreathFlags::default();
        for tok in field.split('|').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "pva" => flags.pva = true,
                "suction" => flags.suction = true,
                "cough" => flags.cough = true,
                other => return Err(format!("unknown flag {other:?}")),
            }
        }
        Ok(flags)
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::NONE
    }
}

impl fmt::Display for BreathFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.pva, "pva"), (self.suction, "suction"), (self.cough, "cough")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreathAnnotation {
    pub file_id: String,
    pub breath_ordinal: u64,
    pub mode: VentMode,
    pub flags: BreathFlags,
}

pub const ANNOTATION_HEADER: [&str; 4] = ["file_id", "breath_ordinal", "mode", "flags"];

/// Parse an annotation CSV with header `file_id,breath_ordinal,mode,flags`.
/// Columns are located by name; unknown modes become [`VentMode::Other`].
pub fn parse_annotations<R: Read>(reader: R) -> Result<Vec<BreathAnnotation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(ANNOTATION_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))?;
    }

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record.position().map_or(idx + 2, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("");
        let file_id = field(cols[0]).to_string();
        let breath_ordinal = field(cols[1]).parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid breath_ordinal {:?}", field(cols[1])),
        })?;
        let mode = VentMode::from_label(field(cols[2]));
        let flags = BreathFlags::parse(field(cols[3])).map_err(|message| Error::Parse { line, message })?;
        if !seen.insert((file_id.clone(), breath_ordinal)) {
            return Err(Error::DuplicateAnnotation {
                file_id,
                breath_ordinal,
            });
        }
        out.push(BreathAnnotation {
            file_id,
            breath_ordinal,
            mode,
            flags,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(annotations: &[BreathAnnotation], mut sink: W) -> Result<()> {
    writeln!(sink, "{}", ANNOTATION_HEADER.join(","))?;
    for a in annotations {
        writeln!(sink, "{},{},{},{}", a.file_id, a.breath_ordinal, a.mode, a.flags)?;
    }
    sink.flush()?;
    Ok(())
}

/// One line of the predictions CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub file_id: String,
    pub breath_ordinal: u64,
    pub raw_mode: VentMode,
    pub smoothed_mode: VentMode,
    /// Fraction of trees voting for each class, in class order.
    pub votes: [f64; N_CLASSES],
}

pub const PREDICTIONS_HEADER: &str =
    "file_id,breath_ordinal,raw_mode,smoothed_mode,p_vc,p_pc,p_ps,p_cpap,p_pav";

pub fn write_predictions<W: Write>(rows: &[PredictionRow], mut sink: W) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        let sum: f64 = row.votes.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidVotes { row: i, sum });
        }
    }
    writeln!(sink, "{PREDICTIONS_HEADER}")?;
    for row in rows {
        write!(
            sink,
            "{},{},{},{}",
            row.file_id, row.breath_ordinal, row.raw_mode, row.smoothed_mode
        )?;
        for v in row.votes {
            write!(sink, ",{v:.6}")?;
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != PREDICTIONS_HEADER {
        return Err(Error::Schema(format!("unexpected predictions header {:?}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let bad = |message: String| Error::Parse { line, message };
        let mode = |s: &str| s.parse::<VentMode>().map_err(bad);
        let mut votes = [0.0; N_CLASSES];
        for (k, v) in votes.iter_mut().enumerate() {
            *v = record[4 + k]
                .parse()
                .map_err(|_| bad(format!("invalid vote fraction {:?}", &record[4 + k])))?;
        }
        rows.push(PredictionRow {
            file_id: record[0].to_string(),
            breath_ordinal: record[1]
                .parse()
                .map_err(|_| bad(format!("invalid breath_ordinal {:?}", &record[1])))?,
            raw_mode: mode(&record[2])?,
            smoothed_mode: mode(&record[3])?,
            votes,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(ordinal: u64, n: usize) -> String {
        let mut s = format!("BS, S:{ordinal}\n");
        for i in 0..n {
            s.push_str(&format!("{}, {}\n", i as f64 * 0.5, 5.0 + i as f64 * 0.25));
        }
        s.push_str("BE\n");
        s
    }

    fn parse(text: &str) -> Result<WaveformFile> {
        parse_waveform_file(text.as_bytes(), "p1", "f1", SamplingSpec::default())
    }

    #[test]
    fn sampling_spec_reciprocal() {
        let s = SamplingSpec::new(50.0).unwrap();
        assert!((s.dt_s() * s.rate_hz() - 1.0).abs() <= f64::EPSILON);
        assert!(SamplingSpec::new(0.0).is_err());
    }

    #[test]
    fn two_breaths() {
        let text = block(0, 100) + &block(1, 100);
        let f = parse(&text).unwrap();
        assert_eq!(f.breaths.len(), 2);
        assert!(f.breaths.iter().all(|b| b.flow.len() == 100 && b.pressure.len() == 100));
        assert_eq!(f.truncated, 0);
    }

    #[test]
    fn empty_stream_has_no_breaths() {
        match parse("") {
            Err(Error::Structural(msg)) => assert_eq!(msg, "no breaths"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let mut lines: Vec<String> = block(0, 10).lines().map(str::to_string).collect();
        // line 7 is the 6th sample of the block
        lines[6] = "3.5, abc".into();
        match parse(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn end_without_start() {
        assert!(matches!(parse("BE\n"), Err(Error::Structural(_))));
    }

    #[test]
    fn truncated_final_breath_is_dropped() {
        let text = block(0, 10) + "BS, S:1\n1.0, 2.0\n";
        let f = parse(&text).unwrap();
        assert_eq!(f.breaths.len(), 1);
        assert_eq!(f.truncated, 1);
    }

    #[test]
    fn ordinals_must_increase() {
        let text = block(3, 5) + &block(3, 5);
        assert!(matches!(parse(&text), Err(Error::Structural(_))));
    }

    #[test]
    fn annotation_rows() {
        let csv = "file_id,breath_ordinal,mode,flags\nf1,0,vc,\nf1,3,prvc,\nf1,4,ps,pva|cough\n";
        let a = parse_annotations(csv.as_bytes()).unwrap();
        assert_eq!(
            a[0],
            BreathAnnotation {
                file_id: "f1".into(),
                breath_ordinal: 0,
                mode: VentMode::Vc,
                flags: BreathFlags::NONE,
            }
        );
        assert_eq!(a[1].mode, VentMode::Other);
        assert!(a[2].flags.pva && a[2].flags.cough && !a[2].flags.suction);
    }

    #[test]
    fn annotation_errors() {
        let missing = "file_id,breath_ordinal,flags\nf1,0,\n";
        assert!(matches!(parse_annotations(missing.as_bytes()), Err(Error::Schema(_))));
        let dup = "file_id,breath_ordinal,mode,flags\nf1,5,vc,\nf1,5,pc,\n";
        assert!(matches!(
            parse_annotations(dup.as_bytes()),
            Err(Error::DuplicateAnnotation { breath_ordinal: 5, .. })
        ));
        let bad_flag = "file_id,breath_ordinal,mode,flags\nf1,5,vc,sneeze\n";
        assert!(matches!(parse_annotations(bad_flag.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn predictions_single_row() {
        let row = PredictionRow {
            file_id: "f1".into(),
            breath_ordinal: 0,
            raw_mode: VentMode::Vc,
            smoothed_mode: VentMode::Vc,
            votes: [1.0, 0.0, 0.0, 0.0, 0.0],
        };
        let mut out = Vec::new();
        write_predictions(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            format!("{PREDICTIONS_HEADER}\nf1,0,vc,vc,1.000000,0.000000,0.000000,0.000000,0.000000\n")
        );
    }

    #[test]
    fn predictions_header_only() {
        let mut out = Vec::new();
        write_predictions(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{PREDICTIONS_HEADER}\n"));
    }

    #[test]
    fn predictions_reject_bad_votes() {
        let row = PredictionRow {
            file_id: "f1".into(),
            breath_ordinal: 0,
            raw_mode: VentMode::Vc,
            smoothed_mode: VentMode::Vc,
            votes: [0.5, 0.0, 0.0, 0.0, 0.0],
        };
        assert!(matches!(
            write_predictions(&[row], Vec::new()),
            Err(Error::InvalidVotes { row: 0, .. })
        ));
    }

    #[test]
    fn predictions_round_trip() {
        let rows = vec![
            PredictionRow {
                file_id: "a".into(),
                breath_ordinal: 1,
                raw_mode: VentMode::Pc,
                smoothed_mode: VentMode::Ps,
                votes: [0.1, 0.5, 0.4, 0.0, 0.0],
            },
            PredictionRow {
                file_id: "a".into(),
                breath_ordinal: 2,
                raw_mode: VentMode::Cpap,
                smoothed_mode: VentMode::Cpap,
                votes: [0.0, 0.0, 0.25, 0.75, 0.0],
            },
            PredictionRow {
                file_id: "b".into(),
                breath_ordinal: 9,
                raw_mode: VentMode::Pav,
                smoothed_mode: VentMode::Pav,
                votes: [0.0, 0.0, 0.0, 0.0, 1.0],
            },
        ];
        let mut out = Vec::new();
        write_predictions(&rows, &mut out).unwrap();
        assert_eq!(read_predictions(out.as_slice()).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn waveform_round_trip(
            breaths in prop::collection::vec(
                prop::collection::vec((-200.0f64..200.0, -10.0f64..80.0), 1..60),
                1..8,
            )
        ) {
            let file = WaveformFile {
                patient_id: "p".into(),
                file_id: "f".into(),
                spec: SamplingSpec::default(),
                breaths: breaths
                    .iter()
                    .enumerate()
                    .map(|(i, s)| RawBreathRecord {
                        breath_ordinal: 2 * i as u64,
                        flow: s.iter().map(|x| x.0).collect(),
                        pressure: s.iter().map(|x| x.1).collect(),
                    })
                    .collect(),
                truncated: 0,
            };
            let mut out = Vec::new();
            write_waveform_file(&file, &mut out).unwrap();
            let back = parse_waveform_file(out.as_slice(), "p", "f", SamplingSpec::default()).unwrap();
            prop_assert_eq!(back, file);
        }
    }
}
