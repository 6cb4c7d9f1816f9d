//! Domain types shared across the toolkit: calibration records, risk levels,
//! thresholds, decisions and gate outcomes.
//!
//! Records are validated once at ingestion. Every record that exists carries a
//! finite uncertainty and a binary error label, so downstream order statistics
//! never have to deal with NaN.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result, RowError, RowIssue};

/// Per-model observation: uncertainty score and error indicator (`true` = prediction incorrect).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelScore {
    u: f64,
    err: bool,
}

impl ModelScore {
    pub fn new(u: f64, err: bool) -> Result<Self, RowIssue> {
        if !u.is_finite() {
            return Err(RowIssue::NonFiniteUncertainty);
        }
        Ok(Self { u, err })
    }

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    #[inline]
    pub fn err(&self) -> bool {
        self.err
    }
}

/// One single-model calibration or test observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    id: String,
    u: f64,
    err: bool,
}

impl Record {
    pub fn new(id: impl Into<String>, u: f64, err: bool) -> Result<Self, RowIssue> {
        let score = ModelScore::new(u, err)?;
        Ok(Self {
            id: id.into(),
            u: score.u,
            err: score.err,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    #[inline]
    pub fn err(&self) -> bool {
        self.err
    }

    pub fn score(&self) -> ModelScore {
        ModelScore {
            u: self.u,
            err: self.err,
        }
    }

    /// Returns a copy with the uncertainty replaced, re-checking finiteness.
    pub fn with_u(&self, u: f64) -> Result<Self, RowIssue> {
        Record::new(self.id.clone(), u, self.err)
    }
}

/// One observation scored by M models, in routing order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiRecord {
    id: String,
    scores: Vec<ModelScore>,
}

impl MultiRecord {
    pub fn new(id: impl Into<String>, scores: Vec<ModelScore>) -> Result<Self, RowIssue> {
        if scores.is_empty() {
            return Err(RowIssue::NoModels);
        }
        Ok(Self {
            id: id.into(),
            scores,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn models(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[ModelScore] {
        &self.scores
    }

    pub fn score(&self, model: usize) -> ModelScore {
        self.scores[model]
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.scores.iter().map(ModelScore::u).collect()
    }

    /// Single-model view of one model's column.
    pub fn project(&self, model: usize) -> Record {
        let s = self.scores[model];
        Record {
            id: self.id.clone(),
            u: s.u,
            err: s.err,
        }
    }
}

impl From<Record> for MultiRecord {
    fn from(r: Record) -> Self {
        MultiRecord {
            scores: vec![ModelScore { u: r.u, err: r.err }],
            id: r.id,
        }
    }
}

/// Unvalidated single-model row as it comes off disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub u: f64,
    pub err: f64,
}

impl From<&Record> for RawRecord {
    fn from(r: &Record) -> Self {
        RawRecord {
            id: r.id.clone(),
            u: r.u,
            err: if r.err { 1.0 } else { 0.0 },
        }
    }
}

/// Unvalidated multi-model row: `(u, err)` per model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMultiRecord {
    pub id: String,
    pub scores: Vec<(f64, f64)>,
}

impl From<&MultiRecord> for RawMultiRecord {
    fn from(r: &MultiRecord) -> Self {
        RawMultiRecord {
            id: r.id.clone(),
            scores: r
                .scores
                .iter()
                .map(|s| (s.u, if s.err { 1.0 } else { 0.0 }))
                .collect(),
        }
    }
}

fn parse_label(err: f64) -> Result<bool, RowIssue> {
    if err == 0.0 {
        Ok(false)
    } else if err == 1.0 {
        Ok(true)
    } else {
        Err(RowIssue::NonBinaryError)
    }
}

fn parse_score(u: f64, err: f64) -> Result<ModelScore, RowIssue> {
    let err = parse_label(err)?;
    ModelScore::new(u, err)
}

/// Validates raw rows, preserving order. Every failing row is reported.
pub fn validate_records(raw: &[RawRecord]) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(raw.len());
    let mut bad = Vec::new();
    for (i, row) in raw.iter().enumerate() {
        match parse_score(row.u, row.err) {
            Ok(s) => out.push(Record {
                id: row.id.clone(),
                u: s.u,
                err: s.err,
            }),
            Err(issue) => bad.push(RowError { row: i + 1, issue }),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::InvalidRecords(bad))
    }
}

/// Validates raw multi-model rows. All rows must carry the same number of models as the first.
pub fn validate_multi_records(raw: &[RawMultiRecord]) -> Result<Vec<MultiRecord>> {
    let expected = raw.first().map(|r| r.scores.len());
    let mut out = Vec::with_capacity(raw.len());
    let mut bad = Vec::new();
    for (i, row) in raw.iter().enumerate() {
        let parsed = if row.scores.is_empty() {
            Err(RowIssue::NoModels)
        } else if Some(row.scores.len()) != expected {
            Err(RowIssue::InconsistentModelCount {
                expected: expected.unwrap_or(0),
                found: row.scores.len(),
            })
        } else {
            row.scores
                .iter()
                .map(|&(u, e)| parse_score(u, e))
                .collect::<Result<Vec<_>, _>>()
        };
        match parsed {
            Ok(scores) => out.push(MultiRecord {
                id: row.id.clone(),
                scores,
            }),
            Err(issue) => bad.push(RowError { row: i + 1, issue }),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::InvalidRecords(bad))
    }
}

/// Number of models shared by every record, or a mismatch error.
pub fn model_count(records: &[MultiRecord]) -> Result<Option<usize>> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let m = first.models();
    if let Some(r) = records.iter().find(|r| r.models() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: r.models(),
        });
    }
    Ok(Some(m))
}

/// Stable ascending sort by uncertainty.
pub fn sort_by_uncertainty(records: &[Record]) -> Vec<Record> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.u.total_cmp(&b.u));
    sorted
}

macro_rules! unit_level {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(f64);

        impl $name {
            pub fn new(value: f64) -> Result<Self> {
                if value > 0.0 && value < 1.0 {
                    Ok(Self(value))
                } else {
                    Err(Error::OutOfUnitInterval { name: $label, value })
                }
            }

            #[inline]
            pub fn get(self) -> f64 {
                self.0
            }
        }

        impl TryFrom<f64> for $name {
            type Error = Error;
            fn try_from(value: f64) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                v.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }
    };
}

unit_level!(
    /// Target risk level, strictly inside (0, 1).
    Alpha,
    "alpha"
);
unit_level!(
    /// Confidence parameter of the baseline bounds, strictly inside (0, 1).
    Delta,
    "delta"
);

impl Default for Delta {
    fn default() -> Self {
        Delta(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub alpha: Alpha,
    #[serde(default)]
    pub delta: Delta,
}

impl RiskSpec {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        Ok(Self {
            alpha: Alpha::new(alpha)?,
            delta: Delta::new(delta)?,
        })
    }
}

/// Empirical constraint value `errors - alpha * selected`, i.e. the sum of
/// `Z_i - alpha * S_i` over a calibration set.
///
/// Every calibrator and every checker evaluates margins through this one
/// expression so that feasibility is decided identically everywhere.
#[inline]
pub fn linear_margin(errors: usize, selected: usize, alpha: Alpha) -> f64 {
    errors as f64 - alpha.get() * selected as f64
}

/// Right-hand side of the finite-sample condition.
pub const MARGIN_BUDGET: f64 = -1.0;

/// Acceptance threshold for one model. Selects `u` iff `u <= threshold`.
///
/// [`Threshold::BELOW_MIN`] selects nothing and is used to disable a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub const BELOW_MIN: Threshold = Threshold(f64::NEG_INFINITY);

    /// Panics on NaN; thresholds are built from validated uncertainties.
    pub fn at(value: f64) -> Self {
        assert!(!value.is_nan(), "threshold cannot be NaN");
        Threshold(value)
    }

    #[inline]
    pub fn selects(self, u: f64) -> bool {
        u <= self.0
    }

    pub fn is_below_min(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// `None` for the sentinel.
    pub fn value(self) -> Option<f64> {
        (!self.is_below_min()).then_some(self.0)
    }

    pub fn raw(self) -> f64 {
        self.0
    }
}

impl Eq for Threshold {}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => fmt::Display::fmt(&v, f),
            None => f.write_str(Threshold::SENTINEL_NAME),
        }
    }
}

impl Threshold {
    pub const SENTINEL_NAME: &'static str = "below_min";

    pub fn parse(s: &str) -> Option<Self> {
        if s == Self::SENTINEL_NAME {
            return Some(Self::BELOW_MIN);
        }
        s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Threshold)
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.value() {
            Some(v) => serializer.serialize_f64(v),
            None => serializer.serialize_str(Self::SENTINEL_NAME),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ThresholdVisitor;

        impl Visitor<'_> for ThresholdVisitor {
            type Value = Threshold;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or \"below_min\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                if v.is_finite() {
                    Ok(Threshold(v))
                } else {
                    Err(E::custom("threshold must be finite"))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                if v == Threshold::SENTINEL_NAME {
                    Ok(Threshold::BELOW_MIN)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(ThresholdVisitor)
    }
}

/// Diagnostics of a feasible calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    /// One threshold per model, in routing order.
    pub thresholds: Vec<Threshold>,
    pub accepted_on_cal: usize,
    pub errors_on_cal: usize,
    /// `errors_on_cal - alpha * accepted_on_cal`.
    pub margin: f64,
    /// Upper confidence bound at the threshold, for the bound-based baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// Outcome of a calibration. Infeasible decisions abstain on every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ThresholdDecision {
    Feasible(Calibrated),
    Infeasible,
}

impl ThresholdDecision {
    pub fn is_feasible(&self) -> bool {
        matches!(self, ThresholdDecision::Feasible(_))
    }

    pub fn calibrated(&self) -> Option<&Calibrated> {
        match self {
            ThresholdDecision::Feasible(c) => Some(c),
            ThresholdDecision::Infeasible => None,
        }
    }

    pub fn thresholds(&self) -> Option<&[Threshold]> {
        self.calibrated().map(|c| c.thresholds.as_slice())
    }

    /// Cascade gate: the first model whose uncertainty clears its threshold is
    /// credited. Infeasible decisions always abstain.
    ///
    /// Errors only on a length mismatch against a feasible decision.
    pub fn route(&self, u: &[f64]) -> Result<Gate> {
        let Some(th) = self.thresholds() else {
            return Ok(Gate::Abstain);
        };
        if th.len() != u.len() {
            return Err(Error::DimensionMismatch {
                expected: th.len(),
                found: u.len(),
            });
        }
        Ok(th
            .iter()
            .zip(u)
            .position(|(t, &u)| t.selects(u))
            .map_or(Gate::Abstain, Gate::Accept))
    }

    /// Gates a full record, echoing the credited model's error label.
    pub fn gate_record(&self, record: &MultiRecord) -> Result<GateOutcome> {
        let gate = self.route(&record.uncertainties())?;
        let err_if_accepted = match gate {
            Gate::Accept(m) => Some(record.score(m).err()),
            Gate::Abstain => None,
        };
        Ok(GateOutcome {
            gate,
            err_if_accepted,
        })
    }
}

/// Which model (0-based, routing order) is credited, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Accept(usize),
    Abstain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GateOutcome {
    pub gate: Gate,
    pub err_if_accepted: Option<bool>,
}

impl GateOutcome {
    pub fn abstain() -> Self {
        GateOutcome {
            gate: Gate::Abstain,
            err_if_accepted: None,
        }
    }

    /// System selection indicator `S`.
    pub fn selected(&self) -> bool {
        matches!(self.gate, Gate::Accept(_))
    }

    /// System error indicator `Z = S * err`.
    pub fn error(&self) -> bool {
        self.err_if_accepted == Some(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, u: f64, err: f64) -> RawRecord {
        RawRecord {
            id: id.into(),
            u,
            err,
        }
    }

    #[test]
    fn well_formed_row_is_accepted() {
        let out = validate_records(&[raw("1", 0.3, 0.0)]).unwrap();
        assert_eq!(out, vec![Record::new("1", 0.3, false).unwrap()]);
    }

    #[test]
    fn nan_uncertainty_is_rejected_with_row_index() {
        let err = validate_records(&[raw("1", f64::NAN, 0.0)]).unwrap_err();
        match err {
            Error::InvalidRecords(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].row, 1);
                assert_eq!(rows[0].issue.to_string(), "non-finite uncertainty");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_label_is_rejected() {
        let err = validate_records(&[raw("1", 0.3, 2.0)]).unwrap_err();
        match err {
            Error::InvalidRecords(rows) => {
                assert_eq!(rows[0].row, 1);
                assert_eq!(rows[0].issue.to_string(), "error label not binary");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_bad_row_is_reported() {
        let rows = [
            raw("a", 0.1, 0.0),
            raw("b", f64::INFINITY, 0.0),
            raw("c", 0.2, 0.5),
        ];
        let Error::InvalidRecords(bad) = validate_records(&rows).unwrap_err() else {
            panic!()
        };
        assert_eq!(bad.iter().map(|b| b.row).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn multi_rows_need_consistent_width() {
        let rows = [
            RawMultiRecord {
                id: "a".into(),
                scores: vec![(0.1, 0.0), (0.2, 1.0)],
            },
            RawMultiRecord {
                id: "b".into(),
                scores: vec![(0.1, 0.0)],
            },
        ];
        let Error::InvalidRecords(bad) = validate_multi_records(&rows).unwrap_err() else {
            panic!()
        };
        assert_eq!(bad[0].row, 2);
    }

    #[test]
    fn sort_is_ascending_and_stable() {
        let recs = vec![
            Record::new("x", 0.5, true).unwrap(),
            Record::new("y", 0.1, false).unwrap(),
        ];
        let s = sort_by_uncertainty(&recs);
        assert_eq!(s[0].id(), "y");
        assert_eq!(s[1].id(), "x");

        let sorted = sort_by_uncertainty(&s);
        assert_eq!(sorted, s);

        let ties = vec![
            Record::new("a", 0.2, false).unwrap(),
            Record::new("b", 0.2, true).unwrap(),
        ];
        let s = sort_by_uncertainty(&ties);
        assert_eq!(s[0].id(), "a");
        assert_eq!(s[1].id(), "b");
    }

    #[test]
    fn alpha_bounds_are_open() {
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(1.0).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        assert!(Alpha::new(0.5).is_ok());
        assert_eq!(Delta::default().get(), 0.05);
    }

    #[test]
    fn threshold_serde_handles_sentinel() {
        let th = vec![Threshold::at(0.25), Threshold::BELOW_MIN];
        let s = serde_json::to_string(&th).unwrap();
        assert_eq!(s, r#"[0.25,"below_min"]"#);
        let back: Vec<Threshold> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, th);
        assert!(!Threshold::BELOW_MIN.selects(-1e300));
    }

    #[test]
    fn infeasible_decision_abstains() {
        let d = ThresholdDecision::Infeasible;
        assert_eq!(d.route(&[0.0]).unwrap(), Gate::Abstain);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"status":"infeasible"}"#);
    }
}
