//! Single-model calibration under the linear expectation constraint.
//!
//! For a threshold `lambda`, the calibration set contributes the margin
//! `sum_{u_i <= lambda} (err_i - alpha)`. A threshold is feasible when that
//! margin is at most `-1`; the calibrated threshold is the largest feasible
//! one. Candidates are the distinct observed uncertainties. A tie group is
//! always selected as a whole because `u <= lambda` cannot split it.

use serde::Serialize;

use crate::types::{
    linear_margin, sort_by_uncertainty, Alpha, Calibrated, Gate, GateOutcome, Record, Threshold,
    ThresholdDecision, MARGIN_BUDGET,
};

/// Records sharing one uncertainty value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TieGroup {
    pub u: f64,
    pub count: usize,
    pub errors: usize,
}

/// Collapses records into ascending tie groups.
pub(crate) fn tie_groups(records: &[Record]) -> Vec<TieGroup> {
    let sorted = sort_by_uncertainty(records);
    let mut groups: Vec<TieGroup> = Vec::new();
    for r in &sorted {
        match groups.last_mut() {
            Some(g) if g.u == r.u() => {
                g.count += 1;
                g.errors += usize::from(r.err());
            }
            _ => groups.push(TieGroup {
                u: r.u(),
                count: 1,
                errors: usize::from(r.err()),
            }),
        }
    }
    groups
}

/// Cumulative constraint values at every distinct uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixMargin {
    /// Strictly increasing distinct uncertainty values.
    pub boundaries: Vec<f64>,
    pub group_counts: Vec<usize>,
    /// Records with `u <= boundaries[k]`.
    pub cum_counts: Vec<usize>,
    /// Errors among records with `u <= boundaries[k]`.
    pub cum_errors: Vec<usize>,
    pub cum_margin: Vec<f64>,
}

impl PrefixMargin {
    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Index of the largest boundary whose margin is within `budget`.
    fn last_within(&self, budget: f64) -> Option<usize> {
        self.cum_margin.iter().rposition(|&m| m <= budget)
    }
}

pub fn prefix_margins(records: &[Record], alpha: Alpha) -> PrefixMargin {
    let groups = tie_groups(records);
    let mut pm = PrefixMargin {
        boundaries: Vec::with_capacity(groups.len()),
        group_counts: Vec::with_capacity(groups.len()),
        cum_counts: Vec::with_capacity(groups.len()),
        cum_errors: Vec::with_capacity(groups.len()),
        cum_margin: Vec::with_capacity(groups.len()),
    };
    let (mut n, mut e) = (0usize, 0usize);
    for g in groups {
        n += g.count;
        e += g.errors;
        pm.boundaries.push(g.u);
        pm.group_counts.push(g.count);
        pm.cum_counts.push(n);
        pm.cum_errors.push(e);
        pm.cum_margin.push(linear_margin(e, n, alpha));
    }
    pm
}

/// Result of evaluating the empirical condition at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    pub margin: f64,
    pub selected: usize,
    pub errors: usize,
}

impl ConstraintCheck {
    pub(crate) fn from_counts(errors: usize, selected: usize, alpha: Alpha) -> Self {
        let margin = linear_margin(errors, selected, alpha);
        ConstraintCheck {
            satisfied: margin <= MARGIN_BUDGET,
            margin,
            selected,
            errors,
        }
    }
}

pub fn check_constraint(records: &[Record], lambda: Threshold, alpha: Alpha) -> ConstraintCheck {
    let (selected, errors) = records
        .iter()
        .filter(|r| lambda.selects(r.u()))
        .fold((0, 0), |(s, e), r| (s + 1, e + usize::from(r.err())));
    ConstraintCheck::from_counts(errors, selected, alpha)
}

/// Right-hand side used by the calibrator.
///
/// Only [`Correction::PlusOne`] carries the finite-sample guarantee.
/// [`Correction::Unsmoothed`] drops the `+1` and exists to show, by simulation,
/// that the correction is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    PlusOne,
    Unsmoothed,
}

impl Correction {
    pub fn budget(self) -> f64 {
        match self {
            Correction::PlusOne => MARGIN_BUDGET,
            Correction::Unsmoothed => 0.0,
        }
    }
}

/// Coverage-maximizing feasible threshold, or `Infeasible`.
pub fn calibrate_single(records: &[Record], alpha: Alpha) -> ThresholdDecision {
    calibrate_single_with(records, alpha, Correction::PlusOne)
}

pub fn calibrate_single_with(
    records: &[Record],
    alpha: Alpha,
    correction: Correction,
) -> ThresholdDecision {
    let pm = prefix_margins(records, alpha);
    match pm.last_within(correction.budget()) {
        Some(k) => ThresholdDecision::Feasible(Calibrated {
            thresholds: vec![Threshold::at(pm.boundaries[k])],
            accepted_on_cal: pm.cum_counts[k],
            errors_on_cal: pm.cum_errors[k],
            margin: pm.cum_margin[k],
            bound: None,
        }),
        None => ThresholdDecision::Infeasible,
    }
}

/// Smallest `alpha` at which [`calibrate_single`] is feasible.
///
/// Feasibility at group boundary `k` needs `E_k + 1 <= alpha * k`, so the
/// answer is `min_k (E_k + 1) / k`, nudged up to the first float for which the
/// margin as computed by [`linear_margin`] actually reaches `-1`.
pub fn min_feasible_alpha(records: &[Record]) -> Option<f64> {
    let groups = tie_groups(records);
    let (mut n, mut e) = (0usize, 0usize);
    let mut best: Option<f64> = None;
    for g in groups {
        n += g.count;
        e += g.errors;
        if e + 1 >= n {
            continue;
        }
        let need = (e + 1) as f64;
        let mut a = need / n as f64;
        while a * (n as f64) < need {
            a = a.next_up();
        }
        if best.is_none_or(|b| a < b) {
            best = Some(a);
        }
    }
    best.filter(|&a| a > 0.0 && a < 1.0)
}

/// Accept iff the decision is feasible and `u <= threshold`.
pub fn gate_single(decision: &ThresholdDecision, u: f64) -> GateOutcome {
    match decision.thresholds() {
        Some(th) if th[0].selects(u) => GateOutcome {
            gate: Gate::Accept(0),
            err_if_accepted: None,
        },
        _ => GateOutcome::abstain(),
    }
}
