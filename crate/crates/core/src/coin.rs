//! Confidence-bound baselines: pick the largest threshold whose `(1 - delta)`
//! upper confidence bound on the selected-set error rate is at most `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::single::tie_groups;
use crate::special::reg_incomplete_beta;
use crate::types::{linear_margin, Alpha, Calibrated, Delta, Record, Threshold, ThresholdDecision};

/// Error count among `selected` calibration records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UcbQuery {
    errors: usize,
    selected: usize,
    delta: Delta,
}

impl UcbQuery {
    pub fn new(errors: usize, selected: usize, delta: Delta) -> Result<Self> {
        if selected == 0 {
            return Err(Error::EmptySelection);
        }
        if errors > selected {
            return Err(Error::InvalidParameter(format!(
                "error count {errors} exceeds selected count {selected}"
            )));
        }
        Ok(UcbQuery {
            errors,
            selected,
            delta,
        })
    }

    pub fn errors(&self) -> usize {
        self.errors
    }

    pub fn selected(&self) -> usize {
        self.selected
    }

    pub fn rate(&self) -> f64 {
        self.errors as f64 / self.selected as f64
    }
}

/// `min(1, rate + sqrt(ln(1/delta) / (2 n)))`.
pub fn hoeffding_ucb(q: &UcbQuery) -> f64 {
    let radius = ((1.0 / q.delta.get()).ln() / (2.0 * q.selected as f64)).sqrt();
    (q.rate() + radius).min(1.0)
}

const CP_MAX_ITER: usize = 200;
const CP_TOLERANCE: f64 = 1e-10;

/// One-sided exact (Clopper-Pearson) upper bound: the `p` at which
/// `P[Bin(n, p) <= k] = delta`.
///
/// Bisection on `[k/n, 1]` using `P[Bin(n, p) <= k] = 1 - I_p(k + 1, n - k)`,
/// which decreases in `p`. Returns the upper end of the final bracket.
pub fn clopper_pearson_ucb(q: &UcbQuery) -> f64 {
    let (k, n) = (q.errors, q.selected);
    if k == n {
        return 1.0;
    }
    let delta = q.delta.get();
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let cdf = |p: f64| 1.0 - reg_incomplete_beta(a, b, p).expect("shapes are positive");
    let (mut lo, mut hi) = (q.rate(), 1.0);
    for _ in 0..CP_MAX_ITER {
        if hi - lo <= CP_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cdf(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    ClopperPearson,
    Hoeffding,
}

impl Bound {
    pub fn ucb(self, q: &UcbQuery) -> f64 {
        match self {
            Bound::ClopperPearson => clopper_pearson_ucb(q),
            Bound::Hoeffding => hoeffding_ucb(q),
        }
    }
}

/// Bound value at one distinct-value candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UcbPoint {
    pub threshold: f64,
    pub selected: usize,
    pub errors: usize,
    pub ucb: f64,
}

/// Upper confidence bound at every tie-grouped candidate, ascending.
pub fn ucb_profile(records: &[Record], delta: Delta, bound: Bound) -> Vec<UcbPoint> {
    let (mut n, mut e) = (0usize, 0usize);
    tie_groups(records)
        .into_iter()
        .map(|g| {
            n += g.count;
            e += g.errors;
            let q = UcbQuery::new(e, n, delta).expect("non-empty prefix");
            UcbPoint {
                threshold: g.u,
                selected: n,
                errors: e,
                ucb: bound.ucb(&q),
            }
        })
        .collect()
}

/// Largest candidate whose bound is at most `alpha`.
///
/// The bound is not monotone in the threshold, so every candidate is checked.
pub fn calibrate_coin(records: &[Record], alpha: Alpha, delta: Delta, bound: Bound) -> ThresholdDecision {
    let profile = ucb_profile(records, delta, bound);
    match profile.iter().rev().find(|p| p.ucb <= alpha.get()) {
        Some(p) => ThresholdDecision::Feasible(Calibrated {
            thresholds: vec![Threshold::at(p.threshold)],
            accepted_on_cal: p.selected,
            errors_on_cal: p.errors,
            margin: linear_margin(p.errors, p.selected, alpha),
            bound: Some(p.ucb),
        }),
        None => ThresholdDecision::Infeasible,
    }
}
