//! Joint threshold calibration for model cascades.
//!
//! A record is offered to models in routing order; the first model whose
//! uncertainty clears its threshold is credited and the rest are never
//! consulted. If none accepts, the system abstains. The system-level
//! indicators `S` (selected) and `Z` (selected and wrong) obey the same linear
//! constraint as the single-model case, `sum_i (Z_i - alpha * S_i) <= -1`, and
//! the calibrated vector is the feasible one that accepts the most calibration
//! records.
//!
//! Per-coordinate candidates are [`Threshold::BELOW_MIN`] plus the distinct
//! observed uncertainties of that model: the indicators are step functions
//! that only change at observed values.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::single::ConstraintCheck;
use crate::types::{
    linear_margin, model_count, Alpha, Calibrated, GateOutcome, MultiRecord, Threshold,
    ThresholdDecision, MARGIN_BUDGET,
};

/// System-level indicators for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndicatorPair {
    pub selected: bool,
    pub error: bool,
    pub credited: Option<usize>,
}

/// Cascade semantics for one record under a threshold vector.
pub fn system_indicators(record: &MultiRecord, thresholds: &[Threshold]) -> Result<IndicatorPair> {
    if thresholds.len() != record.models() {
        return Err(Error::DimensionMismatch {
            expected: record.models(),
            found: thresholds.len(),
        });
    }
    Ok(indicators_unchecked(record, thresholds, 0))
}

#[inline]
fn indicators_unchecked(record: &MultiRecord, thresholds: &[Threshold], from: usize) -> IndicatorPair {
    for (m, (s, t)) in record.scores().iter().zip(thresholds).enumerate().skip(from) {
        if t.selects(s.u()) {
            return IndicatorPair {
                selected: true,
                error: s.err(),
                credited: Some(m),
            };
        }
    }
    IndicatorPair {
        selected: false,
        error: false,
        credited: None,
    }
}

/// Evaluates `sum_i (Z_i - alpha * S_i)` at a threshold vector.
pub fn check_routing_constraint(
    records: &[MultiRecord],
    thresholds: &[Threshold],
    alpha: Alpha,
) -> Result<ConstraintCheck> {
    let (mut selected, mut errors) = (0usize, 0usize);
    for r in records {
        let ind = system_indicators(r, thresholds)?;
        selected += usize::from(ind.selected);
        errors += usize::from(ind.error);
    }
    Ok(ConstraintCheck::from_counts(errors, selected, alpha))
}

/// Order among coverage-maximizing feasible vectors.
///
/// `PreferEarly` prefers the largest first-model threshold, then the second,
/// and so on, so that as much traffic as possible resolves early.
/// `PreferLate` compares from the last model backwards. `FewestErrors` first
/// prefers the fewest calibration errors (the smallest margin), then falls
/// back to `PreferEarly`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    PreferEarly,
    PreferLate,
    FewestErrors,
}

impl TiePolicy {
    pub fn id(self) -> &'static str {
        match self {
            TiePolicy::PreferEarly => "prefer-early",
            TiePolicy::PreferLate => "prefer-late",
            TiePolicy::FewestErrors => "fewest-errors",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "prefer-early" => Some(TiePolicy::PreferEarly),
            "prefer-late" => Some(TiePolicy::PreferLate),
            "fewest-errors" => Some(TiePolicy::FewestErrors),
            _ => None,
        }
    }

    /// `Greater` when `(err_a, a)` should win over `(err_b, b)` at equal coverage.
    fn cmp_candidates(self, err_a: usize, a: &[Threshold], err_b: usize, b: &[Threshold]) -> Ordering {
        match self {
            TiePolicy::PreferEarly => a.cmp(b),
            TiePolicy::PreferLate => a.iter().rev().cmp(b.iter().rev()),
            TiePolicy::FewestErrors => err_b.cmp(&err_a).then_with(|| a.cmp(b)),
        }
    }
}

/// How a pair was chosen among feasible vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    /// Maximize calibration coverage.
    BestCover,
    /// First feasible pair in a descending lexicographic scan
    /// (largest first-model threshold first, then largest second).
    GridScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieBreak {
    pub policy: TiePolicy,
    /// Feasible vectors attaining the maximal coverage.
    pub tied_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub decision: ThresholdDecision,
    pub selection: PairSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_break: Option<TieBreak>,
}

impl RoutingDecision {
    pub fn coverage_on_cal(&self) -> usize {
        self.decision.calibrated().map_or(0, |c| c.accepted_on_cal)
    }
}

/// Cascade gate with calibrated thresholds.
pub fn gate_cascade(decision: &RoutingDecision, u: &[f64]) -> Result<GateOutcome> {
    let gate = decision.decision.route(u)?;
    Ok(GateOutcome {
        gate,
        err_if_accepted: None,
    })
}

/// Running best feasible vector under a tie policy.
#[derive(Debug, Clone)]
struct Best {
    coverage: usize,
    errors: usize,
    thresholds: Vec<Threshold>,
    tied: usize,
}

#[derive(Debug, Clone)]
struct Tracker {
    alpha: Alpha,
    policy: TiePolicy,
    best: Option<Best>,
}

impl Tracker {
    fn new(alpha: Alpha, policy: TiePolicy) -> Self {
        Tracker {
            alpha,
            policy,
            best: None,
        }
    }

    fn feasible(&self, errors: usize, coverage: usize) -> bool {
        linear_margin(errors, coverage, self.alpha) <= MARGIN_BUDGET
    }

    fn order(&self, cov: usize, err: usize, th: &[Threshold], best: &Best) -> Ordering {
        cov.cmp(&best.coverage)
            .then_with(|| self.policy.cmp_candidates(err, th, best.errors, &best.thresholds))
    }

    #[inline]
    fn offer(&mut self, errors: usize, coverage: usize, thresholds: impl FnOnce() -> Vec<Threshold>) {
        if !self.feasible(errors, coverage) {
            return;
        }
        match &mut self.best {
            None => {
                self.best = Some(Best {
                    coverage,
                    errors,
                    thresholds: thresholds(),
                    tied: 1,
                })
            }
            Some(best) if coverage < best.coverage => {}
            Some(best) => {
                let th = thresholds();
                let tied = if coverage == best.coverage { best.tied + 1 } else { 1 };
                let ord = coverage
                    .cmp(&best.coverage)
                    .then_with(|| self.policy.cmp_candidates(errors, &th, best.errors, &best.thresholds));
                if ord == Ordering::Greater {
                    *best = Best {
                        coverage,
                        errors,
                        thresholds: th,
                        tied,
                    };
                } else {
                    best.tied = tied;
                }
            }
        }
    }

    fn merge(mut self, other: Tracker) -> Tracker {
        self.best = match (self.best.take(), other.best) {
            (None, b) | (b, None) => b,
            (Some(a), Some(b)) => {
                let tied = if a.coverage == b.coverage { a.tied + b.tied } else { 0 };
                let mut winner = if self.order(b.coverage, b.errors, &b.thresholds, &a) == Ordering::Greater {
                    b
                } else {
                    a
                };
                if tied > 0 {
                    winner.tied = tied;
                }
                Some(winner)
            }
        };
        self
    }

    fn finish(self, selection: PairSelection) -> RoutingDecision {
        let policy = self.policy;
        match self.best {
            Some(b) => RoutingDecision {
                decision: ThresholdDecision::Feasible(Calibrated {
                    margin: linear_margin(b.errors, b.coverage, self.alpha),
                    thresholds: b.thresholds,
                    accepted_on_cal: b.coverage,
                    errors_on_cal: b.errors,
                    bound: None,
                }),
                selection,
                tie_break: Some(TieBreak {
                    policy,
                    tied_candidates: b.tied,
                }),
            },
            None => RoutingDecision {
                decision: ThresholdDecision::Infeasible,
                selection,
                tie_break: None,
            },
        }
    }
}

/// Ascending distinct values of one model's uncertainties.
fn distinct_values(records: &[MultiRecord], model: usize) -> Vec<f64> {
    let mut v: Vec<f64> = records.iter().map(|r| r.score(model).u()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `{BELOW_MIN} ∪ distinct observed values`, ascending.
pub fn candidate_grid(records: &[MultiRecord], model: usize) -> Vec<Threshold> {
    std::iter::once(Threshold::BELOW_MIN)
        .chain(distinct_values(records, model).into_iter().map(Threshold::at))
        .collect()
}

#[inline]
fn rank_of(values: &[f64], u: f64) -> usize {
    values
        .binary_search_by(|v| v.total_cmp(&u))
        .expect("value drawn from the same records")
}

fn require_models(records: &[MultiRecord], expected: usize) -> Result<bool> {
    match model_count(records)? {
        None => Ok(false),
        Some(m) if m == expected => Ok(true),
        Some(m) => Err(Error::DimensionMismatch { expected, found: m }),
    }
}

/// Precomputed state for the two-model search.
struct PairIndex {
    grid_a: Vec<Threshold>,
    values_b: Vec<f64>,
    /// Record indices by descending `u_a`.
    by_a_desc: Vec<usize>,
    rank_b: Vec<usize>,
    total_err_a: usize,
}

impl PairIndex {
    fn new(records: &[MultiRecord]) -> Self {
        let values_b = distinct_values(records, 1);
        let rank_b = records
            .iter()
            .map(|r| rank_of(&values_b, r.score(1).u()))
            .collect();
        let mut by_a_desc: Vec<usize> = (0..records.len()).collect();
        by_a_desc.sort_by(|&i, &j| records[j].score(0).u().total_cmp(&records[i].score(0).u()));
        PairIndex {
            grid_a: candidate_grid(records, 0),
            values_b,
            by_a_desc,
            rank_b,
            total_err_a: records.iter().filter(|r| r.score(0).err()).count(),
        }
    }

    /// Scans first-model candidates `range` in descending order. Records are
    /// moved into per-rank buckets of the second model as their `u_a` rises
    /// above the current first-model threshold, so each first-model candidate
    /// costs one prefix sweep over the second model's ranks.
    fn scan(&self, records: &[MultiRecord], range: Range<usize>, tracker: &mut Tracker) {
        let n = records.len();
        let nb = self.values_b.len();
        let mut cnt = vec![0usize; nb];
        let mut errs = vec![0usize; nb];
        let (mut routed, mut routed_err_a) = (0usize, 0usize);
        let mut next = 0usize;
        for ia in range.rev() {
            let la = self.grid_a[ia];
            while next < n {
                let i = self.by_a_desc[next];
                let s = records[i].score(0);
                if la.selects(s.u()) {
                    break;
                }
                routed += 1;
                routed_err_a += usize::from(s.err());
                cnt[self.rank_b[i]] += 1;
                errs[self.rank_b[i]] += usize::from(records[i].score(1).err());
                next += 1;
            }
            let cov_a = n - routed;
            let err_a = self.total_err_a - routed_err_a;
            tracker.offer(err_a, cov_a, || vec![la, Threshold::BELOW_MIN]);
            let (mut cov, mut err) = (cov_a, err_a);
            for rb in 0..nb {
                cov += cnt[rb];
                err += errs[rb];
                let lb = self.values_b[rb];
                tracker.offer(err, cov, || vec![la, Threshold::at(lb)]);
            }
        }
    }
}

/// Grid chunk handed to one worker. Fixed so results never depend on the thread count.
const PAIR_CHUNK: usize = 64;

/// Coverage-maximizing feasible pair for a two-model cascade.
///
/// Runs in `O(|A| * (n + |B|))` and splits first-model candidates across
/// worker threads; the reduction is order independent, so the answer is the
/// same as [`calibrate_routing_serial`].
pub fn calibrate_routing(
    records: &[MultiRecord],
    alpha: Alpha,
    tie_policy: TiePolicy,
) -> Result<RoutingDecision> {
    if !require_models(records, 2)? {
        return Ok(Tracker::new(alpha, tie_policy).finish(PairSelection::BestCover));
    }
    let index = PairIndex::new(records);
    let chunks: Vec<Range<usize>> = (0..index.grid_a.len())
        .step_by(PAIR_CHUNK)
        .map(|lo| lo..(lo + PAIR_CHUNK).min(index.grid_a.len()))
        .collect();
    let tracker = chunks
        .into_par_iter()
        .map(|range| {
            let mut t = Tracker::new(alpha, tie_policy);
            index.scan(records, range, &mut t);
            t
        })
        .reduce(|| Tracker::new(alpha, tie_policy), Tracker::merge);
    Ok(tracker.finish(PairSelection::BestCover))
}

/// Single-threaded twin of [`calibrate_routing`].
pub fn calibrate_routing_serial(
    records: &[MultiRecord],
    alpha: Alpha,
    tie_policy: TiePolicy,
) -> Result<RoutingDecision> {
    let mut tracker = Tracker::new(alpha, tie_policy);
    if require_models(records, 2)? {
        let index = PairIndex::new(records);
        index.scan(records, 0..index.grid_a.len(), &mut tracker);
    }
    Ok(tracker.finish(PairSelection::BestCover))
}

/// Reference `O(|A| * |B| * n)` scan evaluating every pair from scratch.
pub fn calibrate_routing_exhaustive(
    records: &[MultiRecord],
    alpha: Alpha,
    tie_policy: TiePolicy,
) -> Result<RoutingDecision> {
    let mut tracker = Tracker::new(alpha, tie_policy);
    if require_models(records, 2)? {
        let grid_a = candidate_grid(records, 0);
        let grid_b = candidate_grid(records, 1);
        for &la in &grid_a {
            for &lb in &grid_b {
                let th = [la, lb];
                let c = check_routing_constraint(records, &th, alpha)?;
                tracker.offer(c.errors, c.selected, || th.to_vec());
            }
        }
    }
    Ok(tracker.finish(PairSelection::BestCover))
}

/// First feasible pair of a descending lexicographic grid scan: largest `λa`
/// first and, within it, largest `λb` first. A coverage-agnostic baseline for
/// the best-cover rule.
pub fn first_feasible_pair(records: &[MultiRecord], alpha: Alpha) -> Result<RoutingDecision> {
    let infeasible = RoutingDecision {
        decision: ThresholdDecision::Infeasible,
        selection: PairSelection::GridScan,
        tie_break: None,
    };
    if !require_models(records, 2)? {
        return Ok(infeasible);
    }
    let index = PairIndex::new(records);
    let n = records.len();
    let nb = index.values_b.len();
    let mut cnt = vec![0usize; nb];
    let mut errs = vec![0usize; nb];
    let (mut routed, mut routed_err_a, mut next) = (0usize, 0usize, 0usize);
    for &la in index.grid_a.iter().rev() {
        while next < n {
            let i = index.by_a_desc[next];
            let s = records[i].score(0);
            if la.selects(s.u()) {
                break;
            }
            routed += 1;
            routed_err_a += usize::from(s.err());
            cnt[index.rank_b[i]] += 1;
            errs[index.rank_b[i]] += usize::from(records[i].score(1).err());
            next += 1;
        }
        let cov_a = n - routed;
        let err_a = index.total_err_a - routed_err_a;
        // Candidates in descending λb: all routed ranks included first.
        let (mut cov, mut err) = (n, err_a + errs.iter().sum::<usize>());
        debug_assert_eq!(cov, cov_a + cnt.iter().sum::<usize>());
        for rb in (0..=nb).rev() {
            let lb = if rb == 0 {
                Threshold::BELOW_MIN
            } else {
                Threshold::at(index.values_b[rb - 1])
            };
            let margin = linear_margin(err, cov, alpha);
            if margin <= MARGIN_BUDGET {
                return Ok(RoutingDecision {
                    decision: ThresholdDecision::Feasible(Calibrated {
                        thresholds: vec![la, lb],
                        accepted_on_cal: cov,
                        errors_on_cal: err,
                        margin,
                        bound: None,
                    }),
                    selection: PairSelection::GridScan,
                    tie_break: None,
                });
            }
            if rb > 0 {
                cov -= cnt[rb - 1];
                err -= errs[rb - 1];
            }
        }
    }
    Ok(infeasible)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Full product grid; limited to `exact_cap` models.
    Exact,
    /// Repeated single-coordinate re-optimization from all-`BELOW_MIN`.
    /// Always feasible when it returns a vector, not necessarily coverage optimal.
    CoordinateAscent,
}

impl Strategy {
    pub fn id(self) -> &'static str {
        match self {
            Strategy::Exact => "exact",
            Strategy::CoordinateAscent => "coord",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(Strategy::Exact),
            "coord" | "coordinate-ascent" => Some(Strategy::CoordinateAscent),
            _ => None,
        }
    }
}

pub const DEFAULT_EXACT_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSearch {
    pub strategy: Strategy,
    pub tie_policy: TiePolicy,
    pub exact_cap: usize,
    /// Models pinned to `BELOW_MIN`. Empty means all enabled.
    #[serde(default)]
    pub disabled: Vec<bool>,
}

impl MultiSearch {
    pub fn new(strategy: Strategy) -> Self {
        MultiSearch {
            strategy,
            tie_policy: TiePolicy::default(),
            exact_cap: DEFAULT_EXACT_CAP,
            disabled: Vec::new(),
        }
    }

    pub fn tie_policy(mut self, policy: TiePolicy) -> Self {
        self.tie_policy = policy;
        self
    }

    pub fn exact_cap(mut self, cap: usize) -> Self {
        self.exact_cap = cap;
        self
    }

    pub fn disable(mut self, models: usize, model: usize) -> Self {
        if self.disabled.len() < models {
            self.disabled.resize(models, false);
        }
        self.disabled[model] = true;
        self
    }

    fn is_disabled(&self, model: usize) -> bool {
        self.disabled.get(model).copied().unwrap_or(false)
    }
}

/// Coordinate `m` sweep with every other threshold fixed.
///
/// Records credited before `m` are constant. A record reaching `m` is either
/// accepted there (when `u_m <= λ_m`) or falls through to the later models
/// whose outcome does not depend on `λ_m`. Sweeping `λ_m` over the sorted grid
/// then costs `O(n + |grid|)`. `visit` receives `(errors, coverage, λ_m)`.
struct CoordinateSweep {
    values: Vec<Vec<f64>>,
    ranks: Vec<Vec<usize>>,
}

impl CoordinateSweep {
    fn new(records: &[MultiRecord], models: usize) -> Self {
        let values: Vec<Vec<f64>> = (0..models).map(|m| distinct_values(records, m)).collect();
        let ranks = (0..models)
            .map(|m| {
                records
                    .iter()
                    .map(|r| rank_of(&values[m], r.score(m).u()))
                    .collect()
            })
            .collect();
        CoordinateSweep { values, ranks }
    }

    fn sweep(
        &self,
        records: &[MultiRecord],
        thresholds: &[Threshold],
        m: usize,
        disabled: bool,
        mut visit: impl FnMut(usize, usize, Threshold),
    ) {
        let nv = self.values[m].len();
        let mut in_cnt = vec![0usize; nv];
        let mut in_err = vec![0usize; nv];
        let mut ft_cnt = vec![0usize; nv];
        let mut ft_err = vec![0usize; nv];
        let (mut fixed_cov, mut fixed_err, mut ft_cov_total, mut ft_err_total) = (0, 0, 0, 0);
        for (i, r) in records.iter().enumerate() {
            let before = indicators_unchecked(r, &thresholds[..m], 0);
            if before.selected {
                fixed_cov += 1;
                fixed_err += usize::from(before.error);
                continue;
            }
            let after = indicators_unchecked(r, thresholds, m + 1);
            let rank = self.ranks[m][i];
            in_cnt[rank] += 1;
            in_err[rank] += usize::from(r.score(m).err());
            ft_cnt[rank] += usize::from(after.selected);
            ft_err[rank] += usize::from(after.error);
            ft_cov_total += usize::from(after.selected);
            ft_err_total += usize::from(after.error);
        }
        visit(
            fixed_err + ft_err_total,
            fixed_cov + ft_cov_total,
            Threshold::BELOW_MIN,
        );
        if disabled {
            return;
        }
        let (mut cov, mut err) = (fixed_cov + ft_cov_total, fixed_err + ft_err_total);
        for rank in 0..nv {
            cov = cov + in_cnt[rank] - ft_cnt[rank];
            err = err + in_err[rank] - ft_err[rank];
            visit(err, cov, Threshold::at(self.values[m][rank]));
        }
    }
}

/// Coverage-maximizing calibration for an M-model cascade.
pub fn calibrate_multi(
    records: &[MultiRecord],
    alpha: Alpha,
    search: &MultiSearch,
) -> Result<RoutingDecision> {
    let mut tracker = Tracker::new(alpha, search.tie_policy);
    let Some(models) = model_count(records)? else {
        if search.strategy == Strategy::Exact && search.disabled.len() > search.exact_cap {
            return Err(Error::ExactSearchTooLarge {
                models: search.disabled.len(),
                cap: search.exact_cap,
            });
        }
        return Ok(tracker.finish(PairSelection::BestCover));
    };
    if !search.disabled.is_empty() && search.disabled.len() != models {
        return Err(Error::DimensionMismatch {
            expected: models,
            found: search.disabled.len(),
        });
    }
    let sweep = CoordinateSweep::new(records, models);
    match search.strategy {
        Strategy::Exact => {
            if models > search.exact_cap {
                return Err(Error::ExactSearchTooLarge {
                    models,
                    cap: search.exact_cap,
                });
            }
            exact_search(records, models, search, &sweep, &mut tracker);
        }
        Strategy::CoordinateAscent => {
            coordinate_ascent(records, models, search, &sweep, &mut tracker);
        }
    }
    Ok(tracker.finish(PairSelection::BestCover))
}

fn grid_for(sweep: &CoordinateSweep, search: &MultiSearch, m: usize) -> Vec<Threshold> {
    let mut g = vec![Threshold::BELOW_MIN];
    if !search.is_disabled(m) {
        g.extend(sweep.values[m].iter().copied().map(Threshold::at));
    }
    g
}

/// Odometer over the first `M - 1` coordinates with a sweep of the last.
fn exact_search(
    records: &[MultiRecord],
    models: usize,
    search: &MultiSearch,
    sweep: &CoordinateSweep,
    tracker: &mut Tracker,
) {
    let last = models - 1;
    let grids: Vec<Vec<Threshold>> = (0..last).map(|m| grid_for(sweep, search, m)).collect();
    let mut digits = vec![0usize; last];
    let mut th = vec![Threshold::BELOW_MIN; models];
    loop {
        for m in 0..last {
            th[m] = grids[m][digits[m]];
        }
        sweep.sweep(records, &th, last, search.is_disabled(last), |err, cov, t| {
            tracker.offer(err, cov, || {
                let mut v = th.clone();
                v[last] = t;
                v
            });
        });
        // Advance the odometer.
        let mut m = 0;
        loop {
            if m == last {
                return;
            }
            digits[m] += 1;
            if digits[m] < grids[m].len() {
                break;
            }
            digits[m] = 0;
            m += 1;
        }
    }
}

fn coordinate_ascent(
    records: &[MultiRecord],
    models: usize,
    search: &MultiSearch,
    sweep: &CoordinateSweep,
    tracker: &mut Tracker,
) {
    let mut current = vec![Threshold::BELOW_MIN; models];
    // (coverage, errors) of `current` when feasible.
    let mut state: Option<(usize, usize)> = None;
    loop {
        let mut changed = false;
        for m in 0..models {
            if search.is_disabled(m) {
                continue;
            }
            let mut local = Tracker::new(tracker.alpha, tracker.policy);
            sweep.sweep(records, &current, m, false, |err, cov, t| {
                let improves = match state {
                    None => true,
                    Some((c, e)) => cov > c || (cov == c && err < e),
                };
                if improves {
                    local.offer(err, cov, || {
                        let mut v = current.clone();
                        v[m] = t;
                        v
                    });
                }
            });
            if let Some(b) = local.best {
                current = b.thresholds;
                state = Some((b.coverage, b.errors));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some((cov, err)) = state {
        tracker.offer(err, cov, || current);
    }
}
