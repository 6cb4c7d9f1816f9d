//! Repeated random calibration/test splits and method comparison.
//!
//! Each split index `s` gets the sub-seed `derive_seed(seed, s)`; the split
//! permutation is drawn from that sub-seed alone, so every method and every
//! risk level in a comparison sees identical splits. Splits run in parallel
//! and are merged by index, which keeps results bit-identical to a serial run.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coin::{calibrate_coin, Bound};
use crate::error::{Error, Result};
use crate::routing::{calibrate_multi, calibrate_routing, first_feasible_pair, MultiSearch, Strategy, TiePolicy};
use crate::seeding::derive_seed;
use crate::single::calibrate_single;
use crate::types::{model_count, Alpha, Delta, MultiRecord, Record, Threshold, ThresholdDecision};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    Lec { model: usize },
    CoinCp { model: usize },
    CoinHfd { model: usize },
    /// Two-model routing, coverage-maximizing pair.
    LecRoute { tie_policy: TiePolicy },
    /// Two-model routing, first feasible pair of a descending grid scan.
    LecRouteScan,
    LecMulti { strategy: Strategy, tie_policy: TiePolicy },
}

impl Method {
    pub fn lec() -> Self {
        Method::Lec { model: 0 }
    }

    pub fn coin_cp() -> Self {
        Method::CoinCp { model: 0 }
    }

    pub fn coin_hfd() -> Self {
        Method::CoinHfd { model: 0 }
    }

    pub fn lec_route() -> Self {
        Method::LecRoute {
            tie_policy: TiePolicy::default(),
        }
    }

    fn base_id(&self) -> &'static str {
        match self {
            Method::Lec { .. } => "lec",
            Method::CoinCp { .. } => "coin-cp",
            Method::CoinHfd { .. } => "coin-hfd",
            Method::LecRoute { .. } => "lec-route",
            Method::LecRouteScan => "lec-route-scan",
            Method::LecMulti { .. } => "lec-multi",
        }
    }

    /// Builds a method from its CLI id. `model` is 0-based and only used by
    /// single-model methods.
    pub fn from_parts(id: &str, model: usize, strategy: Strategy, tie_policy: TiePolicy) -> Result<Self> {
        Ok(match id {
            "lec" => Method::Lec { model },
            "coin-cp" => Method::CoinCp { model },
            "coin-hfd" => Method::CoinHfd { model },
            "lec-route" => Method::LecRoute { tie_policy },
            "lec-route-scan" => Method::LecRouteScan,
            "lec-multi" => Method::LecMulti { strategy, tie_policy },
            other => return Err(Error::UnknownMethod(other.to_string())),
        })
    }

    fn single_model(&self) -> Option<usize> {
        match *self {
            Method::Lec { model } | Method::CoinCp { model } | Method::CoinHfd { model } => Some(model),
            _ => None,
        }
    }

    /// Models the method can credit; their correct answers form the power denominator.
    pub fn models_used(&self, models: usize) -> Vec<usize> {
        match self.single_model() {
            Some(m) => vec![m],
            None => (0..models).collect(),
        }
    }

    /// Calibrates on `cal`. Single-model methods return an `M`-vector with
    /// `BELOW_MIN` at every other model, so one cascade gate serves all methods.
    pub fn calibrate(&self, cal: &[MultiRecord], alpha: Alpha, delta: Delta) -> Result<ThresholdDecision> {
        let models = model_count(cal)?.unwrap_or(0);
        if let Some(m) = self.single_model() {
            if models > 0 && m >= models {
                return Err(Error::InvalidParameter(format!(
                    "model {} requested but records carry {models}",
                    m + 1
                )));
            }
            let projected: Vec<Record> = cal.iter().map(|r| r.project(m)).collect();
            let d = match self {
                Method::Lec { .. } => calibrate_single(&projected, alpha),
                Method::CoinCp { .. } => calibrate_coin(&projected, alpha, delta, Bound::ClopperPearson),
                Method::CoinHfd { .. } => calibrate_coin(&projected, alpha, delta, Bound::Hoeffding),
                _ => unreachable!(),
            };
            return Ok(embed(d, m, models));
        }
        let routed = match self {
            Method::LecRoute { tie_policy } => calibrate_routing(cal, alpha, *tie_policy)?,
            Method::LecRouteScan => first_feasible_pair(cal, alpha)?,
            Method::LecMulti { strategy, tie_policy } => {
                calibrate_multi(cal, alpha, &MultiSearch::new(*strategy).tie_policy(*tie_policy))?
            }
            _ => unreachable!(),
        };
        Ok(routed.decision)
    }
}

fn embed(decision: ThresholdDecision, model: usize, models: usize) -> ThresholdDecision {
    match decision {
        ThresholdDecision::Feasible(mut c) => {
            let mut th = vec![Threshold::BELOW_MIN; models.max(1)];
            th[model] = c.thresholds[0];
            c.thresholds = th;
            ThresholdDecision::Feasible(c)
        }
        ThresholdDecision::Infeasible => ThresholdDecision::Infeasible,
    }
}

impl fmt::Display for Method {
    /// `lec`, `lec@2` (1-based model), `lec-multi+coord`, ...
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base_id())?;
        match self {
            Method::Lec { model } | Method::CoinCp { model } | Method::CoinHfd { model } if *model > 0 => {
                write!(f, "@{}", model + 1)
            }
            Method::LecMulti { strategy, .. } => write!(f, "+{}", strategy.id()),
            _ => Ok(()),
        }?;
        match self {
            Method::LecRoute { tie_policy } | Method::LecMulti { tie_policy, .. }
                if *tie_policy != TiePolicy::default() =>
            {
                write!(f, "/{}", tie_policy.id())
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownMethod(s.to_string());
        let (rest, tie_policy) = match s.split_once('/') {
            Some((r, t)) => (r, TiePolicy::from_id(t).ok_or_else(unknown)?),
            None => (s, TiePolicy::default()),
        };
        let (rest, strategy) = match rest.split_once('+') {
            Some((r, st)) => (r, Strategy::from_id(st).ok_or_else(unknown)?),
            None => (rest, Strategy::Exact),
        };
        let (id, model) = match rest.split_once('@') {
            Some((id, m)) => {
                let m: usize = m.parse().map_err(|_| unknown())?;
                if m == 0 {
                    return Err(unknown());
                }
                (id, m - 1)
            }
            None => (rest, 0),
        };
        Method::from_parts(id, model, strategy, tie_policy)
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Splitting and aggregation settings shared by every method in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub delta: Delta,
    pub ratio: f64,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta: Delta::default(),
            ratio: 0.5,
            n_splits: 100,
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::OutOfUnitInterval {
                name: "ratio",
                value: self.ratio,
            });
        }
        if self.n_splits == 0 {
            return Err(Error::InvalidParameter("n_splits must be positive".into()));
        }
        Ok(())
    }
}

/// Calibration and test index sets for one split.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewRecords(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::OutOfUnitInterval { name: "ratio", value: ratio });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_cal = (ratio * n as f64).floor() as usize;
    let test = idx.split_off(n_cal);
    Ok((idx, test))
}

/// Seeded uniform split: the first `floor(ratio * n)` permuted records calibrate.
pub fn split<T: Clone>(records: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (cal, test) = split_indices(records.len(), ratio, seed)?;
    Ok((
        cal.iter().map(|&i| records[i].clone()).collect(),
        test.iter().map(|&i| records[i].clone()).collect(),
    ))
}

/// Test-time metrics of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    /// Accepted errors over accepted; `None` when nothing was accepted.
    pub test_fdr: Option<f64>,
    /// Accepted correct over correct; `None` when the test set has no correct answers.
    pub power: Option<f64>,
    pub accepted_total: usize,
    pub accepted_correct: usize,
    pub abstained: usize,
    pub correct_in_test: usize,
}

/// Gates every test record and counts outcomes. A record counts as correct
/// when at least one model in `models_used` answered it correctly.
pub fn test_metrics(test: &[MultiRecord], decision: &ThresholdDecision, models_used: &[usize]) -> Result<TestMetrics> {
    let (mut accepted, mut accepted_err, mut correct) = (0usize, 0usize, 0usize);
    for r in test {
        let o = decision.gate_record(r)?;
        if o.selected() {
            accepted += 1;
            accepted_err += usize::from(o.error());
        }
        if models_used.iter().any(|&m| !r.score(m).err()) {
            correct += 1;
        }
    }
    let accepted_correct = accepted - accepted_err;
    Ok(TestMetrics {
        test_fdr: (accepted > 0).then(|| accepted_err as f64 / accepted as f64),
        power: (correct > 0).then(|| accepted_correct as f64 / correct as f64),
        accepted_total: accepted,
        accepted_correct,
        abstained: test.len() - accepted,
        correct_in_test: correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split_index: usize,
    pub split_seed: u64,
    pub feasible: bool,
    #[serde(flatten)]
    pub metrics: TestMetrics,
    pub thresholds: Option<Vec<Threshold>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: Method,
    pub alpha: f64,
    pub delta: f64,
    pub n_splits: usize,
    /// Over splits that accepted something.
    pub fdr_mean: Option<f64>,
    pub fdr_std: Option<f64>,
    pub fdr_undefined: usize,
    /// Empty-selection splits counted as zero FDR.
    pub fdr_mean_zero_filled: Option<f64>,
    /// Over all splits with a defined power; infeasible splits count as zero.
    pub power_mean: Option<f64>,
    pub power_std: Option<f64>,
    pub power_undefined: usize,
    /// Over feasible splits only.
    pub power_mean_feasible: Option<f64>,
    pub feasibility_rate: f64,
    pub accepted_correct_mean: f64,
    pub accepted_total_mean: f64,
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Pure fold of a per-split table into a summary.
pub fn summarize(method: &Method, alpha: f64, delta: f64, splits: &[SplitReport]) -> EvalSummary {
    let fdrs: Vec<f64> = splits.iter().filter_map(|s| s.metrics.test_fdr).collect();
    let fdr_zero: Vec<f64> = splits.iter().map(|s| s.metrics.test_fdr.unwrap_or(0.0)).collect();
    let powers: Vec<f64> = splits.iter().filter_map(|s| s.metrics.power).collect();
    let powers_feasible: Vec<f64> = splits
        .iter()
        .filter(|s| s.feasible)
        .filter_map(|s| s.metrics.power)
        .collect();
    let (fdr_mean, fdr_std) = mean_std(&fdrs);
    let (power_mean, power_std) = mean_std(&powers);
    let n = splits.len();
    let per_split = |f: fn(&SplitReport) -> usize| {
        if n == 0 {
            0.0
        } else {
            splits.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    EvalSummary {
        method: method.clone(),
        alpha,
        delta,
        n_splits: n,
        fdr_mean,
        fdr_std,
        fdr_undefined: n - fdrs.len(),
        fdr_mean_zero_filled: mean_std(&fdr_zero).0,
        power_mean,
        power_std,
        power_undefined: n - powers.len(),
        power_mean_feasible: mean_std(&powers_feasible).0,
        feasibility_rate: per_split(|s| usize::from(s.feasible)),
        accepted_correct_mean: per_split(|s| s.metrics.accepted_correct),
        accepted_total_mean: per_split(|s| s.metrics.accepted_total),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub splits: Vec<SplitReport>,
}

/// Repeated-split evaluation of one method at one risk level.
pub fn repeated_eval(records: &[MultiRecord], method: &Method, alpha: Alpha, cfg: &EvalConfig) -> Result<Evaluation> {
    let mut rows = compare_methods(records, std::slice::from_ref(method), &[alpha], cfg)?;
    Ok(rows.pop().expect("one row"))
}

/// Every `(method, alpha)` pair on the same splits. Rows are ordered
/// method-major, then by `alphas` order.
pub fn compare_methods(
    records: &[MultiRecord],
    methods: &[Method],
    alphas: &[Alpha],
    cfg: &EvalConfig,
) -> Result<Vec<Evaluation>> {
    cfg.validate()?;
    let models = model_count(records)?.unwrap_or(0);
    let grid: Vec<(&Method, Alpha)> = methods
        .iter()
        .flat_map(|m| alphas.iter().map(move |&a| (m, a)))
        .collect();

    let per_split: Vec<Vec<SplitReport>> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|s| -> Result<Vec<SplitReport>> {
            let split_seed = derive_seed(cfg.seed, s as u64);
            let (cal, test) = split(records, cfg.ratio, split_seed)?;
            grid.iter()
                .map(|&(method, alpha)| {
                    let decision = method.calibrate(&cal, alpha, cfg.delta)?;
                    let metrics = test_metrics(&test, &decision, &method.models_used(models))?;
                    Ok(SplitReport {
                        split_index: s,
                        split_seed,
                        feasible: decision.is_feasible(),
                        metrics,
                        thresholds: decision.thresholds().map(<[Threshold]>::to_vec),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &(method, alpha))| {
            let splits: Vec<SplitReport> = per_split.iter().map(|row| row[g].clone()).collect();
            Evaluation {
                summary: summarize(method, alpha.get(), cfg.delta.get(), &splits),
                splits,
            }
        })
        .collect())
}
