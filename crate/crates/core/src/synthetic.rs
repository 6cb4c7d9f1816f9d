//! Synthetic exchangeable data with known ground truth, an analytic FDR
//! oracle, and Monte Carlo checks of the finite-sample guarantees.
//!
//! Uncertainties live on `[0, 1]`, split into `B` equal-width bins. A model
//! profile puts mixture weight `w_b` on bin `b` (uniform within the bin) and
//! errs with probability `p_b` there. Because both are piecewise constant the
//! population FDR at any threshold is a finite sum.
//!
//! Paired draws couple the two models through their quantile levels: with
//! probability `|rho|` both models share one uniform level (reversed for
//! negative `rho`), otherwise the levels are independent. The population
//! Spearman correlation of `(u_a, u_b)` is then exactly `rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{calibrate_routing, TiePolicy};
use crate::seeding::derive_seed;
use crate::single::{calibrate_single_with, Correction};
use crate::types::{Alpha, ModelScore, MultiRecord, Record, ThresholdDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    /// Mixture weight per bin; sums to 1.
    pub weights: Vec<f64>,
    /// `P(err = 1 | u in bin)`.
    pub err_prob: Vec<f64>,
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

impl ModelProfile {
    pub fn new(weights: Vec<f64>, err_prob: Vec<f64>) -> Result<Self> {
        let p = ModelProfile { weights, err_prob };
        p.validate()?;
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.weights.is_empty() || self.weights.len() != self.err_prob.len() {
            return bad(format!(
                "profile needs matching non-empty weights and err_prob, got {} and {}",
                self.weights.len(),
                self.err_prob.len()
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("mixture weights must be finite and non-negative".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return bad(format!("mixture weights sum to {total}, not 1"));
        }
        if self.err_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("error probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn bin_width(&self) -> f64 {
        1.0 / self.bins() as f64
    }

    /// Inverse CDF of the uncertainty mixture. Returns `(u, bin)`.
    fn quantile(&self, level: f64) -> (f64, usize) {
        let width = self.bin_width();
        let mut acc = 0.0;
        let last = self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (b, &w) in self.weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if level < acc + w || b == last {
                let frac = ((level - acc) / w).clamp(0.0, 1.0);
                let lo = b as f64 * width;
                let u = (lo + frac * width).min(lo + width * (1.0 - f64::EPSILON));
                return (u, b);
            }
            acc += w;
        }
        unreachable!("weights sum to one")
    }

    fn draw_at<R: Rng>(&self, level: f64, rng: &mut R) -> ModelScore {
        let (u, bin) = self.quantile(level);
        let err = rng.gen_bool(self.err_prob[bin]);
        ModelScore::new(u, err).expect("quantile is finite")
    }

    /// Overall error rate `sum_b w_b p_b`.
    pub fn base_error_rate(&self) -> f64 {
        self.weights.iter().zip(&self.err_prob).map(|(w, p)| w * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub model: ModelProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<ModelProfile>,
    /// Rank coupling of the two models' uncertainties, in `[-1, 1]`.
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GenSpec {
    pub fn single(model: ModelProfile, seed: u64) -> Self {
        GenSpec {
            model,
            second: None,
            rho: 0.0,
            seed,
        }
    }

    pub fn paired(model: ModelProfile, second: ModelProfile, rho: f64, seed: u64) -> Self {
        GenSpec {
            model,
            second: Some(second),
            rho,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(s) = &self.second {
            s.validate()?;
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }

    fn second(&self) -> Result<&ModelProfile> {
        self.second
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("spec has no second model".into()))
    }
}

/// Ten-bin profile shaped like typical LLM uncertainty histograms: correct
/// answers concentrate at low uncertainty, errors occur in every bin.
pub fn default_profile() -> ModelProfile {
    ModelProfile {
        weights: vec![0.30, 0.18, 0.12, 0.09, 0.07, 0.06, 0.05, 0.05, 0.04, 0.04],
        err_prob: vec![0.02, 0.04, 0.07, 0.12, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70],
    }
}

pub fn default_spec(seed: u64) -> GenSpec {
    GenSpec::single(default_profile(), seed)
}

/// Second model for routing experiments: less accurate overall, but its
/// uncertainty separates correct from wrong answers more sharply.
pub fn sharp_profile() -> ModelProfile {
    ModelProfile {
        weights: vec![0.20, 0.10, 0.08, 0.07, 0.07, 0.08, 0.10, 0.10, 0.10, 0.10],
        err_prob: vec![0.0, 0.01, 0.03, 0.08, 0.25, 0.55, 0.80, 0.90, 0.95, 0.98],
    }
}

/// Accurate first model whose uncertainty separates weakly.
pub fn flat_profile() -> ModelProfile {
    ModelProfile {
        weights: vec![0.10; 10],
        err_prob: vec![0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14, 0.15],
    }
}

pub fn default_paired_spec(rho: f64, seed: u64) -> GenSpec {
    GenSpec::paired(default_profile(), sharp_profile(), rho, seed)
}

/// Accurate but weakly separating first model, sharp second model.
pub fn complementary_paired_spec(rho: f64, seed: u64) -> GenSpec {
    GenSpec::paired(flat_profile(), sharp_profile(), rho, seed)
}

/// Error probability climbing through `alpha = 0.1` across five bins. At
/// small calibration sizes, dropping the `+1` from the condition lets the
/// threshold run into the error-dense bins.
pub fn adversarial_profile() -> ModelProfile {
    ModelProfile {
        weights: vec![0.2; 5],
        err_prob: vec![0.0, 0.05, 0.15, 0.30, 0.60],
    }
}

/// `n` i.i.d. single-model records drawn with `rng`.
pub fn sample_single<R: Rng>(profile: &ModelProfile, n: usize, rng: &mut R) -> Vec<Record> {
    (0..n)
        .map(|i| {
            let s = profile.draw_at(rng.gen::<f64>(), rng);
            Record::new(format!("s{i}"), s.u(), s.err()).expect("finite draw")
        })
        .collect()
}

/// `n` i.i.d. paired records drawn with `rng`.
pub fn sample_paired<R: Rng>(spec: &GenSpec, n: usize, rng: &mut R) -> Result<Vec<MultiRecord>> {
    let second = spec.second()?;
    let coupling = spec.rho.abs();
    Ok((0..n)
        .map(|i| {
            let va: f64 = rng.gen();
            let vb = if coupling > 0.0 && rng.gen_bool(coupling) {
                if spec.rho > 0.0 {
                    va
                } else {
                    1.0 - va
                }
            } else {
                rng.gen()
            };
            let a = spec.model.draw_at(va, rng);
            let b = second.draw_at(vb, rng);
            MultiRecord::new(format!("p{i}"), vec![a, b]).expect("two models")
        })
        .collect())
}

pub fn gen_single(spec: &GenSpec, n: usize) -> Result<Vec<Record>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(sample_single(&spec.model, n, &mut rng))
}

pub fn gen_paired(spec: &GenSpec, n: usize) -> Result<Vec<MultiRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_paired(spec, n, &mut rng)
}

/// Population FDR `E[Z] / E[S]` at threshold `lambda`.
pub fn oracle_fdr(profile: &ModelProfile, lambda: f64) -> Result<f64> {
    profile.validate()?;
    let width = profile.bin_width();
    let (mut sel, mut err) = (0.0, 0.0);
    for (b, (&w, &p)) in profile.weights.iter().zip(&profile.err_prob).enumerate() {
        let frac = ((lambda - b as f64 * width) / width).clamp(0.0, 1.0);
        sel += w * frac;
        err += w * frac * p;
    }
    if sel <= 0.0 {
        return Err(Error::ZeroSelectionMass);
    }
    Ok(err / sel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    /// Single-model threshold.
    T1,
    /// Two-model routing thresholds.
    T2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// No test draw was ever selected.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub theorem: Theorem,
    pub alpha: Alpha,
    pub n_cal: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub tie_policy: TiePolicy,
}

pub const MIN_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub theorem: Theorem,
    pub alpha: f64,
    pub n_cal: usize,
    pub replications: usize,
    pub seed: u64,
    pub correction: Correction,
    pub feasible_replications: usize,
    pub selected_count: usize,
    pub error_count: usize,
    pub error_given_selected: Option<f64>,
    /// `sqrt(alpha (1 - alpha) / selected_count)`.
    pub standard_error: Option<f64>,
    /// `alpha + 3 * standard_error`.
    pub pass_band: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    feasible: usize,
    selected: usize,
    errors: usize,
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally {
            feasible: self.feasible + o.feasible,
            selected: self.selected + o.selected,
            errors: self.errors + o.errors,
        }
    }
}

fn gate_last(decision: &ThresholdDecision, test: &MultiRecord) -> Tally {
    let outcome = decision.gate_record(test).expect("widths agree");
    Tally {
        feasible: usize::from(decision.is_feasible()),
        selected: usize::from(outcome.selected()),
        errors: usize::from(outcome.error()),
    }
}

/// Replicates "draw `n_cal + 1` exchangeable records, calibrate on the first
/// `n_cal`, gate the last" and compares the error rate among selected test
/// draws with `alpha + 3 SE`.
pub fn mc_validate_theorem(spec: &GenSpec, cfg: &McConfig) -> Result<McReport> {
    mc_validate_with(spec, cfg, Correction::PlusOne)
}

/// As [`mc_validate_theorem`], with a selectable right-hand side for the
/// single-model condition.
pub fn mc_validate_with(spec: &GenSpec, cfg: &McConfig, correction: Correction) -> Result<McReport> {
    spec.validate()?;
    if cfg.replications < MIN_REPLICATIONS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    if cfg.theorem == Theorem::T2 {
        spec.second()?;
        if correction != Correction::PlusOne {
            return Err(Error::InvalidParameter(
                "routing validation only supports the +1 condition".into(),
            ));
        }
    }
    let alpha = cfg.alpha;
    let tally = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64));
            match cfg.theorem {
                Theorem::T1 => {
                    let mut draws = sample_single(&spec.model, cfg.n_cal + 1, &mut rng);
                    let test = MultiRecord::from(draws.pop().expect("n_cal + 1 draws"));
                    let d = calibrate_single_with(&draws, alpha, correction);
                    gate_last(&d, &test)
                }
                Theorem::T2 => {
                    let mut draws = sample_paired(spec, cfg.n_cal + 1, &mut rng).expect("paired spec");
                    let test = draws.pop().expect("n_cal + 1 draws");
                    let d = calibrate_routing(&draws, alpha, cfg.tie_policy).expect("two models");
                    gate_last(&d.decision, &test)
                }
            }
        })
        .reduce(Tally::default, |a, b| a + b);

    let a = alpha.get();
    let (rate, se, band, verdict) = if tally.selected == 0 {
        (None, None, None, Verdict::Inconclusive)
    } else {
        let rate = tally.errors as f64 / tally.selected as f64;
        let se = (a * (1.0 - a) / tally.selected as f64).sqrt();
        let band = a + 3.0 * se;
        let verdict = if rate <= band { Verdict::Pass } else { Verdict::Fail };
        (Some(rate), Some(se), Some(band), verdict)
    };
    Ok(McReport {
        theorem: cfg.theorem,
        alpha: a,
        n_cal: cfg.n_cal,
        replications: cfg.replications,
        seed: cfg.seed,
        correction,
        feasible_replications: tally.feasible,
        selected_count: tally.selected,
        error_count: tally.errors,
        error_given_selected: rate,
        standard_error: se,
        pass_band: band,
        verdict,
    })
}
