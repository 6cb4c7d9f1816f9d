use lec_core::single::calibrate_single_with;
use lec_core::{
    calibrate_coin, calibrate_single, check_constraint, min_feasible_alpha, Alpha, Bound, Correction, Delta, Record,
    Threshold, ThresholdDecision,
};
use proptest::prelude::*;

fn records(rows: &[(u8, bool)]) -> Vec<Record> {
    rows.iter()
        .enumerate()
        .map(|(i, &(u, e))| Record::new(format!("r{i}"), f64::from(u) / 8.0, e).unwrap())
        .collect()
}

fn rows() -> impl Strategy<Value = Vec<(u8, bool)>> {
    prop::collection::vec((0u8..40, prop::bool::weighted(0.2)), 0..120)
}

fn alpha() -> impl Strategy<Value = f64> {
    0.01f64..0.6
}

/// Largest distinct value whose prefix satisfies `E - a k <= -1`, by brute force.
fn brute(recs: &[Record], a: f64) -> Option<f64> {
    let mut values: Vec<f64> = recs.iter().map(Record::u).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values.into_iter().rev().find(|&v| {
        let sel: Vec<&Record> = recs.iter().filter(|r| r.u() <= v).collect();
        let e = sel.iter().filter(|r| r.err()).count() as f64;
        e - a * sel.len() as f64 <= -1.0
    })
}

fn threshold(d: &ThresholdDecision) -> Option<f64> {
    d.thresholds().map(|t| t[0].raw())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_brute_force(rows in rows(), a in alpha()) {
        let recs = records(&rows);
        let d = calibrate_single(&recs, Alpha::new(a).unwrap());
        prop_assert_eq!(threshold(&d), brute(&recs, a));
        if let Some(c) = d.calibrated() {
            let check = check_constraint(&recs, c.thresholds[0], Alpha::new(a).unwrap());
            prop_assert!(check.satisfied);
            prop_assert_eq!(check.selected, c.accepted_on_cal);
            prop_assert_eq!(check.errors, c.errors_on_cal);
            prop_assert!((check.margin - c.margin).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_monotone_in_alpha(rows in rows(), a in alpha(), b in alpha()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let recs = records(&rows);
        let cov = |x: f64| calibrate_single(&recs, Alpha::new(x).unwrap())
            .calibrated()
            .map_or(0, |c| c.accepted_on_cal);
        prop_assert!(cov(lo) <= cov(hi));
    }

    #[test]
    fn min_alpha_is_the_feasibility_boundary(rows in rows()) {
        let recs = records(&rows);
        match min_feasible_alpha(&recs) {
            None => prop_assert!(recs.iter().all(Record::err) || recs.is_empty()
                || calibrate_single(&recs, Alpha::new(0.999_999).unwrap()) == ThresholdDecision::Infeasible),
            Some(m) => {
                prop_assert!(m > 0.0 && m < 1.0);
                prop_assert!(calibrate_single(&recs, Alpha::new(m).unwrap()).is_feasible());
                if m > 1e-6 {
                    prop_assert!(!calibrate_single(&recs, Alpha::new(m * (1.0 - 1e-9)).unwrap()).is_feasible());
                }
            }
        }
    }

    #[test]
    fn unsmoothed_is_never_more_conservative(rows in rows(), a in alpha()) {
        let recs = records(&rows);
        let a = Alpha::new(a).unwrap();
        let plus = calibrate_single_with(&recs, a, Correction::PlusOne);
        let raw = calibrate_single_with(&recs, a, Correction::Unsmoothed);
        let k = |d: &ThresholdDecision| d.calibrated().map_or(0, |c| c.accepted_on_cal);
        prop_assert!(k(&plus) <= k(&raw));
    }

    #[test]
    fn lec_covers_at_least_coin(rows in rows(), a in alpha()) {
        // the +1 margin is never stricter than a Clopper-Pearson bound at delta = 0.05 once
        // the baseline is feasible
        let recs = records(&rows);
        let a = Alpha::new(a).unwrap();
        let lec = calibrate_single(&recs, a);
        let cp = calibrate_coin(&recs, a, Delta::new(0.05).unwrap(), Bound::ClopperPearson);
        if let Some(c) = cp.calibrated() {
            let lec_k = lec.calibrated().map_or(0, |l| l.accepted_on_cal);
            prop_assert!(lec_k >= c.accepted_on_cal, "lec {} < cp {}", lec_k, c.accepted_on_cal);
        }
    }
}

#[test]
fn worked_example() {
    // ten correct then ten wrong at increasing uncertainty
    let recs: Vec<Record> = (0..20)
        .map(|i| Record::new(format!("r{i}"), i as f64, i >= 10).unwrap())
        .collect();
    let d = calibrate_single(&recs, Alpha::new(0.2).unwrap());
    let c = d.calibrated().unwrap();
    // k = 11, E = 1: 1 - 2.2 = -1.2; k = 12, E = 2: 2 - 2.4 = -0.4
    assert_eq!(c.thresholds, vec![Threshold::at(10.0)]);
    assert_eq!((c.accepted_on_cal, c.errors_on_cal), (11, 1));
    assert!((c.margin + 1.2).abs() < 1e-12);
}

#[test]
fn lec_feasible_below_coin() {
    let recs: Vec<Record> = (0..200)
        .map(|i| Record::new(format!("r{i}"), i as f64, i % 25 == 24).unwrap())
        .collect();
    let lec = min_feasible_alpha(&recs).unwrap();
    let delta = Delta::new(0.05).unwrap();
    assert!(calibrate_single(&recs, Alpha::new(lec).unwrap()).is_feasible());
    assert!(!calibrate_coin(&recs, Alpha::new(lec).unwrap(), delta, Bound::ClopperPearson).is_feasible());
    assert!(!calibrate_coin(&recs, Alpha::new(lec).unwrap(), delta, Bound::Hoeffding).is_feasible());
}
