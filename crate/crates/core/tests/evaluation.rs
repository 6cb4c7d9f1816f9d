use lec_core::harness::split_indices;
use lec_core::io::{read_per_split, summaries_from_rows, write_eval_report, RunConfig};
use lec_core::synthetic::{default_paired_spec, gen_paired};
use lec_core::{compare_methods, repeated_eval, split, Alpha, Delta, EvalConfig, Method, ModelScore, MultiRecord};

fn data() -> Vec<MultiRecord> {
    gen_paired(&default_paired_spec(0.3, 11), 600).unwrap()
}

fn cfg(n_splits: usize) -> EvalConfig {
    EvalConfig {
        delta: Delta::new(0.05).unwrap(),
        ratio: 0.5,
        n_splits,
        seed: 5,
    }
}

fn alphas(values: &[f64]) -> Vec<Alpha> {
    values.iter().map(|&a| Alpha::new(a).unwrap()).collect()
}

#[test]
fn splits_partition_the_indices() {
    for seed in 0..20 {
        let (cal, test) = split_indices(101, 0.3, seed).unwrap();
        assert_eq!(cal.len(), 30);
        let mut all: Vec<usize> = cal.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }
    assert_eq!(split_indices(50, 0.5, 3).unwrap(), split_indices(50, 0.5, 3).unwrap());
    assert_ne!(split_indices(50, 0.5, 3).unwrap(), split_indices(50, 0.5, 4).unwrap());
}

#[test]
fn test_labels_do_not_leak_into_thresholds() {
    let records = data();
    let methods = [Method::lec(), Method::coin_cp(), Method::lec_route()];
    let base = compare_methods(&records, &methods, &alphas(&[0.15]), &cfg(8)).unwrap();
    for (s, _) in base[0].splits.iter().enumerate() {
        let seed = base[0].splits[s].split_seed;
        let (_, test) = split_indices(records.len(), 0.5, seed).unwrap();
        let mut flipped = records.clone();
        for &i in &test {
            let scores = flipped[i]
                .scores()
                .iter()
                .map(|sc| ModelScore::new(sc.u(), !sc.err()).unwrap())
                .collect();
            flipped[i] = MultiRecord::new(flipped[i].id(), scores).unwrap();
        }
        let (cal_a, _) = split(&records, 0.5, seed).unwrap();
        let (cal_b, _) = split(&flipped, 0.5, seed).unwrap();
        assert_eq!(cal_a, cal_b);
        for m in &methods {
            let a = m.calibrate(&cal_a, Alpha::new(0.15).unwrap(), Delta::new(0.05).unwrap()).unwrap();
            let b = m.calibrate(&cal_b, Alpha::new(0.15).unwrap(), Delta::new(0.05).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn single_method_compare_is_repeated_eval() {
    let records = data();
    let c = cfg(12);
    for m in [Method::lec(), Method::coin_hfd(), Method::lec_route()] {
        let a = Alpha::new(0.2).unwrap();
        let one = repeated_eval(&records, &m, a, &c).unwrap();
        let many = compare_methods(&records, &[Method::coin_cp(), m.clone()], &[a], &c).unwrap();
        assert_eq!(one, many[1]);
    }
}

#[test]
fn summaries_are_recomputable_from_per_split_csv() {
    let records = data();
    let methods = [Method::lec(), Method::coin_cp(), Method::lec_route()];
    let alpha_values = [0.05, 0.1, 0.2];
    let evals = compare_methods(&records, &methods, &alphas(&alpha_values), &cfg(15)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        alphas: alpha_values.to_vec(),
        n_splits: 15,
        seed: 5,
        ..RunConfig::default()
    };
    write_eval_report(dir.path(), &config, &evals).unwrap();

    let rows = read_per_split(&dir.path().join("per_split.csv")).unwrap();
    assert_eq!(rows.len(), 9 * 15);
    let again = summaries_from_rows(&rows, 0.05);
    let original: Vec<_> = evals.iter().map(|e| e.summary.clone()).collect();
    assert_eq!(again, original);

    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + methods.len() * alpha_values.len());
    let lec_rows = curves.lines().skip(1).filter(|l| l.starts_with("lec,")).count();
    assert_eq!(lec_rows, 3);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 9);
    assert!(summary["toolkit_version"].is_string());
}

#[test]
fn evaluation_is_reproducible() {
    let records = data();
    let a = Alpha::new(0.1).unwrap();
    let x = repeated_eval(&records, &Method::lec_route(), a, &cfg(10)).unwrap();
    let y = repeated_eval(&records, &Method::lec_route(), a, &cfg(10)).unwrap();
    assert_eq!(x, y);
    let other = EvalConfig { seed: 6, ..cfg(10) };
    assert_ne!(x, repeated_eval(&records, &Method::lec_route(), a, &other).unwrap());
}

#[test]
fn metrics_are_consistent() {
    let records = data();
    let evals = compare_methods(
        &records,
        &[Method::lec(), Method::lec_route()],
        &alphas(&[0.1, 0.3]),
        &cfg(10),
    )
    .unwrap();
    for e in &evals {
        for s in &e.splits {
            let m = &s.metrics;
            assert_eq!(m.accepted_total + m.abstained, 300);
            assert!(m.accepted_correct <= m.accepted_total);
            assert!(m.accepted_correct <= m.correct_in_test);
            assert_eq!(s.feasible, s.thresholds.is_some());
            if m.accepted_total > 0 {
                let fdr = 1.0 - m.accepted_correct as f64 / m.accepted_total as f64;
                assert!((m.test_fdr.unwrap() - fdr).abs() < 1e-12);
            } else {
                assert!(m.test_fdr.is_none());
            }
        }
        assert!((0.0..=1.0).contains(&e.summary.feasibility_rate));
    }
}

#[test]
fn bad_ratio_is_rejected() {
    let records = data();
    let c = EvalConfig { ratio: 1.0, ..cfg(3) };
    assert!(repeated_eval(&records, &Method::lec(), Alpha::new(0.1).unwrap(), &c).is_err());
}
