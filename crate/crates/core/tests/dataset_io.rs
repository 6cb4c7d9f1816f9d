use lec_core::io::{parse_csv_str, parse_dataset, parse_jsonl_str, write_dataset, Dataset, Format};
use lec_core::{Error, ModelScore, MultiRecord, Record};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, Just(0.0), Just(1e-300), Just(-0.1), any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

fn single() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((finite(), any::<bool>()), 1..40).prop_map(|rows| {
        Dataset::Single(
            rows.into_iter()
                .enumerate()
                .map(|(i, (u, e))| Record::new(format!("id-{i}"), u, e).unwrap())
                .collect(),
        )
    })
}

fn multi() -> impl Strategy<Value = Dataset> {
    (1usize..4)
        .prop_flat_map(|m| prop::collection::vec(prop::collection::vec((finite(), any::<bool>()), m), 1..30))
        .prop_map(|rows| {
            Dataset::Multi(
                rows.into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let scores = s.into_iter().map(|(u, e)| ModelScore::new(u, e).unwrap()).collect();
                        MultiRecord::new(format!("q{i}"), scores).unwrap()
                    })
                    .collect(),
            )
        })
}

fn round_trip(data: &Dataset, format: Format) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.out");
    write_dataset(&path, data, format).unwrap();
    parse_dataset(&path, Some(format)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_round_trips(data in single()) {
        prop_assert_eq!(&round_trip(&data, Format::Csv), &data);
        prop_assert_eq!(&round_trip(&data, Format::Jsonl), &data);
    }

    #[test]
    fn multi_round_trips(data in multi()) {
        prop_assert_eq!(round_trip(&data, Format::Csv).to_multi(), data.to_multi());
        prop_assert_eq!(round_trip(&data, Format::Jsonl).to_multi(), data.to_multi());
    }
}

#[test]
fn every_bad_row_is_reported() {
    let text = "id,uncertainty,error\na,0.1,0\nb,x,1\nc,0.3,2\nd,NaN,0\n";
    match parse_csv_str(text) {
        Err(Error::MalformedDataset(issues)) => {
            let joined = issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n");
            assert_eq!(issues.len(), 3, "{joined}");
            for line in ["line 3", "line 4", "line 5"] {
                assert!(joined.contains(line), "{joined}");
            }
        }
        other => panic!("expected malformed dataset, got {other:?}"),
    }
}

#[test]
fn missing_columns() {
    assert!(matches!(parse_csv_str("id,score\na,1\n"), Err(Error::MissingColumns { .. })));
}

#[test]
fn multi_model_columns() {
    let d = parse_csv_str("id,u_1,err_1,u_2,err_2\na,0.1,0,0.4,1\nb,0.2,1,0.3,0\n").unwrap();
    assert_eq!(d.models(), 2);
    let recs = d.to_multi();
    assert_eq!(recs[0].score(1).u(), 0.4);
    assert!(recs[0].score(1).err());
}

#[test]
fn jsonl_accepts_both_layouts() {
    let single = parse_jsonl_str("{\"id\":\"a\",\"uncertainty\":0.5,\"error\":false}\n\n").unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single.models(), 1);
    let bad = parse_jsonl_str("{\"id\":\"a\",\"uncertainty\":0.5,\"error\":false}\n{oops\n");
    assert!(bad.unwrap_err().to_string().contains("line 2"));
}
