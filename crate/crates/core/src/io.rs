//! Dataset files, run configuration and report persistence.
//!
//! Datasets are CSV or JSON lines. Single-model files carry the columns
//! `id, uncertainty, error`; multi-model files carry `id, u_1, err_1, ...,
//! u_M, err_M` (any column order). JSON-lines objects use the same keys.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::harness::{summarize, EvalSummary, Evaluation, Method, SplitReport, TestMetrics};
use crate::routing::{Strategy, TiePolicy};
use crate::types::{model_count, ModelScore, MultiRecord, Record, Threshold};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.ndjson` / `.json` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Single(Vec<Record>),
    Multi(Vec<MultiRecord>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Single(r) => r.len(),
            Dataset::Multi(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model count; 1 for single-model files, 0 for an empty multi file.
    pub fn models(&self) -> usize {
        match self {
            Dataset::Single(_) => 1,
            Dataset::Multi(r) => model_count(r).ok().flatten().unwrap_or(0),
        }
    }

    /// Every dataset viewed as multi-model records.
    pub fn to_multi(&self) -> Vec<MultiRecord> {
        match self {
            Dataset::Single(r) => r.iter().cloned().map(MultiRecord::from).collect(),
            Dataset::Multi(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Schema {
    Single,
    Multi(usize),
}

impl Schema {
    fn columns(&self) -> Vec<String> {
        match *self {
            Schema::Single => vec!["id".into(), "uncertainty".into(), "error".into()],
            Schema::Multi(m) => {
                let mut c = vec!["id".to_string()];
                for j in 1..=m {
                    c.push(format!("u_{j}"));
                    c.push(format!("err_{j}"));
                }
                c
            }
        }
    }

    /// Infers the schema from column names and returns, for each expected
    /// column, its position among `names`.
    fn infer(names: &[&str]) -> Result<(Schema, Vec<usize>)> {
        let pos = |n: &str| names.iter().position(|h| *h == n);
        let schema = if pos("uncertainty").is_some() || pos("error").is_some() {
            Schema::Single
        } else {
            let m = (1..).take_while(|j| pos(&format!("u_{j}")).is_some()).count();
            if m == 0 {
                return Err(Error::MissingColumns(
                    "expected `id,uncertainty,error` or `id,u_1,err_1,...`".into(),
                ));
            }
            Schema::Multi(m)
        };
        let cols = schema.columns();
        let missing: Vec<&str> = cols.iter().filter(|c| pos(c).is_none()).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::MissingColumns(missing.join(", ")));
        }
        let idx = cols.iter().map(|c| pos(c).expect("checked")).collect();
        Ok((schema, idx))
    }

    /// Builds one record from field values ordered as [`Schema::columns`].
    fn build(&self, fields: &[&str]) -> std::result::Result<MultiRecord, String> {
        let id = fields[0].to_string();
        let pairs = match self {
            Schema::Single => vec![(fields[1], fields[2], "uncertainty", "error")],
            Schema::Multi(_) => fields[1..]
                .chunks(2)
                .map(|c| (c[0], c[1], "", ""))
                .collect(),
        };
        let mut scores = Vec::with_capacity(pairs.len());
        for (j, (u, e, u_name, e_name)) in pairs.into_iter().enumerate() {
            let u_name = if u_name.is_empty() { format!("u_{}", j + 1) } else { u_name.into() };
            let e_name = if e_name.is_empty() { format!("err_{}", j + 1) } else { e_name.into() };
            let u: f64 = u
                .trim()
                .parse()
                .map_err(|_| format!("non-numeric {u_name}"))?;
            let e: f64 = e
                .trim()
                .parse()
                .map_err(|_| format!("non-numeric {e_name}"))?;
            if !u.is_finite() {
                return Err(format!("non-finite {u_name}"));
            }
            let err = if e == 0.0 {
                false
            } else if e == 1.0 {
                true
            } else {
                return Err(format!("{e_name} must be 0 or 1"));
            };
            scores.push(ModelScore::new(u, err).map_err(|i| i.to_string())?);
        }
        MultiRecord::new(id, scores).map_err(|i| i.to_string())
    }
}

fn finish(schema: Schema, rows: Vec<MultiRecord>, errors: Vec<LineError>) -> Result<Dataset> {
    if !errors.is_empty() {
        return Err(Error::MalformedDataset(errors));
    }
    Ok(match schema {
        Schema::Single => Dataset::Single(rows.iter().map(|r| r.project(0)).collect()),
        Schema::Multi(_) => Dataset::Multi(rows),
    })
}

/// Parses CSV text. Every bad row is reported with its 1-based line number
/// (the header is line 1).
pub fn parse_csv_str(text: &str) -> Result<Dataset> {
    parse_csv_reader(text.as_bytes(), Path::new("<memory>"))
}

fn parse_csv_reader<R: std::io::Read>(reader: R, path: &Path) -> Result<Dataset> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().collect();
    let (schema, idx) = Schema::infer(&names)?;
    let (mut rows, mut errors) = (Vec::new(), Vec::new());
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != header.len() {
            errors.push(LineError {
                line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
            continue;
        }
        let fields: Vec<&str> = idx.iter().map(|&i| &row[i]).collect();
        match schema.build(&fields) {
            Ok(r) => rows.push(r),
            Err(message) => errors.push(LineError { line, message }),
        }
    }
    finish(schema, rows, errors)
}

/// Parses JSON-lines text; the schema comes from the first object's keys.
pub fn parse_jsonl_str(text: &str) -> Result<Dataset> {
    let mut schema: Option<(Schema, Vec<String>)> = None;
    let (mut rows, mut errors) = (Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(raw) {
            Ok(o) => o,
            Err(e) => {
                errors.push(LineError {
                    line,
                    message: format!("not a JSON object: {e}"),
                });
                continue;
            }
        };
        if schema.is_none() {
            let names: Vec<&str> = obj.keys().map(String::as_str).collect();
            let (s, _) = Schema::infer(&names)?;
            let cols = s.columns();
            schema = Some((s, cols));
        }
        let (s, cols) = schema.as_ref().expect("set above");
        let mut fields = Vec::with_capacity(cols.len());
        let mut missing = Vec::new();
        for c in cols {
            match obj.get(c) {
                Some(serde_json::Value::String(v)) => fields.push(v.clone()),
                Some(serde_json::Value::Bool(b)) => fields.push(u8::from(*b).to_string()),
                Some(serde_json::Value::Null) | None => missing.push(c.as_str()),
                Some(v) => fields.push(v.to_string()),
            }
        }
        if !missing.is_empty() {
            errors.push(LineError {
                line,
                message: format!("missing {}", missing.join(", ")),
            });
            continue;
        }
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        match s.build(&refs) {
            Ok(r) => rows.push(r),
            Err(message) => errors.push(LineError { line, message }),
        }
    }
    match schema {
        Some((s, _)) => finish(s, rows, errors),
        None if errors.is_empty() => Ok(Dataset::Single(Vec::new())),
        None => Err(Error::MalformedDataset(errors)),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a dataset; the format defaults to the one implied by the extension.
pub fn parse_dataset(path: &Path, format: Option<Format>) -> Result<Dataset> {
    match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Csv => parse_csv_reader(BufReader::new(File::open(path).map_err(io_err(path))?), path),
        Format::Jsonl => {
            let mut text = String::new();
            for l in BufReader::new(File::open(path).map_err(io_err(path))?).lines() {
                text.push_str(&l.map_err(io_err(path))?);
                text.push('\n');
            }
            parse_jsonl_str(&text)
        }
    }
}

fn dataset_rows(data: &Dataset) -> (Schema, Vec<MultiRecord>) {
    match data {
        Dataset::Single(r) => (Schema::Single, r.iter().cloned().map(MultiRecord::from).collect()),
        Dataset::Multi(r) => (Schema::Multi(data.models()), r.clone()),
    }
}

/// Writes a dataset. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_dataset(path: &Path, data: &Dataset, format: Format) -> Result<()> {
    let (schema, rows) = dataset_rows(data);
    let cols = schema.columns();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    match format {
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(w);
            let csv_err = |source| Error::Csv {
                path: path.to_path_buf(),
                source,
            };
            cw.write_record(&cols).map_err(csv_err)?;
            for r in &rows {
                let mut rec = vec![r.id().to_string()];
                for s in r.scores() {
                    rec.push(s.u().to_string());
                    rec.push(u8::from(s.err()).to_string());
                }
                cw.write_record(&rec).map_err(csv_err)?;
            }
            cw.flush().map_err(io_err(path))?;
        }
        Format::Jsonl => {
            for r in &rows {
                let mut obj = serde_json::Map::new();
                obj.insert(cols[0].clone(), r.id().into());
                for (j, s) in r.scores().iter().enumerate() {
                    obj.insert(cols[1 + 2 * j].clone(), s.u().into());
                    obj.insert(cols[2 + 2 * j].clone(), u8::from(s.err()).into());
                }
                writeln!(w, "{}", serde_json::Value::Object(obj)).map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
        }
    }
    Ok(())
}

/// Everything needed to rerun a command. Embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub ratio: f64,
    pub n_splits: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub tie_policy: TiePolicy,
    /// 1-based model index for single-model methods.
    pub model: usize,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: "lec".into(),
            alphas: vec![0.1],
            delta: 0.05,
            ratio: 0.5,
            n_splits: 100,
            seed: 0,
            strategy: Strategy::Exact,
            tie_policy: TiePolicy::default(),
            model: 1,
            input: None,
            out: None,
        }
    }
}

/// How candidate thresholds were enumerated; recorded so saved decisions are auditable.
pub const CANDIDATE_GRID: &str = "below_min plus distinct observed uncertainties per model";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad number `{s}`"))
    }
}

const PER_SPLIT_COLUMNS: [&str; 12] = [
    "method",
    "alpha",
    "split_index",
    "split_seed",
    "feasible",
    "test_fdr",
    "power",
    "accepted_total",
    "accepted_correct",
    "abstained",
    "correct_in_test",
    "thresholds",
];

/// One row per `(method, alpha, split)`. Undefined values are empty cells;
/// thresholds are `;`-separated.
pub fn write_per_split(path: &Path, evals: &[Evaluation]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(PER_SPLIT_COLUMNS).map_err(csv_err)?;
    for ev in evals {
        for s in &ev.splits {
            let m = &s.metrics;
            let thresholds = s
                .thresholds
                .as_ref()
                .map(|t| t.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            w.write_record([
                ev.summary.method.to_string(),
                ev.summary.alpha.to_string(),
                s.split_index.to_string(),
                s.split_seed.to_string(),
                s.feasible.to_string(),
                opt(m.test_fdr),
                opt(m.power),
                m.accepted_total.to_string(),
                m.accepted_correct.to_string(),
                m.abstained.to_string(),
                m.correct_in_test.to_string(),
                thresholds,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads `per_split.csv` back into `(method, alpha, split)` rows.
pub fn read_per_split(path: &Path) -> Result<Vec<(Method, f64, SplitReport)>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parsed = (|| -> std::result::Result<_, String> {
            let int = |i: usize| row[i].parse::<usize>().map_err(|_| format!("bad integer `{}`", &row[i]));
            let method: Method = row[0].parse().map_err(|e: Error| e.to_string())?;
            let alpha: f64 = row[1].parse().map_err(|_| "bad alpha".to_string())?;
            let thresholds = if row[11].is_empty() {
                None
            } else {
                Some(
                    row[11]
                        .split(';')
                        .map(|t| Threshold::parse(t).ok_or_else(|| format!("bad threshold `{t}`")))
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            };
            Ok((
                method,
                alpha,
                SplitReport {
                    split_index: int(2)?,
                    split_seed: row[3].parse().map_err(|_| "bad seed".to_string())?,
                    feasible: row[4].parse().map_err(|_| "bad flag".to_string())?,
                    metrics: TestMetrics {
                        test_fdr: parse_opt(&row[5])?,
                        power: parse_opt(&row[6])?,
                        accepted_total: int(7)?,
                        accepted_correct: int(8)?,
                        abstained: int(9)?,
                        correct_in_test: int(10)?,
                    },
                    thresholds,
                },
            ))
        })();
        match parsed {
            Ok(r) => out.push(r),
            Err(message) => errors.push(LineError { line, message }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::MalformedDataset(errors))
    }
}

/// Recomputes summaries from a per-split table, grouping consecutive rows
/// by `(method, alpha)`.
pub fn summaries_from_rows(rows: &[(Method, f64, SplitReport)], delta: f64) -> Vec<EvalSummary> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let (m, a) = (&rows[start].0, rows[start].1);
        let end = start
            + rows[start..]
                .iter()
                .take_while(|(m2, a2, _)| m2 == m && *a2 == a)
                .count();
        let splits: Vec<SplitReport> = rows[start..end].iter().map(|r| r.2.clone()).collect();
        out.push(summarize(m, a, delta, &splits));
        start = end;
    }
    out
}

/// One row per `(method, alpha)`: the data behind FDR and power curves.
pub fn write_curves(path: &Path, summaries: &[&EvalSummary]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "method",
        "alpha",
        "fdr_mean",
        "fdr_std",
        "fdr_undefined",
        "fdr_mean_zero_filled",
        "power_mean",
        "power_std",
        "power_mean_feasible",
        "feasibility_rate",
        "accepted_correct_mean",
    ])
    .map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.method.to_string(),
            s.alpha.to_string(),
            opt(s.fdr_mean),
            opt(s.fdr_std),
            s.fdr_undefined.to_string(),
            opt(s.fdr_mean_zero_filled),
            opt(s.power_mean),
            opt(s.power_std),
            opt(s.power_mean_feasible),
            s.feasibility_rate.to_string(),
            s.accepted_correct_mean.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// `summary.json`, `per_split.csv` and `curves.csv` for an evaluation run.
pub fn write_eval_report(dir: &Path, config: &RunConfig, evals: &[Evaluation]) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        toolkit_version: &'a str,
        command: &'a str,
        config: &'a RunConfig,
        rows: Vec<&'a EvalSummary>,
    }
    ensure_dir(dir)?;
    let rows: Vec<&EvalSummary> = evals.iter().map(|e| &e.summary).collect();
    write_per_split(&dir.join("per_split.csv"), evals)?;
    write_curves(&dir.join("curves.csv"), &rows)?;
    write_json(
        &dir.join("summary.json"),
        &Summary {
            toolkit_version: TOOLKIT_VERSION,
            command: "evaluate",
            config,
            rows,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_schema() {
        let d = parse_csv_str("id,uncertainty,error\nq1,0.31,0\n").unwrap();
        assert_eq!(d, Dataset::Single(vec![Record::new("q1", 0.31, false).unwrap()]));
    }

    #[test]
    fn multi_schema() {
        let d = parse_csv_str("id,u_1,err_1,u_2,err_2\nq1,0.1,0,0.2,1\n").unwrap();
        assert_eq!(d.models(), 2);
        let Dataset::Multi(r) = d else { panic!() };
        assert_eq!(r[0].uncertainties(), vec![0.1, 0.2]);
        assert!(r[0].score(1).err());
    }

    #[test]
    fn column_order_is_free() {
        let d = parse_csv_str("error,id,uncertainty\n1,a,0.5\n").unwrap();
        assert_eq!(d, Dataset::Single(vec![Record::new("a", 0.5, true).unwrap()]));
    }

    #[test]
    fn non_numeric_row_reports_line() {
        let err = parse_csv_str("id,uncertainty,error\nq1,0.1,0\nq2,0.2,1\nq3,abc,0\n").unwrap_err();
        assert!(err.to_string().contains("line 4: non-numeric uncertainty"), "{err}");
    }

    #[test]
    fn every_bad_row_is_listed() {
        let err = parse_csv_str("id,uncertainty,error\na,x,0\nb,0.1,2\nc,nan,0\nd,0.3\n").unwrap_err();
        let Error::MalformedDataset(lines) = err else { panic!() };
        let got: Vec<usize> = lines.iter().map(|l| l.line).collect();
        assert_eq!(got, vec![2, 3, 4, 5]);
    }

    #[test]
    fn missing_columns() {
        assert!(matches!(parse_csv_str("id,uncertainty\n"), Err(Error::MissingColumns(_))));
        assert!(matches!(parse_csv_str("id,u_1,err_1,u_2\n"), Err(Error::MissingColumns(_))));
        assert!(matches!(parse_csv_str("a,b\n"), Err(Error::MissingColumns(_))));
    }

    #[test]
    fn jsonl_matches_csv() {
        let j = "{\"id\":\"q1\",\"u_1\":0.1,\"err_1\":0,\"u_2\":0.2,\"err_2\":1}\n\n{\"id\":2,\"u_1\":0.3,\"err_1\":1,\"u_2\":0.4,\"err_2\":0}\n";
        let c = "id,u_1,err_1,u_2,err_2\nq1,0.1,0,0.2,1\n2,0.3,1,0.4,0\n";
        assert_eq!(parse_jsonl_str(j).unwrap(), parse_csv_str(c).unwrap());
        let bad = "{\"id\":\"a\",\"uncertainty\":0.1,\"error\":0}\n{\"id\":\"b\",\"error\":0}\n";
        let Err(Error::MalformedDataset(l)) = parse_jsonl_str(bad) else { panic!() };
        assert_eq!(l[0].line, 2);
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset::Multi(vec![
            MultiRecord::new(
                "x,1",
                vec![
                    ModelScore::new(0.1 + 0.2, false).unwrap(),
                    ModelScore::new(1e-300, true).unwrap(),
                ],
            )
            .unwrap(),
        ]);
        for fmt in [Format::Csv, Format::Jsonl] {
            let p = dir.path().join(match fmt {
                Format::Csv => "d.csv",
                Format::Jsonl => "d.jsonl",
            });
            write_dataset(&p, &data, fmt).unwrap();
            assert_eq!(parse_dataset(&p, None).unwrap(), data);
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = parse_dataset(Path::new("/nonexistent/x.csv"), None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }
}
