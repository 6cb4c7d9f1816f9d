use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lec_core::harness::{compare_methods, EvalConfig, Method};
use lec_core::io::{
    ensure_dir, parse_dataset, read_json, write_dataset, write_eval_report, write_json, Dataset, Format, RunConfig,
    CANDIDATE_GRID, TOOLKIT_VERSION,
};
use lec_core::routing::{calibrate_multi, calibrate_routing, first_feasible_pair, MultiSearch, PairSelection, TieBreak};
use lec_core::synthetic::{
    default_paired_spec, default_spec, gen_paired, gen_single, mc_validate_with, GenSpec, McConfig, Theorem,
};
use lec_core::{min_feasible_alpha, Alpha, Correction, Delta, Error, Gate, Strategy, ThresholdDecision, TiePolicy};

#[derive(Parser)]
#[command(name = "lec", version, about = "Risk-controlled selective prediction and model routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate thresholds on a labelled dataset.
    Calibrate(CalibrateArgs),
    /// Apply a saved calibration to a new dataset.
    Gate(GateArgs),
    /// Repeated random calibration/test splits for one method.
    Evaluate(EvalArgs),
    /// Several methods and risk levels on shared splits.
    Compare(EvalArgs),
    /// Synthetic data generation and Monte Carlo validation.
    Simulate(SimulateArgs),
    /// Smallest risk level at which single-model calibration is feasible.
    MinAlpha(MinAlphaArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lec,
    CoinCp,
    CoinHfd,
    LecRoute,
    LecRouteScan,
    LecMulti,
}

impl MethodArg {
    fn id(self) -> &'static str {
        match self {
            MethodArg::Lec => "lec",
            MethodArg::CoinCp => "coin-cp",
            MethodArg::CoinHfd => "coin-hfd",
            MethodArg::LecRoute => "lec-route",
            MethodArg::LecRouteScan => "lec-route-scan",
            MethodArg::LecMulti => "lec-multi",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Exact,
    Coord,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Exact => Strategy::Exact,
            StrategyArg::Coord => Strategy::CoordinateAscent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    PreferEarly,
    PreferLate,
    FewestErrors,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::PreferEarly => TiePolicy::PreferEarly,
            TieArg::PreferLate => TiePolicy::PreferLate,
            TieArg::FewestErrors => TiePolicy::FewestErrors,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Dataset file (CSV or JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Overrides the format implied by the file extension.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl InputArgs {
    fn load(&self) -> Result<Dataset, Error> {
        parse_dataset(&self.input, self.format.map(Format::from))
    }
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "lec")]
    method: MethodArg,
    /// Multi-model search strategy.
    #[arg(long, value_enum, default_value = "exact")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "prefer-early")]
    tie_policy: TieArg,
    /// 1-based model used by single-model methods.
    #[arg(long, default_value_t = 1)]
    model: usize,
    /// Confidence level parameter of the bound-based baselines.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

impl MethodArgs {
    fn method(&self, id: MethodArg) -> Result<Method, Error> {
        if self.model == 0 {
            return Err(Error::InvalidParameter("--model is 1-based".into()));
        }
        Method::from_parts(id.id(), self.model - 1, self.strategy.into(), self.tie_policy.into())
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    alpha: f64,
    /// Output directory for summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// summary.json written by `calibrate`.
    #[arg(long)]
    decision: PathBuf,
    /// Output directory for gated.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Extra methods for `compare`, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<MethodArg>,
    #[arg(long, conflicts_with = "alphas", required_unless_present = "alphas")]
    alpha: Option<f64>,
    /// Comma-separated risk levels.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Calibration share of each split.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TheoremArg {
    T1,
    T2,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    PlusOne,
    Unsmoothed,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "t1")]
    theorem: TheoremArg,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 500)]
    n_cal: usize,
    #[arg(long, default_value_t = 20_000)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coupling of the two models in the built-in paired spec.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// JSON generative spec; defaults to the built-in spec for the theorem.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "plus-one")]
    correction: CorrectionArg,
    #[arg(long, default_value = "prefer-early", value_enum)]
    tie_policy: TieArg,
    /// Write N synthetic records to --out/synthetic.csv instead of validating.
    #[arg(long, value_name = "N")]
    generate: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MinAlphaArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1)]
    model: usize,
}

fn alpha_of(v: f64) -> Result<Alpha, Error> {
    Alpha::new(v)
}

/// Saved calibration. `gate` reads back `decision`.
#[derive(Serialize, Deserialize)]
struct CalibrationReport {
    toolkit_version: String,
    command: String,
    config: RunConfig,
    n_records: usize,
    models: usize,
    method: String,
    alpha: f64,
    delta: f64,
    candidate_grid: String,
    tie_policy: TiePolicy,
    #[serde(default)]
    selection: Option<PairSelection>,
    #[serde(default)]
    tie_break: Option<TieBreak>,
    decision: ThresholdDecision,
}

fn print_json(value: &impl Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // a closed pipe on stdout is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn emit(value: &impl Serialize, out: Option<&Path>, file: &str) -> Result<(), Error> {
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join(file), value)?;
    }
    print_json(value);
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<(), Error> {
    let data = args.input.load()?;
    let records = data.to_multi();
    let m = &args.method;
    let method = m.method(m.method)?;
    let a = alpha_of(args.alpha)?;
    let delta = Delta::new(m.delta)?;
    let tie_policy: TiePolicy = m.tie_policy.into();
    let (decision, selection, tie_break) = match m.method {
        MethodArg::LecRoute => {
            let r = calibrate_routing(&records, a, tie_policy)?;
            (r.decision, Some(r.selection), r.tie_break)
        }
        MethodArg::LecRouteScan => {
            let r = first_feasible_pair(&records, a)?;
            (r.decision, Some(r.selection), r.tie_break)
        }
        MethodArg::LecMulti => {
            let search = MultiSearch::new(m.strategy.into()).tie_policy(tie_policy);
            let r = calibrate_multi(&records, a, &search)?;
            (r.decision, Some(r.selection), r.tie_break)
        }
        _ => (method.calibrate(&records, a, delta)?, None, None),
    };
    let report = CalibrationReport {
        toolkit_version: TOOLKIT_VERSION.into(),
        command: "calibrate".into(),
        config: RunConfig {
            method: method.to_string(),
            alphas: vec![args.alpha],
            delta: m.delta,
            strategy: m.strategy.into(),
            tie_policy,
            model: m.model,
            input: Some(args.input.input.clone()),
            out: args.out.clone(),
            ..RunConfig::default()
        },
        n_records: data.len(),
        models: data.models(),
        method: method.to_string(),
        alpha: args.alpha,
        delta: m.delta,
        candidate_grid: CANDIDATE_GRID.into(),
        tie_policy,
        selection,
        tie_break,
        decision,
    };
    emit(&report, args.out.as_deref(), "summary.json")
}

fn gate(args: &GateArgs) -> Result<(), Error> {
    let saved: CalibrationReport = read_json(&args.decision)?;
    let data = args.input.load()?;
    let records = data.to_multi();
    let mut rows = Vec::with_capacity(records.len());
    let (mut accepted, mut errors) = (0usize, 0usize);
    for r in &records {
        let o = saved.decision.gate_record(r)?;
        if o.selected() {
            accepted += 1;
            errors += usize::from(o.error());
        }
        rows.push((r.id().to_string(), o));
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let path = dir.join("gated.csv");
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["id", "decision", "model", "error"]).map_err(csv_err)?;
        for (id, o) in &rows {
            let (decision, model, err) = match o.gate {
                Gate::Accept(m) => ("accept", (m + 1).to_string(), u8::from(o.error()).to_string()),
                Gate::Abstain => ("abstain", String::new(), String::new()),
            };
            w.write_record([id.as_str(), decision, &model, &err]).map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io { path, source })?;
    }
    let summary = json!({
        "toolkit_version": TOOLKIT_VERSION,
        "command": "gate",
        "decision_file": args.decision,
        "input": args.input.input,
        "method": saved.method,
        "alpha": saved.alpha,
        "status": if saved.decision.is_feasible() { "feasible" } else { "infeasible" },
        "n_records": records.len(),
        "accepted": accepted,
        "abstained": records.len() - accepted,
        "accepted_errors": errors,
        "fdr": (accepted > 0).then(|| errors as f64 / accepted as f64),
    });
    emit(&summary, args.out.as_deref(), "summary.json")
}

fn evaluate(args: &EvalArgs, compare: bool) -> Result<(), Error> {
    let data = args.input.load()?;
    let records = data.to_multi();
    let mut ids = vec![args.method.method];
    if compare {
        ids.extend(args.methods.iter().copied());
    } else if !args.methods.is_empty() {
        return Err(Error::InvalidParameter("--methods is only accepted by `compare`".into()));
    }
    let methods: Vec<Method> = ids.iter().map(|&id| args.method.method(id)).collect::<Result<_, _>>()?;
    let alpha_values: Vec<f64> = match args.alpha {
        Some(a) => vec![a],
        None => args.alphas.clone(),
    };
    let alphas: Vec<Alpha> = alpha_values.iter().map(|&a| alpha_of(a)).collect::<Result<_, _>>()?;
    let cfg = EvalConfig {
        delta: Delta::new(args.method.delta)?,
        ratio: args.ratio,
        n_splits: args.splits,
        seed: args.seed,
    };
    let evals = compare_methods(&records, &methods, &alphas, &cfg)?;
    let config = RunConfig {
        method: methods.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        alphas: alpha_values,
        delta: args.method.delta,
        ratio: args.ratio,
        n_splits: args.splits,
        seed: args.seed,
        strategy: args.method.strategy.into(),
        tie_policy: args.method.tie_policy.into(),
        model: args.method.model,
        input: Some(args.input.input.clone()),
        out: args.out.clone(),
    };
    if let Some(dir) = &args.out {
        write_eval_report(dir, &config, &evals)?;
    }
    let summaries: Vec<_> = evals.iter().map(|e| &e.summary).collect();
    let out = json!({
        "toolkit_version": TOOLKIT_VERSION,
        "command": if compare { "compare" } else { "evaluate" },
        "config": config,
        "rows": summaries,
    });
    print_json(&out);
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let spec: GenSpec = match &args.spec {
        Some(path) => {
            let mut s: GenSpec = read_json(path)?;
            s.seed = args.seed;
            s
        }
        None if args.theorem == TheoremArg::T2 => default_paired_spec(args.rho, args.seed),
        None => default_spec(args.seed),
    };
    spec.validate()?;
    if let Some(n) = args.generate {
        let data = if spec.second.is_some() {
            Dataset::Multi(gen_paired(&spec, n)?)
        } else {
            Dataset::Single(gen_single(&spec, n)?)
        };
        let dir = args
            .out
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("--generate needs --out".into()))?;
        ensure_dir(dir)?;
        let path = dir.join("synthetic.csv");
        write_dataset(&path, &data, Format::Csv)?;
        let out = json!({
            "toolkit_version": TOOLKIT_VERSION,
            "command": "simulate",
            "generated": n,
            "path": path,
            "spec": spec,
        });
        print_json(&out);
        return Ok(());
    }
    let cfg = McConfig {
        theorem: match args.theorem {
            TheoremArg::T1 => Theorem::T1,
            TheoremArg::T2 => Theorem::T2,
        },
        alpha: alpha_of(args.alpha)?,
        n_cal: args.n_cal,
        replications: args.replications,
        seed: args.seed,
        tie_policy: args.tie_policy.into(),
    };
    let correction = match args.correction {
        CorrectionArg::PlusOne => Correction::PlusOne,
        CorrectionArg::Unsmoothed => Correction::Unsmoothed,
    };
    let report = mc_validate_with(&spec, &cfg, correction)?;
    let out = json!({
        "toolkit_version": TOOLKIT_VERSION,
        "command": "simulate",
        "config": cfg,
        "spec": spec,
        "report": report,
    });
    emit(&out, args.out.as_deref(), "summary.json")
}

fn min_alpha(args: &MinAlphaArgs) -> Result<(), Error> {
    let data = args.input.load()?;
    let models = data.models();
    if args.model == 0 || args.model > models.max(1) {
        return Err(Error::InvalidParameter(format!(
            "--model {} out of range for {models} model(s)",
            args.model
        )));
    }
    let records: Vec<_> = data.to_multi().iter().map(|r| r.project(args.model - 1)).collect();
    let out = json!({
        "toolkit_version": TOOLKIT_VERSION,
        "command": "min-alpha",
        "input": args.input.input,
        "model": args.model,
        "n_records": records.len(),
        "min_feasible_alpha": min_feasible_alpha(&records),
    });
    print_json(&out);
    Ok(())
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim_end(), 2),
    };
    let result = match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Gate(a) => gate(a),
        Command::Evaluate(a) => evaluate(a, false),
        Command::Compare(a) => evaluate(a, true),
        Command::Simulate(a) => simulate(a),
        Command::MinAlpha(a) => min_alpha(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
