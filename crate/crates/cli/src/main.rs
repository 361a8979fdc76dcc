use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sparsepp::fit::{fit_model, FitOptions, FitOutcome, PenaltyKind};
use sparsepp::geometry::{Point, PointPattern, Window};
use sparsepp::io::{format_criteria, format_path, format_points, format_scheme, read_matrix, read_points, read_raster, write_file};
use sparsepp::model::{CovariateField, Interaction, ModelSpec};
use sparsepp::numeric::fmt_f64;
use sparsepp::quadrature::build_scheme;
use sparsepp::selection::{Criterion, DofMode};
use sparsepp::simulate::{campbell_check, gnz_check, sample_poisson, sample_strauss, IdentityCheck, SimConfig, CAMPBELL_GRID, DEFAULT_BURN_IN};
use sparsepp::solver::SolverOptions;
use sparsepp::study::{run_study, StudyConfig};
use sparsepp::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "sparsepp", version, about = "Sparse intensity estimation for spatial point patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a penalized log-linear (conditional) intensity model.
    Fit(FitArgs),
    /// Simulate a Poisson or Strauss pattern.
    Simulate(SimulateArgs),
    /// Monte-Carlo check of the Campbell or GNZ identity.
    Check(CheckArgs),
    /// Run a replicated simulation study from a config file.
    Study(StudyArgs),
    /// Write the quadrature scheme as CSV.
    DumpQuad(DumpArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Observation window `xmin,xmax,ymin,ymax`.
    #[arg(long, default_value = "0,1,0,1")]
    window: String,
    /// Raster covariate `name=path` (repeatable).
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Derived covariate `name=x|y|const|prod:a,b` (repeatable), added after raster covariates.
    #[arg(long = "covariate-expr")]
    exprs: Vec<String>,
    /// `none` or `strauss:R`.
    #[arg(long, default_value = "none")]
    interaction: String,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    points: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "adaptive")]
    penalty: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 100)]
    ntau: usize,
    #[arg(long = "tau-min-ratio", default_value_t = 1e-4)]
    tau_min_ratio: f64,
    /// Dummy grid `NXxNY`.
    #[arg(long, default_value = "32x32")]
    dummy: String,
    #[arg(long, default_value = "cbic")]
    criterion: String,
    /// Score covariance CSV for sandwich degrees of freedom.
    #[arg(long)]
    vmatrix: Option<PathBuf>,
    /// Result JSON; path and criteria CSVs are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the quadrature scheme CSV here.
    #[arg(long = "dump-quad")]
    dump_quad: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessKind {
    Poisson,
    Strauss,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Trend coefficients, intercept first.
    #[arg(long, allow_hyphen_values = true)]
    beta: String,
    #[arg(long, allow_hyphen_values = true)]
    psi: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "burn-in", default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "poisson")]
    model: ProcessKind,
    #[command(flatten)]
    truth: TruthArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Identity {
    Campbell,
    Gnz,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(value_enum)]
    identity: Identity,
    #[command(flatten)]
    truth: TruthArgs,
    /// Test functions: `one`, `x`, `y` and, for GNZ, `s1` (comma separated).
    #[arg(long, default_value = "one")]
    h: String,
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    config: PathBuf,
    /// Directory for the summary, replicate table and failure log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    /// Data points; without it the scheme has dummy nodes only.
    #[arg(long)]
    points: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "32x32")]
    dummy: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_window(s: &str) -> Result<Window> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| parse_err(format!("bad window '{s}'"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b, c, d] => Window::new(a, b, c, d),
        _ => Err(parse_err(format!("window needs four values, got '{s}'"))),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || parse_err(format!("dummy grid must look like 32x32, got '{s}'"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let nx: usize = a.trim().parse().map_err(|_| bad())?;
    let ny: usize = b.trim().parse().map_err(|_| bad())?;
    if nx == 0 || ny == 0 {
        return Err(bad());
    }
    Ok((nx, ny))
}

fn parse_interaction(s: &str) -> Result<Interaction> {
    if s == "none" {
        return Ok(Interaction::None);
    }
    let r = s
        .strip_prefix("strauss:")
        .and_then(|r| r.parse::<f64>().ok())
        .ok_or_else(|| parse_err(format!("interaction must be none or strauss:R, got '{s}'")))?;
    Interaction::strauss(r)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| parse_err(format!("'{t}' is not a number"))))
        .collect()
}

fn split_named<'a>(s: &'a str, flag: &str) -> Result<(&'a str, &'a str)> {
    match s.split_once('=') {
        Some((n, v)) if !n.trim().is_empty() => Ok((n.trim(), v.trim())),
        _ => Err(parse_err(format!("{flag} expects name=value, got '{s}'"))),
    }
}

/// Covariates in flag order (rasters, then expressions), intercept first.
fn build_model(a: &ModelArgs) -> Result<ModelSpec> {
    let window = parse_window(&a.window)?;
    let mut fields: Vec<CovariateField> = Vec::new();
    for c in &a.covariates {
        let (name, path) = split_named(c, "--covariate")?;
        fields.push(CovariateField::raster(name, read_raster(Path::new(path))?));
    }
    for e in &a.exprs {
        let (name, expr) = split_named(e, "--covariate-expr")?;
        let field = match expr {
            "x" => CovariateField::x(name),
            "y" => CovariateField::y(name),
            "const" => CovariateField::new(name, sparsepp::model::CovariateKind::Constant(1.0)),
            _ => {
                let args = expr
                    .strip_prefix("prod:")
                    .ok_or_else(|| parse_err(format!("unknown covariate expression '{expr}'")))?;
                let (p, q) = args.split_once(',').ok_or_else(|| parse_err(format!("prod needs two names, got '{args}'")))?;
                let find = |n: &str| {
                    fields
                        .iter()
                        .find(|f| f.name() == n.trim())
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("prod refers to unknown covariate '{}'", n.trim())))
                };
                CovariateField::product(name, find(p)?, find(q)?)
            }
        };
        fields.push(field);
    }
    let mut names: Vec<&str> = fields.iter().map(|f| f.name()).collect();
    names.push("intercept");
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("covariate name '{}' is used twice", w[0])));
    }
    ModelSpec::with_intercept(window, fields, parse_interaction(&a.interaction)?)
}

fn with_truth(a: &TruthArgs) -> Result<ModelSpec> {
    let mut m = build_model(&a.model)?;
    let mut theta = parse_list(&a.beta)?;
    match (m.psi().is_some(), a.psi) {
        (true, Some(psi)) => theta.push(psi),
        (true, None) => return Err(Error::Config("a Strauss model needs --psi".into())),
        (false, Some(_)) => return Err(Error::Config("--psi needs --interaction strauss:R".into())),
        (false, None) => {}
    }
    m.set_coefficients(&theta)?;
    Ok(m)
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::Number(fmt_f64(v).parse().expect("formatted float parses"))
    } else {
        Value::Null
    }
}

fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

fn window_json(w: &Window) -> Value {
    json!([num(w.xmin()), num(w.xmax()), num(w.ymin()), num(w.ymax())])
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn result_document(f: &FitOutcome, window: &Window, opts: &FitOptions, files: (Option<String>, Option<String>)) -> Value {
    let s = &f.scheme;
    let names = f.names();
    let multipliers = f.plan.as_ref().map(|p| p.multipliers().to_vec());
    let coefficients: Vec<Value> = names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            json!({
                "name": n,
                "estimate": num(f.selected[j]),
                "unpenalized": opt_num(f.unpenalized.as_ref().map(|b| b[j])),
                "multiplier": opt_num(multipliers.as_ref().map(|m| m[j])),
            })
        })
        .collect();
    let d = &f.diagnostics;
    let (kkt_max, converged) = match &f.path {
        Some(p) => (
            p.kkt.iter().zip(&p.converged).filter(|(_, c)| **c).map(|(k, _)| *k).fold(0.0, f64::max),
            p.converged.iter().filter(|c| **c).count(),
        ),
        None => (d.kkt_selected, 1),
    };
    let criterion_value =
        f.table.as_ref().zip(f.selected_index).map(|(t, i)| match opts.criterion {
            Criterion::Cbic => t.records[i].cbic,
            Criterion::Ceric => t.records[i].ceric.unwrap_or(f64::NAN),
        });
    json!({
        "format_version": FORMAT_VERSION,
        "window": window_json(window),
        "domain": window_json(s.domain()),
        "n_data": s.n_data(),
        "n_dummy": s.n_dummy(),
        "dummy_grid": [s.dummy_grid().0, s.dummy_grid().1],
        "penalty": opts.penalty.to_string(),
        "gamma": if opts.penalty == PenaltyKind::Adaptive { num(opts.gamma) } else { Value::Null },
        "criterion": if opts.penalty == PenaltyKind::None { Value::Null } else { json!(opts.criterion.to_string()) },
        "coefficients": coefficients,
        "selected": {
            "tau": num(f.selected_tau),
            "index": f.selected_index,
            "criterion_value": opt_num(criterion_value),
            "tau_max": opt_num(f.path.as_ref().map(|p| p.tau_max)),
        },
        "diagnostics": {
            "weight_sum": num(s.weight_sum()),
            "domain_area": num(s.domain().area()),
            "weight_sum_error": num(d.weight_sum_error),
            "sparse_dummies": d.sparse_dummies,
            "a_n": opt_num(d.a_n),
            "b_n": opt_num(d.b_n),
            "kkt_selected": num(d.kkt_selected),
            "kkt_max_converged": num(kkt_max),
            "converged_points": converged,
            "failed_path_points": d.failed_path_points,
            "dof_monotone": d.dof_monotone,
            "pilot_ridge": opt_num(d.pilot_ridge),
        },
        "path": f.path.as_ref().map(|p| json!({
            "taus": p.taus.iter().map(|t| num(*t)).collect::<Vec<_>>(),
            "coefficients": p.coefficients.iter().map(|row| row.iter().map(|b| num(*b)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "loglik": p.loglik.iter().map(|l| num(*l)).collect::<Vec<_>>(),
            "kkt": p.kkt.iter().map(|k| num(*k)).collect::<Vec<_>>(),
            "converged": p.converged,
            "iterations": p.iterations,
            "errors": p.errors,
            "mu_hat": num(p.mu_hat),
        })),
        "criteria": f.table.as_ref().map(|t| t.records.iter().map(|r| json!({
            "tau": num(r.tau),
            "loglik": num(r.loglik),
            "dof": num(r.dof),
            "cbic": num(r.cbic),
            "ceric": opt_num(r.ceric),
            "converged": r.converged,
        })).collect::<Vec<_>>()),
        "path_csv": files.0,
        "criteria_csv": files.1,
    })
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let m = build_model(&a.model)?;
    let window = *m.window();
    let pattern = read_points(&a.points, window)?;
    let dof = match &a.vmatrix {
        Some(p) => DofMode::Sandwich(read_matrix(p)?),
        None => DofMode::Count,
    };
    let opts = FitOptions {
        penalty: a.penalty.parse()?,
        gamma: a.gamma,
        solver: SolverOptions { n_tau: a.ntau, tau_min_ratio: a.tau_min_ratio, ..Default::default() },
        dummy_grid: parse_grid(&a.dummy)?,
        criterion: a.criterion.parse()?,
        dof,
    };
    if let Some(p) = &a.dump_quad {
        write_file(p, &format_scheme(&build_scheme(&pattern, &m, opts.dummy_grid)?))?;
    }
    let f = fit_model(&pattern, &m, &opts)?;
    if f.diagnostics.sparse_dummies {
        eprintln!(
            "warning: {} dummy nodes for {} data points; a finer --dummy grid is advisable",
            f.scheme.n_dummy(),
            f.scheme.n_data()
        );
    }
    let mut files = (None, None);
    if let (Some(out), Some(path), Some(table)) = (&a.out, &f.path, &f.table) {
        let (pp, cp) = (sidecar(out, "path.csv"), sidecar(out, "criteria.csv"));
        write_file(&pp, &format_path(path))?;
        write_file(&cp, &format_criteria(table))?;
        files = (Some(pp.display().to_string()), Some(cp.display().to_string()));
    }
    let doc = result_document(&f, &window, &opts, files);
    let text = serde_json::to_string_pretty(&doc).expect("json serialises") + "\n";
    emit(a.out.as_deref(), &text)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let m = with_truth(&a.truth)?;
    let mut cfg = SimConfig::new(m, a.truth.seed);
    cfg.burn_in = a.truth.burn_in;
    cfg.sweeps = 0;
    let p: PointPattern = match a.model {
        ProcessKind::Poisson => sample_poisson(&cfg)?,
        ProcessKind::Strauss => {
            if cfg.model.psi().is_none() {
                return Err(Error::Config("--model strauss needs --interaction strauss:R and --psi".into()));
            }
            sample_strauss(&cfg)?
        }
    };
    emit(a.out.as_deref(), &format_points(&p))
}

fn check_line(name: &str, h: &str, c: &IdentityCheck) -> String {
    format!(
        "{name},{h},{},{},{},{},{}\n",
        fmt_f64(c.lhs),
        fmt_f64(c.rhs),
        fmt_f64(c.z),
        c.replicates,
        if c.passes(3.0) { "pass" } else { "fail" }
    )
}

fn cmd_check(a: &CheckArgs) -> Result<()> {
    let m = with_truth(&a.truth)?;
    let mut out = String::from("identity,h,lhs,rhs,z,replicates,result\n");
    for h in a.h.split(',').map(str::trim) {
        let line = match a.identity {
            Identity::Campbell => {
                let f: Box<dyn Fn(Point) -> f64 + Sync> = match h {
                    "one" => Box::new(|_| 1.0),
                    "x" => Box::new(|u: Point| u.x),
                    "y" => Box::new(|u: Point| u.y),
                    _ => return Err(Error::Config(format!("unknown Campbell test function '{h}'"))),
                };
                check_line("campbell", h, &campbell_check(&m, f.as_ref(), a.replicates, a.truth.seed)?)
            }
            Identity::Gnz => {
                let r = m.interaction().range();
                let f: Box<sparsepp::simulate::GnzFunction<'_>> = match (h, r) {
                    ("one", _) => Box::new(|_, _, _| 1.0),
                    ("x", _) => Box::new(|u: Point, _, _| u.x),
                    ("y", _) => Box::new(|u: Point, _, _| u.y),
                    ("s1", Some(r)) => Box::new(move |u, idx, ex| idx.count_within(u, r, ex) as f64),
                    _ => return Err(Error::Config(format!("unknown GNZ test function '{h}'"))),
                };
                let c = gnz_check(&m, f.as_ref(), a.replicates, a.truth.seed, a.truth.burn_in, CAMPBELL_GRID / 4)?;
                check_line("gnz", h, &c)
            }
        };
        out.push_str(&line);
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_study(a: &StudyArgs) -> Result<()> {
    let cfg = StudyConfig::load(&a.config)?;
    let report = run_study(&cfg)?;
    for line in &report.log {
        eprintln!("{line}");
    }
    let summary = report.summary_csv();
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("study_summary.csv"), &summary)?;
        write_file(&dir.join("study_replicates.csv"), &report.replicates_csv())?;
        let mut log = report.log.join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        write_file(&dir.join("study_log.txt"), &log)?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_dump_quad(a: &DumpArgs) -> Result<()> {
    let m = build_model(&a.model)?;
    let p = match &a.points {
        Some(path) => read_points(path, *m.window())?,
        None => PointPattern::empty(*m.window()),
    };
    let s = build_scheme(&p, &m, parse_grid(&a.dummy)?)?;
    let err = s.weight_sum_error();
    if !(err <= 1e-10) {
        return Err(Error::NonFinite(format!("weights sum to {} over a domain of area {}", s.weight_sum(), s.domain().area())));
    }
    emit(a.out.as_deref(), &format_scheme(&s))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Check(a) => cmd_check(a),
        Command::Study(a) => cmd_study(a),
        Command::DumpQuad(a) => cmd_dump_quad(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
