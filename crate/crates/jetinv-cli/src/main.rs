//! `jetinv`: JSON front end for the jet-space workflows.
//!
//! Subcommands: `prolong` (lift a projectable field to the curve-jet line
//! bundle), `rank` (numeric rank of the symmetry distribution), `invariant`
//! (evaluate V, I, K on a grid), `transform` (apply a bundle automorphism to
//! a Lagrangian), and `check` (compare two Lagrangians).
//!
//! Stdout carries exactly one JSON document; human diagnostics go to stderr.
//! Exit codes: 0 success or inconclusive, 2 input error, 3 domain or
//! sampling error, 4 the two Lagrangians were distinguished.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use jetinv::distribution::{generic_rank, DistributionError, RankExperiment};
use jetinv::equivalence::{
    check_candidate, distinguish, Automorphism, DistinguishOptions, EquivalenceError,
    EquivalenceVerdict, GridSpec, VerdictStatus, CANDIDATE_TOL,
};
use jetinv::invariants::{hessian, invariant_value, J1Point, Lagrangian};
use jetinv::jet::EtaRoute;
use jetinv::prolong::{LiftedField, ProjectableField};
use jetinv::{Binding, Expr, Scalar};

const EXIT_DISTINGUISHED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "jetinv",
    version,
    about = "Symmetry distributions and scalar invariants of first-order Lagrangians on curves"
)]
struct Cli {
    /// Pretty-print the JSON report with this many spaces per level.
    #[arg(long, global = true)]
    json_indent: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prolong the lift of a projectable field to the order-r jet space.
    Prolong(ProlongArgs),
    /// Estimate the generic rank of the order-r symmetry distribution.
    Rank(RankArgs),
    /// Evaluate V, I (and K when m = 2) on a grid of first-order points.
    Invariant(InvariantArgs),
    /// Apply a fiber-preserving automorphism to a Lagrangian.
    Transform(TransformArgs),
    /// Compare two Lagrangians from a problem file.
    Check(CheckArgs),
}

#[derive(Args)]
struct ProlongArgs {
    /// Dimension of the curve target.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Base component u(x).
    #[arg(long, default_value = "0")]
    u: String,
    /// Fiber components v^a(x, y); repeat the flag or comma-separate.
    #[arg(long = "v")]
    v: Vec<String>,
    /// Jet order of the prolongation (1 or 2).
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Evaluate the coefficients at `var=value,...` over all jet coordinates.
    #[arg(long)]
    at: Option<String>,
}

#[derive(Args)]
struct RankArgs {
    /// Dimension of the curve target (1 through 5).
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Distribution order (0, 1, or 2).
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// RNG seed for point and field sampling.
    #[arg(long, env = "JETINV_SEED", default_value_t = 0)]
    seed: u64,
    /// Spanning fields drawn per point (default: ambient dimension + 16).
    #[arg(long)]
    samples: Option<usize>,
    /// Guarded sample points.
    #[arg(long)]
    points: Option<usize>,
    /// Relative singular-value cutoff.
    #[arg(long)]
    tol: Option<Scalar>,
}

#[derive(Args)]
struct InvariantArgs {
    /// Lagrangian expression in x, y^a, dy^a.
    lagrangian: String,
    /// Dimension of the curve target.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Grid axes `var=value` or `var=lo:hi:count`; repeat or comma-separate.
    #[arg(long = "grid")]
    grid: Vec<String>,
}

#[derive(Args)]
struct TransformArgs {
    /// Lagrangian expression in x, y^a, dy^a.
    lagrangian: String,
    /// Dimension of the curve target.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Base map phi(x).
    #[arg(long, default_value = "x")]
    phi: String,
    /// Fiber map components Psi^a(x, y); defaults to the identity.
    #[arg(long = "psi")]
    psi: Vec<String>,
    /// Evaluate the transformed Lagrangian at `x=..,y1=..,dy1=..`.
    #[arg(long)]
    at: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Problem description file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Compare the m = 2 curvature too (sound for vertical candidates only).
    #[arg(long)]
    vertical: bool,
    /// Override the candidate residual tolerance.
    #[arg(long)]
    tol: Option<Scalar>,
}

/// Failures split by exit code: bad input (2) versus an empty domain or
/// exhausted sampling budget (3).
enum Failure {
    Input(String),
    Domain(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Domain(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Domain(m) => m,
        }
    }
}

fn input(err: impl std::fmt::Display) -> Failure {
    Failure::Input(err.to_string())
}

fn domain(err: impl std::fmt::Display) -> Failure {
    Failure::Domain(err.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let indent = cli.json_indent;
    let outcome = match cli.command {
        Command::Prolong(args) => cmd_prolong(&args, indent),
        Command::Rank(args) => cmd_rank(&args, indent),
        Command::Invariant(args) => cmd_invariant(&args, indent),
        Command::Transform(args) => cmd_transform(&args, indent),
        Command::Check(args) => cmd_check(&args, indent),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

// ---------------------------------------------------------------- reports

/// Serialize through `serde_json::Value` so every float can be printed with
/// 17 significant digits; object keys come out sorted, which keeps reports
/// byte-identical across runs.
fn emit<T: Serialize>(report: &T, indent: Option<usize>) -> Result<(), Failure> {
    let value = serde_json::to_value(report).map_err(input)?;
    let mut out = String::new();
    write_value(&value, indent, 0, &mut out);
    println!("{out}");
    Ok(())
}

fn write_value(value: &serde_json::Value, indent: Option<usize>, level: usize, out: &mut String) {
    match value {
        serde_json::Value::Null => out.push_str("null"),
        serde_json::Value::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("checked f64");
                if x.is_finite() {
                    let _ = write!(out, "{x:.16e}");
                } else {
                    out.push_str("null");
                }
            } else {
                let _ = write!(out, "{n}");
            }
        }
        serde_json::Value::String(s) => {
            out.push_str(&serde_json::Value::String(s.clone()).to_string());
        }
        serde_json::Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                break_line(indent, level + 1, out);
                write_value(item, indent, level + 1, out);
            }
            break_line(indent, level, out);
            out.push(']');
        }
        serde_json::Value::Object(fields) => {
            if fields.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                break_line(indent, level + 1, out);
                out.push_str(&serde_json::Value::String(key.clone()).to_string());
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(item, indent, level + 1, out);
            }
            break_line(indent, level, out);
            out.push('}');
        }
    }
}

fn break_line(indent: Option<usize>, level: usize, out: &mut String) {
    if let Some(width) = indent {
        out.push('\n');
        out.extend(std::iter::repeat(' ').take(width * level));
    }
}

// ----------------------------------------------------------- input parsing

/// Flatten repeated flags whose occurrences may also be comma-separated.
fn flatten_commas(raw: &[String]) -> Vec<String> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_expr(src: &str) -> Result<Expr, Failure> {
    jetinv::expr::parse(src).map_err(|e| input(format!("in `{src}`: {e}")))
}

/// `var=value,var=value,...` with every value a float.
fn parse_assignments(spec: &str) -> Result<Vec<(String, Scalar)>, Failure> {
    let mut out = Vec::new();
    for pair in spec.split(',') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| input(format!("expected `var=value`, got `{pair}`")))?;
        let value: Scalar = value
            .trim()
            .parse()
            .map_err(|e| input(format!("value for `{}`: {e}", name.trim())))?;
        out.push((name.trim().to_string(), value));
    }
    if out.is_empty() {
        return Err(input("empty point specification"));
    }
    Ok(out)
}

/// A J1 point `x=..,y1=..,dy1=..` with every coordinate required.
fn parse_j1_point(m: usize, spec: &str) -> Result<J1Point<Scalar>, Failure> {
    let assignments = parse_assignments(spec)?;
    let lookup = |name: &str| -> Result<Scalar, Failure> {
        assignments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| input(format!("point is missing `{name}`")))
    };
    let x = lookup("x")?;
    let y = (1..=m)
        .map(|a| lookup(&format!("y{a}")))
        .collect::<Result<Vec<_>, _>>()?;
    let dy = (1..=m)
        .map(|a| lookup(&format!("dy{a}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(J1Point::new(x, y, dy))
}

/// One grid axis: `var=value` or `var=lo:hi:count`.
fn parse_axis(entry: &str) -> Result<(String, Vec<Scalar>), Failure> {
    let (name, spec) = entry
        .split_once('=')
        .ok_or_else(|| input(format!("expected `var=spec`, got `{entry}`")))?;
    let name = name.trim().to_string();
    let spec = spec.trim();
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(input(format!("axis `{name}`: expected `lo:hi:count`")));
        }
        let lo: Scalar = parts[0]
            .trim()
            .parse()
            .map_err(|e| input(format!("axis `{name}` lower bound: {e}")))?;
        let hi: Scalar = parts[1]
            .trim()
            .parse()
            .map_err(|e| input(format!("axis `{name}` upper bound: {e}")))?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|e| input(format!("axis `{name}` count: {e}")))?;
        spread(lo, hi, count).ok_or_else(|| input(format!("axis `{name}`: count must be >= 1")))?
    } else {
        let value: Scalar = spec
            .parse()
            .map_err(|e| input(format!("axis `{name}`: {e}")))?;
        vec![value]
    };
    Ok((name, values))
}

fn spread(lo: Scalar, hi: Scalar, count: usize) -> Option<Vec<Scalar>> {
    match count {
        0 => None,
        1 => Some(vec![lo]),
        _ => {
            let step = (hi - lo) / (count - 1) as Scalar;
            Some((0..count).map(|k| lo + step * k as Scalar).collect())
        }
    }
}

fn build_grid(m: usize, entries: &[String]) -> Result<GridSpec<Scalar>, Failure> {
    let mut grid = GridSpec::new(m);
    for entry in flatten_commas(entries) {
        let (name, values) = parse_axis(&entry)?;
        grid.set_axis(&name, values).map_err(input)?;
    }
    Ok(grid)
}

fn identity_psi(m: usize) -> Vec<String> {
    (1..=m).map(|a| format!("y{a}")).collect()
}

// -------------------------------------------------------------- subcommands

#[derive(Serialize)]
struct ProlongReport {
    m: usize,
    order: usize,
    u: String,
    v: Vec<String>,
    coefficients: BTreeMap<String, String>,
    values: Option<BTreeMap<String, Scalar>>,
}

fn cmd_prolong(args: &ProlongArgs, indent: Option<usize>) -> Result<u8, Failure> {
    if args.m == 0 {
        return Err(input("--m must be at least 1"));
    }
    if !(1..=2).contains(&args.order) {
        return Err(input("--order must be 1 or 2"));
    }
    let u = parse_expr(&args.u)?;
    let mut v_specs = flatten_commas(&args.v);
    if v_specs.is_empty() {
        v_specs = vec!["0".to_string(); args.m];
    }
    if v_specs.len() != args.m {
        return Err(input(format!(
            "expected {} fiber component(s), got {}",
            args.m,
            v_specs.len()
        )));
    }
    let v = v_specs
        .iter()
        .map(|s| parse_expr(s))
        .collect::<Result<Vec<_>, _>>()?;
    let field = ProjectableField::new(args.m, u, v).map_err(input)?;
    let lifted = LiftedField::from_field(&field, args.order, EtaRoute::Leibniz).map_err(input)?;

    let coefficients: BTreeMap<String, String> = lifted
        .components()
        .iter()
        .map(|(alias, f)| (alias.as_str().to_string(), f.expr().to_string()))
        .collect();

    let values = match &args.at {
        None => None,
        Some(spec) => {
            let mut binding = Binding::new();
            for (name, value) in parse_assignments(spec)? {
                binding.set(name, value);
            }
            let mut values = BTreeMap::new();
            for (alias, f) in lifted.components() {
                let value = f.expr().eval(&binding).map_err(input)?;
                values.insert(alias.as_str().to_string(), value);
            }
            Some(values)
        }
    };

    eprintln!(
        "prolonged ({}) d/dx + sum v^a d/dy^a to order {} over {} coordinates",
        field.u(),
        args.order,
        coefficients.len()
    );
    emit(
        &ProlongReport {
            m: args.m,
            order: args.order,
            u: field.u().to_string(),
            v: field.v().iter().map(|e| e.to_string()).collect(),
            coefficients,
            values,
        },
        indent,
    )?;
    Ok(0)
}

fn cmd_rank(args: &RankArgs, indent: Option<usize>) -> Result<u8, Failure> {
    if !(1..=5).contains(&args.m) {
        return Err(input("--m must be between 1 and 5"));
    }
    if args.order > 2 {
        return Err(input("--order must be 0, 1, or 2"));
    }
    let mut experiment = RankExperiment::<Scalar>::new(args.m, args.order).with_seed(args.seed);
    if let Some(samples) = args.samples {
        experiment = experiment.with_samples(samples);
    }
    if let Some(points) = args.points {
        experiment = experiment.with_points(points);
    }
    if let Some(tol) = args.tol {
        experiment = experiment.with_tolerance(tol);
    }
    let result = generic_rank(&experiment).map_err(|e| match e {
        DistributionError::InvalidExperiment { .. } | DistributionError::Jet(_) => input(e),
        _ => domain(e),
    })?;
    eprintln!(
        "rank {} of ambient {} (expected {}, corank {})",
        result.rank,
        result.ambient,
        result
            .expected
            .map_or_else(|| "unknown".to_string(), |e| e.to_string()),
        result.ambient - result.rank
    );
    emit(&result, indent)?;
    Ok(0)
}

#[derive(Serialize)]
struct PointReport {
    point: J1Point<Scalar>,
    v: Option<Scalar>,
    i: Option<Scalar>,
    k: Option<Scalar>,
    signature: Option<(usize, usize)>,
    error: Option<String>,
}

#[derive(Serialize)]
struct InvariantReport {
    m: usize,
    lagrangian: String,
    evaluated: usize,
    failed: usize,
    points: Vec<PointReport>,
}

fn cmd_invariant(args: &InvariantArgs, indent: Option<usize>) -> Result<u8, Failure> {
    if args.m == 0 {
        return Err(input("--m must be at least 1"));
    }
    let lagrangian = Lagrangian::parse(args.m, &args.lagrangian).map_err(input)?;
    let grid = build_grid(args.m, &args.grid)?;

    let mut points = Vec::new();
    let mut evaluated = 0;
    let mut failed = 0;
    for p in grid.points() {
        match invariant_value(&lagrangian, &p) {
            Ok(value) => {
                let signature = hessian(&lagrangian, &p).map_err(domain)?.signature();
                evaluated += 1;
                points.push(PointReport {
                    point: value.point,
                    v: Some(value.v),
                    i: Some(value.i),
                    k: value.k,
                    signature,
                    error: None,
                });
            }
            Err(e) => {
                failed += 1;
                points.push(PointReport {
                    point: p,
                    v: None,
                    i: None,
                    k: None,
                    signature: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if evaluated == 0 {
        return Err(domain(format!(
            "no grid point admitted the invariants ({failed} failed); \
             the Lagrangian may be outside its domain on this grid"
        )));
    }
    eprintln!("evaluated {evaluated} point(s), {failed} failed");
    emit(
        &InvariantReport {
            m: args.m,
            lagrangian: lagrangian.expr().to_string(),
            evaluated,
            failed,
            points,
        },
        indent,
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct TransformReport {
    m: usize,
    phi: String,
    psi: Vec<String>,
    vertical: bool,
    lagrangian: String,
    transformed: String,
    at: Option<J1Point<Scalar>>,
    value: Option<Scalar>,
}

fn cmd_transform(args: &TransformArgs, indent: Option<usize>) -> Result<u8, Failure> {
    if args.m == 0 {
        return Err(input("--m must be at least 1"));
    }
    let lagrangian = Lagrangian::parse(args.m, &args.lagrangian).map_err(input)?;
    let mut psi = flatten_commas(&args.psi);
    if psi.is_empty() {
        psi = identity_psi(args.m);
    }
    let psi_refs: Vec<&str> = psi.iter().map(String::as_str).collect();
    let automorphism = Automorphism::parse(args.m, &args.phi, &psi_refs).map_err(input)?;
    let moved = automorphism
        .transform_lagrangian(&lagrangian)
        .map_err(input)?;

    let (at, value) = match &args.at {
        None => (None, None),
        Some(spec) => {
            let p = parse_j1_point(args.m, spec)?;
            automorphism.guards_at(&p).map_err(domain)?;
            let value = moved.value(&p).map_err(domain)?;
            (Some(p), Some(value))
        }
    };

    eprintln!(
        "transformed under phi = {}, {} map",
        automorphism.phi(),
        if automorphism.is_vertical() {
            "vertical"
        } else {
            "non-vertical"
        }
    );
    emit(
        &TransformReport {
            m: args.m,
            phi: automorphism.phi().to_string(),
            psi: automorphism.psi().iter().map(|e| e.to_string()).collect(),
            vertical: automorphism.is_vertical(),
            lagrangian: lagrangian.expr().to_string(),
            transformed: moved.expr().to_string(),
            at,
            value,
        },
        indent,
    )?;
    Ok(0)
}

/// Self-describing comparison problem: two Lagrangians, an optional
/// candidate automorphism, and optional grid and tolerance overrides.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    m: usize,
    l1: String,
    l2: String,
    #[serde(default)]
    phi: Option<String>,
    #[serde(default)]
    psi: Option<Vec<String>>,
    #[serde(default)]
    grid: Option<BTreeMap<String, GridAxis>>,
    #[serde(default)]
    tol_abs: Option<Scalar>,
    #[serde(default)]
    tol_rel: Option<Scalar>,
    #[serde(default)]
    candidate_tol: Option<Scalar>,
    #[serde(default)]
    vertical: Option<bool>,
}

/// Grid axis in a problem file: a single value or `[lo, hi, count]`.
#[derive(Deserialize)]
#[serde(untagged)]
enum GridAxis {
    Value(Scalar),
    Range([Scalar; 3]),
}

impl GridAxis {
    fn values(&self, name: &str) -> Result<Vec<Scalar>, Failure> {
        match self {
            GridAxis::Value(v) => Ok(vec![*v]),
            GridAxis::Range([lo, hi, count]) => {
                if count.fract() != 0.0 || *count < 1.0 {
                    return Err(input(format!(
                        "grid axis `{name}`: count must be a positive integer"
                    )));
                }
                Ok(spread(*lo, *hi, *count as usize).expect("count checked above"))
            }
        }
    }
}

fn cmd_check(args: &CheckArgs, indent: Option<usize>) -> Result<u8, Failure> {
    let raw = std::fs::read_to_string(&args.problem)
        .map_err(|e| input(format!("{}: {e}", args.problem.display())))?;
    let problem: ProblemFile = serde_json::from_str(&raw)
        .map_err(|e| input(format!("{}: {e}", args.problem.display())))?;
    if problem.m == 0 {
        return Err(input("problem file: m must be at least 1"));
    }

    let first = Lagrangian::parse(problem.m, &problem.l1)
        .map_err(|e| input(format!("l1: {e}")))?;
    let second = Lagrangian::parse(problem.m, &problem.l2)
        .map_err(|e| input(format!("l2: {e}")))?;

    let mut grid = GridSpec::new(problem.m);
    if let Some(axes) = &problem.grid {
        for (name, axis) in axes {
            grid.set_axis(name, axis.values(name)?).map_err(input)?;
        }
    }

    let options = DistinguishOptions {
        vertical: args.vertical || problem.vertical.unwrap_or(false),
        tol_abs: problem.tol_abs.unwrap_or(1e-6),
        tol_rel: problem.tol_rel.unwrap_or(1e-6),
    };
    let candidate_tol = args
        .tol
        .or(problem.candidate_tol)
        .unwrap_or(CANDIDATE_TOL);

    // A provided candidate is verified first; on success there is nothing
    // left to distinguish.
    let mut candidate = None;
    if let Some(phi_src) = &problem.phi {
        let psi = problem.psi.clone().unwrap_or_else(|| identity_psi(problem.m));
        let psi_refs: Vec<&str> = psi.iter().map(String::as_str).collect();
        let automorphism = Automorphism::parse(problem.m, phi_src, &psi_refs)
            .map_err(|e| input(format!("candidate map: {e}")))?;
        let report = check_candidate(
            &first,
            &second,
            &automorphism,
            &grid.points(),
            candidate_tol,
        )
        .map_err(check_failure)?;
        eprintln!(
            "candidate map: {} of {} point(s) checked, max residual {:.3e}",
            report.checked,
            report.checked + report.skipped,
            report.max_relative_residual
        );
        if report.pass {
            let verdict = EquivalenceVerdict {
                status: VerdictStatus::EquivalentUnderGivenMap,
                separating_invariant: None,
                gap: None,
                candidate: Some(report),
                ranges: Vec::new(),
                tol_abs: options.tol_abs,
                tol_rel: options.tol_rel,
            };
            emit(&verdict, indent)?;
            return Ok(0);
        }
        candidate = Some(report);
    }

    let mut verdict = distinguish(&first, &second, &grid, &options).map_err(check_failure)?;
    verdict.candidate = candidate;
    let code = match verdict.status {
        VerdictStatus::Distinguished => {
            let which = verdict.separating_invariant.as_deref().unwrap_or("?");
            eprintln!("distinguished by {which}");
            EXIT_DISTINGUISHED
        }
        _ => {
            eprintln!("inconclusive: invariant ranges overlap");
            0
        }
    };
    emit(&verdict, indent)?;
    Ok(code)
}

/// Construction problems are the user's input; evaluation and sampling
/// problems are the domain's.
fn check_failure(e: EquivalenceError) -> Failure {
    match e {
        EquivalenceError::PhiVariables(_)
        | EquivalenceError::PsiVariables { .. }
        | EquivalenceError::ComponentCount { .. }
        | EquivalenceError::ConstantPhi => input(e),
        _ => domain(e),
    }
}
