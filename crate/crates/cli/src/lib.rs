//! Command-line front-end for the crossworld engine.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 semantic error
//! (counterlegal antecedent, zero-probability evidence), 3 backend
//! unsupported. Rendered results go to standard output, diagnostics to
//! standard error; nothing is printed on standard output when a command
//! fails. Identical invocations with identical seeds produce
//! byte-identical standard output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crossworld::backtracking::{
    backtracking_counterfactual, Backend, CrossWorldPosterior, McOptions,
};
use crossworld::explain::{
    attribution_score, fixed_remainder_explanation, map_explanation, shapley_attribution,
    sparse_explanations, AttributionTask, Calibration, ExplanationTask,
};
use crossworld::interventional::interventional_counterfactual;
use crossworld::io::{
    fmt_num, parse_model, parse_query, render_distribution, render_value, Format, ModelFile,
    QuerySpec,
};
use crossworld::unified::{
    augment, compose_kernel, default_observational_regime_prior, regime_flip_kernel, regime_name,
    shared_u_kernel, unified_counterfactual,
};
use crossworld::{endogenous_distribution, endogenous_distribution_mc};
use crossworld::{Assignment, Distribution, Error, Result, Value};

#[derive(Parser)]
#[command(
    name = "crossworld",
    version,
    about = "Observational, interventional, and backtracking counterfactual inference over structural causal models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a model file
    Validate {
        /// Path to the .model file
        #[arg(long)]
        model: PathBuf,
    },
    /// Solve the structural laws for a full exogenous assignment
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Exogenous assignment, e.g. "U_X=1,U_Y=1,U_Z=0"
        #[arg(long)]
        given: String,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Run a query: observe, intervene, backtrack, or unified
    ///
    /// The query text starts with its selector, e.g.
    /// `backtrack given X=1,Y=2,Z=2 had Y*=3 find X*,Z*`.
    Query {
        #[arg(long)]
        model: PathBuf,
        /// Inline query text (or use --query for a .query file)
        text: Option<String>,
        /// Path to a .query file
        #[arg(long)]
        query: Option<PathBuf>,
        /// auto, exact, gaussian, or mc (overrides the query's `with` clause)
        #[arg(long)]
        backend: Option<String>,
        /// Monte Carlo sample count (default 100000)
        #[arg(long)]
        samples: Option<usize>,
        /// Random seed (default 0)
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "table")]
        format: String,
        /// Regime flip probability for unified queries (0 disables
        /// regime changes not forced by regime evidence)
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
    },
    /// Counterfactual explanations of a predictor's output
    Explain {
        #[command(subcommand)]
        which: ExplainCmd,
    },
    /// Attribution scores for exogenous causes of an observed outcome
    Attribute {
        #[arg(long)]
        model: PathBuf,
        /// Full endogenous observation, e.g. "C=1,A=1,B=1,P=1"
        #[arg(long)]
        observation: String,
        /// Endogenous outcome variable to attribute
        #[arg(long)]
        target: String,
        /// Calibration: identity (larger is worse) or negated
        #[arg(long, default_value = "identity")]
        tau: String,
        /// Exogenous subset to clamp, e.g. "U1,U2" (use "" for the empty set)
        #[arg(long)]
        subset: Option<String>,
        /// Shapley attribution over all exogenous variables
        #[arg(long)]
        shapley: bool,
        /// Permutation samples for --shapley
        #[arg(long, default_value_t = 200)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Verify the model's backtracking kernel properties
    CheckKernel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
}

#[derive(Args)]
struct ExplainCommon {
    #[arg(long)]
    model: PathBuf,
    /// Factual endogenous observation including the predictor's value
    #[arg(long)]
    observation: String,
    /// The predictor variable whose output is being explained
    #[arg(long)]
    predictor: String,
    /// The desired (counterfactual) predictor output
    #[arg(long)]
    desired: String,
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Subcommand)]
enum ExplainCmd {
    /// Most plausible counterfactual feature vector (MAP projection)
    Map {
        #[command(flatten)]
        common: ExplainCommon,
    },
    /// Ranked sparse explanations changing at most k features
    Sparse {
        #[command(flatten)]
        common: ExplainCommon,
        /// Maximum number of changed features
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Minimum posterior score to report
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// MAP values for a fixed feature subset, all others pinned factual
    Fixed {
        #[command(flatten)]
        common: ExplainCommon,
        /// Features allowed to change, e.g. "A,B"
        #[arg(long)]
        features: String,
    },
}

/// Entry point used by `main` and by the tests; returns the exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I: IntoIterator<Item = String>>(
    args: I,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let argv = std::iter::once("crossworld".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 1;
            }
            // --help / --version
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match dispatch(&cli.cmd) {
        Ok(Rendered { stdout, stderr }) => {
            let _ = out.write_all(stdout.as_bytes());
            let _ = err.write_all(stderr.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CounterlegalAntecedent(_) | Error::ZeroProbabilityEvidence(_) => 2,
        Error::UnsupportedBackend(_) | Error::UnboundedNormalizer(_) | Error::Undecidable(_) => 3,
        _ => 1,
    }
}

/// Complete output of a successful command; buffered so error paths never
/// leave partial results on standard output.
struct Rendered {
    stdout: String,
    stderr: String,
}

impl Rendered {
    fn new(stdout: String) -> Self {
        Rendered {
            stdout,
            stderr: String::new(),
        }
    }
}

fn dispatch(cmd: &Cmd) -> Result<Rendered> {
    match cmd {
        Cmd::Validate { model } => cmd_validate(model),
        Cmd::Solve {
            model,
            given,
            format,
        } => cmd_solve(model, given, parse_format(format)?),
        Cmd::Query {
            model,
            text,
            query,
            backend,
            samples,
            seed,
            format,
            rho,
        } => cmd_query(
            model,
            text.as_deref(),
            query.as_deref(),
            backend.as_deref(),
            *samples,
            *seed,
            parse_format(format)?,
            *rho,
        ),
        Cmd::Explain { which } => cmd_explain(which),
        Cmd::Attribute {
            model,
            observation,
            target,
            tau,
            subset,
            shapley,
            permutations,
            seed,
            format,
        } => cmd_attribute(
            model,
            observation,
            target,
            tau,
            subset.as_deref(),
            *shapley,
            *permutations,
            *seed,
            parse_format(format)?,
        ),
        Cmd::CheckKernel { model, format } => cmd_check_kernel(model, parse_format(format)?),
    }
}

// ---- shared helpers ----

fn load_model(path: &std::path::Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

fn parse_format(s: &str) -> Result<Format> {
    s.parse()
}

fn parse_backend(s: &str) -> Result<Backend> {
    match s {
        "auto" => Ok(Backend::Auto),
        "exact" => Ok(Backend::Exact),
        "gaussian" => Ok(Backend::Gaussian),
        "mc" => Ok(Backend::MonteCarlo),
        other => Err(Error::DomainMismatch(format!(
            "unknown backend `{other}` (use auto, exact, gaussian, or mc)"
        ))),
    }
}

/// "A=1,B=label" → assignment; numbers parse as numbers, anything else
/// becomes a label. An empty string is the empty assignment.
fn parse_assignment(s: &str) -> Result<Assignment> {
    let mut out = Assignment::new();
    if s.trim().is_empty() {
        return Ok(out);
    }
    for part in s.split(',') {
        let (name, value) = part.split_once('=').ok_or_else(|| {
            Error::DomainMismatch(format!("expected NAME=VALUE, got `{part}`"))
        })?;
        let name = name.trim().to_string();
        let value = parse_value(value.trim());
        if out.insert(name.clone(), value).is_some() {
            return Err(Error::DomainMismatch(format!("`{name}` assigned twice")));
        }
    }
    Ok(out)
}

fn parse_value(s: &str) -> Value {
    match s.parse::<f64>() {
        Ok(x) => Value::num(x),
        Err(_) => Value::label(s.to_string()),
    }
}

fn parse_name_list(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(|p| p.trim().to_string()).collect()
}

/// Fails fast when a requested exact/gaussian backend cannot represent the
/// model's prior, instead of silently approximating.
fn guard_backend(backend: Backend, prior: &Distribution) -> Result<()> {
    match backend {
        Backend::Exact if prior.as_tabular().is_none() => Err(Error::UnsupportedBackend(
            "the exact backend requires finite domains and a table prior".into(),
        )),
        Backend::Gaussian if prior.as_gaussian().is_none() => Err(Error::UnsupportedBackend(
            "the gaussian backend requires a gaussian prior".into(),
        )),
        _ => Ok(()),
    }
}

fn prior_provenance(prior: &Distribution) -> &'static str {
    match prior {
        Distribution::Tabular(_) => "exact",
        Distribution::Gaussian(_) => "gaussian",
        Distribution::Particles(_) => "mc",
    }
}

fn backend_line(format: Format, provenance: &str) -> String {
    match format {
        Format::Machine => format!("backend={provenance}\n"),
        _ => format!("backend: {provenance}\n"),
    }
}

/// Two-column name/value rendering for assignments.
fn render_assignment(a: &Assignment, format: Format, header: (&str, &str)) -> String {
    match format {
        Format::Machine => {
            let mut s = String::new();
            for (k, v) in a {
                s.push_str(&format!("{k}={}\n", render_value(v)));
            }
            s
        }
        _ => {
            let width = a
                .keys()
                .map(|k| k.len())
                .chain([header.0.len()])
                .max()
                .unwrap_or(0);
            let mut s = format!("{:width$}  {}\n", header.0, header.1);
            for (k, v) in a {
                s.push_str(&format!("{k:width$}  {}\n", render_value(v)));
            }
            s
        }
    }
}

// ---- commands ----

fn cmd_validate(path: &std::path::Path) -> Result<Rendered> {
    let mf = load_model(path)?;
    let mut s = format!(
        "ok: {} exogenous, {} endogenous, {} laws\n",
        mf.model.exogenous().len(),
        mf.model.endogenous().len(),
        mf.model.laws().len()
    );
    s.push_str(&format!(
        "prior: {}\n",
        prior_provenance(&mf.prior).replace("exact", "table")
    ));
    s.push_str(&format!(
        "backtracking kernel: {}\n",
        if mf.kernel.is_some() { "present" } else { "absent" }
    ));
    Ok(Rendered::new(s))
}

fn cmd_solve(path: &std::path::Path, given: &str, format: Format) -> Result<Rendered> {
    let mf = load_model(path)?;
    let u = parse_assignment(given)?;
    let v = mf.model.solve(&u)?;
    Ok(Rendered::new(render_assignment(
        &v,
        format,
        ("variable", "value"),
    )))
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    model_path: &std::path::Path,
    text: Option<&str>,
    query_path: Option<&std::path::Path>,
    backend_flag: Option<&str>,
    samples_flag: Option<usize>,
    seed_flag: Option<u64>,
    format: Format,
    rho: f64,
) -> Result<Rendered> {
    let mf = load_model(model_path)?;
    let query_text = match (text, query_path) {
        (Some(t), None) => t.to_string(),
        (None, Some(p)) => std::fs::read_to_string(p)?,
        _ => {
            return Err(Error::DomainMismatch(
                "provide the query either inline or via --query, not both".into(),
            ))
        }
    };
    let q = parse_query(&query_text, &mf)?;

    // command-line flags override the query's `with` clause
    let backend = match backend_flag {
        Some(s) => parse_backend(s)?,
        None => q.options.backend.unwrap_or(Backend::Auto),
    };
    let mc = McOptions {
        samples: samples_flag.or(q.options.samples).unwrap_or(100_000),
        seed: seed_flag.or(q.options.seed).unwrap_or(0),
    };
    guard_backend(backend, &mf.prior)?;

    match &q.spec {
        QuerySpec::Observe { evidence, targets } => {
            let (dist, provenance) = observational_posterior(&mf, evidence, targets, backend, mc)?;
            let mut s = backend_line(format, provenance);
            s.push_str(&render_distribution(&dist, format)?);
            Ok(Rendered::new(s))
        }
        QuerySpec::Intervene(iq) => {
            if backend == Backend::MonteCarlo {
                return Err(Error::UnsupportedBackend(
                    "interventional queries run exactly; use the auto backend".into(),
                ));
            }
            let dist = interventional_counterfactual(&mf.model, &mf.prior, iq)?;
            let mut s = backend_line(format, prior_provenance(&mf.prior));
            s.push_str(&render_distribution(&dist, format)?);
            Ok(Rendered::new(s))
        }
        QuerySpec::Backtrack(bq) => {
            let kernel = mf.kernel.as_ref().ok_or_else(|| {
                Error::DomainMismatch(
                    "backtracking queries need a `backtracking { ... }` section in the model".into(),
                )
            })?;
            let (dist, posterior) =
                backtracking_counterfactual(&mf.model, &mf.prior, kernel, bq, backend, mc)?;
            Ok(render_posterior_result(&dist, &posterior, format)?)
        }
        QuerySpec::Unified {
            query,
            factual_regimes,
            counterfactual_regimes,
        } => {
            let aug = augment(&mf.model, &mf.levels)?;
            let u_kernel = match &mf.kernel {
                Some(k) => k.clone(),
                None => shared_u_kernel(&mf.model),
            };
            let kernel = compose_kernel(&u_kernel, &regime_flip_kernel(&aug, rho)?);
            let regime_prior = default_observational_regime_prior(&aug);
            let mut uq = query.clone();
            for (v, val) in factual_regimes {
                uq.factual_evidence.insert(regime_name(v), val.clone());
            }
            for (v, val) in counterfactual_regimes {
                uq.counterfactual_evidence
                    .insert(regime_name(v), val.clone());
            }
            let (dist, posterior) =
                unified_counterfactual(&aug, &mf.prior, &regime_prior, &kernel, &uq, backend, mc)?;
            Ok(render_posterior_result(&dist, &posterior, format)?)
        }
    }
}

fn render_posterior_result(
    dist: &Distribution,
    posterior: &CrossWorldPosterior,
    format: Format,
) -> Result<Rendered> {
    let mut s = backend_line(format, &posterior.provenance.to_string());
    s.push_str(&render_distribution(dist, format)?);
    let mut diag = String::new();
    for w in &posterior.warnings {
        diag.push_str(&format!("warning: {w}\n"));
    }
    Ok(Rendered { stdout: s, stderr: diag })
}

/// P(targets | evidence) in the observational regime.
fn observational_posterior(
    mf: &ModelFile,
    evidence: &Assignment,
    targets: &[String],
    backend: Backend,
    mc: McOptions,
) -> Result<(Distribution, &'static str)> {
    let mut union: Vec<String> = targets.to_vec();
    for k in evidence.keys() {
        if !union.contains(k) {
            union.push(k.clone());
        }
    }
    let (joint, provenance) = if backend == Backend::MonteCarlo {
        (
            endogenous_distribution_mc(&mf.model, &mf.prior, &union, mc.samples, mc.seed)?,
            "mc",
        )
    } else {
        (
            endogenous_distribution(&mf.model, &mf.prior, &union)?,
            prior_provenance(&mf.prior),
        )
    };
    let dist = joint.condition_on(evidence)?.marginalise(targets)?;
    Ok((dist, provenance))
}

fn cmd_explain(which: &ExplainCmd) -> Result<Rendered> {
    let (common, run): (&ExplainCommon, _) = match which {
        ExplainCmd::Map { common } => (common, ExplainRun::Map),
        ExplainCmd::Sparse { common, k, alpha } => (common, ExplainRun::Sparse(*k, *alpha)),
        ExplainCmd::Fixed { common, features } => {
            (common, ExplainRun::Fixed(parse_name_list(features)))
        }
    };
    let mf = load_model(&common.model)?;
    let kernel = mf.kernel.as_ref().ok_or_else(|| {
        Error::DomainMismatch(
            "explanations need a `backtracking { ... }` section in the model".into(),
        )
    })?;
    let task = ExplanationTask {
        model: &mf.model,
        prior: &mf.prior,
        kernel,
        predictor: common.predictor.clone(),
        factual: parse_assignment(&common.observation)?,
        desired: parse_value(&common.desired),
    };
    let format = parse_format(&common.format)?;
    let s = match run {
        ExplainRun::Map => {
            render_assignment(&map_explanation(&task)?, format, ("feature", "value"))
        }
        ExplainRun::Fixed(subset) => render_assignment(
            &fixed_remainder_explanation(&task, &subset)?,
            format,
            ("feature", "value"),
        ),
        ExplainRun::Sparse(k, alpha) => {
            let items = sparse_explanations(&task, k, alpha)?;
            match format {
                Format::Machine => {
                    let mut s = String::new();
                    for e in &items {
                        let values: Vec<String> = e
                            .subset
                            .iter()
                            .map(|f| format!("{f}={}", render_value(&e.values[f])))
                            .collect();
                        s.push_str(&format!(
                            "explanation={}:{}\n",
                            values.join(";"),
                            fmt_num(e.score)
                        ));
                    }
                    s
                }
                _ => {
                    let mut s = format!("{:<30}  {}\n", "changes", "score");
                    for e in &items {
                        let values: Vec<String> = e
                            .subset
                            .iter()
                            .map(|f| format!("{f}={}", render_value(&e.values[f])))
                            .collect();
                        s.push_str(&format!(
                            "{:<30}  {}\n",
                            values.join(", "),
                            fmt_num(e.score)
                        ));
                    }
                    s
                }
            }
        }
    };
    Ok(Rendered::new(s))
}

enum ExplainRun {
    Map,
    Sparse(usize, f64),
    Fixed(Vec<String>),
}

#[allow(clippy::too_many_arguments)]
fn cmd_attribute(
    model_path: &std::path::Path,
    observation: &str,
    target: &str,
    tau: &str,
    subset: Option<&str>,
    shapley: bool,
    permutations: usize,
    seed: u64,
    format: Format,
) -> Result<Rendered> {
    let mf = load_model(model_path)?;
    let tau = match tau {
        "identity" => Calibration::Identity,
        "negated" => Calibration::Negated,
        other => {
            return Err(Error::DomainMismatch(format!(
                "unknown calibration `{other}` (use identity or negated)"
            )))
        }
    };
    let task = AttributionTask {
        model: &mf.model,
        prior: &mf.prior,
        observation: parse_assignment(observation)?,
        target: target.to_string(),
        tau,
    };
    match (subset, shapley) {
        (Some(s), false) => {
            let clamp: BTreeSet<String> = parse_name_list(s).into_iter().collect();
            let score = attribution_score(&task, &clamp)?;
            let s = match format {
                Format::Machine => format!("score={}\n", fmt_num(score)),
                _ => format!("score = {}\n", fmt_num(score)),
            };
            Ok(Rendered::new(s))
        }
        (None, true) => {
            let phi: BTreeMap<String, f64> = shapley_attribution(&task, permutations, seed)?;
            let s = match format {
                Format::Machine => phi
                    .iter()
                    .map(|(k, v)| format!("phi.{k}={}\n", fmt_num(*v)))
                    .collect(),
                _ => {
                    let width = phi
                        .keys()
                        .map(|k| k.len())
                        .chain(["variable".len()])
                        .max()
                        .unwrap();
                    let mut s = format!("{:width$}  {}\n", "variable", "phi");
                    for (k, v) in &phi {
                        s.push_str(&format!("{k:width$}  {}\n", fmt_num(*v)));
                    }
                    s
                }
            };
            Ok(Rendered::new(s))
        }
        _ => Err(Error::DomainMismatch(
            "choose exactly one of --subset or --shapley".into(),
        )),
    }
}

fn cmd_check_kernel(path: &std::path::Path, format: Format) -> Result<Rendered> {
    let mf = load_model(path)?;
    let kernel = mf.kernel.as_ref().ok_or_else(|| {
        Error::DomainMismatch("the model has no `backtracking { ... }` section".into())
    })?;
    let verdict = |r: Result<bool>| -> Result<String> {
        match r {
            Ok(true) => Ok("true".to_string()),
            Ok(false) => Ok("false".to_string()),
            Err(Error::Undecidable(_)) => Ok("undecidable".to_string()),
            Err(e) => Err(e),
        }
    };
    let closeness = verdict(kernel.check_closeness(Some(&mf.prior)))?;
    let symmetry = verdict(kernel.check_symmetry(Some(&mf.prior)))?;
    let decomposability = verdict(kernel.check_decomposability(Some(&mf.prior)))?;
    let marginal = match kernel.marginal_match_tv(&mf.prior) {
        Ok(tv) => fmt_num(tv),
        Err(Error::UnboundedNormalizer(_)) | Err(Error::Undecidable(_)) => {
            "unavailable".to_string()
        }
        Err(e) => return Err(e),
    };
    let s = match format {
        Format::Machine => format!(
            "closeness={closeness}\nsymmetry={symmetry}\ndecomposability={decomposability}\nmarginal_match_tv={marginal}\n"
        ),
        _ => format!(
            "closeness: {closeness}\nsymmetry: {symmetry}\ndecomposability: {decomposability}\nmarginal-match TV: {marginal}\n"
        ),
    };
    Ok(Rendered::new(s))
}
