//! Canonical text emission for model files. `parse_model` ∘
//! `serialize_model` is the identity on anything produced by
//! `parse_model`, which is what the round-trip tests pin down.

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::kernel::{DistanceSpec, DistanceTerm, Kernel, KernelKind, Property};
use crate::scm::Domain;
use crate::value::Value;

use super::fmt_num;
use super::model::ModelFile;

pub fn serialize_model(mf: &ModelFile) -> Result<String> {
    let mut out = String::new();

    out.push_str("exogenous {\n");
    for (name, dom) in mf.model.exogenous() {
        out.push_str(&format!("  {name} : {}\n", domain_text(dom)));
    }
    out.push_str("}\n\nendogenous {\n");
    for (name, dom) in mf.model.endogenous() {
        out.push_str(&format!("  {name} : {}\n", domain_text(dom)));
    }
    out.push_str("}\n\nlaws {\n");
    for law in mf.model.laws() {
        out.push_str(&format!("  {} := {}\n", law.target, expr_text(&law.expr, 0)));
    }
    out.push_str("}\n\nprior {\n");
    out.push_str(&prior_text(&mf.prior)?);
    out.push_str("}\n");

    if let Some(k) = &mf.kernel {
        out.push_str("\nbacktracking {\n");
        out.push_str(&kernel_text(k)?);
        out.push_str("}\n");
    }
    if !mf.levels.is_empty() {
        out.push_str("\nregimes {\n");
        for (name, vals) in &mf.levels {
            let vs: Vec<String> = vals.iter().map(value_text).collect();
            out.push_str(&format!("  {name} = [{}]\n", vs.join(", ")));
        }
        out.push_str("}\n");
    }
    Ok(out)
}

fn domain_text(dom: &Domain) -> String {
    match dom {
        Domain::RealLine => "real".to_string(),
        Domain::RealInterval(lo, hi) => format!("real[{}, {}]", fmt_num(*lo), fmt_num(*hi)),
        Domain::Finite(vals) => {
            let vs: Vec<String> = vals.iter().map(value_text).collect();
            format!("{{{}}}", vs.join(", "))
        }
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Num(x) => fmt_num(*x),
        Value::Label(s) => {
            let bare = !s.is_empty()
                && s.chars().next().unwrap().is_ascii_alphabetic()
                && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if bare {
                s.clone()
            } else {
                format!("\"{s}\"")
            }
        }
    }
}

// Precedence levels used both for rendering and for deciding when a child
// expression needs parentheses: | (1) < & (2) < comparisons (3) <
// +,- (4) < * (5) < unary (6) < atoms (7).
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Eq(..) | Expr::Ge(..) | Expr::Gt(..) => 3,
        Expr::Add(..) | Expr::Sub(..) => 4,
        Expr::Mul(..) => 5,
        Expr::Neg(..) | Expr::Not(..) => 6,
        _ => 7,
    }
}

/// Renders `e`, parenthesizing if its precedence is below `min`.
fn expr_text(e: &Expr, min: u8) -> String {
    let p = prec(e);
    let body = match e {
        Expr::Const(v) => value_text(v),
        Expr::Var(name) => name.clone(),
        Expr::Neg(a) => format!("-{}", expr_text(a, 7)),
        Expr::Not(a) => format!("!{}", expr_text(a, 7)),
        Expr::Add(a, b) => format!("{} + {}", expr_text(a, 4), expr_text(b, 5)),
        Expr::Sub(a, b) => format!("{} - {}", expr_text(a, 4), expr_text(b, 5)),
        Expr::Mul(a, b) => format!("{}*{}", expr_text(a, 5), expr_text(b, 6)),
        Expr::And(a, b) => format!("{} & {}", expr_text(a, 2), expr_text(b, 3)),
        Expr::Or(a, b) => format!("{} | {}", expr_text(a, 1), expr_text(b, 2)),
        Expr::Eq(a, b) => format!("{} = {}", expr_text(a, 4), expr_text(b, 4)),
        Expr::Ge(a, b) => format!("{} >= {}", expr_text(a, 4), expr_text(b, 4)),
        Expr::Gt(a, b) => format!("{} > {}", expr_text(a, 4), expr_text(b, 4)),
        Expr::Ite(c, a, b) => format!(
            "ite({}, {}, {})",
            expr_text(c, 0),
            expr_text(a, 0),
            expr_text(b, 0)
        ),
        Expr::Max(a, b) => format!("max({}, {})", expr_text(a, 0), expr_text(b, 0)),
        Expr::Min(a, b) => format!("min({}, {})", expr_text(a, 0), expr_text(b, 0)),
    };
    if p < min {
        format!("({body})")
    } else {
        body
    }
}

fn prior_text(prior: &Distribution) -> Result<String> {
    let mut out = String::new();
    match prior {
        Distribution::Gaussian(g) => {
            out.push_str("  kind = gaussian\n");
            let means: Vec<String> = (0..g.vars.len()).map(|i| fmt_num(g.mean[i])).collect();
            out.push_str(&format!("  mean = [{}]\n", means.join(", ")));
            out.push_str(&format!("  cov = {}\n", matrix_text(&g.cov)));
        }
        Distribution::Tabular(t) => {
            out.push_str("  kind = table\n");
            for (vals, w) in &t.rows {
                let vs: Vec<String> = vals.iter().map(value_text).collect();
                out.push_str(&format!("  ({}) : {}\n", vs.join(", "), fmt_num(*w)));
            }
        }
        Distribution::Particles(_) => {
            return Err(Error::UnsupportedBackend(
                "particle priors have no text form".into(),
            ))
        }
    }
    Ok(out)
}

fn matrix_text(m: &nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| fmt_num(m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn kernel_text(k: &Kernel) -> Result<String> {
    let mut out = String::new();
    let distance_lines = |spec: &DistanceSpec, out: &mut String| -> Result<()> {
        match spec {
            DistanceSpec::PerVariable(terms) => {
                for (var, term) in terms {
                    let t = match term {
                        DistanceTerm::SquaredScaled { sigma2 } => {
                            format!("squared({})", fmt_num(*sigma2))
                        }
                        DistanceTerm::Mismatch { weight } => {
                            format!("mismatch({})", fmt_num(*weight))
                        }
                        DistanceTerm::Abs { weight } => format!("abs({})", fmt_num(*weight)),
                    };
                    out.push_str(&format!("  d({var}) = {t}\n"));
                }
                Ok(())
            }
            DistanceSpec::Quadratic { .. } => Err(Error::UnsupportedBackend(
                "quadratic-form distances have no text form".into(),
            )),
        }
    };
    match &k.kind {
        KernelKind::SharedWorlds => out.push_str("  kind = shared\n"),
        KernelKind::PriorIndependent => out.push_str("  kind = prior\n"),
        KernelKind::GaussianKernel { vars, sigma } => {
            let exo: Vec<String> = k.domains.iter().map(|(n, _)| n.clone()).collect();
            if *vars != exo {
                return Err(Error::UnsupportedBackend(
                    "gaussian kernels with reordered variables have no text form".into(),
                ));
            }
            out.push_str("  kind = gaussian\n");
            out.push_str(&format!("  cov = {}\n", matrix_text(sigma)));
        }
        KernelKind::DistanceBased(spec) => {
            out.push_str("  kind = distance\n");
            distance_lines(spec, &mut out)?;
        }
        KernelKind::GeneralizedPriorDistance {
            alpha,
            beta,
            distance,
        } => {
            out.push_str("  kind = generalized\n");
            out.push_str(&format!("  alpha = {}\n", fmt_num(*alpha)));
            out.push_str(&format!("  beta = {}\n", fmt_num(*beta)));
            distance_lines(distance, &mut out)?;
        }
        KernelKind::StabilityMixture { s, .. } => {
            // per-variable priors are re-derived from the model prior on parse
            out.push_str("  kind = stability\n");
            out.push_str(&format!("  s = {}\n", fmt_num(*s)));
        }
        KernelKind::Product(_) => {
            return Err(Error::UnsupportedBackend(
                "composite kernels have no text form".into(),
            ))
        }
    }
    if !k.declared.is_empty() {
        let props: Vec<&str> = k
            .declared
            .iter()
            .map(|p| match p {
                Property::Closeness => "closeness",
                Property::Symmetry => "symmetry",
                Property::Decomposability => "decomposability",
            })
            .collect();
        out.push_str(&format!("  properties = [{}]\n", props.join(", ")));
    }
    Ok(out)
}
