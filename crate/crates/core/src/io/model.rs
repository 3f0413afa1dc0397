//! Parser for the `.model` text format.
//!
//! A model file consists of named brace-delimited sections:
//!
//! ```text
//! exogenous  { U_X : real \n ... }
//! endogenous { X : real \n ... }
//! laws       { X := U_X \n ... }
//! prior      { kind = gaussian \n sigma = [1, 1, 1] }
//! backtracking { kind = gaussian \n sigma = [1, 1, 1] }   # optional
//! regimes    { Y = [3.0] }                                # optional
//! ```
//!
//! The full grammar is documented in `docs/format.md`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::gaussian::Gaussian;
use crate::kernel::{DistanceSpec, DistanceTerm, Kernel, KernelKind, Property};
use crate::scm::{CausalModel, Domain, StructuralLaw};
use crate::tabular::Tabular;
use crate::value::Value;

use super::lexer::{err_at, tokenize, Cursor, Tok};

/// A parsed model file: the structural model, its exogenous prior, an
/// optional backtracking kernel, and optional regime levels for
/// continuous endogenous variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: CausalModel,
    pub prior: Distribution,
    pub kernel: Option<Kernel>,
    pub levels: BTreeMap<String, Vec<Value>>,
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut cur = Cursor::new(tokenize(text)?);
    let mut exogenous: Option<Vec<(String, Domain)>> = None;
    let mut endogenous: Option<Vec<(String, Domain)>> = None;
    let mut laws: Option<Vec<StructuralLaw>> = None;
    let mut prior_body: Option<SectionBody> = None;
    let mut kernel_body: Option<SectionBody> = None;
    let mut levels: Option<BTreeMap<String, Vec<Value>>> = None;

    loop {
        cur.skip_newlines();
        if cur.at_end() {
            break;
        }
        let (name, l, c) = cur.expect_ident()?;
        cur.expect_punct("{")?;
        match name.as_str() {
            "exogenous" => {
                require_unset(exogenous.is_none(), &name, l, c)?;
                exogenous = Some(parse_decls(&mut cur)?);
            }
            "endogenous" => {
                require_unset(endogenous.is_none(), &name, l, c)?;
                endogenous = Some(parse_decls(&mut cur)?);
            }
            "laws" => {
                require_unset(laws.is_none(), &name, l, c)?;
                laws = Some(parse_laws(&mut cur)?);
            }
            "prior" => {
                require_unset(prior_body.is_none(), &name, l, c)?;
                prior_body = Some(parse_section_body(&mut cur)?);
            }
            "backtracking" => {
                require_unset(kernel_body.is_none(), &name, l, c)?;
                kernel_body = Some(parse_section_body(&mut cur)?);
            }
            "regimes" => {
                require_unset(levels.is_none(), &name, l, c)?;
                levels = Some(parse_regimes(&mut cur)?);
            }
            other => {
                return Err(err_at(l, c, format!("unknown section `{other}`")));
            }
        }
    }

    let exogenous =
        exogenous.ok_or_else(|| err_at(1, 1, "missing required section `exogenous`"))?;
    let endogenous =
        endogenous.ok_or_else(|| err_at(1, 1, "missing required section `endogenous`"))?;
    let laws = laws.ok_or_else(|| err_at(1, 1, "missing required section `laws`"))?;
    let prior_body =
        prior_body.ok_or_else(|| err_at(1, 1, "missing required section `prior`"))?;

    let model = CausalModel::new(exogenous, endogenous, laws)?;
    let prior = build_prior(&model, prior_body)?;
    let kernel = match kernel_body {
        Some(body) => Some(build_kernel(&model, &prior, body)?),
        None => None,
    };
    let levels = levels.unwrap_or_default();
    for (name, vs) in &levels {
        for v in vs {
            model.check_endogenous_value(name, v)?;
        }
    }
    Ok(ModelFile {
        model,
        prior,
        kernel,
        levels,
    })
}

fn require_unset(unset: bool, name: &str, l: usize, c: usize) -> Result<()> {
    if unset {
        Ok(())
    } else {
        Err(err_at(l, c, format!("duplicate section `{name}`")))
    }
}

/// Variable declarations: `NAME : real | real[lo, hi] | {v1, v2, ...}`.
fn parse_decls(cur: &mut Cursor) -> Result<Vec<(String, Domain)>> {
    let mut out = Vec::new();
    loop {
        cur.skip_newlines();
        if cur.eat_punct("}") {
            break;
        }
        let (name, l, c) = cur.expect_ident()?;
        if name.ends_with('*') {
            return Err(err_at(
                l,
                c,
                format!("variable name `{name}` may not end with `*` (reserved for counterfactual worlds)"),
            ));
        }
        cur.expect_punct(":")?;
        let dom = parse_domain(cur)?;
        cur.end_entry()?;
        out.push((name, dom));
    }
    Ok(out)
}

fn parse_domain(cur: &mut Cursor) -> Result<Domain> {
    let (l, c) = cur.here();
    if cur.eat_ident("real") {
        if cur.eat_punct("[") {
            let lo = cur.expect_number()?;
            cur.expect_punct(",")?;
            let hi = cur.expect_number()?;
            cur.expect_punct("]")?;
            return Ok(Domain::RealInterval(lo, hi));
        }
        return Ok(Domain::RealLine);
    }
    if cur.eat_punct("{") {
        let mut values = Vec::new();
        loop {
            values.push(parse_value(cur)?);
            if cur.eat_punct(",") {
                continue;
            }
            cur.expect_punct("}")?;
            break;
        }
        return Ok(Domain::Finite(values));
    }
    Err(err_at(l, c, "expected a domain (`real`, `real[lo, hi]`, or `{v1, v2, ...}`)"))
}

/// A literal value: a number (possibly negated), a bare word, or a quoted
/// label. Bare words become labels.
pub(super) fn parse_value(cur: &mut Cursor) -> Result<Value> {
    let (l, c) = cur.here();
    match cur.peek().map(|t| t.tok.clone()) {
        Some(Tok::Number(_)) | Some(Tok::Punct("-")) => Ok(Value::num(cur.expect_number()?)),
        Some(Tok::Ident(w)) => {
            cur.next();
            Ok(Value::label(w))
        }
        Some(Tok::Label(s)) => {
            cur.next();
            Ok(Value::label(s))
        }
        _ => Err(err_at(l, c, "expected a value")),
    }
}

fn parse_laws(cur: &mut Cursor) -> Result<Vec<StructuralLaw>> {
    let mut out = Vec::new();
    loop {
        cur.skip_newlines();
        if cur.eat_punct("}") {
            break;
        }
        let (target, _, _) = cur.expect_ident()?;
        cur.expect_punct(":=")?;
        let expr = parse_expr(cur)?;
        cur.end_entry()?;
        out.push(StructuralLaw { target, expr });
    }
    Ok(out)
}

// ---- expression grammar (precedence climbing) ----
//
//   or   := and  ( `|` and )*
//   and  := cmp  ( `&` cmp )*
//   cmp  := sum  [ (`=` | `>=` | `>`) sum ]
//   sum  := term ( (`+` | `-`) term )*
//   term := unary ( `*` unary )*
//   unary := (`-` | `!`) unary | atom
//   atom := number | "label" | ident | ident `(` args `)` | `(` or `)`

pub(super) fn parse_expr(cur: &mut Cursor) -> Result<Expr> {
    parse_or(cur)
}

fn parse_or(cur: &mut Cursor) -> Result<Expr> {
    let mut e = parse_and(cur)?;
    while cur.eat_punct("|") {
        e = Expr::or(e, parse_and(cur)?);
    }
    Ok(e)
}

fn parse_and(cur: &mut Cursor) -> Result<Expr> {
    let mut e = parse_cmp(cur)?;
    while cur.eat_punct("&") {
        e = Expr::and(e, parse_cmp(cur)?);
    }
    Ok(e)
}

fn parse_cmp(cur: &mut Cursor) -> Result<Expr> {
    let e = parse_sum(cur)?;
    if cur.eat_punct("=") {
        return Ok(Expr::eq(e, parse_sum(cur)?));
    }
    if cur.eat_punct(">=") {
        return Ok(Expr::Ge(Box::new(e), Box::new(parse_sum(cur)?)));
    }
    if cur.eat_punct(">") {
        return Ok(Expr::Gt(Box::new(e), Box::new(parse_sum(cur)?)));
    }
    Ok(e)
}

fn parse_sum(cur: &mut Cursor) -> Result<Expr> {
    let mut e = parse_term(cur)?;
    loop {
        if cur.eat_punct("+") {
            e = Expr::add(e, parse_term(cur)?);
        } else if cur.eat_punct("-") {
            e = Expr::sub(e, parse_term(cur)?);
        } else {
            return Ok(e);
        }
    }
}

fn parse_term(cur: &mut Cursor) -> Result<Expr> {
    let mut e = parse_unary(cur)?;
    while cur.eat_punct("*") {
        e = Expr::mul(e, parse_unary(cur)?);
    }
    Ok(e)
}

fn parse_unary(cur: &mut Cursor) -> Result<Expr> {
    if cur.eat_punct("-") {
        return Ok(Expr::Neg(Box::new(parse_unary(cur)?)));
    }
    if cur.eat_punct("!") {
        return Ok(Expr::not(parse_unary(cur)?));
    }
    parse_atom(cur)
}

fn parse_atom(cur: &mut Cursor) -> Result<Expr> {
    let (l, c) = cur.here();
    match cur.peek().map(|t| t.tok.clone()) {
        Some(Tok::Number(x)) => {
            cur.next();
            Ok(Expr::num(x))
        }
        Some(Tok::Label(s)) => {
            cur.next();
            Ok(Expr::Const(Value::label(s)))
        }
        Some(Tok::Ident(name)) => {
            cur.next();
            if cur.eat_punct("(") {
                let mut args = vec![parse_or(cur)?];
                while cur.eat_punct(",") {
                    args.push(parse_or(cur)?);
                }
                cur.expect_punct(")")?;
                return build_call(&name, args, l, c);
            }
            Ok(Expr::var(name))
        }
        Some(Tok::Punct("(")) => {
            cur.next();
            let e = parse_or(cur)?;
            cur.expect_punct(")")?;
            Ok(e)
        }
        _ => Err(err_at(l, c, "expected an expression")),
    }
}

fn build_call(name: &str, mut args: Vec<Expr>, l: usize, c: usize) -> Result<Expr> {
    let arity_err = |want: usize, got: usize| {
        err_at(l, c, format!("`{name}` takes {want} arguments, got {got}"))
    };
    match name {
        "ite" => {
            if args.len() != 3 {
                return Err(arity_err(3, args.len()));
            }
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            let cond = args.pop().unwrap();
            Ok(Expr::ite(cond, a, b))
        }
        "max" | "min" => {
            if args.len() != 2 {
                return Err(arity_err(2, args.len()));
            }
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(if name == "max" {
                Expr::Max(Box::new(a), Box::new(b))
            } else {
                Expr::Min(Box::new(a), Box::new(b))
            })
        }
        other => Err(err_at(l, c, format!("unknown function `{other}`"))),
    }
}

// ---- key/value sections (`prior`, `backtracking`) ----

/// One entry in a key/value section.
#[derive(Debug, Clone)]
enum Entry {
    /// `key = <word>`
    Word(String),
    /// `key = <number>`
    Num(f64),
    /// `key = [x, ...]`
    Vec(Vec<f64>),
    /// `key = [[x, ...], ...]`
    Matrix(Vec<Vec<f64>>),
    /// `key = [word, ...]`
    Words(Vec<String>),
    /// `(v1, v2, ...) : w` — a table row.
    Row(Vec<Value>, f64),
    /// `d(NAME) = term(arg)` — a per-variable distance term.
    Distance(String, DistanceTerm),
}

struct SectionBody {
    entries: Vec<(String, Entry, usize, usize)>,
}

impl SectionBody {
    fn take(&mut self, key: &str) -> Option<Entry> {
        let i = self.entries.iter().position(|(k, _, _, _)| k == key)?;
        Some(self.entries.remove(i).1)
    }

    fn take_all(&mut self, key: &str) -> Vec<Entry> {
        let mut out = Vec::new();
        while let Some(e) = self.take(key) {
            out.push(e);
        }
        out
    }

    fn reject_leftovers(&self) -> Result<()> {
        if let Some((k, _, l, c)) = self.entries.first() {
            return Err(err_at(*l, *c, format!("unknown or misplaced key `{k}`")));
        }
        Ok(())
    }
}

fn parse_section_body(cur: &mut Cursor) -> Result<SectionBody> {
    let mut entries = Vec::new();
    loop {
        cur.skip_newlines();
        if cur.eat_punct("}") {
            break;
        }
        let (l, c) = cur.here();
        // table row: `(v1, v2) : w`
        if cur.eat_punct("(") {
            let mut vals = vec![parse_value(cur)?];
            while cur.eat_punct(",") {
                vals.push(parse_value(cur)?);
            }
            cur.expect_punct(")")?;
            cur.expect_punct(":")?;
            let w = cur.expect_number()?;
            cur.end_entry()?;
            entries.push(("row".to_string(), Entry::Row(vals, w), l, c));
            continue;
        }
        let (key, kl, kc) = cur.expect_ident()?;
        // distance term: `d(NAME) = term(arg)`
        if key == "d" && cur.eat_punct("(") {
            let (var, _, _) = cur.expect_ident()?;
            cur.expect_punct(")")?;
            cur.expect_punct("=")?;
            let (term_name, tl, tc) = cur.expect_ident()?;
            cur.expect_punct("(")?;
            let arg = cur.expect_number()?;
            cur.expect_punct(")")?;
            cur.end_entry()?;
            let term = match term_name.as_str() {
                "squared" => DistanceTerm::SquaredScaled { sigma2: arg },
                "mismatch" => DistanceTerm::Mismatch { weight: arg },
                "abs" => DistanceTerm::Abs { weight: arg },
                other => {
                    return Err(err_at(
                        tl,
                        tc,
                        format!("unknown distance term `{other}` (use squared, mismatch, or abs)"),
                    ))
                }
            };
            entries.push(("d".to_string(), Entry::Distance(var, term), kl, kc));
            continue;
        }
        cur.expect_punct("=")?;
        let entry = parse_entry_value(cur)?;
        cur.end_entry()?;
        entries.push((key, entry, kl, kc));
    }
    Ok(SectionBody { entries })
}

fn parse_entry_value(cur: &mut Cursor) -> Result<Entry> {
    let (l, c) = cur.here();
    match cur.peek().map(|t| t.tok.clone()) {
        Some(Tok::Ident(w)) => {
            cur.next();
            Ok(Entry::Word(w))
        }
        Some(Tok::Number(_)) | Some(Tok::Punct("-")) => Ok(Entry::Num(cur.expect_number()?)),
        Some(Tok::Punct("[")) => {
            cur.next();
            cur.skip_newlines();
            // list of words, numbers, or rows
            if matches!(cur.peek().map(|t| &t.tok), Some(Tok::Punct("["))) {
                let mut rows = Vec::new();
                loop {
                    cur.skip_newlines();
                    cur.expect_punct("[")?;
                    rows.push(parse_number_list(cur)?);
                    cur.skip_newlines();
                    if cur.eat_punct(",") {
                        continue;
                    }
                    cur.skip_newlines();
                    cur.expect_punct("]")?;
                    break;
                }
                return Ok(Entry::Matrix(rows));
            }
            if matches!(cur.peek().map(|t| &t.tok), Some(Tok::Ident(_))) {
                let mut words = Vec::new();
                loop {
                    let (w, _, _) = cur.expect_ident()?;
                    words.push(w);
                    if cur.eat_punct(",") {
                        cur.skip_newlines();
                        continue;
                    }
                    cur.expect_punct("]")?;
                    break;
                }
                return Ok(Entry::Words(words));
            }
            Ok(Entry::Vec(parse_number_list(cur)?))
        }
        _ => Err(err_at(l, c, "expected a value, word, or bracketed list")),
    }
}

/// Parses `x, y, ...]` (the opening `[` already consumed).
fn parse_number_list(cur: &mut Cursor) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    loop {
        cur.skip_newlines();
        out.push(cur.expect_number()?);
        cur.skip_newlines();
        if cur.eat_punct(",") {
            continue;
        }
        cur.expect_punct("]")?;
        break;
    }
    Ok(out)
}

fn parse_regimes(cur: &mut Cursor) -> Result<BTreeMap<String, Vec<Value>>> {
    let mut out = BTreeMap::new();
    loop {
        cur.skip_newlines();
        if cur.eat_punct("}") {
            break;
        }
        let (name, l, c) = cur.expect_ident()?;
        if out.contains_key(&name) {
            return Err(err_at(l, c, format!("duplicate regime entry for `{name}`")));
        }
        cur.expect_punct("=")?;
        cur.expect_punct("[")?;
        let mut vals = Vec::new();
        loop {
            vals.push(parse_value(cur)?);
            if cur.eat_punct(",") {
                continue;
            }
            cur.expect_punct("]")?;
            break;
        }
        cur.end_entry()?;
        out.insert(name, vals);
    }
    Ok(out)
}

// ---- semantic assembly ----

fn build_prior(model: &CausalModel, mut body: SectionBody) -> Result<Distribution> {
    let exo: Vec<String> = model.exogenous().iter().map(|(n, _)| n.clone()).collect();
    let kind = match body.take("kind") {
        Some(Entry::Word(w)) => w,
        _ => return Err(err_at(1, 1, "prior section requires `kind = gaussian | table`")),
    };
    match kind.as_str() {
        "gaussian" => {
            for (name, dom) in model.exogenous() {
                if dom.is_finite() {
                    return Err(Error::DomainMismatch(format!(
                        "gaussian prior over finite-domain variable `{name}`"
                    )));
                }
            }
            let n = exo.len();
            let mean = match body.take("mean") {
                Some(Entry::Vec(v)) => v,
                Some(Entry::Num(x)) if n == 1 => vec![x],
                None => vec![0.0; n],
                _ => return Err(err_at(1, 1, "prior `mean` must be a vector")),
            };
            let cov = match (body.take("sigma"), body.take("cov")) {
                (Some(Entry::Vec(d)), None) => diag_matrix(&d, n, "sigma")?,
                (Some(Entry::Num(x)), None) if n == 1 => diag_matrix(&[x], 1, "sigma")?,
                (None, Some(Entry::Matrix(rows))) => full_matrix(&rows, n, "cov")?,
                (None, None) => DMatrix::identity(n, n),
                _ => {
                    return Err(err_at(
                        1,
                        1,
                        "prior takes `sigma = [variances]` or `cov = [[...]]`, not both",
                    ))
                }
            };
            body.reject_leftovers()?;
            if mean.len() != n {
                return Err(Error::DomainMismatch(format!(
                    "prior mean has {} entries for {n} exogenous variables",
                    mean.len()
                )));
            }
            Ok(Distribution::Gaussian(Gaussian::new(
                exo,
                DVector::from_vec(mean),
                cov,
            )?))
        }
        "table" => {
            let mut rows = Vec::new();
            for e in body.take_all("row") {
                if let Entry::Row(vals, w) = e {
                    if vals.len() != exo.len() {
                        return Err(Error::DomainMismatch(format!(
                            "table row has {} values for {} exogenous variables",
                            vals.len(),
                            exo.len()
                        )));
                    }
                    for (i, v) in vals.iter().enumerate() {
                        let (name, dom) = &model.exogenous()[i];
                        if !dom.contains(v) {
                            return Err(Error::DomainMismatch(format!(
                                "table value {v} outside the domain of `{name}`"
                            )));
                        }
                    }
                    rows.push((vals, w));
                }
            }
            body.reject_leftovers()?;
            Ok(Distribution::Tabular(Tabular::new(exo, rows)?))
        }
        other => Err(Error::DomainMismatch(format!(
            "unknown prior kind `{other}` (use gaussian or table)"
        ))),
    }
}

fn diag_matrix(d: &[f64], n: usize, key: &str) -> Result<DMatrix<f64>> {
    if d.len() != n {
        return Err(Error::DomainMismatch(format!(
            "`{key}` has {} entries for {n} variables",
            d.len()
        )));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
}

fn full_matrix(rows: &[Vec<f64>], n: usize, key: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DomainMismatch(format!(
            "`{key}` must be a {n}x{n} matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_kernel(
    model: &CausalModel,
    prior: &Distribution,
    mut body: SectionBody,
) -> Result<Kernel> {
    let domains: Vec<(String, Domain)> = model.exogenous().to_vec();
    let exo: Vec<String> = domains.iter().map(|(n, _)| n.clone()).collect();
    let kind_word = match body.take("kind") {
        Some(Entry::Word(w)) => w,
        _ => {
            return Err(err_at(
                1,
                1,
                "backtracking section requires `kind = shared | prior | gaussian | distance | generalized | stability`",
            ))
        }
    };
    let mut declared: BTreeSet<Property> = BTreeSet::new();
    if let Some(e) = body.take("properties") {
        let words = match e {
            Entry::Words(ws) => ws,
            Entry::Word(w) => vec![w],
            _ => {
                return Err(err_at(
                    1,
                    1,
                    "`properties` must be a list like [closeness, symmetry]",
                ))
            }
        };
        for w in words {
            declared.insert(match w.as_str() {
                "closeness" => Property::Closeness,
                "symmetry" => Property::Symmetry,
                "decomposability" => Property::Decomposability,
                other => {
                    return Err(Error::DomainMismatch(format!(
                        "unknown kernel property `{other}`"
                    )))
                }
            });
        }
    }
    let distance_spec = |body: &mut SectionBody| -> Result<DistanceSpec> {
        let mut terms = Vec::new();
        for e in body.take_all("d") {
            if let Entry::Distance(var, term) = e {
                if !exo.contains(&var) {
                    return Err(Error::UnknownVariable(var));
                }
                terms.push((var, term));
            }
        }
        if terms.is_empty() {
            return Err(Error::DomainMismatch(
                "distance kernel requires at least one `d(NAME) = term(arg)` entry".into(),
            ));
        }
        Ok(DistanceSpec::PerVariable(terms))
    };
    let kind = match kind_word.as_str() {
        "shared" => KernelKind::SharedWorlds,
        "prior" => KernelKind::PriorIndependent,
        "gaussian" => {
            let n = exo.len();
            let sigma = match (body.take("sigma"), body.take("cov")) {
                (Some(Entry::Vec(d)), None) => diag_matrix(&d, n, "sigma")?,
                (Some(Entry::Num(x)), None) if n == 1 => diag_matrix(&[x], 1, "sigma")?,
                (None, Some(Entry::Matrix(rows))) => full_matrix(&rows, n, "cov")?,
                _ => {
                    return Err(err_at(
                        1,
                        1,
                        "gaussian kernel requires `sigma = [variances]` or `cov = [[...]]`",
                    ))
                }
            };
            KernelKind::GaussianKernel {
                vars: exo.clone(),
                sigma,
            }
        }
        "distance" => KernelKind::DistanceBased(distance_spec(&mut body)?),
        "generalized" => {
            let alpha = match body.take("alpha") {
                Some(Entry::Num(x)) => x,
                _ => return Err(err_at(1, 1, "generalized kernel requires `alpha = <number>`")),
            };
            let beta = match body.take("beta") {
                Some(Entry::Num(x)) => x,
                _ => return Err(err_at(1, 1, "generalized kernel requires `beta = <number>`")),
            };
            KernelKind::GeneralizedPriorDistance {
                alpha,
                beta,
                distance: distance_spec(&mut body)?,
            }
        }
        "stability" => {
            let s = match body.take("s") {
                Some(Entry::Num(x)) => x,
                _ => return Err(err_at(1, 1, "stability kernel requires `s = <number in [0,1]>`")),
            };
            let t = prior.as_tabular().ok_or_else(|| {
                Error::UnsupportedBackend(
                    "stability kernel derives per-variable marginals and needs a table prior".into(),
                )
            })?;
            let mut per_var_prior = Vec::new();
            for name in &exo {
                let m = t.marginal(std::slice::from_ref(name))?;
                let pairs: Vec<(Value, f64)> =
                    m.rows.iter().map(|(vs, w)| (vs[0].clone(), *w)).collect();
                per_var_prior.push((name.clone(), pairs));
            }
            KernelKind::StabilityMixture { s, per_var_prior }
        }
        other => {
            return Err(Error::DomainMismatch(format!(
                "unknown kernel kind `{other}`"
            )))
        }
    };
    body.reject_leftovers()?;
    Kernel::new(kind, domains, declared, Some(prior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::Assignment;

    const CHAIN: &str = r#"
# three-variable additive chain
exogenous {
  U_X : real
  U_Y : real
  U_Z : real
}
endogenous {
  X : real
  Y : real
  Z : real
}
laws {
  X := U_X
  Y := X + U_Y
  Z := X + Y + U_Z
}
prior {
  kind = gaussian
  sigma = [1, 1, 1]
}
backtracking {
  kind = gaussian
  sigma = [1.0, 1.0, 1.0]
}
"#;

    #[test]
    fn parses_the_chain_model() {
        let mf = parse_model(CHAIN).unwrap();
        assert_eq!(mf.model.exogenous().len(), 3);
        let mut u = Assignment::new();
        u.insert("U_X".into(), Value::num(1.0));
        u.insert("U_Y".into(), Value::num(1.0));
        u.insert("U_Z".into(), Value::num(0.0));
        let v = mf.model.solve(&u).unwrap();
        assert_eq!(v["Z"], Value::num(3.0));
        assert!(matches!(mf.prior, Distribution::Gaussian(_)));
        assert!(matches!(
            mf.kernel.as_ref().unwrap().kind,
            KernelKind::GaussianKernel { .. }
        ));
    }

    #[test]
    fn parses_table_prior_and_stability_kernel() {
        let text = r#"
exogenous { U : {0, 1} }
endogenous {
  C : {0, 1}
  A : {0, 1}
}
laws {
  C := U
  A := C
}
prior {
  kind = table
  (0) : 0.5
  (1) : 0.5
}
backtracking {
  kind = stability
  s = 0.9
  properties = [decomposability]
}
"#;
        let mf = parse_model(text).unwrap();
        let t = mf.prior.as_tabular().unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(matches!(
            mf.kernel.as_ref().unwrap().kind,
            KernelKind::StabilityMixture { .. }
        ));
    }

    #[test]
    fn rejects_unknown_section_and_starred_names() {
        let bad = "foo { }\n";
        assert!(matches!(
            parse_model(bad),
            Err(Error::ParseError { .. })
        ));
        let starred = "exogenous { U* : real }\nendogenous { X : real }\nlaws { X := U* }\nprior { kind = gaussian }\n";
        assert!(matches!(
            parse_model(starred),
            Err(Error::ParseError { .. })
        ));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"
exogenous { U : real }
endogenous { X : real }
laws { X := U }
prior {
  kind = gaussian
  bogus = 3
}
"#;
        assert!(parse_model(text).is_err());
    }

    #[test]
    fn boolean_laws_round_trip_through_eval() {
        let text = r#"
exogenous { U : {0, 1} }
endogenous {
  A : {0, 1}
  B : {0, 1}
  P : {0, 1}
}
laws {
  A := U
  B := U
  P := A | B
}
prior {
  kind = table
  (1) : 1
}
"#;
        let mf = parse_model(text).unwrap();
        let mut u = Assignment::new();
        u.insert("U".into(), Value::num(1.0));
        assert_eq!(mf.model.solve(&u).unwrap()["P"], Value::num(1.0));
    }

    #[test]
    fn parses_regime_levels() {
        let text = r#"
exogenous { U : real }
endogenous { X : real }
laws { X := U }
prior { kind = gaussian }
regimes { X = [3.0, -1.0] }
"#;
        let mf = parse_model(text).unwrap();
        assert_eq!(mf.levels["X"], vec![Value::num(3.0), Value::num(-1.0)]);
    }
}
