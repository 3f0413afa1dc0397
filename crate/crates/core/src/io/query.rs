//! Parser for the `.query` text format.
//!
//! A query is one statement:
//!
//! ```text
//! observe   given Y=3 find X,Z
//! intervene given C=1,A=1,B=1,P=1 do A=0 find P
//! backtrack given X=1,Y=2,Z=2 had Y*=3 find X*,Z*
//! unified   given P=1 regime counterfactual A=0 find P*
//! ```
//!
//! with an optional trailing `with backend=mc, samples=1000, seed=3`.
//! Newlines are insignificant inside queries. `had` clauses and the
//! `find` targets of `backtrack`/`unified` use starred names (`Y*`),
//! marking the counterfactual world; everything else uses plain names.

use crate::backtracking::{Backend, BacktrackingQuery};
use crate::error::{Error, Result};
use crate::interventional::InterventionalQuery;
use crate::scm::Assignment;
use crate::unified::{UnifiedQuery, OBS_LABEL};
use crate::value::Value;

use super::lexer::{err_at, tokenize_with, Cursor, Tok, Token};
use super::model::{parse_value, ModelFile};

/// Execution hints embedded in the query text; command-line flags take
/// precedence over these.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOptions {
    pub backend: Option<Backend>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuerySpec {
    Observe {
        evidence: Assignment,
        targets: Vec<String>,
    },
    Intervene(InterventionalQuery),
    Backtrack(BacktrackingQuery),
    Unified {
        query: UnifiedQuery,
        /// Regime evidence on the factual world, keyed by base variable.
        factual_regimes: Assignment,
        /// Regime evidence on the counterfactual world, keyed by base variable.
        counterfactual_regimes: Assignment,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub spec: QuerySpec,
    pub options: QueryOptions,
}

pub fn parse_query(text: &str, mf: &ModelFile) -> Result<Query> {
    let toks: Vec<Token> = tokenize_with(text, true)?
        .into_iter()
        .filter(|t| t.tok != Tok::Newline)
        .collect();
    let mut cur = Cursor::new(toks);
    let (selector, sl, sc) = cur.expect_ident()?;

    let mut given = Assignment::new();
    let mut do_clause = Assignment::new();
    let mut had = Assignment::new();
    let mut factual_regimes = Assignment::new();
    let mut counterfactual_regimes = Assignment::new();
    let mut targets: Option<Vec<String>> = None;
    let mut options = QueryOptions::default();

    loop {
        let (l, c) = cur.here();
        if cur.at_end() {
            break;
        }
        if cur.eat_ident("given") {
            extend_assigns(&mut cur, &mut given)?;
        } else if cur.eat_ident("do") {
            extend_assigns(&mut cur, &mut do_clause)?;
        } else if cur.eat_ident("had") {
            extend_assigns(&mut cur, &mut had)?;
        } else if cur.eat_ident("regime") {
            let world = if cur.eat_ident("factual") {
                &mut factual_regimes
            } else if cur.eat_ident("counterfactual") {
                &mut counterfactual_regimes
            } else {
                let (l, c) = cur.here();
                return Err(err_at(l, c, "expected `factual` or `counterfactual`"));
            };
            extend_assigns(&mut cur, world)?;
        } else if cur.eat_ident("find") {
            if targets.is_some() {
                return Err(err_at(l, c, "duplicate `find` clause"));
            }
            targets = Some(parse_names(&mut cur)?);
        } else if cur.eat_ident("with") {
            parse_options(&mut cur, &mut options)?;
        } else {
            return Err(err_at(l, c, "expected a clause (given/do/had/regime/find/with)"));
        }
    }
    let targets = targets.ok_or_else(|| err_at(sl, sc, "query needs a `find` clause"))?;

    let reject = |clause: &str, present: bool| -> Result<()> {
        if present {
            Err(err_at(
                sl,
                sc,
                format!("`{clause}` clause is not valid in a `{selector}` query"),
            ))
        } else {
            Ok(())
        }
    };
    let no_regimes = factual_regimes.is_empty() && counterfactual_regimes.is_empty();

    let spec = match selector.as_str() {
        "observe" => {
            reject("do", !do_clause.is_empty())?;
            reject("had", !had.is_empty())?;
            reject("regime", !no_regimes)?;
            check_plain(&given, mf)?;
            check_targets_plain(&targets, mf)?;
            QuerySpec::Observe {
                evidence: given,
                targets,
            }
        }
        "intervene" => {
            reject("had", !had.is_empty())?;
            reject("regime", !no_regimes)?;
            check_plain(&given, mf)?;
            check_plain(&do_clause, mf)?;
            check_targets_plain(&targets, mf)?;
            QuerySpec::Intervene(InterventionalQuery {
                factual_evidence: given,
                intervention: do_clause,
                targets,
            })
        }
        "backtrack" => {
            reject("do", !do_clause.is_empty())?;
            reject("regime", !no_regimes)?;
            check_plain(&given, mf)?;
            let counterfactual_evidence = unstar_assigns(&had, mf)?;
            let targets = unstar_names(&targets, mf)?;
            QuerySpec::Backtrack(BacktrackingQuery {
                factual_evidence: given,
                counterfactual_evidence,
                targets,
            })
        }
        "unified" => {
            reject("do", !do_clause.is_empty())?;
            check_plain(&given, mf)?;
            let counterfactual_evidence = unstar_assigns(&had, mf)?;
            let targets = unstar_names(&targets, mf)?;
            check_regimes(&factual_regimes, mf)?;
            check_regimes(&counterfactual_regimes, mf)?;
            QuerySpec::Unified {
                query: UnifiedQuery {
                    factual_evidence: given,
                    counterfactual_evidence,
                    targets,
                },
                factual_regimes,
                counterfactual_regimes,
            }
        }
        other => {
            return Err(err_at(
                sl,
                sc,
                format!("unknown query selector `{other}` (use observe, intervene, backtrack, or unified)"),
            ))
        }
    };
    Ok(Query { spec, options })
}

/// `NAME = value (, NAME = value)*` appended to `into`.
fn extend_assigns(cur: &mut Cursor, into: &mut Assignment) -> Result<()> {
    loop {
        let (name, l, c) = cur.expect_ident()?;
        cur.expect_punct("=")?;
        let v = parse_value(cur)?;
        if into.insert(name.clone(), v).is_some() {
            return Err(err_at(l, c, format!("`{name}` assigned twice")));
        }
        if !cur.eat_punct(",") {
            return Ok(());
        }
    }
}

fn parse_names(cur: &mut Cursor) -> Result<Vec<String>> {
    let mut out = Vec::new();
    loop {
        let (name, l, c) = cur.expect_ident()?;
        if out.contains(&name) {
            return Err(err_at(l, c, format!("`{name}` listed twice")));
        }
        out.push(name);
        if !cur.eat_punct(",") {
            return Ok(out);
        }
    }
}

fn parse_options(cur: &mut Cursor, options: &mut QueryOptions) -> Result<()> {
    loop {
        let (key, l, c) = cur.expect_ident()?;
        cur.expect_punct("=")?;
        match key.as_str() {
            "backend" => {
                let (word, wl, wc) = cur.expect_ident()?;
                options.backend = Some(match word.as_str() {
                    "auto" => Backend::Auto,
                    "exact" => Backend::Exact,
                    "gaussian" => Backend::Gaussian,
                    "mc" => Backend::MonteCarlo,
                    other => {
                        return Err(err_at(wl, wc, format!("unknown backend `{other}`")))
                    }
                });
            }
            "samples" => {
                let x = cur.expect_number()?;
                if x < 1.0 || x.fract() != 0.0 {
                    return Err(err_at(l, c, "`samples` must be a positive integer"));
                }
                options.samples = Some(x as usize);
            }
            "seed" => {
                let x = cur.expect_number()?;
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(err_at(l, c, "`seed` must be a non-negative integer"));
                }
                options.seed = Some(x as u64);
            }
            other => return Err(err_at(l, c, format!("unknown option `{other}`"))),
        }
        if !cur.eat_punct(",") && !matches!(cur.peek().map(|t| &t.tok), Some(Tok::Ident(_))) {
            return Ok(());
        }
    }
}

/// Plain-name evidence: every key must be a model variable (no stars) and
/// every value must lie in its domain.
fn check_plain(ev: &Assignment, mf: &ModelFile) -> Result<()> {
    for (name, v) in ev {
        if name.ends_with('*') {
            return Err(Error::DomainMismatch(format!(
                "`{name}` is starred; starred names only appear in `had` clauses and counterfactual targets"
            )));
        }
        let dom = mf
            .model
            .domain(name)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        if !dom.contains(v) {
            return Err(Error::DomainMismatch(format!(
                "value {v} outside the domain of `{name}`"
            )));
        }
    }
    Ok(())
}

fn check_targets_plain(targets: &[String], mf: &ModelFile) -> Result<()> {
    for t in targets {
        if t.ends_with('*') {
            return Err(Error::DomainMismatch(format!(
                "target `{t}` is starred; this query type reports on the single factual/intervened world"
            )));
        }
        if mf.model.domain(t).is_none() {
            return Err(Error::UnknownVariable(t.clone()));
        }
    }
    Ok(())
}

/// Starred evidence → plain keys, validated against the model.
fn unstar_assigns(ev: &Assignment, mf: &ModelFile) -> Result<Assignment> {
    let mut out = Assignment::new();
    for (name, v) in ev {
        let base = name.strip_suffix('*').ok_or_else(|| {
            Error::DomainMismatch(format!(
                "`{name}` must be starred (counterfactual world), e.g. `{name}*`"
            ))
        })?;
        let dom = mf
            .model
            .domain(base)
            .ok_or_else(|| Error::UnknownVariable(base.to_string()))?;
        if !dom.contains(v) {
            return Err(Error::DomainMismatch(format!(
                "value {v} outside the domain of `{base}`"
            )));
        }
        out.insert(base.to_string(), v.clone());
    }
    Ok(out)
}

fn unstar_names(names: &[String], mf: &ModelFile) -> Result<Vec<String>> {
    names
        .iter()
        .map(|n| {
            let base = n.strip_suffix('*').ok_or_else(|| {
                Error::DomainMismatch(format!(
                    "target `{n}` must be starred (counterfactual world), e.g. `{n}*`"
                ))
            })?;
            if mf.model.domain(base).is_none() {
                return Err(Error::UnknownVariable(base.to_string()));
            }
            Ok(base.to_string())
        })
        .collect()
}

/// Regime values are either the observational sentinel `obs` or a value of
/// the endogenous variable's domain (for finite domains) / declared regime
/// levels (for continuous domains).
fn check_regimes(regimes: &Assignment, mf: &ModelFile) -> Result<()> {
    for (name, v) in regimes {
        let dom = mf
            .model
            .endogenous()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        if *v == Value::label(OBS_LABEL) {
            continue;
        }
        let ok = if dom.is_finite() {
            dom.contains(v)
        } else {
            mf.levels.get(name).is_some_and(|ls| ls.contains(v))
        };
        if !ok {
            return Err(Error::DomainMismatch(format!(
                "regime value {v} for `{name}` is neither `obs`, a domain value, nor a declared regime level"
            )));
        }
    }
    Ok(())
}
