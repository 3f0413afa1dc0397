//! The non-probabilistic skeleton: variables, domains, structural laws,
//! graph analysis, solving, and intervention surgery.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::expr::{AffineForm, Expr};
use crate::value::Value;

/// A (partial) map from variable names to values.
pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Exogenous,
    Endogenous,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Finite(Vec<Value>),
    RealLine,
    RealInterval(f64, f64),
}

impl Domain {
    pub fn contains(&self, v: &Value) -> bool {
        match self {
            Domain::Finite(values) => values.contains(v),
            Domain::RealLine => matches!(v, Value::Num(x) if x.is_finite()),
            Domain::RealInterval(lo, hi) => {
                matches!(v, Value::Num(x) if x.is_finite() && *lo <= *x && *x <= *hi)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Domain::Finite(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Finite(values) => {
                if values.is_empty() {
                    return Err(Error::DomainMismatch("finite domain is empty".into()));
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Err(Error::DomainMismatch(format!(
                            "duplicate value {v} in finite domain"
                        )));
                    }
                }
                Ok(())
            }
            Domain::RealLine => Ok(()),
            Domain::RealInterval(lo, hi) => {
                if lo < hi {
                    Ok(())
                } else {
                    Err(Error::DomainMismatch(format!(
                        "interval bounds must satisfy lo < hi, got [{lo}, {hi}]"
                    )))
                }
            }
        }
    }
}

/// One structural law `target := expr(parents, noises)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralLaw {
    pub target: String,
    pub expr: Expr,
}

/// An acyclic structural causal model `(U, V, F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    exogenous: Vec<(String, Domain)>,
    endogenous: Vec<(String, Domain)>,
    laws: Vec<StructuralLaw>, // one per endogenous variable, in declaration order
}

impl CausalModel {
    /// Builds and validates a model. Laws may be given in any order; they
    /// are stored aligned with the endogenous declaration order.
    pub fn new(
        exogenous: Vec<(String, Domain)>,
        endogenous: Vec<(String, Domain)>,
        laws: Vec<StructuralLaw>,
    ) -> Result<Self> {
        let mut ordered = Vec::with_capacity(endogenous.len());
        for (name, _) in &endogenous {
            let mut found = None;
            for law in &laws {
                if &law.target == name {
                    if found.is_some() {
                        return Err(Error::DomainMismatch(format!(
                            "duplicate law for `{name}`"
                        )));
                    }
                    found = Some(law.clone());
                }
            }
            ordered.push(found.ok_or_else(|| Error::MissingLaw(name.clone()))?);
        }
        for law in &laws {
            if !endogenous.iter().any(|(n, _)| n == &law.target) {
                return Err(Error::UnknownVariable(law.target.clone()));
            }
        }
        let model = CausalModel {
            exogenous,
            endogenous,
            laws: ordered,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn exogenous(&self) -> &[(String, Domain)] {
        &self.exogenous
    }

    pub fn endogenous(&self) -> &[(String, Domain)] {
        &self.endogenous
    }

    pub fn laws(&self) -> &[StructuralLaw] {
        &self.laws
    }

    pub fn law(&self, target: &str) -> Option<&StructuralLaw> {
        self.laws.iter().find(|l| l.target == target)
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.exogenous
            .iter()
            .chain(self.endogenous.iter())
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
    }

    pub fn kind(&self, name: &str) -> Option<VarKind> {
        if self.exogenous.iter().any(|(n, _)| n == name) {
            Some(VarKind::Exogenous)
        } else if self.endogenous.iter().any(|(n, _)| n == name) {
            Some(VarKind::Endogenous)
        } else {
            None
        }
    }

    /// Checks that `name` is endogenous and `value` lies in its domain.
    pub fn check_endogenous_value(&self, name: &str, value: &Value) -> Result<()> {
        match self.endogenous.iter().find(|(n, _)| n == name) {
            Some((_, dom)) if dom.contains(value) => Ok(()),
            Some(_) => Err(Error::DomainMismatch(format!(
                "value {value} outside the domain of `{name}`"
            ))),
            None => Err(Error::UnknownVariable(name.to_string())),
        }
    }

    /// Endogenous parents of a law's target.
    pub fn parents(&self, target: &str) -> BTreeSet<String> {
        match self.law(target) {
            Some(law) => law
                .expr
                .vars()
                .into_iter()
                .filter(|v| self.kind(v) == Some(VarKind::Endogenous))
                .collect(),
            None => BTreeSet::new(),
        }
    }

    /// Exogenous variables referenced by a law.
    pub fn noises(&self, target: &str) -> BTreeSet<String> {
        match self.law(target) {
            Some(law) => law
                .expr
                .vars()
                .into_iter()
                .filter(|v| self.kind(v) == Some(VarKind::Exogenous))
                .collect(),
            None => BTreeSet::new(),
        }
    }

    /// Checks all model invariants, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, dom) in self.exogenous.iter().chain(self.endogenous.iter()) {
            if !seen.insert(name.clone()) {
                return Err(Error::DomainMismatch(format!(
                    "variable name `{name}` declared twice"
                )));
            }
            dom.validate()?;
        }
        for law in &self.laws {
            for v in law.expr.vars() {
                if self.kind(&v).is_none() {
                    return Err(Error::UnknownVariable(v));
                }
            }
            if law.expr.vars().contains(&law.target) {
                return Err(Error::CyclicModel(law.target.clone()));
            }
        }
        self.topological_order()?;
        self.check_finite_closure()?;
        Ok(())
    }

    /// Exhaustive domain-closure check for laws whose referenced variables
    /// all have finite domains; continuous laws are a declared contract.
    fn check_finite_closure(&self) -> Result<()> {
        for law in &self.laws {
            let target_dom = self.domain(&law.target).unwrap();
            if !target_dom.is_finite() {
                continue;
            }
            let refs: Vec<(String, Domain)> = law
                .expr
                .vars()
                .into_iter()
                .map(|v| (v.clone(), self.domain(&v).unwrap().clone()))
                .collect();
            if !refs.iter().all(|(_, d)| d.is_finite()) {
                continue;
            }
            for env in enumerate_assignments(&refs) {
                let out = law.expr.eval(&env)?;
                if !target_dom.contains(&out) {
                    return Err(Error::DomainMismatch(format!(
                        "law for `{}` produces out-of-domain value {out} at {env:?}",
                        law.target
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic topological order over endogenous variables,
    /// ties broken by declaration order.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let names: Vec<&String> = self.endogenous.iter().map(|(n, _)| n).collect();
        let mut placed: BTreeSet<String> = BTreeSet::new();
        let mut order = Vec::with_capacity(names.len());
        while order.len() < names.len() {
            let mut progressed = false;
            for name in &names {
                if placed.contains(*name) {
                    continue;
                }
                let parents = self.parents(name);
                if parents.iter().all(|p| placed.contains(p)) {
                    placed.insert((*name).clone());
                    order.push((*name).clone());
                    progressed = true;
                }
            }
            if !progressed {
                let stuck = names
                    .iter()
                    .find(|n| !placed.contains(**n))
                    .unwrap()
                    .to_string();
                return Err(Error::CyclicModel(stuck));
            }
        }
        Ok(order)
    }

    /// Unique solution of the laws given a full exogenous assignment.
    pub fn solve(&self, u: &Assignment) -> Result<Assignment> {
        for (name, dom) in &self.exogenous {
            match u.get(name) {
                None => return Err(Error::IncompleteAssignment(name.clone())),
                Some(v) if !dom.contains(v) => {
                    return Err(Error::DomainMismatch(format!(
                        "value {v} out of domain for `{name}`"
                    )))
                }
                _ => {}
            }
        }
        let mut env = u.clone();
        for name in self.topological_order()? {
            let law = self.law(&name).unwrap();
            let v = law.expr.eval(&env)?;
            env.insert(name, v);
        }
        // return only the endogenous part
        Ok(self
            .endogenous
            .iter()
            .map(|(n, _)| (n.clone(), env[n].clone()))
            .collect())
    }

    /// The submodel `M_x`: laws of intervened variables replaced by constants.
    pub fn submodel(&self, x: &Assignment) -> Result<CausalModel> {
        for (name, v) in x {
            match self.kind(name) {
                Some(VarKind::Endogenous) => {}
                _ => return Err(Error::UnknownVariable(name.clone())),
            }
            if !self.domain(name).unwrap().contains(v) {
                return Err(Error::DomainMismatch(format!(
                    "intervention value {v} out of domain for `{name}`"
                )));
            }
        }
        let laws = self
            .laws
            .iter()
            .map(|law| match x.get(&law.target) {
                Some(v) => StructuralLaw {
                    target: law.target.clone(),
                    expr: Expr::Const(v.clone()),
                },
                None => law.clone(),
            })
            .collect();
        CausalModel::new(self.exogenous.clone(), self.endogenous.clone(), laws)
    }

    /// Reflexive-transitive ancestor closure over parent and noise edges,
    /// including both endogenous and exogenous variables.
    pub fn ancestors(&self, targets: &BTreeSet<String>) -> Result<BTreeSet<String>> {
        for t in targets {
            if self.kind(t).is_none() {
                return Err(Error::UnknownVariable(t.clone()));
            }
        }
        let mut out: BTreeSet<String> = targets.clone();
        let mut frontier: Vec<String> = targets.iter().cloned().collect();
        while let Some(v) = frontier.pop() {
            if self.kind(&v) != Some(VarKind::Endogenous) {
                continue;
            }
            for p in self.parents(&v).into_iter().chain(self.noises(&v)) {
                if out.insert(p.clone()) {
                    frontier.push(p);
                }
            }
        }
        Ok(out)
    }

    /// Affine reduced form V = A·U + b, available whenever every law is
    /// affine in its parents and noises. Used for backend dispatch.
    pub fn affine_reduced_form(&self) -> Option<ReducedForm> {
        let mut env: BTreeMap<String, AffineForm> = self
            .exogenous
            .iter()
            .map(|(n, _)| (n.clone(), AffineForm::unit(n.clone())))
            .collect();
        let order = self.topological_order().ok()?;
        for name in &order {
            let form = self.law(name).unwrap().expr.as_affine(&env)?;
            env.insert(name.clone(), form);
        }
        let exo_order: Vec<String> = self.exogenous.iter().map(|(n, _)| n.clone()).collect();
        let endo_order: Vec<String> = self.endogenous.iter().map(|(n, _)| n.clone()).collect();
        let mut a = nalgebra::DMatrix::zeros(endo_order.len(), exo_order.len());
        let mut b = nalgebra::DVector::zeros(endo_order.len());
        for (i, v) in endo_order.iter().enumerate() {
            let form = &env[v];
            b[i] = form.constant;
            for (j, u) in exo_order.iter().enumerate() {
                a[(i, j)] = form.coeff(u);
            }
        }
        Some(ReducedForm {
            endo_order,
            exo_order,
            a,
            b,
        })
    }

    /// Strict linear-additive-Gaussian normal form: every law affine in its
    /// parents plus exactly one exogenous term with unit coefficient, each
    /// exogenous variable used by exactly one law, all domains real.
    /// Returns the reduced form when compatible.
    pub fn linear_additive_gaussian_form(&self) -> Option<ReducedForm> {
        let all_real = self
            .exogenous
            .iter()
            .chain(self.endogenous.iter())
            .all(|(_, d)| matches!(d, Domain::RealLine));
        if !all_real {
            return None;
        }
        let mut used: BTreeSet<String> = BTreeSet::new();
        for law in &self.laws {
            // affine in direct parents and noises (not the reduced form yet)
            let mut env: BTreeMap<String, AffineForm> = BTreeMap::new();
            for v in law.expr.vars() {
                env.insert(v.clone(), AffineForm::unit(v));
            }
            let form = law.expr.as_affine(&env)?;
            let noises: Vec<String> = self.noises(&law.target).into_iter().collect();
            if noises.len() != 1 {
                return None;
            }
            if (form.coeff(&noises[0]) - 1.0).abs() > 1e-12 {
                return None;
            }
            if !used.insert(noises[0].clone()) {
                return None;
            }
        }
        self.affine_reduced_form()
    }
}

/// Coefficients of the solution map V = A·U + b.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedForm {
    pub endo_order: Vec<String>,
    pub exo_order: Vec<String>,
    pub a: nalgebra::DMatrix<f64>,
    pub b: nalgebra::DVector<f64>,
}

impl ReducedForm {
    /// Rows of (A, b) for a subset of endogenous variables, in the given order.
    pub fn rows_for(&self, vars: &[String]) -> Option<(nalgebra::DMatrix<f64>, nalgebra::DVector<f64>)> {
        let mut a = nalgebra::DMatrix::zeros(vars.len(), self.exo_order.len());
        let mut b = nalgebra::DVector::zeros(vars.len());
        for (i, v) in vars.iter().enumerate() {
            let row = self.endo_order.iter().position(|n| n == v)?;
            a.row_mut(i).copy_from(&self.a.row(row));
            b[i] = self.b[row];
        }
        Some((a, b))
    }
}

/// Cartesian product of finite domains in declaration order; panics are
/// avoided by requiring every domain to be finite (callers check first).
pub fn enumerate_assignments(vars: &[(String, Domain)]) -> Vec<Assignment> {
    let mut out: Vec<Assignment> = vec![Assignment::new()];
    for (name, dom) in vars {
        let values = match dom {
            Domain::Finite(vs) => vs.clone(),
            _ => return Vec::new(),
        };
        let mut next = Vec::with_capacity(out.len() * values.len());
        for base in &out {
            for v in &values {
                let mut a = base.clone();
                a.insert(name.clone(), v.clone());
                next.push(a);
            }
        }
        out = next;
    }
    out
}

pub fn all_finite(vars: &[(String, Domain)]) -> bool {
    vars.iter().all(|(_, d)| d.is_finite())
}
