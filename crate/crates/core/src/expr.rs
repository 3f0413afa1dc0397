//! Expression AST for structural laws.
//!
//! The language is deliberately closed: constants, variable references,
//! arithmetic (+, -, *, unary -), boolean connectives (&, |, !),
//! comparisons (=, >=, >), `ite(c, a, b)`, and binary `max`/`min`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scm::Assignment;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Value),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Ge(Box<Expr>, Box<Expr>),
    Gt(Box<Expr>, Box<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn num(x: f64) -> Expr {
        Expr::Const(Value::Num(x))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn not(a: Expr) -> Expr {
        Expr::Not(Box::new(a))
    }

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    pub fn ite(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Ite(Box::new(c), Box::new(a), Box::new(b))
    }

    /// All variable names referenced anywhere in the expression.
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Not(a) => a.collect_vars(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::And(a, b)
            | Expr::Or(a, b)
            | Expr::Eq(a, b)
            | Expr::Ge(a, b)
            | Expr::Gt(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Ite(c, a, b) => {
                c.collect_vars(out);
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn eval(&self, env: &Assignment) -> Result<Value> {
        match self {
            Expr::Const(v) => Ok(v.clone()),
            Expr::Var(name) => env
                .get(name)
                .cloned()
                .ok_or_else(|| Error::IncompleteAssignment(name.clone())),
            Expr::Neg(a) => Ok(Value::Num(-self.num_of(a, env)?)),
            Expr::Add(a, b) => Ok(Value::Num(self.num_of(a, env)? + self.num_of(b, env)?)),
            Expr::Sub(a, b) => Ok(Value::Num(self.num_of(a, env)? - self.num_of(b, env)?)),
            Expr::Mul(a, b) => Ok(Value::Num(self.num_of(a, env)? * self.num_of(b, env)?)),
            Expr::And(a, b) => {
                let x = self.bool_of(a, env)?;
                let y = self.bool_of(b, env)?;
                Ok(Value::Num((x && y) as i64 as f64))
            }
            Expr::Or(a, b) => {
                let x = self.bool_of(a, env)?;
                let y = self.bool_of(b, env)?;
                Ok(Value::Num((x || y) as i64 as f64))
            }
            Expr::Not(a) => Ok(Value::Num(!self.bool_of(a, env)? as i64 as f64)),
            Expr::Eq(a, b) => Ok(Value::Num((a.eval(env)? == b.eval(env)?) as i64 as f64)),
            Expr::Ge(a, b) => Ok(Value::Num(
                (self.num_of(a, env)? >= self.num_of(b, env)?) as i64 as f64,
            )),
            Expr::Gt(a, b) => Ok(Value::Num(
                (self.num_of(a, env)? > self.num_of(b, env)?) as i64 as f64,
            )),
            Expr::Ite(c, a, b) => {
                if self.bool_of(c, env)? {
                    a.eval(env)
                } else {
                    b.eval(env)
                }
            }
            Expr::Max(a, b) => Ok(Value::Num(self.num_of(a, env)?.max(self.num_of(b, env)?))),
            Expr::Min(a, b) => Ok(Value::Num(self.num_of(a, env)?.min(self.num_of(b, env)?))),
        }
    }

    fn num_of(&self, e: &Expr, env: &Assignment) -> Result<f64> {
        e.eval(env)?
            .as_num()
            .ok_or_else(|| Error::Eval("numeric operator applied to a label".into()))
    }

    fn bool_of(&self, e: &Expr, env: &Assignment) -> Result<bool> {
        e.eval(env)?
            .truthy()
            .ok_or_else(|| Error::Eval("boolean operator applied to a label".into()))
    }

    /// Interpret the expression as an affine form over base variables,
    /// substituting known affine forms for variables found in `env`.
    /// Returns `None` when the expression is not affine (products of two
    /// non-constant terms, boolean/comparison operators, labels).
    pub fn as_affine(&self, env: &BTreeMap<String, AffineForm>) -> Option<AffineForm> {
        match self {
            Expr::Const(Value::Num(x)) => Some(AffineForm::constant(*x)),
            Expr::Const(Value::Label(_)) => None,
            Expr::Var(name) => env.get(name).cloned(),
            Expr::Neg(a) => Some(a.as_affine(env)?.scale(-1.0)),
            Expr::Add(a, b) => Some(a.as_affine(env)?.add(&b.as_affine(env)?)),
            Expr::Sub(a, b) => Some(a.as_affine(env)?.add(&b.as_affine(env)?.scale(-1.0))),
            Expr::Mul(a, b) => {
                let fa = a.as_affine(env)?;
                let fb = b.as_affine(env)?;
                if fa.is_constant() {
                    Some(fb.scale(fa.constant))
                } else if fb.is_constant() {
                    Some(fa.scale(fb.constant))
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

/// A linear combination of base variables plus a constant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineForm {
    pub coeffs: BTreeMap<String, f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn constant(x: f64) -> Self {
        AffineForm {
            coeffs: BTreeMap::new(),
            constant: x,
        }
    }

    pub fn unit(name: impl Into<String>) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(name.into(), 1.0);
        AffineForm {
            coeffs,
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    pub fn scale(mut self, k: f64) -> Self {
        for c in self.coeffs.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    pub fn add(&self, other: &AffineForm) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.coeffs {
            *out.coeffs.entry(k.clone()).or_insert(0.0) += v;
        }
        out.constant += other.constant;
        out
    }

    pub fn coeff(&self, name: &str) -> f64 {
        self.coeffs.get(name).copied().unwrap_or(0.0)
    }
}
