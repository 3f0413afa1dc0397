//! The observational probability layer: the `Distribution` union and the
//! prior-pushforward, conditioning, marginalisation, and sampling ops.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::particle::Particles;
use crate::scm::{Assignment, CausalModel};
use crate::tabular::Tabular;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Tabular(Tabular),
    Gaussian(Gaussian),
    Particles(Particles),
}

impl Distribution {
    pub fn variables(&self) -> &[String] {
        match self {
            Distribution::Tabular(t) => &t.vars,
            Distribution::Gaussian(g) => &g.vars,
            Distribution::Particles(p) => &p.vars,
        }
    }

    pub fn as_tabular(&self) -> Option<&Tabular> {
        match self {
            Distribution::Tabular(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_gaussian(&self) -> Option<&Gaussian> {
        match self {
            Distribution::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_particles(&self) -> Option<&Particles> {
        match self {
            Distribution::Particles(p) => Some(p),
            _ => None,
        }
    }

    /// Exact Bayesian conditional on point evidence.
    pub fn condition_on(&self, evidence: &Assignment) -> Result<Distribution> {
        if evidence.is_empty() {
            return Ok(self.clone());
        }
        match self {
            Distribution::Tabular(t) => {
                Ok(Distribution::Tabular(t.condition_assignment(evidence)?))
            }
            Distribution::Gaussian(g) => {
                let ev: Vec<(String, f64)> = evidence
                    .iter()
                    .map(|(k, v)| {
                        v.as_num()
                            .map(|x| (k.clone(), x))
                            .ok_or_else(|| Error::TypeMismatch(format!("`{k}` is not numeric")))
                    })
                    .collect::<Result<_>>()?;
                Ok(Distribution::Gaussian(g.condition_values(&ev)?))
            }
            Distribution::Particles(p) => Ok(Distribution::Particles(
                p.condition_where(|row| evidence.iter().all(|(k, v)| row.get(k) == Some(v)))?,
            )),
        }
    }

    /// Gaussian-only conditioning on a linear equality A·x = b.
    pub fn condition_linear(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Distribution> {
        match self {
            Distribution::Gaussian(g) => Ok(Distribution::Gaussian(g.condition_linear(a, b)?)),
            _ => Err(Error::UnsupportedBackend(
                "linear-equality conditioning requires a gaussian".into(),
            )),
        }
    }

    pub fn marginalise(&self, keep: &[String]) -> Result<Distribution> {
        match self {
            Distribution::Tabular(t) => Ok(Distribution::Tabular(t.marginal(keep)?)),
            Distribution::Gaussian(g) => Ok(Distribution::Gaussian(g.marginal(keep)?)),
            Distribution::Particles(p) => Ok(Distribution::Particles(p.marginal(keep)?)),
        }
    }

    /// Deterministic sampling given the seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Assignment>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        match self {
            Distribution::Tabular(t) => Ok(t.sample(n, seed)),
            Distribution::Gaussian(g) => Ok(g.sample_assignments(n, seed)),
            Distribution::Particles(p) => {
                // resample by inverse CDF over particle order
                let t = Tabular::new(
                    p.vars.clone(),
                    dedup_accumulate(&p.particles),
                )?;
                Ok(t.sample(n, seed))
            }
        }
    }

    /// Independent joint with a distribution over disjoint variables.
    pub fn product(&self, other: &Distribution) -> Result<Distribution> {
        match (self, other) {
            (Distribution::Tabular(a), Distribution::Tabular(b)) => {
                Ok(Distribution::Tabular(a.product(b)?))
            }
            (Distribution::Gaussian(a), Distribution::Gaussian(b)) => {
                Ok(Distribution::Gaussian(a.product(b)?))
            }
            _ => Err(Error::UnsupportedBackend(
                "product of mixed distribution representations".into(),
            )),
        }
    }

    /// Same distribution with variables renamed coordinate-wise.
    pub fn rename<F>(&self, f: F) -> Distribution
    where
        F: Fn(&str) -> String,
    {
        let vars: Vec<String> = self.variables().iter().map(|v| f(v)).collect();
        match self {
            Distribution::Tabular(t) => Distribution::Tabular(Tabular {
                vars,
                rows: t.rows.clone(),
            }),
            Distribution::Gaussian(g) => Distribution::Gaussian(Gaussian {
                vars,
                mean: g.mean.clone(),
                cov: g.cov.clone(),
            }),
            Distribution::Particles(p) => Distribution::Particles(Particles {
                vars,
                particles: p.particles.clone(),
                seed: p.seed,
            }),
        }
    }

    /// Weighted mean of a numeric coordinate.
    pub fn mean(&self, name: &str) -> Result<f64> {
        match self {
            Distribution::Tabular(t) => {
                let i = t.index_of(name)?;
                t.rows
                    .iter()
                    .map(|(vals, w)| {
                        vals[i]
                            .as_num()
                            .map(|x| x * w)
                            .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))
                    })
                    .sum()
            }
            Distribution::Gaussian(g) => Ok(g.mean[g.index_of(name)?]),
            Distribution::Particles(p) => p.mean(name),
        }
    }

    pub fn covariance(&self, a: &str, b: &str) -> Result<f64> {
        match self {
            Distribution::Gaussian(g) => Ok(g.cov[(g.index_of(a)?, g.index_of(b)?)]),
            Distribution::Particles(p) => p.covariance(a, b),
            Distribution::Tabular(t) => {
                let (ia, ib) = (t.index_of(a)?, t.index_of(b)?);
                let (ma, mb) = (self.mean(a)?, self.mean(b)?);
                let mut acc = 0.0;
                for (vals, w) in &t.rows {
                    let xa = vals[ia]
                        .as_num()
                        .ok_or_else(|| Error::TypeMismatch(format!("`{a}` is not numeric")))?;
                    let xb = vals[ib]
                        .as_num()
                        .ok_or_else(|| Error::TypeMismatch(format!("`{b}` is not numeric")))?;
                    acc += w * (xa - ma) * (xb - mb);
                }
                Ok(acc)
            }
        }
    }
}

fn dedup_accumulate(particles: &[(Vec<Value>, f64)]) -> Vec<(Vec<Value>, f64)> {
    let mut rows: Vec<(Vec<Value>, f64)> = Vec::new();
    for (vals, w) in particles {
        match rows.iter_mut().find(|(v, _)| v == vals) {
            Some((_, acc)) => *acc += w,
            None => rows.push((vals.clone(), *w)),
        }
    }
    rows
}

/// Pushforward of the exogenous prior through the structural laws,
/// marginalised to `targets` (Eq.-2 style observational layer).
pub fn endogenous_distribution(
    model: &CausalModel,
    prior: &Distribution,
    targets: &[String],
) -> Result<Distribution> {
    check_prior_vars(model, prior)?;
    match prior {
        Distribution::Tabular(t) => {
            let endo: Vec<String> = model.endogenous().iter().map(|(n, _)| n.clone()).collect();
            let pushed = t.map(endo, |u| model.solve(u))?;
            Ok(Distribution::Tabular(pushed.marginal(targets)?))
        }
        Distribution::Gaussian(g) => {
            let rf = model.affine_reduced_form().ok_or_else(|| {
                Error::UnsupportedBackend(
                    "gaussian prior with a nonlinear model; use the particle backend".into(),
                )
            })?;
            // reorder prior to the model's exogenous order
            let g = g.marginal(&rf.exo_order)?;
            let (a, b) = rf
                .rows_for(targets)
                .ok_or_else(|| Error::UnknownVariable(targets.join(",")))?;
            Ok(Distribution::Gaussian(g.affine_map(&a, &b, targets.to_vec())))
        }
        Distribution::Particles(p) => {
            let endo: Vec<String> = model.endogenous().iter().map(|(n, _)| n.clone()).collect();
            let pushed = p.map(endo, |u| model.solve(u))?;
            Ok(Distribution::Particles(pushed.marginal(targets)?))
        }
    }
}

/// Monte Carlo variant for nonlinear continuous models.
pub fn endogenous_distribution_mc(
    model: &CausalModel,
    prior: &Distribution,
    targets: &[String],
    n: usize,
    seed: u64,
) -> Result<Distribution> {
    check_prior_vars(model, prior)?;
    let us = prior.sample(n, seed)?;
    let mut particles = Vec::with_capacity(n);
    for u in &us {
        let v = model.solve(u)?;
        let vals: Vec<Value> = targets
            .iter()
            .map(|t| {
                v.get(t)
                    .cloned()
                    .ok_or_else(|| Error::UnknownVariable(t.clone()))
            })
            .collect::<Result<_>>()?;
        particles.push((vals, 1.0));
    }
    Ok(Distribution::Particles(Particles::new(
        targets.to_vec(),
        particles,
        seed,
    )?))
}

fn check_prior_vars(model: &CausalModel, prior: &Distribution) -> Result<()> {
    let exo: Vec<&String> = model.exogenous().iter().map(|(n, _)| n).collect();
    let pv = prior.variables();
    if pv.len() != exo.len() || exo.iter().any(|n| !pv.contains(n)) {
        return Err(Error::DomainMismatch(
            "prior variables do not match the model's exogenous set".into(),
        ));
    }
    Ok(())
}
