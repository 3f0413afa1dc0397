//! Weighted-particle distributions (Monte Carlo backend).

use crate::error::{Error, Result};
use crate::scm::Assignment;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Particles {
    pub vars: Vec<String>,
    pub particles: Vec<(Vec<Value>, f64)>,
    /// Seed that produced the particles, recorded for reproducibility.
    pub seed: u64,
}

impl Particles {
    pub fn new(vars: Vec<String>, particles: Vec<(Vec<Value>, f64)>, seed: u64) -> Result<Self> {
        if particles.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) {
            return Err(Error::DomainMismatch("negative or non-finite weight".into()));
        }
        let mut p = Particles {
            vars,
            particles,
            seed,
        };
        p.normalize()?;
        Ok(p)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.particles.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbabilityEvidence(
                "all particle weights are zero".into(),
            ));
        }
        for (_, w) in &mut self.particles {
            *w /= total;
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn assignment(&self, i: usize) -> Assignment {
        self.vars
            .iter()
            .cloned()
            .zip(self.particles[i].0.iter().cloned())
            .collect()
    }

    /// Effective sample size of the normalized weights.
    pub fn ess(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|(_, w)| w * w).sum();
        if sum_sq == 0.0 {
            0.0
        } else {
            1.0 / sum_sq
        }
    }

    /// Projection onto a variable subset; weights preserved.
    pub fn marginal(&self, keep: &[String]) -> Result<Particles> {
        let idx: Vec<usize> = keep.iter().map(|v| self.index_of(v)).collect::<Result<_>>()?;
        let particles = self
            .particles
            .iter()
            .map(|(vals, w)| (idx.iter().map(|&i| vals[i].clone()).collect(), *w))
            .collect();
        Particles::new(keep.to_vec(), particles, self.seed)
    }

    pub fn map<F>(&self, vars: Vec<String>, f: F) -> Result<Particles>
    where
        F: Fn(&Assignment) -> Result<Assignment>,
    {
        let mut particles = Vec::with_capacity(self.particles.len());
        for i in 0..self.particles.len() {
            let img = f(&self.assignment(i))?;
            let vals: Vec<Value> = vars
                .iter()
                .map(|v| {
                    img.get(v)
                        .cloned()
                        .ok_or_else(|| Error::UnknownVariable(v.clone()))
                })
                .collect::<Result<_>>()?;
            particles.push((vals, self.particles[i].1));
        }
        Particles::new(vars, particles, self.seed)
    }

    pub fn condition_where<F>(&self, pred: F) -> Result<Particles>
    where
        F: Fn(&Assignment) -> bool,
    {
        let particles: Vec<(Vec<Value>, f64)> = self
            .particles
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(&self.assignment(*i)))
            .map(|(_, p)| p.clone())
            .collect();
        Particles::new(self.vars.clone(), particles, self.seed)
    }

    /// Weighted mean of a numeric coordinate.
    pub fn mean(&self, name: &str) -> Result<f64> {
        let i = self.index_of(name)?;
        self.particles
            .iter()
            .map(|(vals, w)| {
                vals[i]
                    .as_num()
                    .map(|x| x * w)
                    .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))
            })
            .sum()
    }

    /// Weighted covariance of two numeric coordinates.
    pub fn covariance(&self, a: &str, b: &str) -> Result<f64> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        let (ma, mb) = (self.mean(a)?, self.mean(b)?);
        let mut acc = 0.0;
        for (vals, w) in &self.particles {
            let xa = vals[ia].as_num().ok_or_else(|| {
                Error::TypeMismatch(format!("`{a}` is not numeric"))
            })?;
            let xb = vals[ib].as_num().ok_or_else(|| {
                Error::TypeMismatch(format!("`{b}` is not numeric"))
            })?;
            acc += w * (xa - ma) * (xb - mb);
        }
        Ok(acc)
    }

    /// Highest-weight particle, first on ties.
    pub fn argmax(&self) -> Assignment {
        let mut best = 0;
        for i in 1..self.particles.len() {
            if self.particles[i].1 > self.particles[best].1 {
                best = i;
            }
        }
        self.assignment(best)
    }
}
