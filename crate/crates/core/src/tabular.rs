//! Finite tabular distributions with declaration-ordered support.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scm::Assignment;
use crate::value::Value;

pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Tabular {
    pub vars: Vec<String>,
    /// Support rows in declaration order; weights nonnegative, normalized.
    pub rows: Vec<(Vec<Value>, f64)>,
}

impl Tabular {
    pub fn new(vars: Vec<String>, rows: Vec<(Vec<Value>, f64)>) -> Result<Self> {
        for (i, (vals, w)) in rows.iter().enumerate() {
            if vals.len() != vars.len() {
                return Err(Error::DomainMismatch(
                    "tabular row length does not match variable count".into(),
                ));
            }
            if *w < 0.0 || !w.is_finite() {
                return Err(Error::DomainMismatch("negative or non-finite weight".into()));
            }
            if rows[..i].iter().any(|(v, _)| v == vals) {
                return Err(Error::DomainMismatch("duplicate support entry".into()));
            }
        }
        let mut t = Tabular { vars, rows };
        t.normalize()?;
        Ok(t)
    }

    pub fn point_mass(assignment: &Assignment) -> Self {
        let vars: Vec<String> = assignment.keys().cloned().collect();
        let vals: Vec<Value> = assignment.values().cloned().collect();
        Tabular {
            vars,
            rows: vec![(vals, 1.0)],
        }
    }

    pub fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.rows.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbabilityEvidence("total mass is zero".into()));
        }
        if (total - 1.0).abs() > NORM_TOL {
            for (_, w) in &mut self.rows {
                *w /= total;
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn row_assignment(&self, row: usize) -> Assignment {
        self.vars
            .iter()
            .cloned()
            .zip(self.rows[row].0.iter().cloned())
            .collect()
    }

    /// Total mass of rows matching a partial assignment.
    pub fn mass_of(&self, partial: &Assignment) -> Result<f64> {
        let idx: Vec<(usize, &Value)> = partial
            .iter()
            .map(|(k, v)| Ok((self.index_of(k)?, v)))
            .collect::<Result<_>>()?;
        Ok(self
            .rows
            .iter()
            .filter(|(vals, _)| idx.iter().all(|(i, v)| &vals[*i] == *v))
            .map(|(_, w)| w)
            .sum())
    }

    /// Exact Bayesian conditional on a row predicate.
    pub fn condition_where<F>(&self, pred: F) -> Result<Tabular>
    where
        F: Fn(&Assignment) -> bool,
    {
        let rows: Vec<(Vec<Value>, f64)> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(&self.row_assignment(*i)))
            .map(|(_, r)| r.clone())
            .collect();
        if rows.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(Error::ZeroProbabilityEvidence(
                "conditioning event has zero probability".into(),
            ));
        }
        Tabular::new(self.vars.clone(), rows)
    }

    pub fn condition_assignment(&self, evidence: &Assignment) -> Result<Tabular> {
        for k in evidence.keys() {
            self.index_of(k)?;
        }
        self.condition_where(|row| evidence.iter().all(|(k, v)| row.get(k) == Some(v)))
    }

    /// Exact marginal; the output support keeps first-occurrence order.
    pub fn marginal(&self, keep: &[String]) -> Result<Tabular> {
        let idx: Vec<usize> = keep.iter().map(|v| self.index_of(v)).collect::<Result<_>>()?;
        let mut out_rows: Vec<(Vec<Value>, f64)> = Vec::new();
        for (vals, w) in &self.rows {
            let proj: Vec<Value> = idx.iter().map(|&i| vals[i].clone()).collect();
            match out_rows.iter_mut().find(|(v, _)| v == &proj) {
                Some((_, acc)) => *acc += w,
                None => out_rows.push((proj, *w)),
            }
        }
        Tabular::new(keep.to_vec(), out_rows)
    }

    /// Independent joint over disjoint variable sets.
    pub fn product(&self, other: &Tabular) -> Result<Tabular> {
        for v in &other.vars {
            if self.vars.contains(v) {
                return Err(Error::OverlappingVariables(v.clone()));
            }
        }
        let mut vars = self.vars.clone();
        vars.extend(other.vars.iter().cloned());
        let mut rows = Vec::with_capacity(self.rows.len() * other.rows.len());
        for (a, wa) in &self.rows {
            for (b, wb) in &other.rows {
                let mut vals = a.clone();
                vals.extend(b.iter().cloned());
                rows.push((vals, wa * wb));
            }
        }
        Tabular::new(vars, rows)
    }

    /// Pushforward through a row mapping; equal images accumulate weight.
    pub fn map<F>(&self, vars: Vec<String>, f: F) -> Result<Tabular>
    where
        F: Fn(&Assignment) -> Result<Assignment>,
    {
        let mut rows: Vec<(Vec<Value>, f64)> = Vec::new();
        for i in 0..self.rows.len() {
            let img = f(&self.row_assignment(i))?;
            let vals: Vec<Value> = vars
                .iter()
                .map(|v| {
                    img.get(v)
                        .cloned()
                        .ok_or_else(|| Error::UnknownVariable(v.clone()))
                })
                .collect::<Result<_>>()?;
            match rows.iter_mut().find(|(v, _)| v == &vals) {
                Some((_, acc)) => *acc += self.rows[i].1,
                None => rows.push((vals, self.rows[i].1)),
            }
        }
        Tabular::new(vars, rows)
    }

    /// Inverse-CDF sampling over the declared support order.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Assignment> {
        let mut cdf = Vec::with_capacity(self.rows.len());
        let mut acc = 0.0;
        for (_, w) in &self.rows {
            acc += w;
            cdf.push(acc);
        }
        let mut r = rng(seed, 0);
        (0..n)
            .map(|_| {
                let x: f64 = r.gen();
                let row = cdf.iter().position(|&c| x < c).unwrap_or(self.rows.len() - 1);
                self.row_assignment(row)
            })
            .collect()
    }

    /// Highest-weight row, declaration-order tie-break.
    pub fn argmax(&self) -> Assignment {
        let mut best = 0;
        for i in 1..self.rows.len() {
            if self.rows[i].1 > self.rows[best].1 + 0.0 {
                best = i;
            }
        }
        self.row_assignment(best)
    }

    /// Total-variation distance to another tabular over the same variables.
    pub fn tv_distance(&self, other: &Tabular) -> Result<f64> {
        let idx: Vec<usize> = self
            .vars
            .iter()
            .map(|v| other.index_of(v))
            .collect::<Result<_>>()?;
        let mut tv = 0.0;
        let mut matched = vec![false; other.rows.len()];
        for (vals, w) in &self.rows {
            let mut q = 0.0;
            for (j, (ovals, ow)) in other.rows.iter().enumerate() {
                let reordered: Vec<&Value> = idx.iter().map(|&i| &ovals[i]).collect();
                if reordered.iter().zip(vals.iter()).all(|(a, b)| *a == b) {
                    q += ow;
                    matched[j] = true;
                }
            }
            tv += (w - q).abs();
        }
        for (j, (_, ow)) in other.rows.iter().enumerate() {
            if !matched[j] {
                tv += ow;
            }
        }
        Ok(tv * 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bern(name: &str, p: f64) -> Tabular {
        Tabular::new(
            vec![name.to_string()],
            vec![
                (vec![Value::num(0.0)], 1.0 - p),
                (vec![Value::num(1.0)], p),
            ],
        )
        .unwrap()
    }

    #[test]
    fn product_of_bernoullis() {
        let t = bern("a", 0.3).product(&bern("b", 0.3)).unwrap();
        assert_eq!(t.rows.len(), 4);
        let w: Vec<f64> = t.rows.iter().map(|(_, w)| *w).collect();
        assert!((w[0] - 0.49).abs() < 1e-12);
        assert!((w[3] - 0.09).abs() < 1e-12);
    }

    #[test]
    fn marginal_recovers_factor() {
        let t = bern("a", 0.3).product(&bern("b", 0.7)).unwrap();
        let m = t.marginal(&["a".to_string()]).unwrap();
        assert!((m.mass_of(&[("a".to_string(), Value::num(1.0))].into_iter().collect())
            .unwrap()
            - 0.3)
            .abs()
            < 1e-12);
    }

    #[test]
    fn conditioning_zero_probability_errors() {
        let t = bern("a", 1.0);
        let err = t
            .condition_assignment(&[("a".to_string(), Value::num(0.0))].into_iter().collect())
            .unwrap_err();
        assert!(matches!(err, Error::ZeroProbabilityEvidence(_)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = bern("a", 0.5);
        assert_eq!(t.sample(20, 3), t.sample(20, 3));
    }
}
