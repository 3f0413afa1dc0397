//! Interventional counterfactuals: potential responses, twin-world joint
//! probabilities, and the abduction/action/prediction pipeline.

use nalgebra::{DMatrix, DVector};

use crate::dist::{endogenous_distribution, Distribution};
use crate::error::{Error, Result};
use crate::scm::{Assignment, CausalModel};

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionalQuery {
    pub factual_evidence: Assignment,
    pub intervention: Assignment,
    pub targets: Vec<String>,
}

/// Conjunction of clauses, each "under do(intervention), the event holds".
/// Clauses may conflict in values across different submodels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwinQuery {
    pub clauses: Vec<(Assignment, Assignment)>,
}

impl InterventionalQuery {
    pub fn validate(&self, model: &CausalModel) -> Result<()> {
        for (name, value) in self.factual_evidence.iter().chain(&self.intervention) {
            model.check_endogenous_value(name, value)?;
        }
        for t in &self.targets {
            if !model.endogenous().iter().any(|(n, _)| n == t) {
                return Err(Error::UnknownVariable(t.clone()));
            }
        }
        Ok(())
    }
}

/// Y_x(u): the solution of the surgered equation system at a fixed u.
pub fn potential_response(
    model: &CausalModel,
    u: &Assignment,
    intervention: &Assignment,
) -> Result<Assignment> {
    if intervention.is_empty() {
        return model.solve(u);
    }
    model.submodel(intervention)?.solve(u)
}

/// Probability that every (do(x), event) clause holds jointly at a shared u.
pub fn counterfactual_joint_probability(
    model: &CausalModel,
    prior: &Distribution,
    query: &TwinQuery,
) -> Result<f64> {
    if query.clauses.is_empty() {
        return Ok(1.0);
    }
    for (intervention, event) in &query.clauses {
        for (name, value) in intervention.iter().chain(event) {
            model.check_endogenous_value(name, value)?;
        }
    }
    match prior {
        Distribution::Tabular(t) => {
            let mut p = 0.0;
            for i in 0..t.rows.len() {
                let u = t.row_assignment(i);
                if clauses_hold(model, &u, query)? {
                    p += t.rows[i].1;
                }
            }
            Ok(p)
        }
        Distribution::Particles(parts) => {
            let mut p = 0.0;
            for i in 0..parts.particles.len() {
                let u = parts.assignment(i);
                if clauses_hold(model, &u, query)? {
                    p += parts.particles[i].1;
                }
            }
            Ok(p)
        }
        Distribution::Gaussian(_) => {
            // each clause's event is an affine constraint on u; a proper
            // affine subspace has gaussian measure zero, so the answer is
            // 1 when every constraint is vacuous, else 0 — unless some
            // constraint row is genuinely nonzero, in which case 0.
            let mut vacuous = true;
            for (intervention, event) in &query.clauses {
                let sub = if intervention.is_empty() {
                    model.clone()
                } else {
                    model.submodel(intervention)?
                };
                let rf = sub.affine_reduced_form().ok_or_else(|| {
                    Error::UnsupportedBackend(
                        "gaussian prior with a nonlinear model; use the particle backend".into(),
                    )
                })?;
                let names: Vec<String> = event.keys().cloned().collect();
                let (a, b) = rf
                    .rows_for(&names)
                    .ok_or_else(|| Error::UnknownVariable(names.join(",")))?;
                for (row, name) in names.iter().enumerate() {
                    let y = event[name]
                        .as_num()
                        .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))?;
                    let coeff_norm = a.row(row).amax();
                    if coeff_norm > 1e-12 {
                        vacuous = false; // measure-zero hyperplane
                    } else if (b[row] - y).abs() > 1e-9 {
                        return Ok(0.0); // constant law contradicting the event
                    }
                }
            }
            Ok(if vacuous { 1.0 } else { 0.0 })
        }
    }
}

fn clauses_hold(model: &CausalModel, u: &Assignment, query: &TwinQuery) -> Result<bool> {
    for (intervention, event) in &query.clauses {
        let v = potential_response(model, u, intervention)?;
        if event.iter().any(|(name, value)| v.get(name) != Some(value)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Abduction / action / prediction: P(U|z) pushed through the surgered model.
pub fn interventional_counterfactual(
    model: &CausalModel,
    prior: &Distribution,
    query: &InterventionalQuery,
) -> Result<Distribution> {
    query.validate(model)?;
    let posterior = abduct(model, prior, &query.factual_evidence)?;
    let acted = if query.intervention.is_empty() {
        model.clone()
    } else {
        model.submodel(&query.intervention)?
    };
    endogenous_distribution(&acted, &posterior, &query.targets)
}

/// P(U | endogenous evidence z) under the unmodified laws.
pub fn abduct(model: &CausalModel, prior: &Distribution, z: &Assignment) -> Result<Distribution> {
    if z.is_empty() {
        return Ok(prior.clone());
    }
    match prior {
        Distribution::Tabular(t) => Ok(Distribution::Tabular(t.condition_where(|u| {
            match model.solve(u) {
                Ok(v) => z.iter().all(|(name, value)| v.get(name) == Some(value)),
                Err(_) => false,
            }
        })?)),
        Distribution::Particles(p) => {
            Ok(Distribution::Particles(p.condition_where(|u| {
                match model.solve(u) {
                    Ok(v) => z.iter().all(|(name, value)| v.get(name) == Some(value)),
                    Err(_) => false,
                }
            })?))
        }
        Distribution::Gaussian(g) => {
            let rf = model.affine_reduced_form().ok_or_else(|| {
                Error::UnsupportedBackend(
                    "gaussian prior with a nonlinear model; use the particle backend".into(),
                )
            })?;
            let g = g.marginal(&rf.exo_order)?;
            let names: Vec<String> = z.keys().cloned().collect();
            let (a, b) = rf
                .rows_for(&names)
                .ok_or_else(|| Error::UnknownVariable(names.join(",")))?;
            let mut rhs = DVector::zeros(names.len());
            for (i, name) in names.iter().enumerate() {
                let y = z[name]
                    .as_num()
                    .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))?;
                rhs[i] = y - b[i];
            }
            Ok(Distribution::Gaussian(g.condition_linear(&a, &rhs)?))
        }
    }
}

/// Evidence rows of the reduced form as a (matrix, shifted-rhs) pair,
/// for callers that need the raw constraint A·u = z − b.
pub fn evidence_constraint(
    model: &CausalModel,
    exo_order: &[String],
    z: &Assignment,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let rf = model.affine_reduced_form().ok_or_else(|| {
        Error::UnsupportedBackend("model is not affine in its exogenous variables".into())
    })?;
    let names: Vec<String> = z.keys().cloned().collect();
    let (a, b) = rf
        .rows_for(&names)
        .ok_or_else(|| Error::UnknownVariable(names.join(",")))?;
    // reorder columns from the model's exogenous order to `exo_order`
    let idx: Vec<usize> = exo_order
        .iter()
        .map(|n| {
            rf.exo_order
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::UnknownVariable(n.clone()))
        })
        .collect::<Result<_>>()?;
    let mut a_re = DMatrix::zeros(a.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        a_re.set_column(c, &a.column(i));
    }
    let mut rhs = DVector::zeros(names.len());
    for (i, name) in names.iter().enumerate() {
        let y = z[name]
            .as_num()
            .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))?;
        rhs[i] = y - b[i];
    }
    Ok((a_re, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{
        assignment, chain_model, firing_squad, standard_chain_prior as standard_prior,
    };
    use crate::value::Value;

    #[test]
    fn potential_response_on_chain() {
        let m = chain_model();
        let u = assignment(&[("U_X", 1.0), ("U_Y", 1.0), ("U_Z", -1.0)]);
        let v = potential_response(&m, &u, &assignment(&[("Y", 3.0)])).unwrap();
        assert_eq!(v["X"], Value::num(1.0));
        assert_eq!(v["Y"], Value::num(3.0));
        assert_eq!(v["Z"], Value::num(3.0));
        // empty intervention reduces to plain solve
        let v0 = potential_response(&m, &u, &Assignment::new()).unwrap();
        assert_eq!(v0, m.solve(&u).unwrap());
    }

    #[test]
    fn firing_squad_potential_response() {
        let (m, _) = firing_squad(0.5);
        let u = assignment(&[("U", 1.0)]);
        let v = potential_response(&m, &u, &assignment(&[("A", 0.0)])).unwrap();
        assert_eq!(v["C"], Value::num(1.0));
        assert_eq!(v["A"], Value::num(0.0));
        assert_eq!(v["B"], Value::num(1.0));
        assert_eq!(v["P"], Value::num(1.0));
    }

    #[test]
    fn twin_probability_firing_squad() {
        let (m, prior) = firing_squad(0.5);
        let q = TwinQuery {
            clauses: vec![
                (Assignment::new(), assignment(&[("P", 1.0)])),
                (assignment(&[("A", 0.0)]), assignment(&[("P", 1.0)])),
            ],
        };
        let p = counterfactual_joint_probability(&m, &prior, &q).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn contradictory_twin_clauses_have_probability_zero() {
        let (m, prior) = firing_squad(0.5);
        let q = TwinQuery {
            clauses: vec![
                (assignment(&[("A", 0.0)]), assignment(&[("P", 1.0)])),
                (assignment(&[("A", 0.0)]), assignment(&[("P", 0.0)])),
            ],
        };
        assert_eq!(
            counterfactual_joint_probability(&m, &prior, &q).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_twin_query_is_certain() {
        let (m, prior) = firing_squad(0.5);
        assert_eq!(
            counterfactual_joint_probability(&m, &prior, &TwinQuery::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn chain_counterfactual_is_a_point_mass() {
        let m = chain_model();
        let q = InterventionalQuery {
            factual_evidence: assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
            intervention: assignment(&[("Y", 3.0)]),
            targets: vec!["X".to_string(), "Z".to_string()],
        };
        let d = interventional_counterfactual(&m, &standard_prior(), &q).unwrap();
        let g = d.as_gaussian().unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-9);
        assert!((g.mean[1] - 3.0).abs() < 1e-9);
        assert!(g.cov.amax() < 1e-9, "expected a degenerate point mass");
    }

    #[test]
    fn firing_squad_interventional_keeps_prisoner_dead() {
        let (m, prior) = firing_squad(0.5);
        let q = InterventionalQuery {
            factual_evidence: assignment(&[("C", 1.0), ("A", 1.0), ("B", 1.0), ("P", 1.0)]),
            intervention: assignment(&[("A", 0.0)]),
            targets: vec!["P".to_string()],
        };
        let d = interventional_counterfactual(&m, &prior, &q).unwrap();
        let t = d.as_tabular().unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].0[0], Value::num(1.0));
    }

    #[test]
    fn no_evidence_intervention_gives_interventional_distribution() {
        let m = chain_model();
        let q = InterventionalQuery {
            factual_evidence: Assignment::new(),
            intervention: assignment(&[("Y", 3.0)]),
            targets: vec!["X".to_string(), "Z".to_string()],
        };
        let d = interventional_counterfactual(&m, &standard_prior(), &q).unwrap();
        let g = d.as_gaussian().unwrap();
        assert!((g.mean[0] - 0.0).abs() < 1e-12);
        assert!((g.mean[1] - 3.0).abs() < 1e-12);
        assert!((g.cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((g.cov[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((g.cov[(1, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_intervention_matches_conditioned_observational() {
        let (m, prior) = firing_squad(0.7);
        let q = InterventionalQuery {
            factual_evidence: assignment(&[("P", 1.0)]),
            intervention: Assignment::new(),
            targets: vec!["A".to_string()],
        };
        let d = interventional_counterfactual(&m, &prior, &q).unwrap();
        let t = d.as_tabular().unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].0[0], Value::num(1.0));
    }

    #[test]
    fn zero_probability_evidence_is_an_error() {
        let (m, prior) = firing_squad(0.5);
        let q = InterventionalQuery {
            // captain fired but rifleman A did not: impossible under the laws
            factual_evidence: assignment(&[("C", 1.0), ("A", 0.0)]),
            intervention: Assignment::new(),
            targets: vec!["P".to_string()],
        };
        assert!(matches!(
            interventional_counterfactual(&m, &prior, &q),
            Err(Error::ZeroProbabilityEvidence(_))
        ));
    }

    #[test]
    fn consistency_when_intervention_matches_the_factual_value() {
        let (m, _) = firing_squad(0.5);
        let u = assignment(&[("U", 1.0)]);
        let factual = m.solve(&u).unwrap();
        let v = potential_response(&m, &u, &assignment(&[("A", 1.0)])).unwrap();
        assert_eq!(v, factual);
    }
}
