//! Counterfactual explanation and root-cause attribution: MAP backtracking
//! explanations, sparse feature-subset explanations, the fixed-remainder
//! variant, and clamp-and-resample attribution scores with optional
//! Shapley symmetrization.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::backtracking::{
    cross_world_abduction, map_world, predict, Backend, CrossWorldPosterior, McOptions,
};
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::kernel::{unstar, Kernel};
use crate::rng::rng;
use crate::scm::{enumerate_assignments, Assignment, CausalModel, VarKind};
use crate::value::Value;

/// Largest feature count for exhaustive subset work.
pub const MAX_FEATURES: usize = 20;

/// Explaining a predictor's output: the model contains the deterministic
/// law `predictor := f(features)`; the task asks how the features would
/// most plausibly have looked had the output been `desired` instead.
#[derive(Debug, Clone)]
pub struct ExplanationTask<'a> {
    pub model: &'a CausalModel,
    pub prior: &'a Distribution,
    pub kernel: &'a Kernel,
    pub predictor: String,
    /// Factual endogenous observation, including the predictor's value.
    pub factual: Assignment,
    pub desired: Value,
}

impl<'a> ExplanationTask<'a> {
    pub fn features(&self) -> Vec<String> {
        self.model
            .endogenous()
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| *n != self.predictor)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.model.kind(&self.predictor) != Some(VarKind::Endogenous) {
            return Err(Error::UnknownVariable(self.predictor.clone()));
        }
        self.model
            .check_endogenous_value(&self.predictor, &self.desired)?;
        for (name, value) in &self.factual {
            self.model.check_endogenous_value(name, value)?;
        }
        Ok(())
    }

    fn abduce(&self, antecedent: &Assignment) -> Result<CrossWorldPosterior> {
        cross_world_abduction(
            self.model,
            self.prior,
            self.kernel,
            antecedent,
            &self.factual,
            Backend::Auto,
            McOptions::default(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseExplanation {
    /// Changed features, in declaration order.
    pub subset: Vec<String>,
    /// Their counterfactual values (every one differs from the factual).
    pub values: Assignment,
    /// Exact posterior mass of the full feature vector behind this entry.
    pub score: f64,
}

/// Most plausible counterfactual feature vector under the desired output:
/// the MAP world of the backtracking posterior, projected through the laws.
pub fn map_explanation(task: &ExplanationTask) -> Result<Assignment> {
    task.validate()?;
    let antecedent: Assignment =
        [(task.predictor.clone(), task.desired.clone())].into_iter().collect();
    let posterior = task.abduce(&antecedent)?;
    let u_map: Assignment = map_world(&posterior)
        .into_iter()
        .map(|(k, v)| (unstar(&k), v))
        .collect();
    let v = task.model.solve(&u_map)?;
    Ok(task
        .features()
        .into_iter()
        .map(|f| {
            let value = v[&f].clone();
            (f, value)
        })
        .collect())
}

/// All explanations changing at most `k` features whose exact posterior
/// mass exceeds `alpha`, best first (score desc, size asc, lexicographic).
pub fn sparse_explanations(
    task: &ExplanationTask,
    k: usize,
    alpha: f64,
) -> Result<Vec<SparseExplanation>> {
    task.validate()?;
    let features = task.features();
    if features.len() > MAX_FEATURES {
        return Err(Error::FeatureSpaceTooLarge(features.len()));
    }
    for f in &features {
        if !task.model.domain(f).map(|d| d.is_finite()).unwrap_or(false) {
            return Err(Error::UnsupportedBackend(format!(
                "sparse explanations require finite feature domains; `{f}` is continuous"
            )));
        }
    }
    if k == 0 || alpha >= 1.0 {
        return Ok(Vec::new());
    }
    let antecedent: Assignment =
        [(task.predictor.clone(), task.desired.clone())].into_iter().collect();
    let posterior = task.abduce(&antecedent)?;
    let dist = predict(task.model, &posterior, &features)?
        .rename(|v| unstar(v));
    let t = dist.as_tabular().ok_or_else(|| {
        Error::UnsupportedBackend("sparse explanations require an exact finite posterior".into())
    })?;
    let mut out = Vec::new();
    for i in 0..t.rows.len() {
        let row = t.row_assignment(i);
        let score = t.rows[i].1;
        let mut subset = Vec::new();
        let mut values = Assignment::new();
        for f in &features {
            if task.factual.get(f) != Some(&row[f]) {
                subset.push(f.clone());
                values.insert(f.clone(), row[f].clone());
            }
        }
        if subset.is_empty() || subset.len() > k || score <= alpha {
            continue;
        }
        out.push(SparseExplanation {
            subset,
            values,
            score,
        });
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.subset.len().cmp(&b.subset.len()))
            .then_with(|| a.subset.cmp(&b.subset))
            .then_with(|| {
                let av: Vec<&Value> = a.values.values().collect();
                let bv: Vec<&Value> = b.values.values().collect();
                av.cmp(&bv)
            })
    });
    Ok(out)
}

/// MAP values for the chosen features when every other feature is pinned
/// to its factual value in the counterfactual world too.
pub fn fixed_remainder_explanation(
    task: &ExplanationTask,
    subset: &[String],
) -> Result<Assignment> {
    task.validate()?;
    let features = task.features();
    for z in subset {
        if !features.contains(z) {
            return Err(Error::UnknownVariable(z.clone()));
        }
    }
    let mut antecedent: Assignment =
        [(task.predictor.clone(), task.desired.clone())].into_iter().collect();
    for f in &features {
        if !subset.contains(f) {
            let v = task
                .factual
                .get(f)
                .ok_or_else(|| Error::IncompleteAssignment(f.clone()))?;
            antecedent.insert(f.clone(), v.clone());
        }
    }
    if subset.is_empty() {
        // nothing may change, so the desired output must already hold
        if task.factual.get(&task.predictor) == Some(&task.desired) {
            return Ok(Assignment::new());
        }
        return Err(Error::CounterlegalAntecedent(
            "the desired output cannot be reached without changing any feature".into(),
        ));
    }
    let posterior = match task.abduce(&antecedent) {
        Ok(p) => p,
        Err(Error::ZeroProbabilityEvidence(m)) => {
            return Err(Error::ZeroProbabilityEvidence(m))
        }
        Err(e) => return Err(e),
    };
    let dist = predict(task.model, &posterior, &subset.to_vec())?
        .rename(|v| unstar(v));
    match dist {
        Distribution::Tabular(t) => {
            let strict = t.condition_where(|row| {
                subset
                    .iter()
                    .all(|f| task.factual.get(f) != Some(&row[f]))
            });
            match strict {
                Ok(t) => Ok(t.argmax()),
                Err(Error::ZeroProbabilityEvidence(_)) => Err(Error::CounterlegalAntecedent(
                    format!(
                        "the desired output cannot be reached by strictly changing {}",
                        subset.join(", ")
                    ),
                )),
                Err(e) => Err(e),
            }
        }
        Distribution::Gaussian(g) => Ok(g.to_assignment(&g.mean)),
        Distribution::Particles(p) => Ok(p.argmax()),
    }
}

/// Monotone calibration for comparing outlier severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    /// τ(y) = y (monotone increasing).
    Identity,
    /// τ(y) = −y (monotone decreasing in the raw value).
    Negated,
}

impl Calibration {
    pub fn eval(&self, v: &Value) -> Result<f64> {
        let x = v
            .as_num()
            .ok_or_else(|| Error::TypeMismatch("calibration of a non-numeric value".into()))?;
        Ok(match self {
            Calibration::Identity => x,
            Calibration::Negated => -x,
        })
    }
}

/// Root-cause attribution of an outlier observation. The backtracking
/// conditional is fixed to the prior-independent kernel: the counterfactual
/// world resamples the non-blamed exogenous variables from the prior.
#[derive(Debug, Clone)]
pub struct AttributionTask<'a> {
    pub model: &'a CausalModel,
    pub prior: &'a Distribution,
    /// Complete factual endogenous observation (x, y).
    pub observation: Assignment,
    pub target: String,
    pub tau: Calibration,
}

impl<'a> AttributionTask<'a> {
    /// The unique exogenous world behind the observation.
    pub fn invert(&self) -> Result<Assignment> {
        for (name, value) in &self.observation {
            self.model.check_endogenous_value(name, value)?;
        }
        match self.prior {
            Distribution::Tabular(_) | Distribution::Particles(_) => {
                let mut hits = Vec::new();
                for u in enumerate_assignments(self.model.exogenous()) {
                    let v = self.model.solve(&u)?;
                    if self.observation.iter().all(|(k, val)| v.get(k) == Some(val)) {
                        hits.push(u);
                    }
                }
                match hits.len() {
                    1 => Ok(hits.pop().unwrap()),
                    n => Err(Error::NonInvertibleAtObservation(format!(
                        "{n} exogenous worlds produce the observation"
                    ))),
                }
            }
            Distribution::Gaussian(_) => {
                let rf = self.model.affine_reduced_form().ok_or_else(|| {
                    Error::UnsupportedBackend(
                        "attribution on a nonlinear continuous model".into(),
                    )
                })?;
                let names: Vec<String> = self.observation.keys().cloned().collect();
                let (a, b) = rf
                    .rows_for(&names)
                    .ok_or_else(|| Error::UnknownVariable(names.join(",")))?;
                let rhs = nalgebra::DVector::from_iterator(
                    names.len(),
                    names.iter().map(|n| {
                        self.observation[n].as_num().unwrap_or(f64::NAN)
                    }),
                ) - b;
                let svd = a.clone().svd(true, true);
                let rank = svd.rank(crate::gaussian::RANK_TOL);
                if rank < rf.exo_order.len() {
                    return Err(Error::NonInvertibleAtObservation(
                        "the reduced form is rank-deficient at the observation".into(),
                    ));
                }
                let u = svd.solve(&rhs, crate::gaussian::RANK_TOL).map_err(|_| {
                    Error::NonInvertibleAtObservation("least-squares solve failed".into())
                })?;
                if (a * &u - &rhs).amax() > crate::gaussian::CONSISTENCY_TOL * (1.0 + rhs.amax()) {
                    return Err(Error::NonInvertibleAtObservation(
                        "no exogenous world reproduces the observation".into(),
                    ));
                }
                Ok(rf
                    .exo_order
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (n.clone(), Value::num(u[i])))
                    .collect())
            }
        }
    }
}

/// P(τ(y*) ≥ τ(y)) when the exogenous variables in `clamp` keep their
/// factual values and the rest are redrawn from the prior.
pub fn attribution_score(task: &AttributionTask, clamp: &BTreeSet<String>) -> Result<f64> {
    for s in clamp {
        if task.model.kind(s) != Some(VarKind::Exogenous) {
            return Err(Error::UnknownVariable(s.clone()));
        }
    }
    let u = task.invert()?;
    let y = task
        .observation
        .get(&task.target)
        .ok_or_else(|| Error::IncompleteAssignment(task.target.clone()))?;
    let threshold = task.tau.eval(y)?;
    let clamped: Assignment = clamp
        .iter()
        .map(|s| (s.clone(), u[s].clone()))
        .collect();
    let u_star = task.prior.condition_on(&clamped)?;
    match &u_star {
        Distribution::Tabular(t) => {
            let mut p = 0.0;
            for i in 0..t.rows.len() {
                let v = task.model.solve(&t.row_assignment(i))?;
                if task.tau.eval(&v[&task.target])? >= threshold - 1e-12 {
                    p += t.rows[i].1;
                }
            }
            Ok(p)
        }
        Distribution::Gaussian(_) => {
            let pushed = crate::dist::endogenous_distribution(
                task.model,
                &u_star,
                &[task.target.clone()],
            )?;
            let g = pushed.as_gaussian().unwrap();
            let (mean, var) = (g.mean[0], g.cov[(0, 0)]);
            // orient so the event is always an upper tail
            let (mean, threshold) = match task.tau {
                Calibration::Identity => (mean, threshold),
                Calibration::Negated => (-mean, threshold),
            };
            if var <= crate::gaussian::RANK_TOL {
                return Ok(if mean >= threshold - 1e-12 { 1.0 } else { 0.0 });
            }
            let n = Normal::new(mean, var.sqrt())
                .map_err(|e| Error::Eval(format!("normal tail evaluation: {e}")))?;
            Ok(1.0 - n.cdf(threshold))
        }
        Distribution::Particles(p) => {
            let mut acc = 0.0;
            for i in 0..p.particles.len() {
                let v = task.model.solve(&p.assignment(i))?;
                if task.tau.eval(&v[&task.target])? >= threshold - 1e-12 {
                    acc += p.particles[i].1;
                }
            }
            Ok(acc)
        }
    }
}

/// Shapley symmetrization of the attribution scores: the average marginal
/// contribution of each exogenous variable over `m` sampled orderings.
pub fn shapley_attribution(
    task: &AttributionTask,
    m: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let names: Vec<String> = task.model.exogenous().iter().map(|(n, _)| n.clone()).collect();
    let mut phi: BTreeMap<String, f64> = names.iter().map(|n| (n.clone(), 0.0)).collect();
    let mut cache: BTreeMap<BTreeSet<String>, f64> = BTreeMap::new();
    let score = |s: &BTreeSet<String>, cache: &mut BTreeMap<BTreeSet<String>, f64>| -> Result<f64> {
        if let Some(&v) = cache.get(s) {
            return Ok(v);
        }
        let v = attribution_score(task, s)?;
        cache.insert(s.clone(), v);
        Ok(v)
    };
    let mut r = rng(seed, 2);
    let mut order = names.clone();
    for _ in 0..m {
        order.shuffle(&mut r);
        let mut coalition = BTreeSet::new();
        let mut prev = score(&coalition, &mut cache)?;
        for name in &order {
            coalition.insert(name.clone());
            let next = score(&coalition, &mut cache)?;
            *phi.get_mut(name).unwrap() += next - prev;
            prev = next;
        }
    }
    for v in phi.values_mut() {
        *v /= m as f64;
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::gaussian::Gaussian;
    use crate::kernel::{DistanceSpec, DistanceTerm, KernelKind};
    use crate::scm::{CausalModel, Domain, StructuralLaw};
    use crate::tabular::Tabular;
    use crate::testutil::{assignment, firing_squad};

    fn bool_dom() -> Domain {
        Domain::Finite(vec![Value::num(0.0), Value::num(1.0)])
    }

    /// X1 := U1, X2 := U2, Y := X1 | X2 with independent Bernoulli noises.
    fn or_model(p1: f64, p2: f64) -> (CausalModel, Distribution) {
        let model = CausalModel::new(
            vec![("U1".to_string(), bool_dom()), ("U2".to_string(), bool_dom())],
            vec![
                ("X1".to_string(), bool_dom()),
                ("X2".to_string(), bool_dom()),
                ("Y".to_string(), bool_dom()),
            ],
            vec![
                StructuralLaw {
                    target: "X1".to_string(),
                    expr: Expr::var("U1"),
                },
                StructuralLaw {
                    target: "X2".to_string(),
                    expr: Expr::var("U2"),
                },
                StructuralLaw {
                    target: "Y".to_string(),
                    expr: Expr::or(Expr::var("X1"), Expr::var("X2")),
                },
            ],
        )
        .unwrap();
        let b = |name: &str, p: f64| {
            Tabular::new(
                vec![name.to_string()],
                vec![(vec![Value::num(0.0)], 1.0 - p), (vec![Value::num(1.0)], p)],
            )
            .unwrap()
        };
        let prior = Distribution::Tabular(b("U1", p1).product(&b("U2", p2)).unwrap());
        (model, prior)
    }

    /// Decomposable mismatch kernel with per-variable flip weights.
    fn mismatch_kernel(w1: f64, w2: f64) -> Kernel {
        Kernel::unchecked(
            KernelKind::DistanceBased(DistanceSpec::PerVariable(vec![
                ("U1".to_string(), DistanceTerm::Mismatch { weight: w1 }),
                ("U2".to_string(), DistanceTerm::Mismatch { weight: w2 }),
            ])),
            vec![("U1".to_string(), bool_dom()), ("U2".to_string(), bool_dom())],
        )
    }

    #[test]
    fn map_explanation_flips_the_cheaper_feature() {
        let (model, prior) = or_model(0.5, 0.5);
        // flipping U2 costs more, so the MAP flips U1 only
        let kernel = mismatch_kernel(1.0, 3.0);
        let task = ExplanationTask {
            model: &model,
            prior: &prior,
            kernel: &kernel,
            predictor: "Y".to_string(),
            factual: assignment(&[("X1", 0.0), ("X2", 0.0), ("Y", 0.0)]),
            desired: Value::num(1.0),
        };
        let x = map_explanation(&task).unwrap();
        assert_eq!(x["X1"], Value::num(1.0));
        assert_eq!(x["X2"], Value::num(0.0));
    }

    #[test]
    fn map_explanation_is_factual_when_nothing_needs_explaining() {
        let (model, prior) = or_model(0.5, 0.5);
        let kernel = mismatch_kernel(1.0, 1.0);
        let task = ExplanationTask {
            model: &model,
            prior: &prior,
            kernel: &kernel,
            predictor: "Y".to_string(),
            factual: assignment(&[("X1", 0.0), ("X2", 0.0), ("Y", 0.0)]),
            desired: Value::num(0.0),
        };
        let x = map_explanation(&task).unwrap();
        assert_eq!(x["X1"], Value::num(0.0));
        assert_eq!(x["X2"], Value::num(0.0));
    }

    #[test]
    fn sparse_scores_partition_the_posterior() {
        let (model, prior) = or_model(0.5, 0.5);
        let kernel = mismatch_kernel(1.0, 1.0);
        let task = ExplanationTask {
            model: &model,
            prior: &prior,
            kernel: &kernel,
            predictor: "Y".to_string(),
            factual: assignment(&[("X1", 0.0), ("X2", 0.0), ("Y", 0.0)]),
            desired: Value::num(1.0),
        };
        // with the full size budget and no threshold, scores must sum to 1:
        // every posterior row changes at least one feature (Y flips 0 → 1)
        let all = sparse_explanations(&task, 2, 0.0).unwrap();
        let total: f64 = all.iter().map(|e| e.score).sum();
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
        // k = 1 keeps exactly the two single flips
        let singles = sparse_explanations(&task, 1, 0.1).unwrap();
        assert_eq!(singles.len(), 2);
        assert!(singles.iter().all(|e| e.subset.len() == 1));
        // sorted by score descending
        assert!(singles[0].score >= singles[1].score);
        // impossible threshold
        assert!(sparse_explanations(&task, 2, 1.0).unwrap().is_empty());
        assert!(sparse_explanations(&task, 0, 0.0).unwrap().is_empty());
    }

    #[test]
    fn fixed_remainder_on_the_or_model() {
        let (model, prior) = or_model(0.5, 0.5);
        let kernel = mismatch_kernel(1.0, 1.0);
        let task = ExplanationTask {
            model: &model,
            prior: &prior,
            kernel: &kernel,
            predictor: "Y".to_string(),
            factual: assignment(&[("X1", 0.0), ("X2", 0.0), ("Y", 0.0)]),
            desired: Value::num(1.0),
        };
        let z = fixed_remainder_explanation(&task, &["X1".to_string()]).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z["X1"], Value::num(1.0));
        // empty subset cannot reach the desired output
        assert!(matches!(
            fixed_remainder_explanation(&task, &[]),
            Err(Error::CounterlegalAntecedent(_))
        ));
        // full subset coincides with the MAP explanation
        let full = fixed_remainder_explanation(
            &task,
            &["X1".to_string(), "X2".to_string()],
        );
        // strict change on both features forces the double flip
        let full = full.unwrap();
        assert_eq!(full["X1"], Value::num(1.0));
        assert_eq!(full["X2"], Value::num(1.0));
    }

    #[test]
    fn attribution_endpoints() {
        let (model, prior) = firing_squad(0.5);
        let task = AttributionTask {
            model: &model,
            prior: &prior,
            observation: assignment(&[("C", 1.0), ("A", 1.0), ("B", 1.0), ("P", 1.0)]),
            target: "P".to_string(),
            tau: Calibration::Identity,
        };
        // clamping everything reproduces the factual outcome
        let all: BTreeSet<String> = ["U".to_string()].into_iter().collect();
        assert_eq!(attribution_score(&task, &all).unwrap(), 1.0);
        // clamping nothing resamples the court order: P(P*=1) = θ
        let none = BTreeSet::new();
        assert!((attribution_score(&task, &none).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attribution_gaussian_half() {
        // Y := U with a standard normal prior, observed y = 0
        let model = CausalModel::new(
            vec![("U".to_string(), Domain::RealLine)],
            vec![("Y".to_string(), Domain::RealLine)],
            vec![StructuralLaw {
                target: "Y".to_string(),
                expr: Expr::var("U"),
            }],
        )
        .unwrap();
        let prior = Distribution::Gaussian(Gaussian::standard(vec!["U".to_string()]));
        let task = AttributionTask {
            model: &model,
            prior: &prior,
            observation: assignment(&[("Y", 0.0)]),
            target: "Y".to_string(),
            tau: Calibration::Identity,
        };
        let p = attribution_score(&task, &BTreeSet::new()).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "got {p}");
        let all: BTreeSet<String> = ["U".to_string()].into_iter().collect();
        assert_eq!(attribution_score(&task, &all).unwrap(), 1.0);
    }

    #[test]
    fn non_invertible_observation_detected() {
        // Y := U1 | U2 is not invertible at Y=1
        let model = CausalModel::new(
            vec![("U1".to_string(), bool_dom()), ("U2".to_string(), bool_dom())],
            vec![("Y".to_string(), bool_dom())],
            vec![StructuralLaw {
                target: "Y".to_string(),
                expr: Expr::or(Expr::var("U1"), Expr::var("U2")),
            }],
        )
        .unwrap();
        let prior = Distribution::Tabular(
            Tabular::new(
                vec!["U1".to_string(), "U2".to_string()],
                vec![
                    (vec![Value::num(0.0), Value::num(0.0)], 0.25),
                    (vec![Value::num(0.0), Value::num(1.0)], 0.25),
                    (vec![Value::num(1.0), Value::num(0.0)], 0.25),
                    (vec![Value::num(1.0), Value::num(1.0)], 0.25),
                ],
            )
            .unwrap(),
        );
        let task = AttributionTask {
            model: &model,
            prior: &prior,
            observation: assignment(&[("Y", 1.0)]),
            target: "Y".to_string(),
            tau: Calibration::Identity,
        };
        assert!(matches!(
            attribution_score(&task, &BTreeSet::new()),
            Err(Error::NonInvertibleAtObservation(_))
        ));
    }

    #[test]
    fn shapley_scores_sum_to_the_span() {
        let (model, prior) = firing_squad(0.5);
        let task = AttributionTask {
            model: &model,
            prior: &prior,
            observation: assignment(&[("C", 1.0), ("A", 1.0), ("B", 1.0), ("P", 1.0)]),
            target: "P".to_string(),
            tau: Calibration::Identity,
        };
        let phi = shapley_attribution(&task, 50, 0).unwrap();
        // single exogenous variable: its share is the whole span 1 − θ
        assert!((phi["U"] - 0.5).abs() < 1e-12);
    }
}
