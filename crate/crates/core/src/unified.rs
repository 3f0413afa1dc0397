//! Unified counterfactual semantics via regime variables: each endogenous
//! variable gains an exogenous switch selecting its observational law or a
//! clamped value, so interventional and backtracking counterfactuals become
//! special cases of one cross-world query.

use std::collections::BTreeMap;

use crate::backtracking::{
    backtracking_counterfactual, Backend, BacktrackingQuery, CrossWorldPosterior, McOptions,
};
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::kernel::{Kernel, KernelKind};
use crate::scm::{Assignment, CausalModel, Domain, StructuralLaw};
use crate::tabular::Tabular;
use crate::value::Value;

/// Reserved sentinel meaning "follow the observational law".
pub const OBS_LABEL: &str = "obs";

pub fn obs() -> Value {
    Value::label(OBS_LABEL)
}

pub fn regime_name(var: &str) -> String {
    format!("R_{var}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub base: CausalModel,
    /// Base model with every law wrapped in its regime switch and the
    /// regime variables appended to the exogenous set.
    pub model: CausalModel,
    /// Regime variable names, one per endogenous variable, in order.
    pub regimes: Vec<String>,
}

/// Mixed factual/counterfactual query over endogenous and regime variables.
/// Regime evidence uses the `R_<name>` variables directly.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedQuery {
    pub factual_evidence: Assignment,
    pub counterfactual_evidence: Assignment,
    pub targets: Vec<String>,
}

/// Wraps every law `V := f(...)` as `V := ite(R_V = obs, f(...), R_V)`.
///
/// Regime domains are `{obs} ∪ Domain(V)` for finite variables; continuous
/// variables use `{obs} ∪ levels[V]`, the finitely many declared
/// intervention levels.
pub fn augment(
    model: &CausalModel,
    levels: &BTreeMap<String, Vec<Value>>,
) -> Result<AugmentedModel> {
    let mut exogenous = model.exogenous().to_vec();
    let mut regimes = Vec::new();
    for (name, dom) in model.endogenous() {
        if let Domain::Finite(values) = dom {
            if values.iter().any(|v| v.is_label(OBS_LABEL)) {
                return Err(Error::ReservedSymbolCollision(format!(
                    "domain of `{name}` already contains the sentinel `{OBS_LABEL}`"
                )));
            }
        }
        let r = regime_name(name);
        if model.domain(&r).is_some() {
            return Err(Error::ReservedSymbolCollision(format!(
                "variable `{r}` clashes with the regime variable for `{name}`"
            )));
        }
        let mut values = vec![obs()];
        match dom {
            Domain::Finite(vs) => values.extend(vs.iter().cloned()),
            _ => {
                for level in levels.get(name).into_iter().flatten() {
                    if !dom.contains(level) {
                        return Err(Error::DomainMismatch(format!(
                            "intervention level {level} outside the domain of `{name}`"
                        )));
                    }
                    values.push(level.clone());
                }
            }
        }
        exogenous.push((r.clone(), Domain::Finite(values)));
        regimes.push(r);
    }
    let laws = model
        .laws()
        .iter()
        .map(|law| StructuralLaw {
            target: law.target.clone(),
            expr: Expr::ite(
                Expr::eq(
                    Expr::var(regime_name(&law.target)),
                    Expr::Const(obs()),
                ),
                law.expr.clone(),
                Expr::var(regime_name(&law.target)),
            ),
        })
        .collect();
    let augmented = CausalModel::new(exogenous, model.endogenous().to_vec(), laws)?;
    Ok(AugmentedModel {
        base: model.clone(),
        model: augmented,
        regimes,
    })
}

impl AugmentedModel {
    /// All regime variables set to the observational sentinel.
    pub fn all_obs(&self) -> Assignment {
        self.regimes.iter().map(|r| (r.clone(), obs())).collect()
    }

    /// Regime encoding of a hard intervention: intervened variables carry
    /// their clamped values, all others stay observational.
    pub fn intervention_regimes(&self, intervention: &Assignment) -> Result<Assignment> {
        let mut out = self.all_obs();
        for (name, value) in intervention {
            let r = regime_name(name);
            if !self.regimes.contains(&r) {
                return Err(Error::UnknownVariable(name.clone()));
            }
            match self.model.domain(&r) {
                Some(dom) if dom.contains(value) => {
                    out.insert(r, value.clone());
                }
                _ => {
                    return Err(Error::DomainMismatch(format!(
                        "no declared regime level {value} for `{name}`"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// P(R): point mass on the all-observational configuration.
pub fn default_observational_regime_prior(aug: &AugmentedModel) -> Distribution {
    let vals: Vec<Value> = aug.regimes.iter().map(|_| obs()).collect();
    Distribution::Tabular(
        Tabular::new(aug.regimes.clone(), vec![(vals, 1.0)])
            .expect("a single unit-mass row is always valid"),
    )
}

/// Default regime kernel: per variable, keep the factual regime with
/// probability 1 − rho, otherwise resample uniformly over the regime domain.
pub fn regime_flip_kernel(aug: &AugmentedModel, rho: f64) -> Result<Kernel> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::DomainMismatch(format!(
            "flip probability {rho} outside [0,1]"
        )));
    }
    let mut per_var_prior = Vec::new();
    let mut domains = Vec::new();
    for r in &aug.regimes {
        let dom = aug.model.domain(r).unwrap().clone();
        let values = match &dom {
            Domain::Finite(v) => v.clone(),
            _ => unreachable!("regime domains are finite by construction"),
        };
        let w = 1.0 / values.len() as f64;
        per_var_prior.push((r.clone(), values.iter().map(|v| (v.clone(), w)).collect()));
        domains.push((r.clone(), dom));
    }
    Ok(Kernel::unchecked(
        KernelKind::StabilityMixture {
            s: 1.0 - rho,
            per_var_prior,
        },
        domains,
    ))
}

/// δ-kernel over the base model's exogenous variables (worlds share U).
pub fn shared_u_kernel(model: &CausalModel) -> Kernel {
    Kernel::unchecked(KernelKind::SharedWorlds, model.exogenous().to_vec())
}

/// Independent composition of a U-kernel and an R-kernel into a kernel
/// over the augmented exogenous set.
pub fn compose_kernel(u_kernel: &Kernel, regime_kernel: &Kernel) -> Kernel {
    let mut domains = u_kernel.domains.clone();
    domains.extend(regime_kernel.domains.iter().cloned());
    Kernel::unchecked(
        KernelKind::Product(vec![u_kernel.clone(), regime_kernel.clone()]),
        domains,
    )
}

/// Runs the cross-world pipeline on the augmented exogenous set (U, R).
/// Regime evidence enters as exogenous conditioning on either world.
pub fn unified_counterfactual(
    aug: &AugmentedModel,
    prior: &Distribution,
    regime_prior: &Distribution,
    kernel: &Kernel,
    query: &UnifiedQuery,
    backend: Backend,
    mc: McOptions,
) -> Result<(Distribution, CrossWorldPosterior)> {
    let full_prior = prior.product(regime_prior)?;
    let q = BacktrackingQuery {
        factual_evidence: query.factual_evidence.clone(),
        counterfactual_evidence: query.counterfactual_evidence.clone(),
        targets: query.targets.clone(),
    };
    backtracking_counterfactual(&aug.model, &full_prior, kernel, &q, backend, mc)
}
