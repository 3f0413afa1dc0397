//! The backtracking conditional P_B(U*|U): a pluggable kernel family with
//! verifiable structural properties (closeness, symmetry, decomposability).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, Gaussian};
use crate::scm::{all_finite, enumerate_assignments, Assignment, Domain};
use crate::tabular::Tabular;
use crate::value::Value;

pub const PROPERTY_TOL: f64 = 1e-10;
const QUAD_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Closeness,
    Symmetry,
    Decomposability,
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Property::Closeness => write!(f, "closeness"),
            Property::Symmetry => write!(f, "symmetry"),
            Property::Decomposability => write!(f, "decomposability"),
        }
    }
}

/// Per-variable distance contributions, combined by summation.
#[derive(Debug, Clone, PartialEq)]
pub enum DistanceTerm {
    /// (a-b)^2 / (2 sigma2)
    SquaredScaled { sigma2: f64 },
    /// weight * 1{a != b}
    Mismatch { weight: f64 },
    /// weight * |a - b|
    Abs { weight: f64 },
}

impl DistanceTerm {
    fn eval(&self, a: &Value, b: &Value) -> Result<f64> {
        match self {
            DistanceTerm::Mismatch { weight } => Ok(if a == b { 0.0 } else { *weight }),
            DistanceTerm::SquaredScaled { sigma2 } => {
                let (x, y) = numeric_pair(a, b)?;
                Ok((x - y) * (x - y) / (2.0 * sigma2))
            }
            DistanceTerm::Abs { weight } => {
                let (x, y) = numeric_pair(a, b)?;
                Ok(weight * (x - y).abs())
            }
        }
    }
}

fn numeric_pair(a: &Value, b: &Value) -> Result<(f64, f64)> {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(Error::TypeMismatch(
            "numeric distance term applied to a label".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceSpec {
    /// Sum of per-variable terms; yields a decomposable kernel.
    PerVariable(Vec<(String, DistanceTerm)>),
    /// Full quadratic form 0.5 (u-u*)' Q (u-u*) over the listed variables.
    Quadratic { vars: Vec<String>, matrix: DMatrix<f64> },
}

impl DistanceSpec {
    pub fn eval(&self, u_star: &Assignment, u: &Assignment) -> Result<f64> {
        match self {
            DistanceSpec::PerVariable(terms) => {
                let mut d = 0.0;
                for (name, term) in terms {
                    let a = get(u_star, name)?;
                    let b = get(u, name)?;
                    d += term.eval(a, b)?;
                }
                Ok(d)
            }
            DistanceSpec::Quadratic { vars, matrix } => {
                let diff = DVector::from_iterator(
                    vars.len(),
                    vars.iter().map(|v| {
                        let (x, y) = numeric_pair(
                            u_star.get(v).unwrap_or(&Value::Num(f64::NAN)),
                            u.get(v).unwrap_or(&Value::Num(f64::NAN)),
                        )
                        .unwrap_or((f64::NAN, f64::NAN));
                        x - y
                    }),
                );
                Ok(0.5 * (matrix * &diff).dot(&diff))
            }
        }
    }

    pub fn variables(&self) -> Vec<String> {
        match self {
            DistanceSpec::PerVariable(terms) => terms.iter().map(|(n, _)| n.clone()).collect(),
            DistanceSpec::Quadratic { vars, .. } => vars.clone(),
        }
    }
}

fn get<'a>(a: &'a Assignment, name: &str) -> Result<&'a Value> {
    a.get(name)
        .ok_or_else(|| Error::IncompleteAssignment(name.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// delta(u): worlds share exogenous values.
    SharedWorlds,
    /// P_B(u*|u) = P(u*): counterfactual world ignores the factual one.
    PriorIndependent,
    /// P_B(u*|u) = exp(-d(u*,u)) / Z(u).
    DistanceBased(DistanceSpec),
    /// Gaussian kernel N(u, sigma) from the Mahalanobis distance.
    GaussianKernel { vars: Vec<String>, sigma: DMatrix<f64> },
    /// P_B(u*|u) = P(u*)^alpha exp(-beta d(u*,u)) / Z(u).
    GeneralizedPriorDistance { alpha: f64, beta: f64, distance: DistanceSpec },
    /// Per-variable s*delta(u_j) + (1-s)*P(u_j*).
    StabilityMixture { s: f64, per_var_prior: Vec<(String, Vec<(Value, f64)>)> },
    /// Independent product of kernels over disjoint variable blocks
    /// (used by the unified semantics to pair a U-kernel with an R-kernel).
    Product(Vec<Kernel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    /// Exogenous domain context the kernel operates over.
    pub domains: Vec<(String, Domain)>,
    pub declared: BTreeSet<Property>,
}

impl Kernel {
    /// Builds a kernel and verifies every declared property, failing loudly
    /// on mismatch. Checks are exhaustive on finite domains and analytic
    /// for the Gaussian kernel; declaring a property that cannot be decided
    /// is an error.
    pub fn new(
        kind: KernelKind,
        domains: Vec<(String, Domain)>,
        declared: BTreeSet<Property>,
        prior: Option<&Distribution>,
    ) -> Result<Self> {
        if let KernelKind::GaussianKernel { vars, sigma } = &kind {
            validate_pd(sigma, vars.len())?;
        }
        if let KernelKind::StabilityMixture { s, .. } = &kind {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::DomainMismatch(format!("stability s={s} outside [0,1]")));
            }
        }
        if let KernelKind::GeneralizedPriorDistance { alpha, beta, .. } = &kind {
            if *alpha < 0.0 || *beta < 0.0 {
                return Err(Error::DomainMismatch(
                    "generalized kernel requires alpha, beta >= 0".into(),
                ));
            }
        }
        let k = Kernel {
            kind,
            domains,
            declared: declared.clone(),
        };
        for p in &declared {
            let holds = match p {
                Property::Closeness => k.check_closeness(prior)?,
                Property::Symmetry => k.check_symmetry(prior)?,
                Property::Decomposability => k.check_decomposability(prior)?,
            };
            if !holds {
                return Err(Error::PropertyMismatch {
                    property: p.to_string(),
                    detail: "verification failed at construction".into(),
                });
            }
        }
        Ok(k)
    }

    pub fn unchecked(kind: KernelKind, domains: Vec<(String, Domain)>) -> Self {
        Kernel {
            kind,
            domains,
            declared: BTreeSet::new(),
        }
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.domains.iter().map(|(n, _)| n.clone()).collect()
    }

    fn finite(&self) -> bool {
        all_finite(&self.domains)
    }

    /// Normalized kernel mass/density at (u_star | u).
    pub fn density(&self, prior: &Distribution, u_star: &Assignment, u: &Assignment) -> Result<f64> {
        match &self.kind {
            KernelKind::SharedWorlds => {
                if self.finite() {
                    Ok(if self.domains.iter().all(|(n, _)| u_star.get(n) == u.get(n)) {
                        1.0
                    } else {
                        0.0
                    })
                } else {
                    Err(Error::UnsupportedBackend(
                        "shared-worlds kernel is symbolic on continuous domains; it has no density"
                            .into(),
                    ))
                }
            }
            KernelKind::PriorIndependent => prior_pointwise(prior, u_star),
            KernelKind::DistanceBased(d) => {
                let raw = (-d.eval(u_star, u)?).exp();
                Ok(raw / self.distance_normalizer(d, 1.0, None, u)?)
            }
            KernelKind::GaussianKernel { vars, sigma } => {
                let mean = DVector::from_iterator(
                    vars.len(),
                    vars.iter().map(|v| u[v].as_num().unwrap_or(f64::NAN)),
                );
                let x = DVector::from_iterator(
                    vars.len(),
                    vars.iter().map(|v| u_star[v].as_num().unwrap_or(f64::NAN)),
                );
                let g = Gaussian::new(vars.clone(), mean, sigma.clone())?;
                g.density(&x)
            }
            KernelKind::GeneralizedPriorDistance { alpha, beta, distance } => {
                let p = prior_pointwise(prior, u_star)?;
                let raw = p.powf(*alpha) * (-beta * distance.eval(u_star, u)?).exp();
                Ok(raw / self.generalized_normalizer(*alpha, *beta, distance, prior, u)?)
            }
            KernelKind::StabilityMixture { s, per_var_prior } => {
                if !self.finite() {
                    return Err(Error::UnsupportedBackend(
                        "stability mixture requires finite domains".into(),
                    ));
                }
                let mut dens = 1.0;
                for (name, marginal) in per_var_prior {
                    let a = get(u_star, name)?;
                    let b = get(u, name)?;
                    let p_star = marginal
                        .iter()
                        .find(|(v, _)| v == a)
                        .map(|(_, w)| *w)
                        .unwrap_or(0.0);
                    let copy = if a == b { 1.0 } else { 0.0 };
                    dens *= s * copy + (1.0 - s) * p_star;
                }
                Ok(dens)
            }
            KernelKind::Product(parts) => {
                let mut dens = 1.0;
                for part in parts {
                    let sub_prior = prior.marginalise(&part.variable_names())?;
                    dens *= part.density(&sub_prior, u_star, u)?;
                }
                Ok(dens)
            }
        }
    }

    /// Z(u) for distance-based kernels: exact summation on finite domains,
    /// per-dimension adaptive quadrature on bounded intervals.
    fn distance_normalizer(
        &self,
        d: &DistanceSpec,
        beta: f64,
        prior_alpha: Option<(&Distribution, f64)>,
        u: &Assignment,
    ) -> Result<f64> {
        if self.finite() {
            let mut z = 0.0;
            for u_star in enumerate_assignments(&self.domains) {
                let mut w = (-beta * d.eval(&u_star, u)?).exp();
                if let Some((prior, alpha)) = prior_alpha {
                    w *= prior_pointwise(prior, &u_star)?.powf(alpha);
                }
                z += w;
            }
            return Ok(z);
        }
        // continuous: only summed per-variable terms on bounded intervals
        let terms = match d {
            DistanceSpec::PerVariable(terms) => terms,
            DistanceSpec::Quadratic { .. } => {
                return Err(Error::UnboundedNormalizer(
                    "full quadratic distance on a continuous domain; use the gaussian kernel"
                        .into(),
                ))
            }
        };
        if prior_alpha.is_some() {
            return Err(Error::UnboundedNormalizer(
                "generalized kernel quadrature is only supported on finite domains".into(),
            ));
        }
        let mut z = 1.0;
        for (name, term) in terms {
            let dom = self
                .domains
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d)
                .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
            let (lo, hi) = match dom {
                Domain::RealInterval(lo, hi) => (*lo, *hi),
                Domain::Finite(values) => {
                    let b = get(u, name)?;
                    let mut zz = 0.0;
                    for v in values {
                        zz += (-term.eval(v, b)?).exp();
                    }
                    z *= zz;
                    continue;
                }
                Domain::RealLine => {
                    return Err(Error::UnboundedNormalizer(format!(
                        "distance kernel over unbounded domain of `{name}`"
                    )))
                }
            };
            let b = get(u, name)?.clone();
            let f = |t: f64| (-term.eval(&Value::Num(t), &b).unwrap_or(f64::INFINITY)).exp();
            z *= adaptive_simpson(&f, lo, hi, QUAD_REL_TOL);
        }
        Ok(z)
    }

    fn generalized_normalizer(
        &self,
        alpha: f64,
        beta: f64,
        d: &DistanceSpec,
        prior: &Distribution,
        u: &Assignment,
    ) -> Result<f64> {
        self.distance_normalizer(d, beta, Some((prior, alpha)), u)
    }

    /// Property 1: the mode of P_B(.|u) is uniquely u, for every u.
    pub fn check_closeness(&self, prior: Option<&Distribution>) -> Result<bool> {
        match &self.kind {
            KernelKind::SharedWorlds => Ok(true),
            KernelKind::GaussianKernel { .. } => Ok(true), // mode of a gaussian is its mean
            _ if self.finite() => {
                let prior = self.require_prior(prior)?;
                for u in enumerate_assignments(&self.domains) {
                    let at_u = self.density(prior, &u, &u)?;
                    for u_star in enumerate_assignments(&self.domains) {
                        if u_star == u {
                            continue;
                        }
                        if self.density(prior, &u_star, &u)? >= at_u - PROPERTY_TOL * at_u.abs() {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
            _ => Err(Error::Undecidable(
                "closeness check for a general continuous kernel".into(),
            )),
        }
    }

    /// Property 2: P_B(u*|u) = P_B(u|u*) for all pairs.
    pub fn check_symmetry(&self, prior: Option<&Distribution>) -> Result<bool> {
        match &self.kind {
            KernelKind::SharedWorlds => Ok(true),
            KernelKind::GaussianKernel { .. } => Ok(true), // N(u*;u,S) = N(u;u*,S)
            _ if self.finite() => {
                let prior = self.require_prior(prior)?;
                let worlds = enumerate_assignments(&self.domains);
                for u in &worlds {
                    for u_star in &worlds {
                        let forward = self.density(prior, u_star, u)?;
                        let backward = self.density(prior, u, u_star)?;
                        if (forward - backward).abs() > PROPERTY_TOL {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
            _ => Err(Error::Undecidable(
                "symmetry check for a general continuous kernel".into(),
            )),
        }
    }

    /// Property 3: the kernel factors per variable, with each factor
    /// depending only on the matching factual coordinate.
    pub fn check_decomposability(&self, prior: Option<&Distribution>) -> Result<bool> {
        match &self.kind {
            KernelKind::SharedWorlds => Ok(true),
            KernelKind::GaussianKernel { vars, sigma } => {
                let mut diagonal = true;
                for i in 0..vars.len() {
                    for j in 0..i {
                        if sigma[(i, j)].abs() > PROPERTY_TOL {
                            diagonal = false;
                        }
                    }
                }
                Ok(diagonal)
            }
            _ if self.finite() => {
                let prior = self.require_prior(prior)?;
                let worlds = enumerate_assignments(&self.domains);
                let names = self.variable_names();
                for u in &worlds {
                    // per-coordinate marginals of the conditional
                    let mut marginals: Vec<Vec<(Value, f64)>> = Vec::new();
                    for name in &names {
                        let dom = self.domains.iter().find(|(n, _)| n == name).unwrap();
                        let values = match &dom.1 {
                            Domain::Finite(v) => v.clone(),
                            _ => unreachable!(),
                        };
                        let mut m = Vec::new();
                        for v in values {
                            let mut mass = 0.0;
                            for u_star in &worlds {
                                if u_star[name] == v {
                                    mass += self.density(prior, u_star, u)?;
                                }
                            }
                            m.push((v, mass));
                        }
                        marginals.push(m);
                    }
                    for u_star in &worlds {
                        let mut prod = 1.0;
                        for (j, name) in names.iter().enumerate() {
                            let v = &u_star[name];
                            prod *= marginals[j].iter().find(|(a, _)| a == v).unwrap().1;
                        }
                        if (prod - self.density(prior, u_star, u)?).abs() > PROPERTY_TOL {
                            return Ok(false);
                        }
                    }
                    // each factor may depend only on the matching coordinate
                    for u_other in &worlds {
                        for (j, name) in names.iter().enumerate() {
                            if u_other[name] != u[name] {
                                continue;
                            }
                            for (v, mass) in &marginals[j] {
                                let mut other_mass = 0.0;
                                for u_star in &worlds {
                                    if &u_star[name] == v {
                                        other_mass += self.density(prior, u_star, u_other)?;
                                    }
                                }
                                if (mass - other_mass).abs() > PROPERTY_TOL {
                                    return Ok(false);
                                }
                            }
                        }
                    }
                }
                Ok(true)
            }
            _ => Err(Error::Undecidable(
                "decomposability check for a general continuous kernel".into(),
            )),
        }
    }

    /// Diagnostic companion to the symmetry check: total-variation distance
    /// between the induced marginal of U* and the prior P(U) (finite domains).
    pub fn marginal_match_tv(&self, prior: &Distribution) -> Result<f64> {
        if let KernelKind::SharedWorlds = self.kind {
            return Ok(0.0);
        }
        let prior_tab = prior.as_tabular().ok_or_else(|| {
            Error::Undecidable("marginal-match diagnostic requires a finite prior".into())
        })?;
        let joint = self.joint_world_distribution(prior)?;
        let starred: Vec<String> = self.variable_names().iter().map(|n| star(n)).collect();
        let marginal = joint.marginalise(&starred)?;
        let m = marginal.as_tabular().unwrap();
        // rename starred vars back before comparing
        let renamed = Tabular::new(
            m.vars.iter().map(|v| unstar(v)).collect(),
            m.rows.clone(),
        )?;
        renamed.tv_distance(prior_tab)
    }

    fn require_prior<'a>(&self, prior: Option<&'a Distribution>) -> Result<&'a Distribution> {
        prior.ok_or_else(|| {
            Error::Undecidable("property check requires the prior for this kernel kind".into())
        })
    }

    /// Joint world distribution P(U)·P_B(U*|U) over (U, U*), with the U*
    /// coordinates renamed by a trailing `*`.
    pub fn joint_world_distribution(&self, prior: &Distribution) -> Result<Distribution> {
        let names = self.variable_names();
        let starred: Vec<String> = names.iter().map(|n| star(n)).collect();
        match prior {
            Distribution::Tabular(t) => {
                if !self.finite() {
                    return Err(Error::UnsupportedBackend(
                        "tabular prior over non-finite kernel domains".into(),
                    ));
                }
                let mut vars = names.clone();
                vars.extend(starred.iter().cloned());
                let mut rows = Vec::new();
                for i in 0..t.rows.len() {
                    let u = t.row_assignment(i);
                    let w_u = t.rows[i].1;
                    if w_u == 0.0 {
                        continue;
                    }
                    for u_star in enumerate_assignments(&self.domains) {
                        let w = w_u * self.density(prior, &u_star, &u)?;
                        if w > 0.0 {
                            let mut vals: Vec<Value> =
                                names.iter().map(|n| u[n].clone()).collect();
                            vals.extend(names.iter().map(|n| u_star[n].clone()));
                            rows.push((vals, w));
                        }
                    }
                }
                Ok(Distribution::Tabular(Tabular::new(vars, rows)?))
            }
            Distribution::Gaussian(g) => {
                let g = g.marginal(&names)?;
                let m = names.len();
                let sigma_k = match &self.kind {
                    KernelKind::GaussianKernel { vars, sigma } => {
                        // reorder kernel covariance to the prior's order
                        let idx: Vec<usize> = names
                            .iter()
                            .map(|n| vars.iter().position(|v| v == n))
                            .collect::<Option<_>>()
                            .ok_or_else(|| {
                                Error::DomainMismatch(
                                    "kernel variables do not match the prior".into(),
                                )
                            })?;
                        let mut s = DMatrix::zeros(m, m);
                        for (r, &i) in idx.iter().enumerate() {
                            for (c, &j) in idx.iter().enumerate() {
                                s[(r, c)] = sigma[(i, j)];
                            }
                        }
                        s
                    }
                    KernelKind::SharedWorlds => DMatrix::zeros(m, m),
                    _ => {
                        return Err(Error::UnsupportedBackend(
                            "gaussian prior requires a gaussian or shared-worlds kernel; use the particle backend".into(),
                        ))
                    }
                };
                // U* = U + eps with eps ~ N(0, sigma_k) independent of U
                let mut mean = DVector::zeros(2 * m);
                mean.rows_mut(0, m).copy_from(&g.mean);
                mean.rows_mut(m, m).copy_from(&g.mean);
                let mut cov = DMatrix::zeros(2 * m, 2 * m);
                cov.view_mut((0, 0), (m, m)).copy_from(&g.cov);
                cov.view_mut((0, m), (m, m)).copy_from(&g.cov);
                cov.view_mut((m, 0), (m, m)).copy_from(&g.cov);
                cov.view_mut((m, m), (m, m)).copy_from(&(&g.cov + sigma_k));
                let mut vars = names.clone();
                vars.extend(starred);
                Ok(Distribution::Gaussian(Gaussian::new(
                    vars,
                    mean,
                    symmetrize(&cov),
                )?))
            }
            Distribution::Particles(_) => Err(Error::UnsupportedBackend(
                "particle priors are sampled via the importance-sampling backend".into(),
            )),
        }
    }

    /// Draws u* ~ P_B(.|u). Used by the Monte Carlo backend.
    pub fn sample_given(
        &self,
        prior: &Distribution,
        u: &Assignment,
        rng: &mut ChaCha12Rng,
    ) -> Result<Assignment> {
        match &self.kind {
            KernelKind::SharedWorlds => Ok(u.clone()),
            KernelKind::PriorIndependent => {
                let s = prior.sample(1, rng.gen())?;
                Ok(s.into_iter().next().unwrap())
            }
            KernelKind::GaussianKernel { vars, sigma } => {
                let chol = sigma.clone().cholesky().ok_or_else(|| {
                    Error::DomainMismatch("kernel covariance not positive definite".into())
                })?;
                let z = DVector::from_iterator(
                    vars.len(),
                    (0..vars.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                let eps = chol.l() * z;
                let mut out = Assignment::new();
                for (i, v) in vars.iter().enumerate() {
                    let base = u[v]
                        .as_num()
                        .ok_or_else(|| Error::TypeMismatch(format!("`{v}` is not numeric")))?;
                    out.insert(v.clone(), Value::Num(base + eps[i]));
                }
                Ok(out)
            }
            KernelKind::StabilityMixture { s, per_var_prior } => {
                let mut out = Assignment::new();
                for (name, marginal) in per_var_prior {
                    let x: f64 = rng.gen();
                    if x < *s {
                        out.insert(name.clone(), u[name].clone());
                    } else {
                        let y: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut chosen = marginal.last().unwrap().0.clone();
                        for (v, w) in marginal {
                            acc += w;
                            if y < acc {
                                chosen = v.clone();
                                break;
                            }
                        }
                        out.insert(name.clone(), chosen);
                    }
                }
                Ok(out)
            }
            KernelKind::DistanceBased(_) | KernelKind::GeneralizedPriorDistance { .. }
                if self.finite() =>
            {
                // exact inverse-CDF over the enumerated conditional
                let worlds = enumerate_assignments(&self.domains);
                let y: f64 = rng.gen();
                let mut acc = 0.0;
                for w in &worlds {
                    acc += self.density(prior, w, u)?;
                    if y < acc {
                        return Ok(w.clone());
                    }
                }
                Ok(worlds.last().unwrap().clone())
            }
            KernelKind::Product(parts) => {
                let mut out = Assignment::new();
                for part in parts {
                    let sub_prior = prior.marginalise(&part.variable_names())?;
                    out.extend(part.sample_given(&sub_prior, u, rng)?);
                }
                Ok(out)
            }
            _ => Err(Error::UnsupportedBackend(
                "sampling from a continuous distance-based kernel".into(),
            )),
        }
    }
}

fn prior_pointwise(prior: &Distribution, at: &Assignment) -> Result<f64> {
    match prior {
        Distribution::Tabular(t) => {
            let sub: Assignment = t
                .vars
                .iter()
                .map(|v| Ok((v.clone(), get(at, v)?.clone())))
                .collect::<Result<_>>()?;
            t.mass_of(&sub)
        }
        Distribution::Gaussian(g) => {
            let x = DVector::from_iterator(
                g.dim(),
                g.vars.iter().map(|v| at[v].as_num().unwrap_or(f64::NAN)),
            );
            g.density(&x)
        }
        Distribution::Particles(_) => Err(Error::UnsupportedBackend(
            "pointwise evaluation of a particle prior".into(),
        )),
    }
}

fn validate_pd(sigma: &DMatrix<f64>, n: usize) -> Result<()> {
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DomainMismatch("kernel covariance dimension mismatch".into()));
    }
    let scale = sigma.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::DomainMismatch("kernel covariance not symmetric".into()));
            }
        }
    }
    if sigma.clone().cholesky().is_none() {
        return Err(Error::DomainMismatch(
            "kernel covariance not positive definite".into(),
        ));
    }
    Ok(())
}

/// Starred (counterfactual-world) name of an exogenous variable.
pub fn star(name: &str) -> String {
    format!("{name}*")
}

pub fn unstar(name: &str) -> String {
    name.strip_suffix('*').unwrap_or(name).to_string()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, left, tol * 0.5, depth - 1) + rec(f, m, b, right, tol * 0.5, depth - 1)
        }
    }
    let whole = simpson(f, lo, hi);
    rec(f, lo, hi, whole, rel_tol * whole.abs().max(1e-300), 40)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_domain() -> Vec<(String, Domain)> {
        vec![(
            "U".to_string(),
            Domain::Finite(vec![Value::num(0.0), Value::num(1.0)]),
        )]
    }

    fn bern_prior(p: f64) -> Distribution {
        Distribution::Tabular(
            Tabular::new(
                vec!["U".to_string()],
                vec![(vec![Value::num(0.0)], 1.0 - p), (vec![Value::num(1.0)], p)],
            )
            .unwrap(),
        )
    }

    fn assign(v: f64) -> Assignment {
        [("U".to_string(), Value::num(v))].into_iter().collect()
    }

    #[test]
    fn shared_worlds_is_a_delta() {
        let k = Kernel::unchecked(KernelKind::SharedWorlds, two_point_domain());
        let p = bern_prior(0.5);
        assert_eq!(k.density(&p, &assign(1.0), &assign(1.0)).unwrap(), 1.0);
        assert_eq!(k.density(&p, &assign(0.0), &assign(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn stability_mixture_matches_formula() {
        let per_var = vec![(
            "U".to_string(),
            vec![(Value::num(0.0), 0.5), (Value::num(1.0), 0.5)],
        )];
        let k = Kernel::unchecked(
            KernelKind::StabilityMixture { s: 0.9, per_var_prior: per_var },
            two_point_domain(),
        );
        let p = bern_prior(0.5);
        // s*1 + (1-s)*P(u*) at u*=u
        let at_same = k.density(&p, &assign(1.0), &assign(1.0)).unwrap();
        assert!((at_same - (0.9 + 0.1 * 0.5)).abs() < 1e-12);
        let at_diff = k.density(&p, &assign(0.0), &assign(1.0)).unwrap();
        assert!((at_diff - 0.1 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn stability_extremes_match_shared_and_prior_independent() {
        let per_var = vec![(
            "U".to_string(),
            vec![(Value::num(0.0), 0.7), (Value::num(1.0), 0.3)],
        )];
        let p = bern_prior(0.3);
        let shared = Kernel::unchecked(KernelKind::SharedWorlds, two_point_domain());
        let prior_ind = Kernel::unchecked(KernelKind::PriorIndependent, two_point_domain());
        for s_val in [1.0, 0.0] {
            let k = Kernel::unchecked(
                KernelKind::StabilityMixture { s: s_val, per_var_prior: per_var.clone() },
                two_point_domain(),
            );
            let reference = if s_val == 1.0 { &shared } else { &prior_ind };
            for a in [0.0, 1.0] {
                for b in [0.0, 1.0] {
                    let lhs = k.density(&p, &assign(a), &assign(b)).unwrap();
                    let rhs = reference.density(&p, &assign(a), &assign(b)).unwrap();
                    assert!((lhs - rhs).abs() < 1e-15, "s={s_val} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn generalized_limits_match_distance_and_prior() {
        let d = DistanceSpec::PerVariable(vec![(
            "U".to_string(),
            DistanceTerm::Mismatch { weight: 0.8 },
        )]);
        let p = bern_prior(0.3);
        let dist_kernel = Kernel::unchecked(
            KernelKind::DistanceBased(d.clone()),
            two_point_domain(),
        );
        let gen_10 = Kernel::unchecked(
            KernelKind::GeneralizedPriorDistance { alpha: 0.0, beta: 1.0, distance: d.clone() },
            two_point_domain(),
        );
        let gen_01 = Kernel::unchecked(
            KernelKind::GeneralizedPriorDistance { alpha: 1.0, beta: 0.0, distance: d },
            two_point_domain(),
        );
        let prior_ind = Kernel::unchecked(KernelKind::PriorIndependent, two_point_domain());
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let lhs = gen_10.density(&p, &assign(a), &assign(b)).unwrap();
                let rhs = dist_kernel.density(&p, &assign(a), &assign(b)).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
                let lhs = gen_01.density(&p, &assign(a), &assign(b)).unwrap();
                let rhs = prior_ind.density(&p, &assign(a), &assign(b)).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn property_checks_on_small_domains() {
        let p = bern_prior(0.3);
        let prior_ind = Kernel::unchecked(KernelKind::PriorIndependent, two_point_domain());
        assert!(!prior_ind.check_closeness(Some(&p)).unwrap());
        assert!(!prior_ind.check_symmetry(Some(&p)).unwrap());
        assert!(prior_ind.check_decomposability(Some(&p)).unwrap());

        let d = DistanceSpec::PerVariable(vec![(
            "U".to_string(),
            DistanceTerm::Mismatch { weight: 1.0 },
        )]);
        let dist = Kernel::unchecked(KernelKind::DistanceBased(d), two_point_domain());
        assert!(dist.check_closeness(Some(&p)).unwrap());
        assert!(dist.check_symmetry(Some(&p)).unwrap());
        assert!(dist.check_decomposability(Some(&p)).unwrap());

        // declared property that fails must reject construction
        let err = Kernel::new(
            KernelKind::PriorIndependent,
            two_point_domain(),
            [Property::Closeness].into_iter().collect(),
            Some(&p),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PropertyMismatch { .. }));
    }

    #[test]
    fn gaussian_kernel_properties_analytic() {
        let vars = vec!["U".to_string(), "V".to_string()];
        let diag = Kernel::unchecked(
            KernelKind::GaussianKernel {
                vars: vars.clone(),
                sigma: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0])),
            },
            vec![
                ("U".to_string(), Domain::RealLine),
                ("V".to_string(), Domain::RealLine),
            ],
        );
        assert!(diag.check_closeness(None).unwrap());
        assert!(diag.check_symmetry(None).unwrap());
        assert!(diag.check_decomposability(None).unwrap());

        let full = Kernel::unchecked(
            KernelKind::GaussianKernel {
                vars,
                sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            },
            vec![
                ("U".to_string(), Domain::RealLine),
                ("V".to_string(), Domain::RealLine),
            ],
        );
        assert!(!full.check_decomposability(None).unwrap());
    }

    #[test]
    fn joint_block_structure_for_gaussian_prior() {
        let prior = Distribution::Gaussian(Gaussian::standard(vec![
            "U1".to_string(),
            "U2".to_string(),
        ]));
        let sigma = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 2.0]));
        let k = Kernel::unchecked(
            KernelKind::GaussianKernel {
                vars: vec!["U1".to_string(), "U2".to_string()],
                sigma,
            },
            vec![
                ("U1".to_string(), Domain::RealLine),
                ("U2".to_string(), Domain::RealLine),
            ],
        );
        let joint = k.joint_world_distribution(&prior).unwrap();
        let g = joint.as_gaussian().unwrap();
        assert_eq!(g.vars, vec!["U1", "U2", "U1*", "U2*"]);
        assert_eq!(g.cov[(0, 2)], 1.0); // cov(U1, U1*) = var(U1)
        assert_eq!(g.cov[(2, 2)], 1.5); // var(U1*) = var + kernel
        // verify against a particle estimate of U* = U + eps
        let samples = g.sample(100_000, 11);
        let mean_star: f64 =
            samples.iter().map(|x| x[2]).sum::<f64>() / samples.len() as f64;
        assert!(mean_star.abs() < 0.02);
    }

    #[test]
    fn stability_zero_gives_independent_worlds() {
        let per_var = vec![(
            "U".to_string(),
            vec![(Value::num(0.0), 0.7), (Value::num(1.0), 0.3)],
        )];
        let k = Kernel::unchecked(
            KernelKind::StabilityMixture { s: 0.0, per_var_prior: per_var },
            two_point_domain(),
        );
        let p = bern_prior(0.3);
        let joint = k.joint_world_distribution(&p).unwrap();
        let t = joint.as_tabular().unwrap();
        // product of independent marginals
        for (vals, w) in &t.rows {
            let pu = if vals[0] == Value::num(1.0) { 0.3 } else { 0.7 };
            let pu_star = if vals[1] == Value::num(1.0) { 0.3 } else { 0.7 };
            assert!((w - pu * pu_star).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_normalizes_bounded_distance_kernel() {
        let domains = vec![("U".to_string(), Domain::RealInterval(-2.0, 2.0))];
        let d = DistanceSpec::PerVariable(vec![(
            "U".to_string(),
            DistanceTerm::Abs { weight: 1.0 },
        )]);
        let k = Kernel::unchecked(KernelKind::DistanceBased(d), domains);
        let p = Distribution::Gaussian(Gaussian::standard(vec!["U".to_string()]));
        // integrate the returned density over the domain; should be ~1
        let u = assign(0.0);
        let n = 4000;
        let mut total = 0.0;
        for i in 0..n {
            let t = -2.0 + 4.0 * (i as f64 + 0.5) / n as f64;
            total += k.density(&p, &assign(t), &u).unwrap() * (4.0 / n as f64);
        }
        assert!((total - 1.0).abs() < 1e-4, "integral {total}");
    }

    #[test]
    fn unbounded_distance_kernel_errors() {
        let domains = vec![("U".to_string(), Domain::RealLine)];
        let d = DistanceSpec::PerVariable(vec![(
            "U".to_string(),
            DistanceTerm::Abs { weight: 1.0 },
        )]);
        let k = Kernel::unchecked(KernelKind::DistanceBased(d), domains);
        let p = Distribution::Gaussian(Gaussian::standard(vec!["U".to_string()]));
        assert!(matches!(
            k.density(&p, &assign(0.0), &assign(0.0)),
            Err(Error::UnboundedNormalizer(_))
        ));
    }
}
