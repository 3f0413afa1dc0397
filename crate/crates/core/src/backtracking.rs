//! Backtracking counterfactuals: joint cross-world probabilities,
//! cross-world abduction, marginalisation, and prediction with the
//! unmodified structural laws.

use nalgebra::{DMatrix, DVector};

use crate::dist::{endogenous_distribution, Distribution};
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, Gaussian, CONSISTENCY_TOL, RANK_TOL};
use crate::interventional::evidence_constraint;
use crate::kernel::{star, unstar, Kernel, KernelKind};
use crate::particle::Particles;
use crate::rng::rng;
use crate::scm::{enumerate_assignments, Assignment, CausalModel, VarKind};
use crate::value::Value;

/// Below this effective sample size the Monte Carlo backend attaches a
/// warning to the posterior instead of failing.
pub const ESS_WARN: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Auto,
    Exact,
    Gaussian,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ExactFinite,
    LinearGaussian,
    ImportanceSampling,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::ExactFinite => write!(f, "exact"),
            Provenance::LinearGaussian => write!(f, "gaussian"),
            Provenance::ImportanceSampling => write!(f, "mc"),
        }
    }
}

/// P(U*, U | x*, z): the conditioned joint world distribution.
/// `joint` is over (U..., U*...) with counterfactual-world coordinates
/// carrying a trailing `*`; `marginal_star` is its U* marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossWorldPosterior {
    pub joint: Distribution,
    pub marginal_star: Distribution,
    pub provenance: Provenance,
    pub ess: Option<f64>,
    pub warnings: Vec<String>,
}

/// "Given that we factually observed z, had we observed x*, what is Y*?"
/// Evidence assignments use plain variable names; the counterfactual side
/// is interpreted on the starred world.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackingQuery {
    pub factual_evidence: Assignment,
    pub counterfactual_evidence: Assignment,
    pub targets: Vec<String>,
}

/// Evidence split into its endogenous and exogenous parts, validated.
fn split_evidence(model: &CausalModel, ev: &Assignment) -> Result<(Assignment, Assignment)> {
    let mut endo = Assignment::new();
    let mut exo = Assignment::new();
    for (name, value) in ev {
        match model.kind(name) {
            Some(VarKind::Endogenous) => {
                model.check_endogenous_value(name, value)?;
                endo.insert(name.clone(), value.clone());
            }
            Some(VarKind::Exogenous) => {
                let dom = model.domain(name).unwrap();
                if !dom.contains(value) {
                    return Err(Error::DomainMismatch(format!(
                        "value {value} outside the domain of `{name}`"
                    )));
                }
                exo.insert(name.clone(), value.clone());
            }
            None => return Err(Error::UnknownVariable(name.clone())),
        }
    }
    Ok((endo, exo))
}

fn event_holds(
    model: &CausalModel,
    u: &Assignment,
    endo: &Assignment,
    exo: &Assignment,
) -> Result<bool> {
    if exo.iter().any(|(k, v)| u.get(k) != Some(v)) {
        return Ok(false);
    }
    if endo.is_empty() {
        return Ok(true);
    }
    let v = model.solve(u)?;
    Ok(endo.iter().all(|(k, val)| v.get(k) == Some(val)))
}

/// Mass of {Y*(u*) = y*} ∩ {Z(u) = z} under the joint P(U)·P_B(U*|U).
pub fn backtracking_joint_probability(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    y_star: &Assignment,
    z: &Assignment,
) -> Result<f64> {
    let (star_endo, star_exo) = split_evidence(model, y_star)?;
    let (z_endo, z_exo) = split_evidence(model, z)?;
    if y_star.is_empty() && z.is_empty() {
        return Ok(1.0);
    }
    match prior {
        Distribution::Tabular(_) => {
            let joint = kernel.joint_world_distribution(prior)?;
            let t = joint.as_tabular().unwrap();
            let mut p = 0.0;
            for i in 0..t.rows.len() {
                let row = t.row_assignment(i);
                let (u, u_s) = split_worlds(&row);
                if event_holds(model, &u, &z_endo, &z_exo)?
                    && event_holds(model, &u_s, &star_endo, &star_exo)?
                {
                    p += t.rows[i].1;
                }
            }
            Ok(p)
        }
        Distribution::Gaussian(_) => {
            // affine constraints carve out a measure-zero set unless vacuous
            let rf = model.affine_reduced_form().ok_or_else(|| {
                Error::UnsupportedBackend(
                    "gaussian prior with a nonlinear model; use the particle backend".into(),
                )
            })?;
            let mut vacuous = true;
            for (endo, _world) in [(&z_endo, 0), (&star_endo, 1)] {
                let names: Vec<String> = endo.keys().cloned().collect();
                let (a, b) = rf
                    .rows_for(&names)
                    .ok_or_else(|| Error::UnknownVariable(names.join(",")))?;
                for (row, name) in names.iter().enumerate() {
                    let y = endo[name]
                        .as_num()
                        .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))?;
                    if a.row(row).amax() > 1e-12 {
                        vacuous = false;
                    } else if (b[row] - y).abs() > 1e-9 {
                        return Ok(0.0);
                    }
                }
            }
            if !z_exo.is_empty() || !star_exo.is_empty() {
                vacuous = false; // point evidence on a continuous coordinate
            }
            Ok(if vacuous { 1.0 } else { 0.0 })
        }
        Distribution::Particles(parts) => {
            let mut r = rng(parts.seed, 1);
            let mut p = 0.0;
            for i in 0..parts.particles.len() {
                let u = parts.assignment(i);
                let u_s = kernel.sample_given(prior, &u, &mut r)?;
                if event_holds(model, &u, &z_endo, &z_exo)?
                    && event_holds(model, &u_s, &star_endo, &star_exo)?
                {
                    p += parts.particles[i].1;
                }
            }
            Ok(p)
        }
    }
}

fn split_worlds(row: &Assignment) -> (Assignment, Assignment) {
    let mut u = Assignment::new();
    let mut u_star = Assignment::new();
    for (k, v) in row {
        if k.ends_with('*') {
            u_star.insert(unstar(k), v.clone());
        } else {
            u.insert(k.clone(), v.clone());
        }
    }
    (u, u_star)
}

/// Cross-world abduction: the joint world distribution conditioned on the
/// antecedent (starred world) and the factual evidence.
pub fn cross_world_abduction(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    x_star: &Assignment,
    z: &Assignment,
    backend: Backend,
    mc: McOptions,
) -> Result<CrossWorldPosterior> {
    let (star_endo, star_exo) = split_evidence(model, x_star)?;
    let (z_endo, z_exo) = split_evidence(model, z)?;

    let finite_exact = prior.as_tabular().is_some()
        && kernel.domains.iter().all(|(_, d)| d.is_finite());
    let gaussian_kernel = matches!(
        kernel.kind,
        KernelKind::GaussianKernel { .. } | KernelKind::SharedWorlds
    );
    let linear_gaussian = prior.as_gaussian().is_some()
        && model.affine_reduced_form().is_some()
        && gaussian_kernel;

    match backend {
        Backend::Exact => {
            if !finite_exact {
                return Err(Error::UnsupportedBackend(
                    "exact backend requires a finite model and tabular prior".into(),
                ));
            }
            exact_abduction(model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo)
        }
        Backend::Gaussian => {
            if !linear_gaussian {
                return Err(Error::UnsupportedBackend(
                    "gaussian backend requires a linear model, gaussian prior, and gaussian or shared-worlds kernel".into(),
                ));
            }
            gaussian_abduction(model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo)
        }
        Backend::MonteCarlo => {
            mc_abduction(model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo, mc)
        }
        Backend::Auto => {
            if finite_exact {
                exact_abduction(model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo)
            } else if linear_gaussian {
                gaussian_abduction(model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo)
            } else {
                mc_abduction(
                    model, prior, kernel, &star_endo, &star_exo, &z_endo, &z_exo, mc,
                )
            }
        }
    }
}

fn exact_abduction(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    star_endo: &Assignment,
    star_exo: &Assignment,
    z_endo: &Assignment,
    z_exo: &Assignment,
) -> Result<CrossWorldPosterior> {
    let joint = kernel.joint_world_distribution(prior)?;
    let t = joint.as_tabular().unwrap();
    let conditioned = t.condition_where(|row| {
        let (u, u_s) = split_worlds(row);
        event_holds(model, &u, z_endo, z_exo).unwrap_or(false)
            && event_holds(model, &u_s, star_endo, star_exo).unwrap_or(false)
    });
    let conditioned = match conditioned {
        Ok(c) => c,
        Err(Error::ZeroProbabilityEvidence(_)) => {
            // counterlegal iff no world at all can realize the antecedent
            let mut attainable = false;
            for u_s in enumerate_assignments(&kernel.domains) {
                if event_holds(model, &u_s, star_endo, star_exo)? {
                    attainable = true;
                    break;
                }
            }
            return Err(if attainable {
                Error::ZeroProbabilityEvidence(
                    "cross-world evidence has zero probability".into(),
                )
            } else {
                Error::CounterlegalAntecedent(
                    "the antecedent is incompatible with the structural laws".into(),
                )
            });
        }
        Err(e) => return Err(e),
    };
    let starred: Vec<String> = kernel.variable_names().iter().map(|n| star(n)).collect();
    let joint = Distribution::Tabular(conditioned);
    let marginal_star = joint.marginalise(&starred)?;
    Ok(CrossWorldPosterior {
        joint,
        marginal_star,
        provenance: Provenance::ExactFinite,
        ess: None,
        warnings: Vec::new(),
    })
}

/// Constraint rows over the 2m-dimensional (U, U*) space for one world.
/// `offset` selects the block (0 = factual, m = counterfactual).
fn world_constraints(
    model: &CausalModel,
    exo_order: &[String],
    endo: &Assignment,
    exo: &Assignment,
    offset: usize,
    total: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = exo_order.len();
    let (a_endo, rhs_endo) = evidence_constraint(model, exo_order, endo)?;
    let rows = a_endo.nrows() + exo.len();
    let mut a = DMatrix::zeros(rows, total);
    let mut b = DVector::zeros(rows);
    a.view_mut((0, offset), (a_endo.nrows(), m)).copy_from(&a_endo);
    b.rows_mut(0, rhs_endo.len()).copy_from(&rhs_endo);
    for (i, (name, value)) in exo.iter().enumerate() {
        let col = exo_order
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        a[(a_endo.nrows() + i, offset + col)] = 1.0;
        b[a_endo.nrows() + i] = value
            .as_num()
            .ok_or_else(|| Error::TypeMismatch(format!("`{name}` is not numeric")))?;
    }
    Ok((a, b))
}

fn stack(
    a1: &DMatrix<f64>,
    b1: &DVector<f64>,
    a2: &DMatrix<f64>,
    b2: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let rows = a1.nrows() + a2.nrows();
    let mut a = DMatrix::zeros(rows, a1.ncols());
    let mut b = DVector::zeros(rows);
    a.view_mut((0, 0), (a1.nrows(), a1.ncols())).copy_from(a1);
    a.view_mut((a1.nrows(), 0), (a2.nrows(), a2.ncols())).copy_from(a2);
    b.rows_mut(0, b1.len()).copy_from(b1);
    b.rows_mut(b1.len(), b2.len()).copy_from(b2);
    (a, b)
}

/// Least-squares solvability test: does A·x = b admit any solution?
fn consistent(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    let svd = a.clone().svd(true, true);
    match svd.solve(b, RANK_TOL) {
        Ok(x) => (a * x - b).amax() <= CONSISTENCY_TOL * (1.0 + b.amax()),
        Err(_) => false,
    }
}

fn gaussian_abduction(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    star_endo: &Assignment,
    star_exo: &Assignment,
    z_endo: &Assignment,
    z_exo: &Assignment,
) -> Result<CrossWorldPosterior> {
    let joint = kernel.joint_world_distribution(prior)?;
    let g = joint.as_gaussian().unwrap();
    let names = kernel.variable_names();
    let m = names.len();
    let (a_z, b_z) = world_constraints(model, &names, z_endo, z_exo, 0, 2 * m)?;
    let (a_s, b_s) = world_constraints(model, &names, star_endo, star_exo, m, 2 * m)?;
    let (a, b) = stack(&a_z, &b_z, &a_s, &b_s);
    let conditioned = match g.condition_linear(&a, &b) {
        Ok(c) => c,
        Err(Error::ZeroProbabilityEvidence(_)) => {
            // antecedent alone unsolvable ⇒ counterlegal; otherwise the
            // clash comes from combining it with the factual evidence
            let a_only = a_s.columns(m, m).into_owned();
            return Err(if consistent(&a_only, &b_s) {
                Error::ZeroProbabilityEvidence(
                    "cross-world evidence has zero probability".into(),
                )
            } else {
                Error::CounterlegalAntecedent(
                    "the antecedent is incompatible with the structural laws".into(),
                )
            });
        }
        Err(e) => return Err(e),
    };
    let starred: Vec<String> = names.iter().map(|n| star(n)).collect();
    let joint = Distribution::Gaussian(conditioned);
    let marginal_star = joint.marginalise(&starred)?;
    Ok(CrossWorldPosterior {
        joint,
        marginal_star,
        provenance: Provenance::LinearGaussian,
        ess: None,
        warnings: Vec::new(),
    })
}

/// Self-normalized importance sampling.
///
/// Finite-event evidence uses the proposal prior × kernel with indicator
/// weights. For linear-Gaussian models with a Gaussian kernel the antecedent
/// is a measure-zero affine event, so the sampler collapses it analytically:
/// u is drawn from the exact P(U|z), the weight is the kernel-induced density
/// of the antecedent statistic, and u* is drawn from the kernel conditioned
/// on the antecedent. Other continuous models are unsupported.
#[allow(clippy::too_many_arguments)]
fn mc_abduction(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    star_endo: &Assignment,
    star_exo: &Assignment,
    z_endo: &Assignment,
    z_exo: &Assignment,
    mc: McOptions,
) -> Result<CrossWorldPosterior> {
    let finite_events = kernel.domains.iter().all(|(_, d)| d.is_finite());
    if finite_events {
        return mc_indicator(model, prior, kernel, star_endo, star_exo, z_endo, z_exo, mc);
    }
    if prior.as_gaussian().is_some()
        && model.affine_reduced_form().is_some()
        && matches!(kernel.kind, KernelKind::GaussianKernel { .. })
    {
        return mc_collapsed(model, prior, kernel, star_endo, star_exo, z_endo, z_exo, mc);
    }
    Err(Error::UnsupportedBackend(
        "monte carlo backtracking requires finite domains or a linear-gaussian model with a gaussian kernel".into(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn mc_indicator(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    star_endo: &Assignment,
    star_exo: &Assignment,
    z_endo: &Assignment,
    z_exo: &Assignment,
    mc: McOptions,
) -> Result<CrossWorldPosterior> {
    let names = kernel.variable_names();
    let us = prior.sample(mc.samples, mc.seed)?;
    let mut r = rng(mc.seed, 1);
    let mut particles = Vec::with_capacity(mc.samples);
    for u in &us {
        let u_s = kernel.sample_given(prior, u, &mut r)?;
        let w = if event_holds(model, u, z_endo, z_exo)?
            && event_holds(model, &u_s, star_endo, star_exo)?
        {
            1.0
        } else {
            0.0
        };
        let mut vals: Vec<Value> = names.iter().map(|n| u[n].clone()).collect();
        vals.extend(names.iter().map(|n| u_s[n].clone()));
        particles.push((vals, w));
    }
    finish_particles(kernel, particles, mc, star_endo, star_exo, model)
}

#[allow(clippy::too_many_arguments)]
fn mc_collapsed(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    star_endo: &Assignment,
    star_exo: &Assignment,
    z_endo: &Assignment,
    z_exo: &Assignment,
    mc: McOptions,
) -> Result<CrossWorldPosterior> {
    let names = kernel.variable_names();
    let m = names.len();
    let sigma_k = match &kernel.kind {
        KernelKind::GaussianKernel { vars, sigma } => {
            let idx: Vec<usize> = names
                .iter()
                .map(|n| vars.iter().position(|v| v == n))
                .collect::<Option<_>>()
                .ok_or_else(|| {
                    Error::DomainMismatch("kernel variables do not match the prior".into())
                })?;
            let mut s = DMatrix::zeros(m, m);
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    s[(r, c)] = sigma[(i, j)];
                }
            }
            s
        }
        _ => unreachable!("caller checked the kernel kind"),
    };
    // exact factual abduction, then sampling from P(U|z)
    let g_prior = prior.as_gaussian().unwrap().marginal(&names)?;
    let (a_z, b_z) = world_constraints(model, &names, z_endo, z_exo, 0, m)?;
    let u_post = g_prior.condition_linear(&a_z, &b_z)?;
    // antecedent rows act on u*: A·u* = b
    let (a_s, b_s) = world_constraints(model, &names, star_endo, star_exo, 0, m)?;
    if a_s.nrows() == 0 {
        // no antecedent: unit weights, u* ~ N(u, sigma_k)
        let us = u_post.sample(mc.samples, mc.seed);
        let eps = Gaussian::new(names.clone(), DVector::zeros(m), sigma_k)?
            .sample(mc.samples, mc.seed.wrapping_add(1));
        let mut particles = Vec::with_capacity(mc.samples);
        for (u, e) in us.iter().zip(&eps) {
            let u_s = u + e;
            let mut vals: Vec<Value> = u.iter().map(|&x| Value::num(x)).collect();
            vals.extend(u_s.iter().map(|&x| Value::num(x)));
            particles.push((vals, 1.0));
        }
        return finish_particles(kernel, particles, mc, star_endo, star_exo, model);
    }
    if !consistent(&a_s, &b_s) {
        return Err(Error::CounterlegalAntecedent(
            "the antecedent is incompatible with the structural laws".into(),
        ));
    }
    // statistic T = A·u* with u* ~ N(u, sigma_k): T ~ N(A·u, S), S = A Σ A'
    let s = symmetrize(&(&a_s * &sigma_k * a_s.transpose()));
    let eig = s.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = RANK_TOL * lmax.max(1.0);
    let mut inv_l = DMatrix::zeros(s.nrows(), s.nrows());
    let (mut rank, mut logdet) = (0usize, 0.0f64);
    for i in 0..s.nrows() {
        if eig.eigenvalues[i] > cut {
            inv_l[(i, i)] = 1.0 / eig.eigenvalues[i];
            rank += 1;
            logdet += eig.eigenvalues[i].ln();
        }
    }
    let s_pinv = &eig.eigenvectors * inv_l * eig.eigenvectors.transpose();
    let log_norm = -0.5 * (logdet + rank as f64 * (2.0 * std::f64::consts::PI).ln());
    // conditional draw: u* = u + K(b − A·u) + L·w, C = Σ − K A Σ
    let gain = &sigma_k * a_s.transpose() * &s_pinv;
    let cond_cov = symmetrize(&(&sigma_k - &gain * &a_s * &sigma_k));
    let noise = Gaussian::new(names.clone(), DVector::zeros(m), cond_cov)?
        .sample(mc.samples, mc.seed.wrapping_add(1));
    let us = u_post.sample(mc.samples, mc.seed);
    let mut particles = Vec::with_capacity(mc.samples);
    for (u, w_noise) in us.iter().zip(&noise) {
        let resid = &b_s - &a_s * u;
        // weight: density of T at b, zero off the support of S
        let proj = &s * &s_pinv * &resid;
        let w = if (&proj - &resid).amax() > CONSISTENCY_TOL * (1.0 + resid.amax()) {
            0.0
        } else {
            (log_norm - 0.5 * (resid.transpose() * &s_pinv * &resid)[(0, 0)]).exp()
        };
        let u_s = u + &gain * resid + w_noise;
        let mut vals: Vec<Value> = u.iter().map(|&x| Value::num(x)).collect();
        vals.extend(u_s.iter().map(|&x| Value::num(x)));
        particles.push((vals, w));
    }
    finish_particles(kernel, particles, mc, star_endo, star_exo, model)
}

fn finish_particles(
    kernel: &Kernel,
    particles: Vec<(Vec<Value>, f64)>,
    mc: McOptions,
    star_endo: &Assignment,
    star_exo: &Assignment,
    model: &CausalModel,
) -> Result<CrossWorldPosterior> {
    let names = kernel.variable_names();
    let mut vars = names.clone();
    vars.extend(names.iter().map(|n| star(n)));
    let parts = match Particles::new(vars, particles, mc.seed) {
        Ok(p) => p,
        Err(Error::ZeroProbabilityEvidence(_)) => {
            // every proposal weight vanished: decide counterlegal vs unlucky
            let attainable = if kernel.domains.iter().all(|(_, d)| d.is_finite()) {
                let mut found = false;
                for u_s in enumerate_assignments(&kernel.domains) {
                    if event_holds(model, &u_s, star_endo, star_exo)? {
                        found = true;
                        break;
                    }
                }
                found
            } else {
                true
            };
            return Err(if attainable {
                Error::ZeroProbabilityEvidence(
                    "all importance weights are zero; the evidence may have zero probability"
                        .into(),
                )
            } else {
                Error::CounterlegalAntecedent(
                    "the antecedent is incompatible with the structural laws".into(),
                )
            });
        }
        Err(e) => return Err(e),
    };
    let ess = parts.ess();
    let mut warnings = Vec::new();
    if ess < ESS_WARN {
        warnings.push(format!(
            "effective sample size {ess:.1} below {ESS_WARN}; estimates may be unreliable"
        ));
    }
    let starred: Vec<String> = names.iter().map(|n| star(n)).collect();
    let joint = Distribution::Particles(parts);
    let marginal_star = joint.marginalise(&starred)?;
    Ok(CrossWorldPosterior {
        joint,
        marginal_star,
        provenance: Provenance::ImportanceSampling,
        ess: Some(ess),
        warnings,
    })
}

/// Abduction, marginalisation to U*, and prediction with the unmodified
/// laws. The result is over the starred targets.
pub fn backtracking_counterfactual(
    model: &CausalModel,
    prior: &Distribution,
    kernel: &Kernel,
    query: &BacktrackingQuery,
    backend: Backend,
    mc: McOptions,
) -> Result<(Distribution, CrossWorldPosterior)> {
    for t in &query.targets {
        if model.kind(t) != Some(VarKind::Endogenous) {
            return Err(Error::UnknownVariable(t.clone()));
        }
    }
    let posterior = cross_world_abduction(
        model,
        prior,
        kernel,
        &query.counterfactual_evidence,
        &query.factual_evidence,
        backend,
        mc,
    )?;
    let dist = predict(model, &posterior, &query.targets)?;
    Ok((dist, posterior))
}

/// Prediction step: pushes the U* posterior through the original laws.
pub fn predict(
    model: &CausalModel,
    posterior: &CrossWorldPosterior,
    targets: &[String],
) -> Result<Distribution> {
    let unstarred = posterior.marginal_star.rename(|v| unstar(v));
    let out = endogenous_distribution(model, &unstarred, targets)?;
    Ok(out.rename(|v| star(v)))
}

/// Most likely counterfactual world: exact argmax for tabular posteriors,
/// the mean for (possibly degenerate) Gaussians, the heaviest particle
/// otherwise. Keys carry the trailing `*`.
pub fn map_world(posterior: &CrossWorldPosterior) -> Assignment {
    match &posterior.marginal_star {
        Distribution::Tabular(t) => t.argmax(),
        Distribution::Gaussian(g) => g.to_assignment(&g.mean),
        Distribution::Particles(p) => p.argmax(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{DistanceSpec, DistanceTerm};
    use crate::scm::Domain;
    use crate::testutil::{assignment, chain_model, copy_model, firing_squad, standard_chain_prior};

    fn chain_kernel(sx2: f64, sy2: f64, sz2: f64) -> Kernel {
        Kernel::unchecked(
            KernelKind::GaussianKernel {
                vars: vec!["U_X".to_string(), "U_Y".to_string(), "U_Z".to_string()],
                sigma: DMatrix::from_diagonal(&DVector::from_row_slice(&[sx2, sy2, sz2])),
            },
            vec![
                ("U_X".to_string(), Domain::RealLine),
                ("U_Y".to_string(), Domain::RealLine),
                ("U_Z".to_string(), Domain::RealLine),
            ],
        )
    }

    fn stability_kernel(s: f64, theta: f64) -> Kernel {
        Kernel::unchecked(
            KernelKind::StabilityMixture {
                s,
                per_var_prior: vec![(
                    "U".to_string(),
                    vec![(Value::num(0.0), 1.0 - theta), (Value::num(1.0), theta)],
                )],
            },
            vec![(
                "U".to_string(),
                Domain::Finite(vec![Value::num(0.0), Value::num(1.0)]),
            )],
        )
    }

    #[test]
    fn joint_probability_firing_squad_stability() {
        let (model, prior) = firing_squad(0.5);
        let kernel = stability_kernel(0.9, 0.5);
        let p = backtracking_joint_probability(
            &model,
            &prior,
            &kernel,
            &assignment(&[("A", 0.0)]),
            &assignment(&[("A", 1.0)]),
        )
        .unwrap();
        assert!((p - 0.025).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn empty_events_are_certain() {
        let (model, prior) = firing_squad(0.5);
        let kernel = stability_kernel(0.9, 0.5);
        let p = backtracking_joint_probability(
            &model,
            &prior,
            &kernel,
            &Assignment::new(),
            &Assignment::new(),
        )
        .unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn chain_posterior_matches_closed_form() {
        // prior N(0,I), kernel diag(s², s², s²); with r = s_X²/s_Y² the
        // posterior over (U_X*, U_Z*) has mean (1 + r/(1+r), −1) and
        // variances (s_X²/(1+r), s_Z²), with U_Y* = 3 − U_X* deterministic
        let model = chain_model();
        let prior = standard_chain_prior();
        for (sx2, sy2, sz2) in [(1.0, 1.0, 1.0), (0.01, 1.0, 1.0), (100.0, 1.0, 1.0)] {
            let r = sx2 / sy2;
            let kernel = chain_kernel(sx2, sy2, sz2);
            let post = cross_world_abduction(
                &model,
                &prior,
                &kernel,
                &assignment(&[("Y", 3.0)]),
                &assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
                Backend::Auto,
                McOptions::default(),
            )
            .unwrap();
            assert_eq!(post.provenance, Provenance::LinearGaussian);
            let g = post
                .marginal_star
                .marginalise(&["U_X*".to_string(), ("U_Z*".to_string())])
                .unwrap();
            let g = g.as_gaussian().unwrap().clone();
            assert!((g.mean[0] - (1.0 + r / (1.0 + r))).abs() < 1e-9, "r={r}");
            assert!((g.mean[1] - (-1.0)).abs() < 1e-9);
            assert!((g.cov[(0, 0)] - sx2 / (1.0 + r)).abs() < 1e-9);
            assert!((g.cov[(1, 1)] - sz2).abs() < 1e-9);
            assert!(g.cov[(0, 1)].abs() < 1e-9);
            // deterministic relation U_Y* = 3 − U_X*
            let gy = post
                .marginal_star
                .marginalise(&["U_X*".to_string(), "U_Y*".to_string()])
                .unwrap();
            let gy = gy.as_gaussian().unwrap();
            let sum_var = gy.cov[(0, 0)] + 2.0 * gy.cov[(0, 1)] + gy.cov[(1, 1)];
            assert!(sum_var.abs() < 1e-9);
            assert!((gy.mean[0] + gy.mean[1] - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_prediction_matches_pushforward() {
        let model = chain_model();
        let prior = standard_chain_prior();
        let kernel = chain_kernel(1.0, 1.0, 1.0);
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
            counterfactual_evidence: assignment(&[("Y", 3.0)]),
            targets: vec!["X".to_string(), "Z".to_string()],
        };
        let (dist, _) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        let g = dist.as_gaussian().unwrap();
        assert_eq!(g.vars, vec!["X*", "Z*"]);
        assert!((g.mean[0] - 1.5).abs() < 1e-9);
        assert!((g.mean[1] - 3.5).abs() < 1e-9);
        assert!((g.cov[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((g.cov[(0, 1)] - 0.5).abs() < 1e-9);
        assert!((g.cov[(1, 1)] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn map_world_limits() {
        let model = chain_model();
        let prior = standard_chain_prior();
        for (sx2, expect) in [
            (1.0, [1.5, 1.5, -1.0]),
            (1e-6, [1.0, 2.0, -1.0]),
            (1e6, [2.0, 1.0, -1.0]),
        ] {
            let kernel = chain_kernel(sx2, 1.0, 1.0);
            let post = cross_world_abduction(
                &model,
                &prior,
                &kernel,
                &assignment(&[("Y", 3.0)]),
                &assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
                Backend::Auto,
                McOptions::default(),
            )
            .unwrap();
            let map = map_world(&post);
            for (name, want) in ["U_X*", "U_Y*", "U_Z*"].iter().zip(expect) {
                let got = map[*name].as_num().unwrap();
                assert!((got - want).abs() < 1e-3, "{name}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn firing_squad_backtracks_to_no_order() {
        let (model, prior) = firing_squad(0.5);
        let kernel = stability_kernel(0.9, 0.5);
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("C", 1.0), ("A", 1.0), ("B", 1.0), ("P", 1.0)]),
            counterfactual_evidence: assignment(&[("A", 0.0)]),
            targets: vec!["P".to_string()],
        };
        let (dist, post) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        let t = dist.as_tabular().unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].0[0], Value::num(0.0)); // prisoner alive
        let map = map_world(&post);
        assert_eq!(map["U*"], Value::num(0.0));
    }

    #[test]
    fn counterlegal_antecedent_detected() {
        let model = copy_model();
        let prior = Distribution::Gaussian(Gaussian::standard(vec!["U_X".to_string()]));
        let kernel = Kernel::unchecked(
            KernelKind::GaussianKernel {
                vars: vec!["U_X".to_string()],
                sigma: DMatrix::identity(1, 1),
            },
            vec![("U_X".to_string(), Domain::RealLine)],
        );
        let err = cross_world_abduction(
            &model,
            &prior,
            &kernel,
            &assignment(&[("Y", 1.0), ("X", 0.0)]),
            &Assignment::new(),
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CounterlegalAntecedent(_)), "{err}");
    }

    #[test]
    fn counterlegal_detected_on_finite_models() {
        // copy model over booleans: antecedent (X*=0, Y*=1) unattainable
        let bool_dom = || Domain::Finite(vec![Value::num(0.0), Value::num(1.0)]);
        let model = crate::scm::CausalModel::new(
            vec![("U".to_string(), bool_dom())],
            vec![("X".to_string(), bool_dom()), ("Y".to_string(), bool_dom())],
            vec![
                crate::scm::StructuralLaw {
                    target: "X".to_string(),
                    expr: crate::expr::Expr::var("U"),
                },
                crate::scm::StructuralLaw {
                    target: "Y".to_string(),
                    expr: crate::expr::Expr::var("X"),
                },
            ],
        )
        .unwrap();
        let prior = Distribution::Tabular(
            crate::tabular::Tabular::new(
                vec!["U".to_string()],
                vec![(vec![Value::num(0.0)], 0.5), (vec![Value::num(1.0)], 0.5)],
            )
            .unwrap(),
        );
        let kernel = Kernel::unchecked(
            KernelKind::PriorIndependent,
            vec![("U".to_string(), bool_dom())],
        );
        let err = cross_world_abduction(
            &model,
            &prior,
            &kernel,
            &assignment(&[("X", 0.0), ("Y", 1.0)]),
            &Assignment::new(),
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CounterlegalAntecedent(_)), "{err}");
    }

    #[test]
    fn shared_worlds_with_consistent_antecedent_reproduces_facts() {
        let model = chain_model();
        let prior = standard_chain_prior();
        let kernel = Kernel::unchecked(
            KernelKind::SharedWorlds,
            vec![
                ("U_X".to_string(), Domain::RealLine),
                ("U_Y".to_string(), Domain::RealLine),
                ("U_Z".to_string(), Domain::RealLine),
            ],
        );
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
            counterfactual_evidence: assignment(&[("Y", 2.0)]),
            targets: vec!["X".to_string(), "Z".to_string()],
        };
        let (dist, _) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        let g = dist.as_gaussian().unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-9);
        assert!((g.mean[1] - 2.0).abs() < 1e-9);
        assert!(g.cov.amax() < 1e-9);
    }

    #[test]
    fn importance_sampler_agrees_with_analytic() {
        let model = chain_model();
        let prior = standard_chain_prior();
        let kernel = chain_kernel(1.0, 1.0, 1.0);
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("X", 1.0), ("Y", 2.0), ("Z", 2.0)]),
            counterfactual_evidence: assignment(&[("Y", 3.0)]),
            targets: vec!["X".to_string(), "Z".to_string()],
        };
        let (dist, post) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::MonteCarlo,
            McOptions {
                samples: 50_000,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!(post.provenance, Provenance::ImportanceSampling);
        let ess = post.ess.unwrap();
        assert!(ess > 1000.0, "ess {ess}");
        // three-standard-error agreement on first and second moments
        let se = |v: f64| 3.0 * (v / ess).sqrt();
        let mx = dist.mean("X*").unwrap();
        assert!((mx - 1.5).abs() < se(0.5), "mean X* {mx}");
        let mz = dist.mean("Z*").unwrap();
        assert!((mz - 3.5).abs() < se(1.5), "mean Z* {mz}");
        let vx = dist.covariance("X*", "X*").unwrap();
        assert!((vx - 0.5).abs() < se(2.0 * 0.5 * 0.5).max(0.02), "var X* {vx}");
        let cxz = dist.covariance("X*", "Z*").unwrap();
        assert!((cxz - 0.5).abs() < 0.05, "cov {cxz}");
    }

    #[test]
    fn finite_importance_sampler_matches_exact() {
        let (model, prior) = firing_squad(0.5);
        let kernel = stability_kernel(0.7, 0.5);
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("P", 1.0)]),
            counterfactual_evidence: assignment(&[("A", 0.0)]),
            targets: vec!["P".to_string()],
        };
        let (exact, _) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::Exact,
            McOptions::default(),
        )
        .unwrap();
        let (approx, post) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::MonteCarlo,
            McOptions {
                samples: 40_000,
                seed: 3,
            },
        )
        .unwrap();
        let pe = exact
            .as_tabular()
            .unwrap()
            .mass_of(&[("P*".to_string(), Value::num(0.0))].into_iter().collect())
            .unwrap();
        let pa = match &approx {
            Distribution::Particles(p) => {
                let mut acc = 0.0;
                for (vals, w) in &p.particles {
                    if vals[0] == Value::num(0.0) {
                        acc += w;
                    }
                }
                acc
            }
            _ => panic!("expected particles"),
        };
        let ess = post.ess.unwrap();
        assert!((pe - pa).abs() < 3.0 * (pe * (1.0 - pe) / ess).sqrt() + 0.01);
    }

    #[test]
    fn posterior_pairs_satisfy_the_laws_in_both_worlds() {
        let (model, prior) = firing_squad(0.5);
        let kernel = stability_kernel(0.9, 0.5);
        let post = cross_world_abduction(
            &model,
            &prior,
            &kernel,
            &assignment(&[("A", 0.0)]),
            &assignment(&[("P", 1.0)]),
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        let t = post.joint.as_tabular().unwrap();
        for i in 0..t.rows.len() {
            let (u, u_s) = split_worlds(&t.row_assignment(i));
            let v = model.solve(&u).unwrap();
            let v_s = model.solve(&u_s).unwrap();
            assert_eq!(v["P"], Value::num(1.0));
            assert_eq!(v_s["A"], Value::num(0.0));
        }
    }

    #[test]
    fn factual_marginal_matches_plain_abduction_for_symmetric_kernels() {
        let (model, prior) = firing_squad(0.6);
        let kernel = stability_kernel(0.8, 0.6);
        let post = cross_world_abduction(
            &model,
            &prior,
            &kernel,
            &Assignment::new(),
            &assignment(&[("P", 1.0)]),
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        let factual = post.joint.marginalise(&["U".to_string()]).unwrap();
        let direct = crate::interventional::abduct(&model, &prior, &assignment(&[("P", 1.0)]))
            .unwrap();
        let tv = factual
            .as_tabular()
            .unwrap()
            .tv_distance(direct.as_tabular().unwrap())
            .unwrap();
        assert!(tv < 1e-12);
    }

    #[test]
    fn distance_kernel_backtracking_on_finite_domain() {
        let (model, prior) = firing_squad(0.5);
        let kernel = Kernel::unchecked(
            KernelKind::DistanceBased(DistanceSpec::PerVariable(vec![(
                "U".to_string(),
                DistanceTerm::Mismatch { weight: 2.0 },
            )])),
            vec![(
                "U".to_string(),
                Domain::Finite(vec![Value::num(0.0), Value::num(1.0)]),
            )],
        );
        let q = BacktrackingQuery {
            factual_evidence: assignment(&[("P", 1.0)]),
            counterfactual_evidence: assignment(&[("A", 0.0)]),
            targets: vec!["P".to_string()],
        };
        let (dist, _) = backtracking_counterfactual(
            &model,
            &prior,
            &kernel,
            &q,
            Backend::Auto,
            McOptions::default(),
        )
        .unwrap();
        // A*=0 forces U*=0, so the prisoner lives with certainty
        let t = dist.as_tabular().unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].0[0], Value::num(0.0));
    }
}
