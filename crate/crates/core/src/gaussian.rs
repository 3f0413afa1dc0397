//! Multivariate Gaussians with first-class degenerate (rank-deficient)
//! covariance, conditioned via pseudoinverse.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scm::Assignment;
use crate::value::Value;

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const PSD_SLACK: f64 = -1e-10;
/// Relative eigenvalue cutoff separating deterministic directions from
/// genuine variance.
pub const RANK_TOL: f64 = 1e-10;
/// Relative tolerance for deciding whether a linear constraint is
/// consistent with a (possibly degenerate) Gaussian.
pub const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub vars: Vec<String>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(vars: Vec<String>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.len() != vars.len() || cov.nrows() != vars.len() || cov.ncols() != vars.len() {
            return Err(Error::DomainMismatch(
                "gaussian dimension does not match variable count".into(),
            ));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..cov.nrows() {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::DomainMismatch(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let sym = symmetrize(&cov);
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < PSD_SLACK * scale) {
            return Err(Error::DomainMismatch(
                "covariance has a significantly negative eigenvalue".into(),
            ));
        }
        Ok(Gaussian {
            vars,
            mean,
            cov: sym,
        })
    }

    pub fn standard(vars: Vec<String>) -> Self {
        let n = vars.len();
        Gaussian {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n),
            vars,
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn marginal(&self, keep: &[String]) -> Result<Gaussian> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|v| self.index_of(v))
            .collect::<Result<_>>()?;
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let mut cov = DMatrix::zeros(idx.len(), idx.len());
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                cov[(r, c)] = self.cov[(i, j)];
            }
        }
        Ok(Gaussian {
            vars: keep.to_vec(),
            mean,
            cov,
        })
    }

    /// Pushforward through x ↦ A·x + b.
    pub fn affine_map(&self, a: &DMatrix<f64>, b: &DVector<f64>, vars: Vec<String>) -> Gaussian {
        let mean = a * &self.mean + b;
        let cov = symmetrize(&(a * &self.cov * a.transpose()));
        Gaussian { vars, mean, cov }
    }

    /// Independent joint with another Gaussian over disjoint variables.
    pub fn product(&self, other: &Gaussian) -> Result<Gaussian> {
        for v in &other.vars {
            if self.vars.contains(v) {
                return Err(Error::OverlappingVariables(v.clone()));
            }
        }
        let n = self.dim() + other.dim();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        mean.rows_mut(0, self.dim()).copy_from(&self.mean);
        mean.rows_mut(self.dim(), other.dim()).copy_from(&other.mean);
        cov.view_mut((0, 0), (self.dim(), self.dim())).copy_from(&self.cov);
        cov.view_mut((self.dim(), self.dim()), (other.dim(), other.dim()))
            .copy_from(&other.cov);
        let mut vars = self.vars.clone();
        vars.extend(other.vars.iter().cloned());
        Ok(Gaussian { vars, mean, cov })
    }

    /// Exact conditional on the linear equality A·x = b, degenerate inputs
    /// and outputs allowed. Errors when the constraint has probability zero
    /// (inconsistent with the deterministic directions).
    pub fn condition_linear(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Gaussian> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(Error::DomainMismatch(
                "constraint dimensions do not match distribution".into(),
            ));
        }
        if a.nrows() == 0 {
            return Ok(self.clone());
        }
        let s = symmetrize(&(a * &self.cov * a.transpose()));
        let eig = s.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let cut = RANK_TOL * lmax.max(1.0);
        // pseudoinverse of S
        let mut inv_l = DMatrix::zeros(s.nrows(), s.nrows());
        for i in 0..s.nrows() {
            if eig.eigenvalues[i] > cut {
                inv_l[(i, i)] = 1.0 / eig.eigenvalues[i];
            }
        }
        let s_pinv = &eig.eigenvectors * inv_l * eig.eigenvectors.transpose();
        let resid = b - a * &self.mean;
        // consistency: residual must lie in range(S)
        let proj = &s * &s_pinv * &resid;
        let scale = 1.0 + resid.amax();
        if (&proj - &resid).amax() > CONSISTENCY_TOL * scale {
            return Err(Error::ZeroProbabilityEvidence(
                "linear constraint inconsistent with the distribution".into(),
            ));
        }
        let gain = &self.cov * a.transpose() * s_pinv;
        let mean = &self.mean + &gain * resid;
        let cov = symmetrize(&(&self.cov - gain * a * &self.cov));
        Ok(Gaussian {
            vars: self.vars.clone(),
            mean,
            cov,
        })
    }

    /// Condition on point values for some coordinates.
    pub fn condition_values(&self, evidence: &[(String, f64)]) -> Result<Gaussian> {
        let mut a = DMatrix::zeros(evidence.len(), self.dim());
        let mut b = DVector::zeros(evidence.len());
        for (r, (name, val)) in evidence.iter().enumerate() {
            a[(r, self.index_of(name)?)] = 1.0;
            b[r] = *val;
        }
        self.condition_linear(&a, &b)
    }

    /// Density (nondegenerate only). Degenerate covariance is an error,
    /// since a density w.r.t. Lebesgue measure does not exist.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        let eig = self.cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if eig.eigenvalues.iter().any(|&l| l <= RANK_TOL * lmax.max(1.0)) {
            return Err(Error::UnsupportedBackend(
                "density of a degenerate gaussian".into(),
            ));
        }
        let d = x - &self.mean;
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for i in 0..self.dim() {
            let proj = eig.eigenvectors.column(i).dot(&d);
            quad += proj * proj / eig.eigenvalues[i];
            logdet += eig.eigenvalues[i].ln();
        }
        let logp =
            -0.5 * (quad + logdet + self.dim() as f64 * (2.0 * std::f64::consts::PI).ln());
        Ok(logp.exp())
    }

    /// Deterministic sampling: eigen square root of the covariance applied
    /// to standard normals from the counter-based generator.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let eig = self.cov.clone().symmetric_eigen();
        let mut root = eig.eigenvectors.clone();
        for i in 0..self.dim() {
            let s = eig.eigenvalues[i].max(0.0).sqrt();
            root.column_mut(i).scale_mut(s);
        }
        let mut r = rng(seed, 0);
        (0..n)
            .map(|_| {
                let z = DVector::from_iterator(
                    self.dim(),
                    (0..self.dim()).map(|_| r.sample::<f64, _>(StandardNormal)),
                );
                &self.mean + &root * z
            })
            .collect()
    }

    pub fn sample_assignments(&self, n: usize, seed: u64) -> Vec<Assignment> {
        self.sample(n, seed)
            .into_iter()
            .map(|x| self.to_assignment(&x))
            .collect()
    }

    pub fn to_assignment(&self, x: &DVector<f64>) -> Assignment {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), Value::Num(x[i])))
            .collect()
    }

    /// Linear equalities v·x = v·μ that hold with probability one
    /// (unit eigenvectors of near-zero eigenvalues).
    pub fn deterministic_constraints(&self) -> Vec<(DVector<f64>, f64)> {
        let eig = self.cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let cut = RANK_TOL * lmax.max(1.0);
        let mut out = Vec::new();
        for i in 0..self.dim() {
            if eig.eigenvalues[i] <= cut {
                let v: DVector<f64> = eig.eigenvectors.column(i).into();
                let rhs = v.dot(&self.mean);
                out.push((v, rhs));
            }
        }
        out
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn conditioning_matches_closed_form() {
        // (X,Y) with Y = X + e: mean 0, cov [[1,1],[1,2]]; condition Y=3
        let g = Gaussian::new(
            names(&["X", "Y"]),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let c = g.condition_values(&[("Y".into(), 3.0)]).unwrap();
        assert_abs_diff_eq!(c.mean[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cov[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cov[(1, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_conditioning_and_consistency() {
        // point mass after conditioning identity on 2 dims
        let g = Gaussian::standard(names(&["a", "b"]));
        let c = g
            .condition_values(&[("a".into(), 1.0), ("b".into(), -1.0)])
            .unwrap();
        assert_abs_diff_eq!(c.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cov.amax(), 0.0, epsilon = 1e-12);
        // further consistent conditioning is fine
        assert!(c.condition_values(&[("a".into(), 1.0)]).is_ok());
        // inconsistent conditioning is a zero-probability event
        assert!(c.condition_values(&[("a".into(), 2.0)]).is_err());
    }

    #[test]
    fn sampling_moments() {
        let g = Gaussian::standard(names(&["x"]));
        let xs = g.sample(100_000, 42);
        let mean: f64 = xs.iter().map(|v| v[0]).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean} out of CLT bound");
        assert_eq!(g.sample(5, 1), g.sample(5, 1));
    }

    #[test]
    fn deterministic_constraints_found() {
        // Y = 3 - X encoded as a degenerate 2-dim gaussian
        let g = Gaussian::new(
            names(&["X", "Y"]),
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]),
        )
        .unwrap();
        let cons = g.deterministic_constraints();
        assert_eq!(cons.len(), 1);
        let (v, rhs) = &cons[0];
        // constraint direction is (1,1)/sqrt(2): X + Y = 3
        assert_abs_diff_eq!((v[0] - v[1]).abs(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rhs / v[0], 3.0, epsilon = 1e-10);
    }
}
