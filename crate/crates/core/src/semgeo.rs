//! Geometry of the identity-preserving perturbation set.
//!
//! A perturbation `δ ∈ R^N` is expressed in the coordinates of the semantic
//! directions and moves a latent code by `η = Vᵀδ`. Its size is measured by
//! the anisotropic norm `‖δ‖_{M,2} = sqrt(δᵀMδ)` with a diagonal
//! `M = diag(ε_i^{-2})`, so the admissible set is the axis-aligned ellipsoid
//! whose semi-axes are the per-attribute budgets `ε_i`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::purpose_stream;

const UNIT_NORM_TOL: f64 = 1e-9;

/// Expansion cap for the bisection bracket on `h`.
const MAX_BRACKET_DOUBLINGS: usize = 200;

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidValue(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// `N × d` matrix of unit-norm attribute directions with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBasis {
    directions: Matrix,
    attribute_names: Vec<String>,
}

impl SemanticBasis {
    /// Validates that every row is unit norm (within 1e-9), `d ≥ N ≥ 1` and
    /// the names are distinct.
    pub fn new(directions: Matrix, attribute_names: Vec<String>) -> Result<Self> {
        Self::check_shape(&directions, &attribute_names)?;
        for i in 0..directions.rows() {
            let n = linalg::norm2(directions.row(i));
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidValue(format!(
                    "direction {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self {
            directions,
            attribute_names,
        })
    }

    /// Renormalizes every row to unit norm. Returns the basis together with
    /// the largest absolute norm adjustment that was applied.
    pub fn from_rows_normalized(
        mut directions: Matrix,
        attribute_names: Vec<String>,
    ) -> Result<(Self, f64)> {
        Self::check_shape(&directions, &attribute_names)?;
        let mut max_adjust: f64 = 0.0;
        for i in 0..directions.rows() {
            let row = directions.row_mut(i);
            let n = linalg::norm2(row);
            if n == 0.0 {
                return Err(Error::InvalidValue(format!("direction {i} is the zero vector")));
            }
            max_adjust = max_adjust.max((n - 1.0).abs());
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok((
            Self {
                directions,
                attribute_names,
            },
            max_adjust,
        ))
    }

    /// Random orthonormal basis: a seeded Gaussian `N × d` matrix
    /// orthonormalized row by row (modified Gram–Schmidt, i.e. the Q factor
    /// of its QR decomposition).
    pub fn random_orthonormal(
        num_attributes: usize,
        latent_dim: usize,
        seed: u64,
        attribute_names: Vec<String>,
    ) -> Result<Self> {
        if num_attributes == 0 || latent_dim < num_attributes {
            return Err(Error::Config(format!(
                "need 1 <= N <= d, got N = {num_attributes}, d = {latent_dim}"
            )));
        }
        let mut rng = purpose_stream(seed, "basis");
        let mut m = Matrix::zeros(num_attributes, latent_dim);
        let mut i = 0;
        while i < num_attributes {
            let mut v: Vec<f64> = (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect();
            for j in 0..i {
                let proj = linalg::dot(m.row(j), &v);
                linalg::axpy(-proj, m.row(j), &mut v);
            }
            let n = linalg::norm2(&v);
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            m.row_mut(i).copy_from_slice(&v);
            i += 1;
        }
        Self::new(m, attribute_names)
    }

    fn check_shape(directions: &Matrix, names: &[String]) -> Result<()> {
        let n = directions.rows();
        if n == 0 {
            return Err(Error::Config("basis needs at least one direction".into()));
        }
        if directions.cols() < n {
            return Err(Error::Config(format!(
                "latent dimension {} is smaller than the number of directions {n}",
                directions.cols()
            )));
        }
        check_len("attribute names", n, names.len())?;
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::Config("attribute names must be distinct".into()));
        }
        ensure_finite("directions", directions.as_flat())
    }

    pub fn num_attributes(&self) -> usize {
        self.directions.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn directions(&self) -> &Matrix {
        &self.directions
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    /// `η = Vᵀδ` on raw coefficients.
    pub fn lift(&self, coeffs: &[f64]) -> Vec<f64> {
        self.directions.matvec_t(coeffs)
    }

    /// `V g`: pulls a latent-space gradient back to attribute coordinates.
    pub fn pull_back(&self, latent_grad: &[f64]) -> Vec<f64> {
        self.directions.matvec(latent_grad)
    }

    /// `w + Vᵀδ` on raw slices.
    pub fn displace(&self, w: &[f64], coeffs: &[f64]) -> Vec<f64> {
        let mut out = w.to_vec();
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                linalg::axpy(c, self.directions.row(i), &mut out);
            }
        }
        out
    }

    /// Basis with only the given attribute.
    pub fn restrict(&self, index: usize) -> Result<Self> {
        if index >= self.num_attributes() {
            return Err(Error::Config(format!(
                "attribute index {index} out of range for {} attributes",
                self.num_attributes()
            )));
        }
        Ok(Self {
            directions: Matrix::from_flat(1, self.latent_dim(), self.directions.row(index).to_vec()),
            attribute_names: vec![self.attribute_names[index].clone()],
        })
    }
}

/// Per-attribute maximum latent displacements `ε_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSpec {
    epsilons: Vec<f64>,
}

impl BudgetSpec {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::InvalidBudget("no attribute budgets given".into()));
        }
        if let Some((i, e)) = epsilons
            .iter()
            .enumerate()
            .find(|(_, e)| !(e.is_finite() && **e > 0.0))
        {
            return Err(Error::InvalidBudget(format!(
                "epsilon[{i}] = {e} must be positive and finite"
            )));
        }
        Ok(Self { epsilons })
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }
}

/// Diagonal positive-definite `M`, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetMatrix {
    diag: Vec<f64>,
    global_scale: f64,
}

/// Result of projecting onto the ellipsoid: the point and the KKT multiplier
/// (zero for interior points).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    pub multiplier: f64,
}

impl BudgetMatrix {
    /// Builds `M = diag(ε_i^{-2})` with a unit global scale.
    pub fn from_spec(spec: &BudgetSpec) -> Self {
        Self {
            diag: spec.epsilons.iter().map(|e| 1.0 / (e * e)).collect(),
            global_scale: 1.0,
        }
    }

    /// Directly from diagonal entries (must be positive and finite).
    pub fn from_diag(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidBudget(
                "diagonal entries must be positive and finite".into(),
            ));
        }
        Ok(Self {
            diag,
            global_scale: 1.0,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            diag: vec![1.0; n],
            global_scale: 1.0,
        }
    }

    /// `M' = M / ε²`, so that `‖δ‖_{M'} ≤ 1 ⇔ ‖δ‖_M ≤ ε`.
    pub fn rescale(&self, eps_global: f64) -> Result<Self> {
        if !(eps_global.is_finite() && eps_global > 0.0) {
            return Err(Error::InvalidBudget(format!(
                "global budget scale {eps_global} must be positive and finite"
            )));
        }
        let f = 1.0 / (eps_global * eps_global);
        let diag: Vec<f64> = self.diag.iter().map(|d| d * f).collect();
        if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidBudget(format!(
                "global budget scale {eps_global} under/overflows the budget matrix"
            )));
        }
        Ok(Self {
            diag,
            global_scale: self.global_scale * eps_global,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn global_scale(&self) -> f64 {
        self.global_scale
    }

    /// Semi-axis lengths `1/sqrt(diag_i)` (that is `ε_i · ε`).
    pub fn semi_axes(&self) -> Vec<f64> {
        self.diag.iter().map(|d| 1.0 / d.sqrt()).collect()
    }

    pub fn restrict(&self, index: usize) -> Result<Self> {
        let d = *self.diag.get(index).ok_or_else(|| {
            Error::Config(format!("attribute index {index} out of range for {} attributes", self.dim()))
        })?;
        Ok(Self {
            diag: vec![d],
            global_scale: self.global_scale,
        })
    }

    /// `δᵀMδ`
    pub fn quad(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.diag).map(|(v, m)| v * v * m).sum()
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.quad(x).sqrt()
    }

    /// Dual norm `sqrt(aᵀM^{-1}a)`.
    pub fn dual_norm(&self, a: &[f64]) -> f64 {
        a.iter().zip(&self.diag).map(|(v, m)| v * v / m).sum::<f64>().sqrt()
    }

    /// `M^{-1} a`
    pub fn apply_inverse(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(&self.diag).map(|(v, m)| v / m).collect()
    }

    /// Root function of the projection multiplier:
    /// `h(λ) = Σ δ_i² m_i / (1 + λ m_i)² − 1`.
    pub fn h(&self, lambda: f64, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.diag)
            .map(|(v, m)| {
                let s = 1.0 + lambda * m;
                v * v * m / (s * s)
            })
            .sum::<f64>()
            - 1.0
    }

    /// Euclidean projection onto `{x : xᵀMx ≤ 1}`.
    ///
    /// Interior points are returned untouched. Otherwise the multiplier is
    /// the positive root of the strictly decreasing `h`, bracketed by
    /// doubling from `[0, 1]` and bisected to machine precision, and the point is
    /// `(I + λM)^{-1} x`. The upper bracket end (where `h ≤ 0`) is returned
    /// so the result never lies outside the ellipsoid.
    pub fn project(&self, x: &[f64]) -> Result<Projection> {
        check_len("projection input", self.dim(), x.len())?;
        ensure_finite("delta", x)?;
        if self.quad(x) <= 1.0 {
            return Ok(Projection {
                point: x.to_vec(),
                multiplier: 0.0,
            });
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.h(hi, x) >= 0.0 {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
                return Err(Error::Numerical(
                    "failed to bracket the projection multiplier".into(),
                ));
            }
        }
        // Bisect down to adjacent doubles; h is cheap for small N.
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.h(mid, x) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = hi;
        let point = x
            .iter()
            .zip(&self.diag)
            .map(|(v, m)| v / (1.0 + lambda * m))
            .collect();
        Ok(Projection {
            point,
            multiplier: lambda,
        })
    }

    /// Uniform sample from the ellipsoid: a uniform point of the unit ball
    /// (Gaussian direction, radius `U^{1/N}`) deformed by the Cholesky factor
    /// of `M^{-1}`, which is `diag(1/sqrt(m_i))`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let dir: Vec<f64> = loop {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = linalg::norm2(&g);
            if norm > 0.0 {
                break g.into_iter().map(|v| v / norm).collect();
            }
        };
        let u: f64 = rng.random();
        let radius = u.powf(1.0 / n as f64);
        dir.iter()
            .zip(&self.diag)
            .map(|(v, m)| radius * v / m.sqrt())
            .collect()
    }
}

/// Semantic perturbation coefficients `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation(Vec<f64>);

impl Perturbation {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        ensure_finite("delta", &coeffs)?;
        Ok(Self(coeffs))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// A latent code `w ∈ R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite("latent code", &values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn build_budget_matrix(spec: &BudgetSpec) -> BudgetMatrix {
    BudgetMatrix::from_spec(spec)
}

pub fn rescale_budget(m: &BudgetMatrix, eps_global: f64) -> Result<BudgetMatrix> {
    m.rescale(eps_global)
}

pub fn m_norm(delta: &Perturbation, m: &BudgetMatrix) -> Result<f64> {
    check_len("m_norm", m.dim(), delta.len())?;
    Ok(m.norm(delta.as_slice()))
}

pub fn to_latent(delta: &Perturbation, basis: &SemanticBasis) -> Result<Vec<f64>> {
    check_len("to_latent", basis.num_attributes(), delta.len())?;
    Ok(basis.lift(delta.as_slice()))
}

/// Latent code displaced by a perturbation, `w + Vᵀδ`.
pub fn perturb(w: &LatentCode, delta: &Perturbation, basis: &SemanticBasis) -> Result<LatentCode> {
    check_len("perturb: latent code", basis.latent_dim(), w.len())?;
    check_len("perturb: delta", basis.num_attributes(), delta.len())?;
    Ok(LatentCode(basis.displace(w.as_slice(), delta.as_slice())))
}

pub fn h_eval(lambda: f64, delta: &Perturbation, m: &BudgetMatrix) -> Result<f64> {
    check_len("h_eval", m.dim(), delta.len())?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Domain(format!("lambda = {lambda} must be non-negative")));
    }
    Ok(m.h(lambda, delta.as_slice()))
}

pub fn project_to_ellipsoid(delta: &Perturbation, m: &BudgetMatrix) -> Result<Perturbation> {
    Ok(Perturbation(m.project(delta.as_slice())?.point))
}

pub fn sample_uniform_ellipsoid<R: Rng + ?Sized>(m: &BudgetMatrix, rng: &mut R) -> Perturbation {
    Perturbation(m.sample_uniform(rng))
}
