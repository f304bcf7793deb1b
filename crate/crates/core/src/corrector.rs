//! Ornstein-Uhlenbeck generator on quadratic functionals, closed-form
//! Poisson inversion and the correctors of the perturbed test function
//! `φ(u) = ⟨u, h⟩`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::{invariant_covariance, CovarianceSpec, DiagonalOperator, InvariantMeasure};
use crate::spectral::{advect, advect_sparse, ModeBasis, SpectralField};

const SYMMETRY_TOL: f64 = 1e-12;
const CENTER_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const RESIDUAL_PROBES: usize = 100;

/// `ψ(y) = a0 + ⟨a1, y⟩ + ⟨y, A2 y⟩`.
#[derive(Clone, Debug)]
pub struct QuadraticFunctional {
    basis: Arc<ModeBasis>,
    pub a0: f64,
    pub a1: DVector<f64>,
    pub a2: DMatrix<f64>,
}

impl QuadraticFunctional {
    pub fn new(basis: &Arc<ModeBasis>, a0: f64, a1: DVector<f64>, a2: DMatrix<f64>) -> Result<Self> {
        let n = basis.dim();
        if a1.len() != n || a2.nrows() != n || a2.ncols() != n {
            return Err(Error::InvalidArgument(format!("quadratic functional must have dimension {n}")));
        }
        if !a0.is_finite() || a1.iter().chain(a2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quadratic functional coefficients".into()));
        }
        let asym = (&a2 - a2.transpose()).amax();
        if asym > SYMMETRY_TOL * a2.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("A2 is not symmetric ({asym:.2e})")));
        }
        Ok(Self { basis: basis.clone(), a0, a1, a2 })
    }

    pub fn zero(basis: &Arc<ModeBasis>) -> Self {
        let n = basis.dim();
        Self { basis: basis.clone(), a0: 0.0, a1: DVector::zeros(n), a2: DMatrix::zeros(n, n) }
    }

    /// `y ↦ ⟨y, a⟩`.
    pub fn linear(a: &SpectralField) -> Self {
        let mut f = Self::zero(a.basis());
        f.a1 = DVector::from_column_slice(a.coeffs());
        f
    }

    /// `y ↦ ‖y‖²`.
    pub fn norm_sq(basis: &Arc<ModeBasis>) -> Self {
        let mut f = Self::zero(basis);
        f.a2 = DMatrix::identity(basis.dim(), basis.dim());
        f
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn eval(&self, y: &SpectralField) -> f64 {
        let v = DVector::from_column_slice(y.coeffs());
        self.a0 + self.a1.dot(&v) + v.dot(&(&self.a2 * &v))
    }

    /// `∫ ψ dμ = a0 + Tr(Q_∞ A2)`.
    pub fn mean(&self, mu: &InvariantMeasure) -> f64 {
        self.a0 + trace_product(mu.covariance(), &self.a2)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { basis: self.basis.clone(), a0: s * self.a0, a1: &self.a1 * s, a2: &self.a2 * s }
    }

    pub fn add(&self, other: &QuadraticFunctional) -> Self {
        Self {
            basis: self.basis.clone(),
            a0: self.a0 + other.a0,
            a1: &self.a1 + &other.a1,
            a2: &self.a2 + &other.a2,
        }
    }
}

/// `Tr(Q M)` for a covariance `Q` and a full matrix `M`.
pub fn trace_product(q: &CovarianceSpec, m: &DMatrix<f64>) -> f64 {
    let (support, block) = q.block();
    let mut t = 0.0;
    for (i, &a) in support.iter().enumerate() {
        for (j, &b) in support.iter().enumerate() {
            t += block[(i, j)] * m[(b, a)];
        }
    }
    t
}

/// `L ψ(y) = ⟨C y, a1 + 2 A2 y⟩ + Tr(Q A2)`.
pub fn ou_generator_apply(
    c_eff: &DiagonalOperator,
    q: &CovarianceSpec,
    psi: &QuadraticFunctional,
    y: &SpectralField,
) -> Result<f64> {
    c_eff.check_basis(y.basis())?;
    c_eff.check_basis(&psi.basis)?;
    q.check_basis(&psi.basis)?;
    let v = DVector::from_column_slice(y.coeffs());
    let cy = DVector::from_iterator(v.len(), v.iter().zip(c_eff.eigenvalues()).map(|(a, e)| a * e));
    let grad = &psi.a1 + (&psi.a2 * &v) * 2.0;
    Ok(cy.dot(&grad) + trace_product(q, &psi.a2))
}

/// Subtracts the `μ`-mean.
pub fn center(psi: &QuadraticFunctional, mu: &InvariantMeasure) -> QuadraticFunctional {
    let mut out = psi.clone();
    out.a0 -= psi.mean(mu);
    out
}

/// Solves `L φ = −ψ` for a centered quadratic `ψ`, normalised so that
/// `∫ φ dμ = 0`.
pub fn poisson_solve(
    c_eff: &DiagonalOperator,
    q: &CovarianceSpec,
    psi: &QuadraticFunctional,
) -> Result<QuadraticFunctional> {
    c_eff.check_basis(&psi.basis)?;
    let mu = invariant_covariance(c_eff, q)?;
    let tr = trace_product(mu.covariance(), &psi.a2);
    let mean = psi.a0 + tr;
    if mean.abs() > CENTER_TOL * psi.a0.abs().max(tr.abs()).max(1.0) {
        return Err(Error::InvalidArgument(format!("functional is not centered (mean {mean:.3e})")));
    }
    let lam = c_eff.rates();
    let n = lam.len();
    let a1 = DVector::from_iterator(n, psi.a1.iter().zip(&lam).map(|(a, l)| a / l));
    let a2 = DMatrix::from_fn(n, n, |i, j| psi.a2[(i, j)] / (lam[i] + lam[j]));
    let mut phi = QuadraticFunctional { basis: psi.basis.clone(), a0: 0.0, a1, a2 };
    phi.a0 = -trace_product(mu.covariance(), &phi.a2);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for _ in 0..RESIDUAL_PROBES {
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = SpectralField::from_vec_unchecked(psi.basis.clone(), y);
        let p = psi.eval(&y);
        let r = ou_generator_apply(c_eff, q, &phi, &y)? + p;
        if r.abs() > RESIDUAL_TOL * (1.0 + p.abs()) {
            return Err(Error::NumericFailure(format!("Poisson residual {r:.3e}")));
        }
    }
    Ok(phi)
}

/// `φ₁(u, y) = ⟨b((−C_ε)^{-1} y, u), h⟩`.
pub fn phi1_eval(c_eps: &DiagonalOperator, u: &SpectralField, h: &SpectralField, y: &SpectralField) -> Result<f64> {
    c_eps.check_basis(u.basis())?;
    u.check_same_basis(h)?;
    u.check_same_basis(y)?;
    Ok(advect(&c_eps.neg_inverse_apply(y), u).dot(h))
}

/// Gradient in `y`: `D_y φ₁(u)·v = ⟨b((−C_ε)^{-1} v, u), h⟩ = ⟨a, v⟩`, with
/// `a_j = ⟨b(e_j, u), h⟩ / λ_j`.
pub fn phi1_grad_y(c_eps: &DiagonalOperator, u: &SpectralField, h: &SpectralField) -> SpectralField {
    let basis = u.basis();
    let lam = c_eps.rates();
    let coeffs = (0..basis.dim())
        .map(|j| advect(&SpectralField::basis_element(basis, j), u).dot(h) / lam[j])
        .collect();
    SpectralField::from_vec_unchecked(basis.clone(), coeffs)
}

/// Gradient in `u`: `D_u φ₁(y)·v = ⟨b((−C_ε)^{-1} y, v), h⟩`, evaluated
/// coefficientwise.
pub fn phi1_grad_u(c_eps: &DiagonalOperator, y: &SpectralField, h: &SpectralField) -> SpectralField {
    let basis = y.basis();
    let g = c_eps.neg_inverse_apply(y);
    let coeffs = (0..basis.dim())
        .map(|j| advect(&g, &SpectralField::basis_element(basis, j)).dot(h))
        .collect();
    SpectralField::from_vec_unchecked(basis.clone(), coeffs)
}

/// `φ₁(u, ·)` as a linear functional of `y`.
pub fn phi1_functional(c_eps: &DiagonalOperator, u: &SpectralField, h: &SpectralField) -> QuadraticFunctional {
    QuadraticFunctional::linear(&phi1_grad_y(c_eps, u, h))
}

/// `ψ_u(w) = ⟨b((−C_ε)^{-1} w, b(w, u)), h⟩ + ⟨b((−C_ε)^{-1} b(w, w), u), h⟩`.
pub fn psi_u_eval(c_eps: &DiagonalOperator, u: &SpectralField, h: &SpectralField, w: &SpectralField) -> Result<f64> {
    c_eps.check_basis(u.basis())?;
    u.check_same_basis(h)?;
    u.check_same_basis(w)?;
    let first = advect(&c_eps.neg_inverse_apply(w), &advect(w, u)).dot(h);
    let second = advect(&c_eps.neg_inverse_apply(&advect(w, w)), u).dot(h);
    Ok(first + second)
}

/// `ψ_u` as a quadratic functional: `A2 = sym(T1 + T2)` with
/// `T1_ij = ⟨b(e_i, b(e_j, u)), h⟩/λ_i` and `T2_ij = ⟨b(e_i, e_j), a⟩`,
/// `a = D_y φ₁(u)`.
pub fn psi_u_functional(c_eps: &DiagonalOperator, u: &SpectralField, h: &SpectralField) -> Result<QuadraticFunctional> {
    c_eps.check_basis(u.basis())?;
    u.check_same_basis(h)?;
    let basis = u.basis();
    let n = basis.dim();
    let lam = c_eps.rates();
    let bu: Vec<SpectralField> = (0..n).map(|j| advect(&SpectralField::basis_element(basis, j), u)).collect();
    let a = phi1_grad_y(c_eps, u, h);
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        let ei = SpectralField::basis_element(basis, i);
        for j in 0..n {
            t[(i, j)] = advect(&ei, &bu[j]).dot(h) / lam[i];
        }
        for j in 0..n {
            let b = advect_sparse(basis, &[(i, 1.0)], &[(j, 1.0)]);
            t[(i, j)] += b.iter().map(|&(m, v)| v * a.coeffs()[m]).sum::<f64>();
        }
    }
    let a2 = (&t + t.transpose()) * 0.5;
    QuadraticFunctional::new(basis, 0.0, DVector::zeros(n), a2)
}

/// `∫ ψ_u dμ = Σ_m σ_m ψ_u(f_m)` over eigenpairs of `Q_∞`.
pub fn integral_psi_u(
    c_eps: &DiagonalOperator,
    q: &CovarianceSpec,
    u: &SpectralField,
    h: &SpectralField,
) -> Result<f64> {
    let mu = invariant_covariance(c_eps, q)?;
    let mut total = 0.0;
    for (s, f) in mu.covariance().eigenpairs() {
        total += s * psi_u_eval(c_eps, u, h, &f)?;
    }
    Ok(total)
}

/// `L⁰ φ(u) = ⟨Au + b(u,u), h⟩ + ∫ ψ_u dμ`.
pub fn effective_generator(
    c: &DiagonalOperator,
    q: &CovarianceSpec,
    a: &DiagonalOperator,
    u: &SpectralField,
    h: &SpectralField,
) -> Result<f64> {
    a.check_basis(u.basis())?;
    let base = a.apply(u).add(&advect(u, u)).dot(h);
    Ok(base + integral_psi_u(c, q, u, h)?)
}

/// Second corrector: solves `L_y φ₂ = −Ψ_u` with `Ψ_u = ψ_u − ∫ψ_u dμ`.
pub fn phi2_solve(
    c_eps: &DiagonalOperator,
    q: &CovarianceSpec,
    u: &SpectralField,
    h: &SpectralField,
) -> Result<QuadraticFunctional> {
    let mu = invariant_covariance(c_eps, q)?;
    let psi = center(&psi_u_functional(c_eps, u, h)?, &mu);
    poisson_solve(c_eps, q, &psi)
}
