//! Ingredients of the transport-noise limit equation
//!
//! ```text
//! du = [Au + b(u,u) + S(u) + b(r,u)] dt + Σ_k b(g_k, u) dW_k,   g_k = (−C)^{-1} Q^{1/2} e_k
//! ```
//!
//! together with the eddy-viscosity operator `κ_N` of a shell covariance.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{check_commute, invariant_covariance, CovarianceSpec, DiagonalOperator, InvariantMeasure};
use crate::spectral::{advect, advect_sparse, ModeBasis, SpectralField};

#[derive(Debug)]
pub struct LimitCoefficients {
    c: DiagonalOperator,
    q: CovarianceSpec,
    mu: InvariantMeasure,
    directions: Vec<SpectralField>,
    // (σ_m, f_m, (−C)^{-1} f_m) over eigenpairs of Q_∞
    pairs: Vec<(f64, SpectralField, SpectralField)>,
    drift: SpectralField,
    commute_residual: f64,
    corrector: OnceLock<DMatrix<f64>>,
    // S as a Fourier multiplier, when Q is diagonal and translation invariant
    multiplier: Option<Vec<f64>>,
}

impl LimitCoefficients {
    pub fn new(c: &DiagonalOperator, q: &CovarianceSpec) -> Result<Self> {
        let mu = invariant_covariance(c, q)?;
        let basis = c.basis().clone();
        let (support, sqrt) = q.sqrt_block();
        let directions = (0..support.len())
            .map(|col| {
                let mut coeffs = vec![0.0; basis.dim()];
                for (i, &m) in support.iter().enumerate() {
                    coeffs[m] = sqrt[(i, col)];
                }
                c.neg_inverse_apply(&SpectralField::from_vec_unchecked(basis.clone(), coeffs))
            })
            .collect();
        let pairs: Vec<_> = mu
            .covariance()
            .eigenpairs()
            .into_iter()
            .map(|(s, f)| {
                let g = c.neg_inverse_apply(&f);
                (s, f, g)
            })
            .collect();
        let mut drift = SpectralField::zeros(&basis);
        for (s, f, _) in &pairs {
            drift = drift.axpy(*s, &c.neg_inverse_apply(&advect(f, f)));
        }
        let (_, commute_residual) = check_commute(c, q);
        let multiplier = match q {
            CovarianceSpec::Diagonal { .. } => {
                let k = EddyOperator::new(q, c)?;
                k.is_translation_invariant().then(|| k.diagonal().to_vec())
            }
            CovarianceSpec::Dense { .. } => None,
        };
        Ok(Self {
            c: c.clone(),
            q: q.clone(),
            mu,
            directions,
            pairs,
            drift,
            commute_residual,
            corrector: OnceLock::new(),
            multiplier,
        })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        self.c.basis()
    }

    pub fn c(&self) -> &DiagonalOperator {
        &self.c
    }

    pub fn q(&self) -> &CovarianceSpec {
        &self.q
    }

    pub fn measure(&self) -> &InvariantMeasure {
        &self.mu
    }

    /// Noise directions `g_k`, one per support mode of `Q`.
    pub fn directions(&self) -> &[SpectralField] {
        &self.directions
    }

    /// Itô-Stokes drift `r`.
    pub fn drift(&self) -> &SpectralField {
        &self.drift
    }

    pub fn commutes(&self) -> bool {
        self.commute_residual <= 1e-12
    }

    pub fn commute_residual(&self) -> f64 {
        self.commute_residual
    }

    /// `S_A(u) = Σ_m σ_m b((−C)^{-1} f_m, b(f_m, u))`.
    pub fn corrector_a(&self, u: &SpectralField) -> SpectralField {
        let mut out = SpectralField::zeros(u.basis());
        for (s, f, g) in &self.pairs {
            out = out.axpy(*s, &advect(g, &advect(f, u)));
        }
        out
    }

    /// `S_B(u) = ½ Σ_k b(g_k, b(g_k, u))`, the Itô-to-Stratonovich
    /// correction of the transport noise.
    pub fn corrector_b(&self, u: &SpectralField) -> SpectralField {
        let mut out = SpectralField::zeros(u.basis());
        for g in &self.directions {
            out = out.axpy(0.5, &advect(g, &advect(g, u)));
        }
        out
    }

    /// Matrix of `S_A` in the mode basis, built on first use.
    pub fn corrector_matrix(&self) -> &DMatrix<f64> {
        self.corrector.get_or_init(|| {
            let basis = self.basis();
            let n = basis.dim();
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let col = self.corrector_a(&SpectralField::basis_element(basis, j));
                m.set_column(j, &DVector::from_column_slice(col.coeffs()));
            }
            m
        })
    }

    /// `S(u)` through a Fourier multiplier when one exists, otherwise
    /// through the precomputed matrix.
    pub fn corrector_fast(&self, u: &SpectralField) -> SpectralField {
        if let Some(m) = &self.multiplier {
            return u.mul_diag(m);
        }
        let v = self.corrector_matrix() * DVector::from_column_slice(u.coeffs());
        SpectralField::from_vec_unchecked(u.basis().clone(), v.as_slice().to_vec())
    }
}

pub fn ito_stokes_drift(c: &DiagonalOperator, q: &CovarianceSpec) -> Result<SpectralField> {
    Ok(LimitCoefficients::new(c, q)?.drift)
}

/// Stratonovich corrector `S(u)`; only defined when `[C, Q] = 0`.
pub fn strat_corrector_apply(coeffs: &LimitCoefficients, u: &SpectralField) -> Result<SpectralField> {
    coeffs.c.check_basis(u.basis())?;
    if !coeffs.commutes() {
        return Err(Error::Unsupported(format!(
            "C and Q do not commute (residual {:.3e})",
            coeffs.commute_residual
        )));
    }
    Ok(coeffs.corrector_a(u))
}

/// `Σ_k b(g_k, u) dW_k`.
pub fn transport_noise_increment(
    coeffs: &LimitCoefficients,
    u: &SpectralField,
    dw: &[f64],
) -> Result<SpectralField> {
    if dw.len() != coeffs.directions.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} increments, got {}",
            coeffs.directions.len(),
            dw.len()
        )));
    }
    coeffs.c.check_basis(u.basis())?;
    let mut g = SpectralField::zeros(u.basis());
    for (d, w) in coeffs.directions.iter().zip(dw) {
        g = g.axpy(*w, d);
    }
    Ok(advect(&g, u))
}

/// Eddy-viscosity operator `κ_N(u) = Σ_k q_k/(2λ_k²) b(e_k, b(e_k, u))`
/// for a diagonal shell covariance.
#[derive(Debug)]
pub struct EddyOperator {
    basis: Arc<ModeBasis>,
    // (mode, weight q_k / (2λ_k²))
    terms: Vec<(usize, f64)>,
    multiplier: OnceLock<Vec<f64>>,
}

impl EddyOperator {
    pub fn new(qn: &CovarianceSpec, c: &DiagonalOperator) -> Result<Self> {
        qn.check_basis(c.basis())?;
        let q = match qn {
            CovarianceSpec::Diagonal { q, .. } => q,
            CovarianceSpec::Dense { .. } => {
                return Err(Error::Unsupported("eddy operator needs a diagonal covariance".into()))
            }
        };
        let lam = c.rates();
        let terms = (0..q.len())
            .filter(|&m| q[m] > 0.0)
            .map(|m| (m, q[m] / (2.0 * lam[m] * lam[m])))
            .collect();
        Ok(Self { basis: c.basis().clone(), terms, multiplier: OnceLock::new() })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    /// Term-by-term evaluation of the defining sum.
    pub fn apply_direct(&self, u: &SpectralField) -> SpectralField {
        let mut out = SpectralField::zeros(u.basis());
        for &(m, w) in &self.terms {
            let e = SpectralField::basis_element(&self.basis, m);
            out = out.axpy(w, &advect(&e, &advect(&e, u)));
        }
        out
    }

    /// `κ_N(u)`; uses the diagonal multiplier when it is exact.
    pub fn apply(&self, u: &SpectralField) -> SpectralField {
        if self.is_translation_invariant() {
            u.mul_diag(self.diagonal())
        } else {
            self.apply_direct(u)
        }
    }

    /// `−Σ_k q_k/(2λ_k²) ‖b(e_k, u)‖²`.
    pub fn energy_rate(&self, u: &SpectralField) -> f64 {
        let sparse: Vec<(usize, f64)> = u
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(m, c)| (m, *c))
            .collect();
        self.energy_rate_sparse(&sparse)
    }

    fn energy_rate_sparse(&self, u: &[(usize, f64)]) -> f64 {
        self.terms
            .iter()
            .map(|&(m, w)| {
                let b = advect_sparse(&self.basis, &[(m, 1.0)], u);
                -w * b.iter().map(|(_, v)| v * v).sum::<f64>()
            })
            .sum()
    }

    /// `⟨κ_N e_m, e_m⟩` per mode. When the shell weights are equal for the
    /// cos and sin partners of every wave, `κ_N` commutes with translations
    /// and is exactly this diagonal.
    pub fn diagonal(&self) -> &[f64] {
        self.multiplier.get_or_init(|| {
            (0..self.basis.dim())
                .map(|m| self.energy_rate_sparse(&[(m, 1.0)]))
                .collect()
        })
    }

    pub fn is_translation_invariant(&self) -> bool {
        let mut w = vec![0.0; self.basis.dim()];
        for &(m, v) in &self.terms {
            w[m] = v;
        }
        w.chunks(2).all(|p| p[0] == p[1])
    }
}

pub fn eddy_kappa_apply(qn: &CovarianceSpec, c: &DiagonalOperator, u: &SpectralField) -> Result<SpectralField> {
    c.check_basis(u.basis())?;
    Ok(EddyOperator::new(qn, c)?.apply(u))
}
