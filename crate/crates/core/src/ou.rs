//! Exact simulation of the linearised fast process
//! `dY = ε^{-1} C_ε Y dt + ε^{-1/2} Q^{1/2} dW` with `C_ε = C + εA`.
//!
//! Since `C_ε` is diagonal, the one-step law is Gaussian with closed-form
//! moments for any covariance `Q`, diagonal or dense.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::operators::{invariant_covariance, psd_sqrt, CovarianceSpec, DiagonalOperator, InvariantMeasure};
use crate::spectral::{ModeBasis, SpectralField};

/// `(e^{x t} − 1) / x`, continuous at `x = 0`.
pub fn expm1_ratio(x: f64, t: f64) -> f64 {
    if x == 0.0 {
        t
    } else {
        (x * t).exp_m1() / x
    }
}

#[derive(Clone, Debug)]
pub struct OuParams {
    epsilon: f64,
    c: DiagonalOperator,
    a: DiagonalOperator,
    q: CovarianceSpec,
    c_eps: DiagonalOperator,
}

impl OuParams {
    pub fn new(epsilon: f64, c: DiagonalOperator, a: DiagonalOperator, q: CovarianceSpec) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1], got {epsilon}")));
        }
        c.check_basis(a.basis())?;
        q.check_basis(c.basis())?;
        let c_eps = c.plus_scaled(epsilon, &a)?;
        Ok(Self { epsilon, c, a, q, c_eps })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn c(&self) -> &DiagonalOperator {
        &self.c
    }

    pub fn a(&self) -> &DiagonalOperator {
        &self.a
    }

    pub fn q(&self) -> &CovarianceSpec {
        &self.q
    }

    pub fn c_eps(&self) -> &DiagonalOperator {
        &self.c_eps
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        self.c.basis()
    }

    /// Drift eigenvalues `μ_k = ε^{-1}(c_k + ε a_k) < 0`.
    pub fn rates(&self) -> Vec<f64> {
        self.c_eps.eigenvalues().iter().map(|e| e / self.epsilon).collect()
    }

    /// Stationary law of `Y`, `N(0, Q_∞^ε)` with `Q_∞^ε` solving the
    /// Lyapunov equation for `C_ε`.
    pub fn stationary(&self) -> Result<InvariantMeasure> {
        invariant_covariance(&self.c_eps, &self.q)
    }
}

#[derive(Clone, Debug)]
enum PairFactor {
    Diagonal {
        modes: Vec<usize>,
        l11: Vec<f64>,
        l21: Vec<f64>,
        l22: Vec<f64>,
    },
    Dense {
        modes: Vec<usize>,
        factor: DMatrix<f64>,
    },
}

/// Precomputed one-step propagator for a fixed `dt`.
///
/// A draw returns the pair `(η, w)`: `η = ε^{-1/2} ∫_0^dt e^{μ(dt−s)} Q^{1/2} dW_s`
/// and `w = Q^{1/2}(W_dt − W_0)`, jointly Gaussian with
///
/// ```text
/// Cov(η_i, η_j) = ε^{-1} Q_ij (e^{(μ_i+μ_j)dt} − 1)/(μ_i + μ_j)
/// Cov(w_i, w_j) = Q_ij dt
/// Cov(η_i, w_j) = ε^{-1/2} Q_ij (e^{μ_i dt} − 1)/μ_i
/// ```
#[derive(Clone, Debug)]
pub struct OuStepper {
    basis: Arc<ModeBasis>,
    epsilon: f64,
    dt: f64,
    rates: Vec<f64>,
    decay: Vec<f64>,
    factor: PairFactor,
}

impl OuStepper {
    pub fn new(params: &OuParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let eps = params.epsilon;
        let rates = params.rates();
        let decay: Vec<f64> = rates.iter().map(|m| (m * dt).exp()).collect();
        let factor = match &params.q {
            CovarianceSpec::Diagonal { q, .. } => {
                let modes: Vec<usize> = (0..q.len()).filter(|&m| q[m] > 0.0).collect();
                let (mut l11, mut l21, mut l22) = (vec![], vec![], vec![]);
                for &m in &modes {
                    let mu = rates[m];
                    let a = q[m] / eps * expm1_ratio(2.0 * mu, dt);
                    let b = q[m] / eps.sqrt() * expm1_ratio(mu, dt);
                    let c = q[m] * dt;
                    let s = a.sqrt();
                    l11.push(s);
                    l21.push(b / s);
                    l22.push((c - b * b / a).max(0.0).sqrt());
                }
                PairFactor::Diagonal { modes, l11, l21, l22 }
            }
            CovarianceSpec::Dense { modes, matrix, .. } => {
                let n = modes.len();
                let mu: Vec<f64> = modes.iter().map(|&m| rates[m]).collect();
                let cov = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
                    let (i, j) = (r % n, c % n);
                    let qij = matrix[(i, j)];
                    match (r < n, c < n) {
                        (true, true) => qij / eps * expm1_ratio(mu[i] + mu[j], dt),
                        (false, false) => qij * dt,
                        (true, false) => qij / eps.sqrt() * expm1_ratio(mu[i], dt),
                        (false, true) => qij / eps.sqrt() * expm1_ratio(mu[j], dt),
                    }
                });
                PairFactor::Dense { modes: modes.clone(), factor: psd_sqrt(&cov)? }
            }
        };
        Ok(Self { basis: params.basis().clone(), epsilon: eps, dt, rates, decay, factor })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `e^{μ dt}` per mode.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    /// Draws `(η, w)` as full coefficient vectors.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = self.basis.dim();
        let mut eta = vec![0.0; n];
        let mut w = vec![0.0; n];
        match &self.factor {
            PairFactor::Diagonal { modes, l11, l21, l22 } => {
                for (i, &m) in modes.iter().enumerate() {
                    let x1: f64 = rng.sample(StandardNormal);
                    let x2: f64 = rng.sample(StandardNormal);
                    eta[m] = l11[i] * x1;
                    w[m] = l21[i] * x1 + l22[i] * x2;
                }
            }
            PairFactor::Dense { modes, factor } => {
                let k = modes.len();
                let xi = DVector::from_iterator(2 * k, (0..2 * k).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let z = factor * xi;
                for (i, &m) in modes.iter().enumerate() {
                    eta[m] = z[i];
                    w[m] = z[k + i];
                }
            }
        }
        (eta, w)
    }

    /// `e^{μ dt} y + η`.
    pub fn propagate(&self, y: &[f64], eta: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.decay)
            .zip(eta)
            .map(|((y, d), e)| d * y + e)
            .collect()
    }

    /// One-step conditional variance of mode `m`.
    pub fn step_variance(&self, q_mm: f64, m: usize) -> f64 {
        q_mm / self.epsilon * expm1_ratio(2.0 * self.rates[m], self.dt)
    }
}

/// One exact step of the linearised fast process.
pub fn ou_exact_step<R: Rng + ?Sized>(
    y: &SpectralField,
    dt: f64,
    params: &OuParams,
    rng: &mut R,
) -> Result<SpectralField> {
    params.c.check_basis(y.basis())?;
    let st = OuStepper::new(params, dt)?;
    let (eta, _) = st.sample_pair(rng);
    Ok(SpectralField::from_vec_unchecked(y.basis().clone(), st.propagate(y.coeffs(), &eta)))
}

/// Jointly Gaussian `(convolution increment, plain increment)` over one step.
pub fn stochastic_convolution_increment<R: Rng + ?Sized>(
    dt: f64,
    params: &OuParams,
    rng: &mut R,
) -> Result<(SpectralField, SpectralField)> {
    let st = OuStepper::new(params, dt)?;
    let (eta, w) = st.sample_pair(rng);
    let b = params.basis().clone();
    Ok((
        SpectralField::from_vec_unchecked(b.clone(), eta),
        SpectralField::from_vec_unchecked(b, w),
    ))
}
