//! Diagonal dissipation operators, noise covariances and the Gaussian
//! invariant measure of the associated Ornstein-Uhlenbeck process.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spectral::{ModeBasis, SpectralField};

/// Largest mode subset a dense covariance may span.
pub const MAX_DENSE_MODES: usize = 64;

const PSD_TOL: f64 = 1e-12;
const LYAPUNOV_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorKind {
    Laplacian { nu: f64 },
    Friction { chi: f64 },
    Fractional { nu: f64, gamma: f64 },
    /// Result of combining operators, e.g. `C + εA`.
    Combined,
}

/// Negative-definite operator acting diagonally on the mode basis.
#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    basis: Arc<ModeBasis>,
    eig: Vec<f64>,
    kind: OperatorKind,
}

impl DiagonalOperator {
    pub fn new(kind: OperatorKind, basis: &Arc<ModeBasis>) -> Result<Self> {
        let k2 = |m: usize| 4.0 * PI * PI * basis.wavevector(m).norm_sq() as f64;
        let eig: Vec<f64> = match kind {
            OperatorKind::Laplacian { nu } => {
                positive("nu", nu)?;
                (0..basis.dim()).map(|m| -nu * k2(m)).collect()
            }
            OperatorKind::Friction { chi } => {
                positive("chi", chi)?;
                vec![-chi; basis.dim()]
            }
            OperatorKind::Fractional { nu, gamma } => {
                positive("nu", nu)?;
                if !(gamma > 0.25 && gamma <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must lie in (1/4, 1], got {gamma}"
                    )));
                }
                (0..basis.dim())
                    .map(|m| if gamma == 1.0 { -nu * k2(m) } else { -(nu * k2(m)).powf(gamma) })
                    .collect()
            }
            OperatorKind::Combined => {
                return Err(Error::InvalidParameter(
                    "combined operators are built with plus_scaled".into(),
                ))
            }
        };
        Ok(Self { basis: basis.clone(), eig, kind })
    }

    pub fn laplacian(nu: f64, basis: &Arc<ModeBasis>) -> Result<Self> {
        Self::new(OperatorKind::Laplacian { nu }, basis)
    }

    pub fn friction(chi: f64, basis: &Arc<ModeBasis>) -> Result<Self> {
        Self::new(OperatorKind::Friction { chi }, basis)
    }

    pub fn fractional(nu: f64, gamma: f64, basis: &Arc<ModeBasis>) -> Result<Self> {
        Self::new(OperatorKind::Fractional { nu, gamma }, basis)
    }

    /// `self + s · other`, e.g. `C_ε = C + εA`.
    pub fn plus_scaled(&self, s: f64, other: &DiagonalOperator) -> Result<Self> {
        if !self.basis.same_as(&other.basis) {
            return Err(Error::InvalidArgument("operator basis mismatch".into()));
        }
        let eig: Vec<f64> = self.eig.iter().zip(&other.eig).map(|(a, b)| a + s * b).collect();
        if let Some(m) = eig.iter().position(|&e| e >= 0.0 || !e.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "combined eigenvalue {} at mode {m} is not negative",
                eig[m]
            )));
        }
        Ok(Self { basis: self.basis.clone(), eig, kind: OperatorKind::Combined })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// `λ_m = −eigenvalue`, all positive.
    pub fn rates(&self) -> Vec<f64> {
        self.eig.iter().map(|e| -e).collect()
    }

    pub fn spectral_gap(&self) -> f64 {
        self.eig.iter().fold(f64::INFINITY, |m, e| m.min(-e))
    }

    pub fn apply(&self, u: &SpectralField) -> SpectralField {
        u.mul_diag(&self.eig)
    }

    /// `(−C)^{-1} u`.
    pub fn neg_inverse_apply(&self, u: &SpectralField) -> SpectralField {
        let inv: Vec<f64> = self.eig.iter().map(|e| -1.0 / e).collect();
        u.mul_diag(&inv)
    }

    /// `e^{t C} u`.
    pub fn exp_apply(&self, t: f64, u: &SpectralField) -> SpectralField {
        let f: Vec<f64> = self.eig.iter().map(|e| (e * t).exp()).collect();
        u.mul_diag(&f)
    }

    pub(crate) fn check_basis(&self, basis: &ModeBasis) -> Result<()> {
        if self.basis.same_as(basis) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "operator on K={} used with K={}",
                self.basis.truncation(),
                basis.truncation()
            )))
        }
    }
}

/// Convenience alias matching the constructor vocabulary used by the CLI.
pub fn make_dissipation(kind: OperatorKind, basis: &Arc<ModeBasis>) -> Result<DiagonalOperator> {
    DiagonalOperator::new(kind, basis)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Noise covariance: diagonal in the mode basis, or a dense symmetric PSD
/// block over a declared mode subset (zero elsewhere).
#[derive(Clone, Debug)]
pub enum CovarianceSpec {
    Diagonal {
        basis: Arc<ModeBasis>,
        q: Vec<f64>,
    },
    Dense {
        basis: Arc<ModeBasis>,
        modes: Vec<usize>,
        matrix: DMatrix<f64>,
        sqrt: DMatrix<f64>,
    },
}

impl CovarianceSpec {
    pub fn diagonal(basis: &Arc<ModeBasis>, q: Vec<f64>) -> Result<Self> {
        if q.len() != basis.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} diagonal entries, got {}",
                basis.dim(),
                q.len()
            )));
        }
        if let Some(m) = q.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "diagonal covariance entry {m} is {}",
                q[m]
            )));
        }
        Ok(Self::Diagonal { basis: basis.clone(), q })
    }

    pub fn zero(basis: &Arc<ModeBasis>) -> Self {
        Self::Diagonal { basis: basis.clone(), q: vec![0.0; basis.dim()] }
    }

    pub fn dense(basis: &Arc<ModeBasis>, modes: Vec<usize>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = modes.len();
        if n == 0 || n > MAX_DENSE_MODES {
            return Err(Error::InvalidParameter(format!(
                "dense covariance needs 1..={MAX_DENSE_MODES} modes, got {n}"
            )));
        }
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "dense covariance is {}x{} for {n} modes",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mut seen = vec![false; basis.dim()];
        for &m in &modes {
            if m >= basis.dim() || seen[m] {
                return Err(Error::InvalidParameter(format!("mode index {m} invalid or repeated")));
            }
            seen[m] = true;
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense covariance entry".into()));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > PSD_TOL * scale {
            return Err(Error::InvalidParameter(format!("covariance not symmetric ({asym:.2e})")));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let sqrt = psd_sqrt(&sym)?;
        Ok(Self::Dense { basis: basis.clone(), modes, matrix: sym, sqrt })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        match self {
            Self::Diagonal { basis, .. } | Self::Dense { basis, .. } => basis,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match self {
            Self::Diagonal { .. } => true,
            Self::Dense { matrix, .. } => {
                let n = matrix.nrows();
                (0..n).all(|i| (0..n).all(|j| i == j || matrix[(i, j)] == 0.0))
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Self::Diagonal { q, .. } => q.iter().sum(),
            Self::Dense { matrix, .. } => matrix.trace(),
        }
    }

    /// Entry `Q_{mn}` in the full basis.
    pub fn entry(&self, m: usize, n: usize) -> f64 {
        match self {
            Self::Diagonal { q, .. } => {
                if m == n {
                    q[m]
                } else {
                    0.0
                }
            }
            Self::Dense { modes, matrix, .. } => {
                match (modes.iter().position(|&x| x == m), modes.iter().position(|&x| x == n)) {
                    (Some(i), Some(j)) => matrix[(i, j)],
                    _ => 0.0,
                }
            }
        }
    }

    /// Diagonal `Q_{mm}` for every basis element.
    pub fn diagonal_entries(&self) -> Vec<f64> {
        match self {
            Self::Diagonal { q, .. } => q.clone(),
            Self::Dense { basis, modes, matrix, .. } => {
                let mut d = vec![0.0; basis.dim()];
                for (i, &m) in modes.iter().enumerate() {
                    d[m] = matrix[(i, i)];
                }
                d
            }
        }
    }

    /// Modes that may carry noise.
    pub fn support(&self) -> Vec<usize> {
        match self {
            Self::Diagonal { q, .. } => (0..q.len()).filter(|&m| q[m] > 0.0).collect(),
            Self::Dense { modes, .. } => modes.clone(),
        }
    }

    /// `(support, Q restricted to support)`.
    pub fn block(&self) -> (Vec<usize>, DMatrix<f64>) {
        match self {
            Self::Diagonal { q, .. } => {
                let s = self.support();
                let d = DVector::from_iterator(s.len(), s.iter().map(|&m| q[m]));
                (s, DMatrix::from_diagonal(&d))
            }
            Self::Dense { modes, matrix, .. } => (modes.clone(), matrix.clone()),
        }
    }

    /// `(support, Q^{1/2} restricted to support)`; the symmetric square root.
    pub fn sqrt_block(&self) -> (Vec<usize>, DMatrix<f64>) {
        match self {
            Self::Diagonal { q, .. } => {
                let s = self.support();
                let d = DVector::from_iterator(s.len(), s.iter().map(|&m| q[m].sqrt()));
                (s, DMatrix::from_diagonal(&d))
            }
            Self::Dense { modes, sqrt, .. } => (modes.clone(), sqrt.clone()),
        }
    }

    /// Eigenpairs `(σ, f)` with `σ > 0`, `f` orthonormal fields.
    pub fn eigenpairs(&self) -> Vec<(f64, SpectralField)> {
        let basis = self.basis().clone();
        match self {
            Self::Diagonal { q, .. } => (0..q.len())
                .filter(|&m| q[m] > 0.0)
                .map(|m| (q[m], SpectralField::basis_element(&basis, m)))
                .collect(),
            Self::Dense { modes, matrix, .. } => {
                let eig = matrix.clone().symmetric_eigen();
                let mut out = Vec::new();
                for (c, &s) in eig.eigenvalues.iter().enumerate() {
                    if s <= 0.0 {
                        continue;
                    }
                    let mut coeffs = vec![0.0; basis.dim()];
                    for (i, &m) in modes.iter().enumerate() {
                        coeffs[m] = eig.eigenvectors[(i, c)];
                    }
                    out.push((s, SpectralField::from_vec_unchecked(basis.clone(), coeffs)));
                }
                out
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        match self {
            Self::Diagonal { basis, q } => Self::diagonal(basis, q.iter().map(|v| v * s).collect()),
            Self::Dense { basis, modes, matrix, .. } => Self::dense(basis, modes.clone(), matrix * s),
        }
    }

    /// `Q^{1/2} ξ` for i.i.d. standard normal `ξ` over the support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralField {
        let basis = self.basis().clone();
        let mut coeffs = vec![0.0; basis.dim()];
        match self {
            Self::Diagonal { q, .. } => {
                for (m, &v) in q.iter().enumerate() {
                    if v > 0.0 {
                        let xi: f64 = rng.sample(StandardNormal);
                        coeffs[m] = v.sqrt() * xi;
                    }
                }
            }
            Self::Dense { modes, sqrt, .. } => {
                let xi = DVector::from_iterator(modes.len(), (0..modes.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let w = sqrt * xi;
                for (i, &m) in modes.iter().enumerate() {
                    coeffs[m] = w[i];
                }
            }
        }
        SpectralField::from_vec_unchecked(basis, coeffs)
    }

    pub(crate) fn check_basis(&self, basis: &ModeBasis) -> Result<()> {
        if self.basis().same_as(basis) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("covariance basis mismatch".into()))
        }
    }
}

/// Symmetric PSD square root by eigendecomposition, clamping tiny negative
/// eigenvalues.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::InvalidParameter(format!(
            "matrix is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
}

/// The stationary law `N(0, Q_∞)` with `C Q_∞ + Q_∞ C = −Q`.
#[derive(Clone, Debug)]
pub struct InvariantMeasure {
    cov: CovarianceSpec,
}

impl InvariantMeasure {
    pub fn covariance(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        self.cov.basis()
    }

    /// `∫ ‖w‖² dμ = Tr Q_∞`.
    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralField {
        self.cov.sample(rng)
    }
}

pub fn invariant_covariance(c: &DiagonalOperator, q: &CovarianceSpec) -> Result<InvariantMeasure> {
    q.check_basis(c.basis())?;
    let lam = c.rates();
    if let Some(m) = lam.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::InvalidOperator(format!("eigenvalue at mode {m} is not negative")));
    }
    let cov = match q {
        CovarianceSpec::Diagonal { basis, q } => CovarianceSpec::diagonal(
            basis,
            q.iter().zip(&lam).map(|(v, l)| v / (2.0 * l)).collect(),
        )?,
        CovarianceSpec::Dense { basis, modes, matrix, .. } => {
            let n = modes.len();
            let qi = DMatrix::from_fn(n, n, |i, j| matrix[(i, j)] / (lam[modes[i]] + lam[modes[j]]));
            let res = DMatrix::from_fn(n, n, |i, j| {
                -lam[modes[i]] * qi[(i, j)] - qi[(i, j)] * lam[modes[j]] + matrix[(i, j)]
            });
            let r = res.amax();
            if r > LYAPUNOV_TOL * matrix.amax().max(1.0) {
                return Err(Error::NumericFailure(format!("Lyapunov residual {r:.3e}")));
            }
            CovarianceSpec::dense(basis, modes.clone(), qi)?
        }
    };
    Ok(InvariantMeasure { cov })
}

/// `max |C Q_∞ + Q_∞ C + Q|` over all entries.
pub fn lyapunov_residual(c: &DiagonalOperator, q: &CovarianceSpec, mu: &InvariantMeasure) -> f64 {
    let eig = c.eigenvalues();
    let mut modes = q.support();
    for m in mu.covariance().support() {
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let qi = mu.covariance();
    let mut r: f64 = 0.0;
    for &m in &modes {
        for &n in &modes {
            let v = eig[m] * qi.entry(m, n) + qi.entry(m, n) * eig[n] + q.entry(m, n);
            r = r.max(v.abs());
        }
    }
    r
}

pub fn sample_invariant<R: Rng + ?Sized>(mu: &InvariantMeasure, rng: &mut R) -> SpectralField {
    mu.sample(rng)
}

/// Isotropic shell covariance supported on `N ≤ |k| ≤ 2N`:
/// `q_k = c² |k|^{-2δ} / Σ_{shell} |k|^{-2δ}`, the sum taken over the
/// half-lattice, for both parities. The trace is `2c²`.
pub fn make_qn(n: usize, delta: f64, c_kappa: f64, basis: &Arc<ModeBasis>) -> Result<CovarianceSpec> {
    if n == 0 {
        return Err(Error::InvalidParameter("shell index N must be positive".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
    }
    positive("c_kappa", c_kappa)?;
    let (lo, hi) = ((n * n) as i64, (4 * n * n) as i64);
    let in_shell: Vec<bool> = basis
        .waves()
        .iter()
        .map(|k| (lo..=hi).contains(&k.norm_sq()))
        .collect();
    let weight = |j: usize| basis.wave_norm(j).powf(-2.0 * delta);
    let norm: f64 = (0..basis.num_waves()).filter(|&j| in_shell[j]).map(weight).sum();
    if norm == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "shell {n} <= |k| <= {} is empty at K={}",
            2 * n,
            basis.truncation()
        )));
    }
    let mut q = vec![0.0; basis.dim()];
    for j in 0..basis.num_waves() {
        if in_shell[j] {
            let v = c_kappa * c_kappa * weight(j) / norm;
            q[2 * j] = v;
            q[2 * j + 1] = v;
        }
    }
    CovarianceSpec::diagonal(basis, q)
}

/// Commutator residual `max |[C, Q]_{mn}| = max |(c_m − c_n) Q_{mn}|` and
/// whether it vanishes to 1e-12.
pub fn check_commute(c: &DiagonalOperator, q: &CovarianceSpec) -> (bool, f64) {
    let r = match q {
        CovarianceSpec::Diagonal { .. } => 0.0,
        CovarianceSpec::Dense { modes, matrix, .. } => {
            let e = c.eigenvalues();
            let mut r: f64 = 0.0;
            for (i, &m) in modes.iter().enumerate() {
                for (j, &n) in modes.iter().enumerate() {
                    r = r.max(((e[m] - e[n]) * matrix[(i, j)]).abs());
                }
            }
            r
        }
    };
    (r <= 1e-12, r)
}
