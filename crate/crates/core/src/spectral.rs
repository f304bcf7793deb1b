//! Truncated Fourier representation of zero-mean divergence-free velocity
//! fields on the unit torus T² = (R/Z)².
//!
//! A field is stored as real coefficients over the orthonormal basis
//!
//! ```text
//! e_{k,cos}(x) = √2 a_k cos(2π k·x),   e_{k,sin}(x) = √2 a_k sin(2π k·x),
//! ```
//!
//! where `k` runs over a half-lattice of wavevectors with `|k|∞ ≤ K` and
//! `a_k = k^⊥/|k|`, `k^⊥ = (−k_y, k_x)`. Every basis element is divergence
//! free and the zero mode is excluded.
//!
//! The advection operator `b(u, v) = −Π(u·∇)v` is evaluated without
//! aliasing, either by direct convolution over the nonzero modes (used for
//! sparse inputs) or through a zero-padded transform of size `M ≥ 3K + 1`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::operators::DiagonalOperator;

/// Hard cap on the truncation level.
pub const MAX_TRUNCATION: usize = 64;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WaveVector {
    pub kx: i32,
    pub ky: i32,
}

impl WaveVector {
    pub const fn new(kx: i32, ky: i32) -> Self {
        Self { kx, ky }
    }

    pub fn norm_sq(&self) -> i64 {
        let (x, y) = (self.kx as i64, self.ky as i64);
        x * x + y * y
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn sup_norm(&self) -> i32 {
        self.kx.abs().max(self.ky.abs())
    }

    /// `k^⊥ = (−k_y, k_x)`.
    pub fn perp(&self) -> (i32, i32) {
        (-self.ky, self.kx)
    }

    pub fn dot(&self, other: &WaveVector) -> i64 {
        self.kx as i64 * other.kx as i64 + self.ky as i64 * other.ky as i64
    }

    /// `self^⊥ · other`, an exact integer.
    pub fn cross(&self, other: &WaveVector) -> i64 {
        self.kx as i64 * other.ky as i64 - self.ky as i64 * other.kx as i64
    }

    /// Representative half-lattice: `k_x > 0`, or `k_x = 0` and `k_y > 0`.
    pub fn in_half_lattice(&self) -> bool {
        self.kx > 0 || (self.kx == 0 && self.ky > 0)
    }
}

impl fmt::Display for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.kx, self.ky)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Cos,
    Sin,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Cos => "cos",
            Parity::Sin => "sin",
        }
    }
}

/// Ordered cos/sin basis over the half-lattice `|k|∞ ≤ K`.
///
/// Basis index `m` maps to wave index `m / 2` and parity `m % 2` (0 = cos).
/// Wavevectors are sorted by `|k|²`, so low indices are the large scales.
pub struct ModeBasis {
    truncation: usize,
    waves: Vec<WaveVector>,
    norms: Vec<f64>,
    perp_units: Vec<[f64; 2]>,
    // signed 1-based wave index over the full (2K+1)² lattice; 0 for the zero mode
    lookup: Vec<i32>,
    grid: OnceLock<PaddedGrid>,
}

impl fmt::Debug for ModeBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModeBasis")
            .field("truncation", &self.truncation)
            .field("dim", &self.dim())
            .finish()
    }
}

impl ModeBasis {
    pub fn new(truncation: usize) -> Result<Arc<Self>> {
        if truncation == 0 || truncation > MAX_TRUNCATION {
            return Err(Error::InvalidParameter(format!(
                "truncation level must be in 1..={MAX_TRUNCATION}, got {truncation}"
            )));
        }
        let kk = truncation as i32;
        let mut waves = Vec::new();
        for kx in 0..=kk {
            for ky in -kk..=kk {
                let k = WaveVector::new(kx, ky);
                if k.in_half_lattice() {
                    waves.push(k);
                }
            }
        }
        waves.sort_by_key(|k| (k.norm_sq(), k.kx, k.ky));
        let side = 2 * truncation + 1;
        let mut lookup = vec![0i32; side * side];
        for (j, k) in waves.iter().enumerate() {
            let idx = Self::lattice_slot(truncation, k.kx, k.ky);
            lookup[idx] = j as i32 + 1;
            let idx = Self::lattice_slot(truncation, -k.kx, -k.ky);
            lookup[idx] = -(j as i32 + 1);
        }
        let norms: Vec<f64> = waves.iter().map(|k| k.norm()).collect();
        let perp_units = waves
            .iter()
            .zip(&norms)
            .map(|(k, n)| {
                let (px, py) = k.perp();
                [px as f64 / n, py as f64 / n]
            })
            .collect();
        Ok(Arc::new(Self {
            truncation,
            waves,
            norms,
            perp_units,
            lookup,
            grid: OnceLock::new(),
        }))
    }

    fn lattice_slot(truncation: usize, kx: i32, ky: i32) -> usize {
        let side = 2 * truncation + 1;
        let kk = truncation as i32;
        (kx + kk) as usize * side + (ky + kk) as usize
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// Number of basis elements (twice the number of half-lattice wavevectors).
    pub fn dim(&self) -> usize {
        2 * self.waves.len()
    }

    pub fn num_waves(&self) -> usize {
        self.waves.len()
    }

    pub fn waves(&self) -> &[WaveVector] {
        &self.waves
    }

    pub fn wave(&self, j: usize) -> WaveVector {
        self.waves[j]
    }

    pub fn wave_norm(&self, j: usize) -> f64 {
        self.norms[j]
    }

    /// Unit vector `a_k` attached to half-lattice wave `j`.
    pub fn perp_unit(&self, j: usize) -> [f64; 2] {
        self.perp_units[j]
    }

    pub fn wavevector(&self, m: usize) -> WaveVector {
        self.waves[m / 2]
    }

    pub fn parity(&self, m: usize) -> Parity {
        if m.is_multiple_of(2) {
            Parity::Cos
        } else {
            Parity::Sin
        }
    }

    /// Wave index and sign (`+1` for `k`, `−1` for `−k`) of a lattice point.
    pub fn locate(&self, kx: i32, ky: i32) -> Option<(usize, i32)> {
        let kk = self.truncation as i32;
        if kx.abs() > kk || ky.abs() > kk {
            return None;
        }
        let s = self.lookup[Self::lattice_slot(self.truncation, kx, ky)];
        match s.cmp(&0) {
            std::cmp::Ordering::Greater => Some((s as usize - 1, 1)),
            std::cmp::Ordering::Less => Some(((-s) as usize - 1, -1)),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// Basis index of `(k, parity)` for `k` in the half-lattice.
    pub fn index_of(&self, k: WaveVector, parity: Parity) -> Option<usize> {
        match self.locate(k.kx, k.ky) {
            Some((j, 1)) => Some(2 * j + if parity == Parity::Cos { 0 } else { 1 }),
            _ => None,
        }
    }

    pub fn label(&self, m: usize) -> String {
        format!("{}{}", self.parity(m).as_str(), self.wavevector(m))
    }

    fn grid(&self) -> &PaddedGrid {
        self.grid
            .get_or_init(|| PaddedGrid::new(padded_size(self.truncation)))
    }

    pub fn same_as(&self, other: &ModeBasis) -> bool {
        std::ptr::eq(self, other) || self.truncation == other.truncation
    }
}

/// Smallest 2·3·5-smooth size `≥ 3K + 1`.
fn padded_size(truncation: usize) -> usize {
    let mut m = 3 * truncation + 1;
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct PaddedGrid {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl PaddedGrid {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn slot(&self, kx: i32, ky: i32) -> usize {
        let m = self.size as i32;
        (kx.rem_euclid(m) as usize) * self.size + ky.rem_euclid(m) as usize
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(data);
        transpose(data, self.size);
        plan.process(data);
        transpose(data, self.size);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// A zero-mean divergence-free field: real coefficients over a [`ModeBasis`].
#[derive(Clone)]
pub struct SpectralField {
    basis: Arc<ModeBasis>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("truncation", &self.basis.truncation)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.basis.same_as(&other.basis) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn new(basis: Arc<ModeBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                basis.dim(),
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient {i} is {}", coeffs[i])));
        }
        Ok(Self { basis, coeffs })
    }

    pub(crate) fn from_vec_unchecked(basis: Arc<ModeBasis>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), basis.dim());
        Self { basis, coeffs }
    }

    pub fn zeros(basis: &Arc<ModeBasis>) -> Self {
        Self {
            coeffs: vec![0.0; basis.dim()],
            basis: basis.clone(),
        }
    }

    /// The basis element `e_m`.
    pub fn basis_element(basis: &Arc<ModeBasis>, m: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[m] = 1.0;
        f
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn check_same_basis(&self, other: &SpectralField) -> Result<()> {
        if self.basis.same_as(&other.basis) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "basis mismatch: K={} vs K={}",
                self.basis.truncation, other.basis.truncation
            )))
        }
    }

    /// L² inner product (the basis is orthonormal).
    pub fn dot(&self, other: &SpectralField) -> f64 {
        debug_assert!(self.basis.same_as(&other.basis));
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|c| s * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &SpectralField) -> Self {
        debug_assert!(self.basis.same_as(&other.basis));
        Self {
            basis: self.basis.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        self.axpy(-1.0, other)
    }

    /// Coefficientwise product with a per-mode multiplier.
    pub fn mul_diag(&self, diag: &[f64]) -> Self {
        debug_assert_eq!(diag.len(), self.coeffs.len());
        Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().zip(diag).map(|(c, d)| c * d).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn nnz(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }

    /// Point value `u(x)` in physical space.
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (j, k) in self.basis.waves.iter().enumerate() {
            let (c, s) = (self.coeffs[2 * j], self.coeffs[2 * j + 1]);
            if c == 0.0 && s == 0.0 {
                continue;
            }
            let theta = TWO_PI * (k.kx as f64 * x[0] + k.ky as f64 * x[1]);
            let amp = SQRT_2 * (c * theta.cos() + s * theta.sin());
            let a = self.basis.perp_units[j];
            out[0] += amp * a[0];
            out[1] += amp * a[1];
        }
        out
    }

    /// Embeds the field into the unconstrained vector representation.
    pub fn to_raw(&self) -> RawField {
        let n = self.basis.num_waves();
        let mut raw = RawField::zeros(&self.basis);
        for j in 0..n {
            let a = self.basis.perp_units[j];
            let (c, s) = (self.coeffs[2 * j], self.coeffs[2 * j + 1]);
            raw.cos[j] = [c * a[0], c * a[1]];
            raw.sin[j] = [s * a[0], s * a[1]];
        }
        raw
    }

    /// Complex amplitude `ζ(k)` for the half-lattice wave `j`, such that the
    /// Fourier coefficient of the field at `k` is `a_k ζ(k)`.
    fn zeta(&self, j: usize) -> Complex64 {
        Complex64::new(self.coeffs[2 * j], -self.coeffs[2 * j + 1]) / SQRT_2
    }

    /// Nonzero full-lattice amplitudes `(k, |k|, ζ(k))`, both `k` and `−k`.
    fn lattice_entries(&self) -> Vec<(WaveVector, f64, Complex64)> {
        let mut out = Vec::new();
        for (j, k) in self.basis.waves.iter().enumerate() {
            if self.coeffs[2 * j] == 0.0 && self.coeffs[2 * j + 1] == 0.0 {
                continue;
            }
            let z = self.zeta(j);
            let n = self.basis.norms[j];
            out.push((*k, n, z));
            out.push((WaveVector::new(-k.kx, -k.ky), n, -z.conj()));
        }
        out
    }
}

/// An arbitrary (not necessarily solenoidal) real vector field with a
/// mean component, stored as cos/sin vector amplitudes per half-lattice wave:
/// `v(x) = mean + Σ_j √2 (cos_j cos(2π k_j·x) + sin_j sin(2π k_j·x))`.
#[derive(Clone, Debug)]
pub struct RawField {
    basis: Arc<ModeBasis>,
    pub mean: [f64; 2],
    pub cos: Vec<[f64; 2]>,
    pub sin: Vec<[f64; 2]>,
}

impl RawField {
    pub fn zeros(basis: &Arc<ModeBasis>) -> Self {
        let n = basis.num_waves();
        Self {
            basis: basis.clone(),
            mean: [0.0; 2],
            cos: vec![[0.0; 2]; n],
            sin: vec![[0.0; 2]; n],
        }
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn inner(&self, other: &RawField) -> f64 {
        let d = |a: &[f64; 2], b: &[f64; 2]| a[0] * b[0] + a[1] * b[1];
        d(&self.mean, &other.mean)
            + self.cos.iter().zip(&other.cos).map(|(a, b)| d(a, b)).sum::<f64>()
            + self.sin.iter().zip(&other.sin).map(|(a, b)| d(a, b)).sum::<f64>()
    }

    pub fn sub(&self, other: &RawField) -> RawField {
        let s = |a: &[f64; 2], b: &[f64; 2]| [a[0] - b[0], a[1] - b[1]];
        RawField {
            basis: self.basis.clone(),
            mean: s(&self.mean, &other.mean),
            cos: self.cos.iter().zip(&other.cos).map(|(a, b)| s(a, b)).collect(),
            sin: self.sin.iter().zip(&other.sin).map(|(a, b)| s(a, b)).collect(),
        }
    }

    /// Spectral divergence: `div v = Σ_j 2π√2 (k·sin_j cos(2πk·x) − k·cos_j sin(2πk·x))`.
    /// Returns the pair `(2π k·cos_j, 2π k·sin_j)` per wave.
    pub fn divergence(&self) -> Vec<[f64; 2]> {
        self.basis
            .waves
            .iter()
            .enumerate()
            .map(|(j, k)| {
                let (kx, ky) = (k.kx as f64, k.ky as f64);
                [
                    TWO_PI * (kx * self.cos[j][0] + ky * self.cos[j][1]),
                    TWO_PI * (kx * self.sin[j][0] + ky * self.sin[j][1]),
                ]
            })
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.cos.iter().chain(&self.sin).flatten().all(|v| v.is_finite())
    }
}

/// Leray projection onto the zero-mean divergence-free subspace.
pub fn leray_project(raw: &RawField) -> Result<SpectralField> {
    if !raw.is_finite() {
        return Err(Error::NonFinite("raw field has non-finite entries".into()));
    }
    let basis = &raw.basis;
    let mut coeffs = vec![0.0; basis.dim()];
    for j in 0..basis.num_waves() {
        let a = basis.perp_units[j];
        coeffs[2 * j] = a[0] * raw.cos[j][0] + a[1] * raw.cos[j][1];
        coeffs[2 * j + 1] = a[0] * raw.sin[j][0] + a[1] * raw.sin[j][1];
    }
    Ok(SpectralField::from_vec_unchecked(basis.clone(), coeffs))
}

/// Galerkin-truncated advection `b(u, v) = −Π_K Π (u·∇)v`.
pub fn nonlinear_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same_basis(v)?;
    Ok(advect(u, v))
}

/// Time-one flow of the frozen transport equation `∂_s w = b(v, w)`,
/// `w(1) = exp(b(v, ·)) u`. Since `b(v, ·)` is skew-symmetric on the
/// truncated space the flow preserves `‖u‖`. Evaluated by a Taylor series,
/// with repeated halving when the series converges slowly.
pub fn transport_flow(v: &SpectralField, u: &SpectralField) -> Result<SpectralField> {
    v.check_same_basis(u)?;
    Ok(flow(v, u))
}

pub(crate) fn flow(v: &SpectralField, u: &SpectralField) -> SpectralField {
    const MAX_TERMS: usize = 24;
    let scale = u.norm();
    if scale == 0.0 || v.max_abs() == 0.0 {
        return u.clone();
    }
    let mut sum = u.clone();
    let mut term = u.clone();
    for j in 1..=MAX_TERMS {
        term = advect(v, &term).scale(1.0 / j as f64);
        sum = sum.add(&term);
        if term.norm() <= 1e-16 * scale {
            return sum;
        }
    }
    let half = v.scale(0.5);
    flow(&half, &flow(&half, u))
}

/// Which evaluation route [`advect_with`] takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductRoute {
    Auto,
    Direct,
    Padded,
}

pub(crate) fn advect(u: &SpectralField, v: &SpectralField) -> SpectralField {
    advect_with(u, v, ProductRoute::Auto)
}

/// As [`nonlinear_b`] with an explicit choice of evaluation route; both
/// routes are alias-free and agree to rounding.
pub fn advect_with(u: &SpectralField, v: &SpectralField, route: ProductRoute) -> SpectralField {
    debug_assert!(u.basis.same_as(&v.basis));
    let route = match route {
        ProductRoute::Auto => {
            let pairs = (2 * u.nnz()) as f64 * (2 * v.nnz()) as f64;
            let m = padded_size(u.basis.truncation) as f64;
            if pairs < 2.0 * m * m * m.log2() {
                ProductRoute::Direct
            } else {
                ProductRoute::Padded
            }
        }
        r => r,
    };
    let coeffs = match route {
        ProductRoute::Padded => advect_padded(u, v),
        _ => advect_direct(u, v),
    };
    SpectralField::from_vec_unchecked(u.basis.clone(), coeffs)
}

/// Sum over triads `p + q = k`:
/// `ζ_b(k) = −2πi Σ ζ_u(p) ζ_v(q) (p^⊥·q)(q·k) / (|p||q||k|)`.
fn triad_sum(
    basis: &ModeBasis,
    eu: &[(WaveVector, f64, Complex64)],
    ev: &[(WaveVector, f64, Complex64)],
    mut sink: impl FnMut(usize, Complex64),
) {
    for (p, pn, zu) in eu {
        for (q, qn, zv) in ev {
            let k = WaveVector::new(p.kx + q.kx, p.ky + q.ky);
            if !k.in_half_lattice() {
                continue;
            }
            let Some((j, _)) = basis.locate(k.kx, k.ky) else {
                continue;
            };
            let cross = p.cross(q);
            if cross == 0 {
                continue;
            }
            let qk = q.dot(&k);
            if qk == 0 {
                continue;
            }
            let w = (cross * qk) as f64 / (pn * qn * basis.norms[j]);
            sink(j, zu * zv * w);
        }
    }
}

// ζ_b = −2πi·acc; c = √2 Re ζ, s = −√2 Im ζ
fn zeta_to_coeffs(acc: Complex64) -> (f64, f64) {
    let z = Complex64::new(0.0, -TWO_PI) * acc;
    (SQRT_2 * z.re, -SQRT_2 * z.im)
}

fn advect_direct(u: &SpectralField, v: &SpectralField) -> Vec<f64> {
    let basis = &u.basis;
    let mut acc = vec![Complex64::new(0.0, 0.0); basis.num_waves()];
    triad_sum(basis, &u.lattice_entries(), &v.lattice_entries(), |j, z| acc[j] += z);
    let mut out = vec![0.0; basis.dim()];
    for (j, a) in acc.iter().enumerate() {
        let (c, s) = zeta_to_coeffs(*a);
        out[2 * j] = c;
        out[2 * j + 1] = s;
    }
    out
}

fn sparse_entries(basis: &ModeBasis, f: &[(usize, f64)]) -> Vec<(WaveVector, f64, Complex64)> {
    let mut waves: Vec<(usize, f64, f64)> = Vec::new();
    for &(m, v) in f {
        let j = m / 2;
        let slot = match waves.iter().position(|w| w.0 == j) {
            Some(i) => i,
            None => {
                waves.push((j, 0.0, 0.0));
                waves.len() - 1
            }
        };
        if m % 2 == 0 {
            waves[slot].1 += v;
        } else {
            waves[slot].2 += v;
        }
    }
    let mut out = Vec::with_capacity(2 * waves.len());
    for (j, c, s) in waves {
        let k = basis.waves[j];
        let z = Complex64::new(c, -s) / SQRT_2;
        out.push((k, basis.norms[j], z));
        out.push((WaveVector::new(-k.kx, -k.ky), basis.norms[j], -z.conj()));
    }
    out
}

/// `b(u, v)` for fields given as sparse `(mode, coefficient)` lists; the
/// result is sparse as well, in no particular order.
pub fn advect_sparse(basis: &ModeBasis, u: &[(usize, f64)], v: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut acc: Vec<(usize, Complex64)> = Vec::new();
    triad_sum(basis, &sparse_entries(basis, u), &sparse_entries(basis, v), |j, z| {
        match acc.iter_mut().find(|e| e.0 == j) {
            Some(e) => e.1 += z,
            None => acc.push((j, z)),
        }
    });
    let mut out = Vec::with_capacity(2 * acc.len());
    for (j, a) in acc {
        let (c, s) = zeta_to_coeffs(a);
        out.push((2 * j, c));
        out.push((2 * j + 1, s));
    }
    out
}

fn advect_padded(u: &SpectralField, v: &SpectralField) -> Vec<f64> {
    let basis = &u.basis;
    let grid = basis.grid();
    let m = grid.size;
    let zero = Complex64::new(0.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    // packed pairs of real fields: (u_x + i u_y), (∂x v_x + i ∂y v_x), (∂x v_y + i ∂y v_y)
    let mut pu = vec![zero; m * m];
    let mut pvx = vec![zero; m * m];
    let mut pvy = vec![zero; m * m];
    for (j, k) in basis.waves.iter().enumerate() {
        let a = basis.perp_units[j];
        let zu = u.zeta(j);
        let zv = v.zeta(j);
        let s_pos = grid.slot(k.kx, k.ky);
        let s_neg = grid.slot(-k.kx, -k.ky);
        let (ux, uy) = (zu * a[0], zu * a[1]);
        pu[s_pos] += ux + i * uy;
        pu[s_neg] += ux.conj() + i * uy.conj();
        let (vx, vy) = (zv * a[0], zv * a[1]);
        let dx = i * (TWO_PI * k.kx as f64);
        let dy = i * (TWO_PI * k.ky as f64);
        let (dxvx, dyvx, dxvy, dyvy) = (dx * vx, dy * vx, dx * vy, dy * vy);
        pvx[s_pos] += dxvx + i * dyvx;
        pvx[s_neg] += dxvx.conj() + i * dyvx.conj();
        pvy[s_pos] += dxvy + i * dyvy;
        pvy[s_neg] += dxvy.conj() + i * dyvy.conj();
    }
    grid.transform(&mut pu, true);
    grid.transform(&mut pvx, true);
    grid.transform(&mut pvy, true);
    let norm = 1.0 / (m * m) as f64;
    let mut w: Vec<Complex64> = pu
        .iter()
        .zip(pvx.iter().zip(&pvy))
        .map(|(u, (gx, gy))| {
            let wx = u.re * gx.re + u.im * gx.im;
            let wy = u.re * gy.re + u.im * gy.im;
            Complex64::new(wx * norm, wy * norm)
        })
        .collect();
    grid.transform(&mut w, false);
    let mut out = vec![0.0; basis.dim()];
    for (j, k) in basis.waves.iter().enumerate() {
        let zp = w[grid.slot(k.kx, k.ky)];
        let zn = w[grid.slot(-k.kx, -k.ky)].conj();
        let wx = (zp + zn) * 0.5;
        let wy = (zp - zn) * Complex64::new(0.0, -0.5);
        let a = basis.perp_units[j];
        let z = -(wx * a[0] + wy * a[1]);
        out[2 * j] = SQRT_2 * z.re;
        out[2 * j + 1] = -SQRT_2 * z.im;
    }
    out
}

/// `⟨u, v⟩_{H^s} = Σ_m (−α_m)^s u_m v_m` with `α_m` the eigenvalues of `op`.
pub fn sobolev_inner(
    u: &SpectralField,
    v: &SpectralField,
    s: f64,
    op: &DiagonalOperator,
) -> Result<f64> {
    u.check_same_basis(v)?;
    if !op.basis().same_as(u.basis()) {
        return Err(Error::InvalidArgument("operator basis mismatch".into()));
    }
    if let Some(m) = op.eigenvalues().iter().position(|&a| a >= 0.0) {
        return Err(Error::InvalidOperator(format!(
            "eigenvalue {} at mode {m} is not negative",
            op.eigenvalues()[m]
        )));
    }
    Ok(op
        .eigenvalues()
        .iter()
        .zip(u.coeffs().iter().zip(v.coeffs()))
        .map(|(a, (x, y))| (-a).powf(s) * x * y)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_has_eight_elements() {
        let b = ModeBasis::new(1).unwrap();
        assert_eq!(b.dim(), 8);
        let waves: Vec<_> = b.waves().to_vec();
        assert_eq!(
            waves,
            vec![
                WaveVector::new(0, 1),
                WaveVector::new(1, 0),
                WaveVector::new(1, -1),
                WaveVector::new(1, 1)
            ]
        );
    }

    #[test]
    fn truncation_bounds() {
        assert!(matches!(ModeBasis::new(0), Err(Error::InvalidParameter(_))));
        assert!(ModeBasis::new(MAX_TRUNCATION + 1).is_err());
    }

    #[test]
    fn locate_round_trip() {
        let b = ModeBasis::new(3).unwrap();
        for (j, k) in b.waves().iter().enumerate() {
            assert_eq!(b.locate(k.kx, k.ky), Some((j, 1)));
            assert_eq!(b.locate(-k.kx, -k.ky), Some((j, -1)));
        }
        assert_eq!(b.locate(0, 0), None);
        assert_eq!(b.locate(4, 0), None);
    }

    #[test]
    fn padded_size_is_smooth() {
        assert_eq!(padded_size(1), 4);
        assert_eq!(padded_size(6), 20);
        assert_eq!(padded_size(8), 25);
    }

    #[test]
    fn self_advection_of_basis_element_vanishes() {
        let b = ModeBasis::new(4).unwrap();
        for m in 0..b.dim() {
            let e = SpectralField::basis_element(&b, m);
            let r = nonlinear_b(&e, &e).unwrap();
            assert!(r.max_abs() < 1e-14, "mode {m}: {}", r.max_abs());
        }
    }

    #[test]
    fn basis_mismatch_is_rejected() {
        let a = SpectralField::zeros(&ModeBasis::new(2).unwrap());
        let b = SpectralField::zeros(&ModeBasis::new(3).unwrap());
        assert!(matches!(nonlinear_b(&a, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradient_mode_projects_to_zero() {
        let b = ModeBasis::new(2).unwrap();
        let j = b.locate(1, 0).unwrap().0;
        let mut raw = RawField::zeros(&b);
        raw.cos[j] = [1.0, 0.0];
        assert_eq!(leray_project(&raw).unwrap().max_abs(), 0.0);
        raw.cos[j] = [0.0, 1.0];
        let p = leray_project(&raw).unwrap();
        assert_eq!(p.coeffs()[2 * j], 1.0);
        assert_eq!(p.nnz(), 1);
    }

    #[test]
    fn non_finite_raw_rejected() {
        let b = ModeBasis::new(1).unwrap();
        let mut raw = RawField::zeros(&b);
        raw.mean[0] = f64::NAN;
        assert!(matches!(leray_project(&raw), Err(Error::NonFinite(_))));
    }
}
