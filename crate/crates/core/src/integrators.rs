//! Time stepping for the coupled slow-fast Galerkin system, the
//! transport-noise limit equation and the deterministic eddy-viscosity
//! equation, plus trajectory orchestration.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::limit::{EddyOperator, LimitCoefficients};
use crate::operators::{CovarianceSpec, DiagonalOperator};
use crate::ou::{expm1_ratio, OuParams, OuStepper};
use crate::spectral::{advect, flow, ModeBasis, SpectralField};

pub const DEFAULT_BLOWUP_CAP: f64 = 1e6;

/// Dynamic state. `fast` is present only for slow-fast runs.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub step: usize,
    pub t: f64,
    pub u: SpectralField,
    pub fast: Option<FastState>,
}

/// Fast component of a slow-fast run together with running time integrals.
#[derive(Clone, Debug, PartialEq)]
pub struct FastState {
    pub y: SpectralField,
    /// Linearised fast process, driven by the same noise as `y`.
    pub big_y: SpectralField,
    /// `∫ 2⟨−ε^{-1} C_ε y, y⟩ dt`.
    pub dissipation: f64,
    /// `ε^{-1} ∫ ‖y − Y‖² dt`.
    pub gap_integral: f64,
}

#[derive(Clone, Debug)]
pub struct SlowFastParams {
    pub ou: OuParams,
    pub dt: f64,
    pub horizon: f64,
    pub u0: SpectralField,
    pub y0: SpectralField,
    /// When false every `b` term is dropped and the system is linear.
    pub nonlinear: bool,
    pub blowup_cap: f64,
}

impl SlowFastParams {
    pub fn new(ou: OuParams, dt: f64, horizon: f64, u0: SpectralField, y0: SpectralField) -> Result<Self> {
        let p = Self { ou, dt, horizon, u0, y0, nonlinear: true, blowup_cap: DEFAULT_BLOWUP_CAP };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} shorter than dt {}",
                self.horizon, self.dt
            )));
        }
        let b = self.ou.basis();
        self.u0.basis().same_as(b).then_some(()).ok_or_else(|| {
            Error::InvalidArgument("u0 basis differs from operator basis".into())
        })?;
        self.y0.check_same_basis(&self.u0)?;
        if !(self.blowup_cap > 0.0) {
            return Err(Error::InvalidParameter("blow-up cap must be positive".into()));
        }
        Ok(())
    }
}

/// Stepper for
///
/// ```text
/// du = [Au + b(u,u) + ε^{-1/2} b(y,u)] dt
/// dy = [ε^{-1} C_ε y + b(u,y) + ε^{-1/2} b(y,y)] dt + ε^{-1/2} Q^{1/2} dW
/// dY = ε^{-1} C_ε Y dt + ε^{-1/2} Q^{1/2} dW,   Y_0 = 0
/// ```
///
/// Both equations are transport by the velocity `u + ε^{-1/2} y` plus a
/// linear part. A step first transports `y` by the frozen velocity, each
/// fast mode weighted by its decay over the step,
/// `y⁺ = exp(b(dt·u + ε^{-1/2} φ₁ y, ·)) y` with `φ₁ = ∫_0^dt e^{μs} ds`,
/// then integrates the fast linear part and its noise exactly:
/// `y(s) = e^{μs} y⁺ + η(s)`. The slow field is
/// transported by the time integral of the same velocity,
/// `u' = e^{A dt} exp(b(dt·u + ε^{-1/2} ∫_0^dt y(s) ds, ·)) u`.
/// The transport flows are norm-preserving, so the energy balances of both
/// components hold without a step-size defect.
#[derive(Clone, Debug)]
pub struct SlowFastIntegrator {
    params: SlowFastParams,
    stepper: OuStepper,
    a_decay: Vec<f64>,
    // ∫_0^dt e^{μs} ds and ∫_0^dt e^{2μs} ds
    phi1: Vec<f64>,
    phi2: Vec<f64>,
    // ∫_0^dt Var y(s) ds given y⁺, per mode
    var_integral: Vec<f64>,
    trace_q: f64,
}

impl SlowFastIntegrator {
    pub fn new(params: SlowFastParams) -> Result<Self> {
        params.validate()?;
        let dt = params.dt;
        let eps = params.ou.epsilon();
        let stepper = OuStepper::new(&params.ou, dt)?;
        let a_decay = params.ou.a().eigenvalues().iter().map(|a| (a * dt).exp()).collect();
        let mu = stepper.rates().to_vec();
        let phi1 = mu.iter().map(|&m| expm1_ratio(m, dt)).collect();
        let phi2: Vec<f64> = mu.iter().map(|&m| expm1_ratio(2.0 * m, dt)).collect();
        let qd = params.ou.q().diagonal_entries();
        let var_integral = (0..mu.len())
            .map(|k| qd[k] / eps / (2.0 * mu[k]) * (phi2[k] - dt))
            .collect();
        let trace_q = params.ou.q().trace();
        Ok(Self { params, stepper, a_decay, phi1, phi2, var_integral, trace_q })
    }

    pub fn params(&self) -> &SlowFastParams {
        &self.params
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        self.params.ou.basis()
    }

    pub fn trace_q(&self) -> f64 {
        self.trace_q
    }

    pub fn initial_state(&self) -> State {
        State {
            step: 0,
            t: 0.0,
            u: self.params.u0.clone(),
            fast: Some(FastState {
                y: self.params.y0.clone(),
                big_y: SpectralField::zeros(self.basis()),
                dissipation: 0.0,
                gap_integral: 0.0,
            }),
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &State, rng: &mut R) -> Result<State> {
        let fast = state
            .fast
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("slow-fast step needs a fast state".into()))?;
        let p = &self.params;
        let dt = p.dt;
        let eps = p.ou.epsilon();
        let se = eps.sqrt();
        let basis = self.basis();
        let mu = self.stepper.rates();
        let u = &state.u;
        let y = &fast.y;

        let y_plus = if p.nonlinear {
            let weighted: Vec<f64> = (0..basis.dim()).map(|k| self.phi1[k] * y.coeffs()[k] / se).collect();
            let v = u.scale(dt).add(&SpectralField::from_vec_unchecked(basis.clone(), weighted));
            flow(&v, y)
        } else {
            y.clone()
        };
        let d_plus = y_plus.sub(&fast.big_y);

        let (eta, w) = self.stepper.sample_pair(rng);
        let y_next = self.stepper.propagate(y_plus.coeffs(), &eta);
        let big_y_next = self.stepper.propagate(fast.big_y.coeffs(), &eta);

        let n = basis.dim();
        let mut dissipation = 0.0;
        let mut gap = 0.0;
        // ε^{-1/2} ∫_0^dt y(s) ds
        let mut drive = vec![0.0; n];
        for k in 0..n {
            let yp = y_plus.coeffs()[k];
            dissipation += -2.0 * mu[k] * (yp * yp * self.phi2[k] + self.var_integral[k]);
            let dp = d_plus.coeffs()[k];
            gap += dp * dp * self.phi2[k];
            drive[k] = (self.phi1[k] * yp + (eta[k] - w[k] / se) / mu[k]) / se;
        }
        gap /= eps;

        let u_next = if p.nonlinear {
            let drive = SpectralField::from_vec_unchecked(basis.clone(), drive);
            flow(&drive.axpy(dt, u), u).mul_diag(&self.a_decay)
        } else {
            u.mul_diag(&self.a_decay)
        };

        let next = State {
            step: state.step + 1,
            t: (state.step + 1) as f64 * dt,
            u: u_next,
            fast: Some(FastState {
                y: SpectralField::from_vec_unchecked(basis.clone(), y_next),
                big_y: SpectralField::from_vec_unchecked(basis.clone(), big_y_next),
                dissipation: fast.dissipation + dissipation,
                gap_integral: fast.gap_integral + gap,
            }),
        };
        let f = next.fast.as_ref().expect("fast state");
        guard(next.step, p.blowup_cap, &[&next.u, &f.y])?;
        Ok(next)
    }
}

fn guard(step: usize, cap: f64, fields: &[&SpectralField]) -> Result<()> {
    for f in fields {
        let norm = f.norm();
        if !norm.is_finite() || norm > cap {
            return Err(Error::Divergence { step, norm, cap });
        }
    }
    Ok(())
}

/// One slow-fast step; builds the integrator on every call.
pub fn step_slowfast<R: Rng + ?Sized>(state: &State, p: &SlowFastParams, rng: &mut R) -> Result<State> {
    SlowFastIntegrator::new(p.clone())?.step(state, rng)
}

/// Exponential Euler-Maruyama for the Itô transport-noise equation
/// `du = [Au + b(u,u) + S(u) + b(r,u)] dt + b(Σ_k g_k dW_k, u)`.
/// The self-advection enters through the flow `exp(dt·b(u, ·)) u`.
#[derive(Clone, Debug)]
pub struct LimitIntegrator {
    coeffs: Arc<LimitCoefficients>,
    a_decay: Vec<f64>,
    dt: f64,
    u0: SpectralField,
    /// When false the self-advection `b(u,u)` is dropped.
    pub nonlinear: bool,
    pub blowup_cap: f64,
}

impl LimitIntegrator {
    pub fn new(coeffs: Arc<LimitCoefficients>, a: &DiagonalOperator, dt: f64, u0: SpectralField) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        a.check_basis(coeffs.basis())?;
        a.check_basis(u0.basis())?;
        if !coeffs.commutes() {
            return Err(Error::Unsupported(format!(
                "limit equation needs commuting C and Q (residual {:.3e})",
                coeffs.commute_residual()
            )));
        }
        let a_decay = a.eigenvalues().iter().map(|e| (e * dt).exp()).collect();
        Ok(Self { coeffs, a_decay, dt, u0, nonlinear: true, blowup_cap: DEFAULT_BLOWUP_CAP })
    }

    pub fn coefficients(&self) -> &Arc<LimitCoefficients> {
        &self.coeffs
    }

    pub fn initial_state(&self) -> State {
        State { step: 0, t: 0.0, u: self.u0.clone(), fast: None }
    }

    /// Step with explicitly supplied Brownian increments, one per noise direction.
    pub fn step_with(&self, state: &State, dw: &[f64]) -> Result<State> {
        let u = &state.u;
        let mut drift = self.coeffs.corrector_fast(u);
        let r = self.coeffs.drift();
        if r.max_abs() > 0.0 {
            drift = drift.add(&advect(r, u));
        }
        let base = if self.nonlinear { flow(&u.scale(self.dt), u) } else { u.clone() };
        let noise = crate::limit::transport_noise_increment(&self.coeffs, u, dw)?;
        let u_next = base.axpy(self.dt, &drift).add(&noise).mul_diag(&self.a_decay);
        guard(state.step + 1, self.blowup_cap, &[&u_next])?;
        Ok(State { step: state.step + 1, t: (state.step + 1) as f64 * self.dt, u: u_next, fast: None })
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &State, rng: &mut R) -> Result<State> {
        let sd = self.dt.sqrt();
        let dw: Vec<f64> = (0..self.coeffs.directions().len())
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.step_with(state, &dw)
    }
}

pub fn step_limit<R: Rng + ?Sized>(
    u: &SpectralField,
    coeffs: &Arc<LimitCoefficients>,
    a: &DiagonalOperator,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    let integ = LimitIntegrator::new(coeffs.clone(), a, dt, u.clone())?;
    Ok(integ.step(&integ.initial_state(), rng)?.u)
}

/// Deterministic `du = [Au + b(u,u) + κ_N(u)] dt`. When `κ_N` is a Fourier
/// multiplier the linear part `A + κ_N` is integrated exactly.
#[derive(Clone, Debug)]
pub struct EddyIntegrator {
    kappa: Option<Arc<EddyOperator>>,
    linear_decay: Vec<f64>,
    exact_kappa: bool,
    dt: f64,
    u0: SpectralField,
    pub nonlinear: bool,
    pub blowup_cap: f64,
}

impl EddyIntegrator {
    pub fn new(
        kappa: Option<Arc<EddyOperator>>,
        a: &DiagonalOperator,
        dt: f64,
        u0: SpectralField,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        a.check_basis(u0.basis())?;
        let exact_kappa = kappa.as_ref().is_some_and(|k| k.is_translation_invariant());
        let linear_decay = match (&kappa, exact_kappa) {
            (Some(k), true) => a
                .eigenvalues()
                .iter()
                .zip(k.diagonal())
                .map(|(e, kd)| ((e + kd) * dt).exp())
                .collect(),
            _ => a.eigenvalues().iter().map(|e| (e * dt).exp()).collect(),
        };
        Ok(Self { kappa, linear_decay, exact_kappa, dt, u0, nonlinear: true, blowup_cap: DEFAULT_BLOWUP_CAP })
    }

    /// Builds `κ_N` from a shell covariance and the fast operator `C`.
    pub fn from_covariance(
        qn: &CovarianceSpec,
        c: &DiagonalOperator,
        a: &DiagonalOperator,
        dt: f64,
        u0: SpectralField,
    ) -> Result<Self> {
        let k = Arc::new(EddyOperator::new(qn, c)?);
        Self::new(Some(k), a, dt, u0)
    }

    pub fn initial_state(&self) -> State {
        State { step: 0, t: 0.0, u: self.u0.clone(), fast: None }
    }

    pub fn step(&self, state: &State) -> Result<State> {
        let u = &state.u;
        let mut next = if self.nonlinear { flow(&u.scale(self.dt), u) } else { u.clone() };
        if let (Some(k), false) = (&self.kappa, self.exact_kappa) {
            next = next.axpy(self.dt, &k.apply(u));
        }
        let u_next = next.mul_diag(&self.linear_decay);
        guard(state.step + 1, self.blowup_cap, &[&u_next])?;
        Ok(State { step: state.step + 1, t: (state.step + 1) as f64 * self.dt, u: u_next, fast: None })
    }
}

pub fn step_eddy_deterministic(
    u: &SpectralField,
    qn: &CovarianceSpec,
    c: &DiagonalOperator,
    a: &DiagonalOperator,
    dt: f64,
) -> Result<SpectralField> {
    let integ = EddyIntegrator::from_covariance(qn, c, a, dt, u.clone())?;
    Ok(integ.step(&integ.initial_state())?.u)
}

#[derive(Clone, Debug)]
pub enum Integrator {
    SlowFast(SlowFastIntegrator),
    Limit(LimitIntegrator),
    Eddy(EddyIntegrator),
}

impl Integrator {
    pub fn kind(&self) -> &'static str {
        match self {
            Integrator::SlowFast(_) => "slowfast",
            Integrator::Limit(_) => "limit",
            Integrator::Eddy(_) => "eddy",
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Integrator::SlowFast(i) => i.params.dt,
            Integrator::Limit(i) => i.dt,
            Integrator::Eddy(i) => i.dt,
        }
    }

    pub fn initial_state(&self) -> State {
        match self {
            Integrator::SlowFast(i) => i.initial_state(),
            Integrator::Limit(i) => i.initial_state(),
            Integrator::Eddy(i) => i.initial_state(),
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &State, rng: &mut R) -> Result<State> {
        match self {
            Integrator::SlowFast(i) => i.step(state, rng),
            Integrator::Limit(i) => i.step(state, rng),
            Integrator::Eddy(i) => i.step(state),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Observable {
    /// `⟨u, h⟩`.
    Pairing(SpectralField),
    /// `‖u‖²`.
    Energy,
    /// `Σ_{|k| ≤ L} |u_k|²`, the energy of the large scales.
    BandEnergy(f64),
    /// `‖y‖²`.
    FastEnergy,
    /// `‖y − Y‖²`.
    GapNorm,
    /// `ε^{-1} ∫_0^t ‖y − Y‖² ds`.
    LinearisationGap,
    /// `∫_0^t 2⟨−ε^{-1} C_ε y, y⟩ ds`.
    Dissipation,
}

impl Observable {
    pub fn name(&self, index: usize) -> String {
        match self {
            Observable::Pairing(_) => format!("pairing{index}"),
            Observable::Energy => "energy".into(),
            Observable::BandEnergy(l) => format!("band_energy_{l}"),
            Observable::FastEnergy => "fast_energy".into(),
            Observable::GapNorm => "gap_norm".into(),
            Observable::LinearisationGap => "linearisation_gap".into(),
            Observable::Dissipation => "dissipation".into(),
        }
    }

    pub fn needs_fast(&self) -> bool {
        matches!(
            self,
            Observable::FastEnergy | Observable::GapNorm | Observable::LinearisationGap | Observable::Dissipation
        )
    }

    pub fn evaluate(&self, s: &State) -> Result<f64> {
        let fast = || {
            s.fast
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("observable needs a slow-fast run".into()))
        };
        Ok(match self {
            Observable::Pairing(h) => {
                s.u.check_same_basis(h)?;
                s.u.dot(h)
            }
            Observable::Energy => s.u.norm_sq(),
            Observable::BandEnergy(l) => {
                let b = s.u.basis();
                s.u.coeffs()
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| b.wavevector(*m).norm() <= *l)
                    .map(|(_, c)| c * c)
                    .sum()
            }
            Observable::FastEnergy => fast()?.y.norm_sq(),
            Observable::GapNorm => {
                let f = fast()?;
                f.y.sub(&f.big_y).norm_sq()
            }
            Observable::LinearisationGap => fast()?.gap_integral,
            Observable::Dissipation => fast()?.dissipation,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `values[observable][record]`.
    pub values: Vec<Vec<f64>>,
    pub final_state: State,
    pub warnings: Vec<String>,
}

/// Number of steps for a horizon, rounding `T/dt` to the nearest integer.
pub fn step_count(horizon: f64, dt: f64) -> (usize, Option<String>) {
    let ratio = horizon / dt;
    let n = ratio.round().max(1.0) as usize;
    let warn = ((ratio - n as f64).abs() > 1e-9 * ratio.max(1.0)).then(|| {
        format!("T/dt = {ratio} is not an integer; running {n} steps to t = {}", n as f64 * dt)
    });
    (n, warn)
}

pub fn run_trajectory<R: Rng + ?Sized>(
    integ: &Integrator,
    observables: &[Observable],
    horizon: f64,
    stride: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let (n, warn) = step_count(horizon, integ.dt());
    let mut t = continue_trajectory(integ, integ.initial_state(), observables, n, stride, rng, |_, _| Ok(()))?;
    t.warnings.extend(warn);
    Ok(t)
}

/// Advances `start` to step `total_steps`, recording observables at every
/// step index divisible by `stride` (including `start` itself when it is).
/// `hook` runs after each step with the new state and the generator.
pub fn continue_trajectory<R: Rng + ?Sized>(
    integ: &Integrator,
    start: State,
    observables: &[Observable],
    total_steps: usize,
    stride: usize,
    rng: &mut R,
    mut hook: impl FnMut(&State, &mut R) -> Result<()>,
) -> Result<Trajectory> {
    if stride == 0 {
        return Err(Error::InvalidParameter("output stride must be positive".into()));
    }
    for o in observables {
        if o.needs_fast() && start.fast.is_none() {
            return Err(Error::InvalidArgument(format!(
                "observable {} needs a slow-fast run",
                o.name(0)
            )));
        }
    }
    let mut times = Vec::new();
    let mut values = vec![Vec::new(); observables.len()];
    let record = |s: &State, times: &mut Vec<f64>, values: &mut Vec<Vec<f64>>| -> Result<()> {
        if s.step.is_multiple_of(stride) || s.step == total_steps {
            times.push(s.t);
            for (o, v) in observables.iter().zip(values.iter_mut()) {
                v.push(o.evaluate(s)?);
            }
        }
        Ok(())
    };
    let mut state = start;
    record(&state, &mut times, &mut values)?;
    while state.step < total_steps {
        state = integ.step(&state, rng)?;
        record(&state, &mut times, &mut values)?;
        hook(&state, rng)?;
    }
    Ok(Trajectory { times, values, final_state: state, warnings: Vec::new() })
}
