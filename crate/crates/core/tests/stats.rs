use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::integrators::{
    run_trajectory, Integrator, LimitIntegrator, Observable, SlowFastIntegrator, SlowFastParams,
};
use slowfast::limit::LimitCoefficients;
use slowfast::operators::{CovarianceSpec, DiagonalOperator};
use slowfast::ou::OuParams;
use slowfast::spectral::{ModeBasis, SpectralField};
use slowfast::stats::{
    compare_laws, compare_samples, energy_balance_report, energy_bias_check, fit_decay_rate, ks_critical_99,
    ks_distance, mean_se, replica_rng, run_ensemble, variance_se, EnergyBalance,
};
use slowfast::Error;

fn low_field(b: &Arc<ModeBasis>, rng: &mut impl Rng) -> SpectralField {
    let c = (0..b.dim())
        .map(|m| if b.wavevector(m).norm_sq() <= 2 { rng.random_range(-1.0..1.0) } else { 0.0 })
        .collect();
    SpectralField::new(b.clone(), c).unwrap()
}

fn limit_integrator(q: f64) -> (Integrator, SpectralField) {
    let b = ModeBasis::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let a = DiagonalOperator::laplacian(0.02, &b).unwrap();
    let qs = CovarianceSpec::diagonal(&b, vec![q; b.dim()]).unwrap();
    let coeffs = Arc::new(LimitCoefficients::new(&c, &qs).unwrap());
    let u0 = low_field(&b, &mut rng);
    let h = low_field(&b, &mut rng);
    (Integrator::Limit(LimitIntegrator::new(coeffs, &a, 0.01, u0).unwrap()), h)
}

fn slowfast(q: f64, nonlinear: bool, seed: u64) -> (SlowFastIntegrator, f64) {
    let b = ModeBasis::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let a = DiagonalOperator::laplacian(0.01, &b).unwrap();
    let qs = CovarianceSpec::diagonal(&b, vec![q; b.dim()]).unwrap();
    let ou = OuParams::new(0.1, c, a, qs).unwrap();
    let mut p = SlowFastParams::new(ou, 0.02, 0.2, low_field(&b, &mut rng), low_field(&b, &mut rng)).unwrap();
    p.nonlinear = nonlinear;
    let integ = SlowFastIntegrator::new(p).unwrap();
    let tr = integ.trace_q();
    (integ, tr)
}

#[test]
fn equal_seeds_give_identical_replicas() {
    let (integ, h) = limit_integrator(0.1);
    let obs = [Observable::Pairing(h)];
    let a = run_trajectory(&integ, &obs, 0.2, 5, &mut replica_rng(9, 3)).unwrap();
    let b = run_trajectory(&integ, &obs, 0.2, 5, &mut replica_rng(9, 3)).unwrap();
    assert_eq!(a, b);
    let e1 = run_ensemble(&integ, &obs, 0.2, 5, 8, 9, "fp").unwrap();
    let e2 = run_ensemble(&integ, &obs, 0.2, 5, 8, 9, "fp").unwrap();
    assert_eq!(e1, e2);
    assert_eq!(e1.samples[0][3], a.values[0]);
    assert!(matches!(run_ensemble(&integ, &obs, 0.2, 5, 1, 9, "fp"), Err(Error::InvalidParameter(_))));
}

#[test]
fn noiseless_ensemble_has_zero_spread() {
    let (integ, h) = limit_integrator(0.0);
    let res = run_ensemble(&integ, &[Observable::Pairing(h), Observable::Energy], 0.2, 10, 6, 1, "fp").unwrap();
    for o in 0..2 {
        let x = res.last(o);
        assert!(x.iter().all(|v| *v == x[0]));
        let (v, _) = variance_se(&x);
        assert!(v <= 1e-30 * x[0] * x[0]);
    }
}

#[test]
fn standard_error_follows_clt_scaling() {
    let (integ, h) = limit_integrator(0.3);
    let obs = [Observable::Pairing(h)];
    let small = run_ensemble(&integ, &obs, 0.1, 10, 200, 3, "fp").unwrap();
    let large = run_ensemble(&integ, &obs, 0.1, 10, 800, 4, "fp").unwrap();
    let (_, s1) = mean_se(&small.last(0));
    let (_, s2) = mean_se(&large.last(0));
    // quadrupling M halves the standard error
    let ratio = s1 / s2;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn self_comparison_is_zero() {
    let (integ, h) = limit_integrator(0.2);
    let res = run_ensemble(&integ, &[Observable::Pairing(h)], 0.1, 10, 40, 5, "fp").unwrap();
    let cmp = compare_laws(&res, &res, "pairing0", 1).unwrap();
    assert_eq!((cmp.ks, cmp.mean_diff, cmp.var_diff), (0.0, 0.0, 0.0));
    assert!(matches!(compare_laws(&res, &res, "energy", 1), Err(Error::InvalidArgument(_))));
    assert!(matches!(compare_laws(&res, &res, "pairing0", 7), Err(Error::InvalidArgument(_))));
}

#[test]
fn independent_ensembles_pass_ks_null() {
    let (integ, h) = limit_integrator(0.3);
    let obs = [Observable::Pairing(h)];
    let trials = 40;
    let mut below = 0;
    for i in 0..trials {
        let a = run_ensemble(&integ, &obs, 0.05, 5, 60, 1000 + 2 * i, "fp").unwrap();
        let b = run_ensemble(&integ, &obs, 0.05, 5, 60, 1001 + 2 * i, "fp").unwrap();
        let cmp = compare_laws(&a, &b, "pairing0", 1).unwrap();
        if cmp.ks < ks_critical_99(60, 60) {
            below += 1;
        }
    }
    assert!(below as f64 >= 0.95 * trials as f64, "{below}/{trials}");
}

#[test]
fn ks_against_closed_form() {
    // two shifted uniform grids: F_a − F_b peaks at the shift
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let b: Vec<f64> = (25..125).map(|i| i as f64).collect();
    assert!((ks_distance(&a, &b) - 0.25).abs() < 1e-12);
    assert!(matches!(compare_samples(&a[..20], &b), Err(Error::InsufficientSamples(_))));
}

#[test]
fn estimators_on_known_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Vec<f64> = (0..200_000).map(|_| 2.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let (m, se) = mean_se(&x);
    assert!((m - 2.0).abs() < 4.0 * se);
    assert!((se - 3.0 / (x.len() as f64).sqrt()).abs() < 0.01 * se);
    let (v, sv) = variance_se(&x);
    assert!((v - 9.0).abs() < 4.0 * sv);
    // Gaussian: Var(s²) ≈ 2σ⁴/n
    assert!((sv - (2.0 * 81.0 / x.len() as f64).sqrt()).abs() < 0.05 * sv);
}

#[test]
fn linear_noiseless_energy_balance_is_exact() {
    let (integ, tr) = slowfast(0.0, false, 7);
    assert_eq!(tr, 0.0);
    let integ = Integrator::SlowFast(integ);
    let res =
        run_ensemble(&integ, &[Observable::FastEnergy, Observable::Dissipation], 0.2, 10, 4, 1, "fp").unwrap();
    let rep = energy_balance_report(&res, tr, 0.1).unwrap();
    assert!(rep.residual.abs() < 1e-10, "{}", rep.residual);
}

#[test]
fn injection_bookkeeping_is_linear_in_trace() {
    let (i1, t1) = slowfast(0.2, true, 8);
    let (i2, t2) = slowfast(0.4, true, 8);
    assert_eq!(t2, 2.0 * t1);
    let obs = [Observable::FastEnergy, Observable::Dissipation];
    let r1 = run_ensemble(&Integrator::SlowFast(i1), &obs, 0.2, 10, 4, 2, "fp").unwrap();
    let r2 = run_ensemble(&Integrator::SlowFast(i2), &obs, 0.2, 10, 4, 2, "fp").unwrap();
    let b1 = energy_balance_report(&r1, t1, 0.1).unwrap();
    let b2 = energy_balance_report(&r2, t2, 0.1).unwrap();
    assert_eq!(b2.injection, 2.0 * b1.injection);
    let mut missing = r1.clone();
    missing.observables[0] = "energy".into();
    assert!(matches!(energy_balance_report(&missing, t1, 0.1), Err(Error::InvalidArgument(_))));
}

#[test]
fn failed_replicas_are_listed() {
    let (integ, _) = limit_integrator(0.3);
    let Integrator::Limit(mut li) = integ else { unreachable!() };
    let u0 = li.initial_state().u.norm();
    li.blowup_cap = u0 * 1.0005;
    let integ = Integrator::Limit(li);
    match run_ensemble(&integ, &[Observable::Energy], 0.02, 1, 40, 11, "fp") {
        Err(Error::PartialResult { failed, total, first }) => {
            assert_eq!(total, 40);
            assert!(!failed.is_empty() && failed.len() < 40, "{failed:?}");
            assert!(failed.windows(2).all(|w| w[0] < w[1]));
            assert!(first.contains("divergence"));
        }
        other => panic!("expected a partial result, got {other:?}"),
    }
}

#[test]
fn nonlinear_energy_balance_small_ensemble() {
    let (integ, tr) = slowfast(0.3, true, 9);
    let res = run_ensemble(
        &Integrator::SlowFast(integ),
        &[Observable::FastEnergy, Observable::Dissipation],
        0.2,
        10,
        200,
        3,
        "fp",
    )
    .unwrap();
    let rep = energy_balance_report(&res, tr, 0.1).unwrap();
    assert!(rep.residual.abs() < 3.0 * rep.se, "{} (se {})", rep.residual, rep.se);
}

#[test]
fn bias_check_arithmetic() {
    let mk = |residual, se| EnergyBalance {
        residual,
        se,
        final_energy: 0.0,
        dissipation: 0.0,
        initial_energy: 0.0,
        injection: 0.0,
        per_replica: vec![],
    };
    let c = energy_bias_check(&mk(0.1, 0.01), &mk(0.06, 0.02));
    assert!((c.bias_budget - 0.08).abs() < 1e-15);
    assert!((c.extrapolated - 0.02).abs() < 1e-15);
    assert!((c.combined_se - 0.0005f64.sqrt()).abs() < 1e-15);
    assert!(c.pass);
    assert!(!energy_bias_check(&mk(0.1, 0.001), &mk(0.1, 0.001)).pass);
}

#[test]
fn decay_rate_fit_and_errors() {
    let t: Vec<f64> = (0..10).map(|i| 0.2 * i as f64).collect();
    let v: Vec<f64> = t.iter().map(|t| -0.5 * (-2.3 * t).exp()).collect();
    assert!((fit_decay_rate(&t, &v).unwrap() - 2.3).abs() < 1e-12);
    assert!(matches!(fit_decay_rate(&t[..1], &v[..1]), Err(Error::InsufficientSamples(_))));
}

proptest! {
    #[test]
    fn ks_is_bounded_and_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 1..60),
        b in prop::collection::vec(-10.0f64..10.0, 1..60),
    ) {
        let d = ks_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&b, &a));
    }
}
