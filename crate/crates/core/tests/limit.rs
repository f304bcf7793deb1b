use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::limit::{
    eddy_kappa_apply, ito_stokes_drift, strat_corrector_apply, transport_noise_increment, EddyOperator,
    LimitCoefficients,
};
use slowfast::operators::{make_qn, sample_invariant, CovarianceSpec, DiagonalOperator};
use slowfast::spectral::{nonlinear_b, ModeBasis, Parity, SpectralField, WaveVector};
use slowfast::Error;

fn random_field(b: &Arc<ModeBasis>, rng: &mut impl Rng) -> SpectralField {
    SpectralField::new(b.clone(), (0..b.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn b_of(u: &SpectralField, v: &SpectralField) -> SpectralField {
    nonlinear_b(u, v).unwrap()
}

fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.sub(b).max_abs()
}

fn two_mode_q(b: &Arc<ModeBasis>, scale: f64) -> CovarianceSpec {
    let m = vec![
        b.index_of(WaveVector::new(1, 0), Parity::Cos).unwrap(),
        b.index_of(WaveVector::new(1, 1), Parity::Cos).unwrap(),
    ];
    CovarianceSpec::dense(b, m, DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 0.8]) * scale).unwrap()
}

#[test]
fn drift_vanishes_for_diagonal_covariance() {
    let b = ModeBasis::new(4).unwrap();
    let c = DiagonalOperator::fractional(0.3, 0.8, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
    let r = ito_stokes_drift(&c, &CovarianceSpec::diagonal(&b, q).unwrap()).unwrap();
    assert_eq!(r.max_abs(), 0.0);
    let r = ito_stokes_drift(&c, &make_qn(2, 1.0, 1.0, &b).unwrap()).unwrap();
    assert_eq!(r.max_abs(), 0.0);
}

#[test]
fn drift_against_monte_carlo() {
    let b = ModeBasis::new(2).unwrap();
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let q = two_mode_q(&b, 1.0);
    let coeffs = LimitCoefficients::new(&c, &q).unwrap();
    let r = coeffs.drift();
    assert!(r.max_abs() > 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200_000;
    let mut sum = vec![0.0; b.dim()];
    let mut sum_sq = vec![0.0; b.dim()];
    for _ in 0..n {
        let w = sample_invariant(coeffs.measure(), &mut rng);
        let s = c.neg_inverse_apply(&b_of(&w, &w));
        for (m, v) in s.coeffs().iter().enumerate() {
            sum[m] += v;
            sum_sq[m] += v * v;
        }
    }
    let nf = n as f64;
    for m in 0..b.dim() {
        let mean = sum[m] / nf;
        let se = ((sum_sq[m] / nf - mean * mean) / nf).sqrt();
        assert!((mean - r.coeffs()[m]).abs() <= 4.0 * se + 1e-15, "mode {m}: {mean} vs {}", r.coeffs()[m]);
    }
}

#[test]
fn drift_is_linear_in_q() {
    let b = ModeBasis::new(3).unwrap();
    let c = DiagonalOperator::laplacian(0.1, &b).unwrap();
    let r1 = ito_stokes_drift(&c, &two_mode_q(&b, 1.0)).unwrap();
    let r2 = ito_stokes_drift(&c, &two_mode_q(&b, 2.0)).unwrap();
    assert!(max_diff(&r2, &r1.scale(2.0)) <= 1e-15 * r1.max_abs().max(1.0) * 4.0);
}

#[test]
fn corrector_representations_agree_for_diagonal_q() {
    let b = ModeBasis::new(4).unwrap();
    let c = DiagonalOperator::fractional(0.2, 0.7, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q: Vec<f64> = (0..b.dim()).map(|m| if m % 5 == 0 { rng.random_range(0.0..2.0) } else { 0.0 }).collect();
    let coeffs = LimitCoefficients::new(&c, &CovarianceSpec::diagonal(&b, q).unwrap()).unwrap();
    assert!(coeffs.commutes());
    for _ in 0..5 {
        let u = random_field(&b, &mut rng);
        let a = strat_corrector_apply(&coeffs, &u).unwrap();
        let bb = coeffs.corrector_b(&u);
        assert!(max_diff(&a, &bb) <= 1e-10, "{}", max_diff(&a, &bb));
        assert!(max_diff(&a, &coeffs.corrector_fast(&u)) <= 1e-10);
    }
}

#[test]
fn single_mode_corrector() {
    let b = ModeBasis::new(3).unwrap();
    let c = DiagonalOperator::laplacian(0.05, &b).unwrap();
    let k = b.index_of(WaveVector::new(1, 2), Parity::Sin).unwrap();
    let mut q = vec![0.0; b.dim()];
    q[k] = 0.7;
    let coeffs = LimitCoefficients::new(&c, &CovarianceSpec::diagonal(&b, q).unwrap()).unwrap();
    let lam = c.rates()[k];
    let e = SpectralField::basis_element(&b, k);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_field(&b, &mut rng);
    let want = b_of(&e, &b_of(&e, &u)).scale(0.7 / (2.0 * lam * lam));
    assert!(max_diff(&strat_corrector_apply(&coeffs, &u).unwrap(), &want) <= 1e-12);
}

#[test]
fn zero_noise_corrector_and_increment() {
    let b = ModeBasis::new(2).unwrap();
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let coeffs = LimitCoefficients::new(&c, &CovarianceSpec::zero(&b)).unwrap();
    let u = SpectralField::basis_element(&b, 3);
    assert_eq!(strat_corrector_apply(&coeffs, &u).unwrap().max_abs(), 0.0);
    assert_eq!(coeffs.drift().max_abs(), 0.0);
}

#[test]
fn non_commuting_corrector_is_rejected_but_reported() {
    let b = ModeBasis::new(2).unwrap();
    let c = DiagonalOperator::laplacian(0.1, &b).unwrap();
    let coeffs = LimitCoefficients::new(&c, &two_mode_q(&b, 1.0)).unwrap();
    assert!(!coeffs.commutes());
    let u = SpectralField::basis_element(&b, 0).add(&SpectralField::basis_element(&b, 7));
    assert!(matches!(strat_corrector_apply(&coeffs, &u), Err(Error::Unsupported(_))));
    let gap = max_diff(&coeffs.corrector_a(&u), &coeffs.corrector_b(&u));
    assert!(gap > 1e-6, "gap {gap}");
}

#[test]
fn transport_increment_cases() {
    let b = ModeBasis::new(3).unwrap();
    let c = DiagonalOperator::friction(2.0, &b).unwrap();
    let q: Vec<f64> = (0..b.dim()).map(|m| if m < 4 { 0.5 } else { 0.0 }).collect();
    let coeffs = LimitCoefficients::new(&c, &CovarianceSpec::diagonal(&b, q).unwrap()).unwrap();
    let nd = coeffs.directions().len();
    assert_eq!(nd, 4);
    let zero = SpectralField::zeros(&b);
    assert_eq!(transport_noise_increment(&coeffs, &zero, &vec![0.3; nd]).unwrap().max_abs(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = random_field(&b, &mut rng);
    let mut dw = vec![0.0; nd];
    dw[2] = 0.37;
    // g_k = (−C)^{-1} Q^{1/2} e_k with friction 2 and q = 0.5
    let g = SpectralField::basis_element(&b, 2).scale(0.5f64.sqrt() / 2.0);
    let want = b_of(&g, &u).scale(0.37);
    assert!(max_diff(&transport_noise_increment(&coeffs, &u, &dw).unwrap(), &want) <= 1e-14);

    assert!(matches!(
        transport_noise_increment(&coeffs, &u, &[0.1; 3]),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn transport_increment_ito_isometry() {
    let b = ModeBasis::new(2).unwrap();
    let c = DiagonalOperator::laplacian(0.2, &b).unwrap();
    let q: Vec<f64> = (0..b.dim()).map(|m| 0.1 * (1 + m % 4) as f64).collect();
    let coeffs = LimitCoefficients::new(&c, &CovarianceSpec::diagonal(&b, q).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_field(&b, &mut rng);
    let h = random_field(&b, &mut rng);
    let dt = 0.01;
    let want: f64 = coeffs.directions().iter().map(|g| b_of(g, &u).dot(&h).powi(2)).sum::<f64>() * dt;
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let dw: Vec<f64> =
                (0..coeffs.directions().len()).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            transport_noise_increment(&coeffs, &u, &dw).unwrap().dot(&h).powi(2)
        })
        .collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want}");
}

#[test]
fn eddy_energy_identity_and_sign() {
    let b = ModeBasis::new(8).unwrap();
    let c = DiagonalOperator::friction(1.5, &b).unwrap();
    let qn = make_qn(3, 0.5, 1.0, &b).unwrap();
    let k = EddyOperator::new(&qn, &c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random_field(&b, &mut rng);
    let lhs = eddy_kappa_apply(&qn, &c, &u).unwrap().dot(&u);
    // independent sum over the shell with the FFT-free evaluation of b
    let mut rhs = 0.0;
    for m in qn.support() {
        let w = qn.entry(m, m) / (2.0 * 1.5 * 1.5);
        rhs -= w * b_of(&SpectralField::basis_element(&b, m), &u).norm_sq();
    }
    assert!(lhs <= 0.0);
    assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    assert!((k.energy_rate(&u) - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    assert!(max_diff(&k.apply(&u), &k.apply_direct(&u)) <= 1e-10);
}

#[test]
fn eddy_zero_linear_and_rejects_dense() {
    let b = ModeBasis::new(6).unwrap();
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let qn = make_qn(2, 0.0, 1.0, &b).unwrap();
    let zero = SpectralField::zeros(&b);
    assert_eq!(eddy_kappa_apply(&qn, &c, &zero).unwrap().max_abs(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (u, v) = (random_field(&b, &mut rng), random_field(&b, &mut rng));
    let k = EddyOperator::new(&qn, &c).unwrap();
    let lin = k.apply(&u.scale(2.0).add(&v.scale(-0.5)));
    let sep = k.apply(&u).scale(2.0).add(&k.apply(&v).scale(-0.5));
    assert!(max_diff(&lin, &sep) <= 1e-12);
    assert!(matches!(eddy_kappa_apply(&two_mode_q(&b, 1.0), &c, &u), Err(Error::Unsupported(_))));
}

#[test]
fn eddy_is_proportional_to_laplacian_on_low_modes() {
    let b = ModeBasis::new(16).unwrap();
    let c = DiagonalOperator::friction(1.0, &b).unwrap();
    let lap = DiagonalOperator::laplacian(1.0, &b).unwrap();
    let k = EddyOperator::new(&make_qn(8, 0.0, 1.0, &b).unwrap(), &c).unwrap();
    let mut lows: Vec<usize> = (0..b.dim()).collect();
    lows.sort_by_key(|&m| (b.wavevector(m).norm_sq(), m));
    let ratios: Vec<f64> = lows[..8]
        .iter()
        .map(|&m| {
            let e = SpectralField::basis_element(&b, m);
            k.apply_direct(&e).coeffs()[m] / lap.eigenvalues()[m]
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(a, z), &r| (a.min(r), z.max(r)));
    assert!(lo > 0.0);
    assert!((hi - lo) / lo <= 0.1, "{ratios:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eddy_is_symmetric(seed in any::<u64>(), n in 1usize..3, delta in 0.0f64..2.0) {
        let b = ModeBasis::new(6).unwrap();
        let c = DiagonalOperator::laplacian(0.3, &b).unwrap();
        let qn = make_qn(n, delta, 1.0, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, v) = (random_field(&b, &mut rng), random_field(&b, &mut rng));
        let ku = eddy_kappa_apply(&qn, &c, &u).unwrap();
        let kv = eddy_kappa_apply(&qn, &c, &v).unwrap();
        prop_assert!((ku.dot(&v) - u.dot(&kv)).abs() <= 1e-10 * ku.norm().max(1.0));
        prop_assert!(ku.dot(&u) <= 1e-12);
    }

    #[test]
    fn corrector_homogeneity(seed in any::<u64>(), s in 0.1f64..5.0) {
        let b = ModeBasis::new(3).unwrap();
        let c = DiagonalOperator::fractional(0.2, 0.9, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
        let q1 = CovarianceSpec::diagonal(&b, q.clone()).unwrap();
        let qs = CovarianceSpec::diagonal(&b, q.iter().map(|v| v * s).collect()).unwrap();
        let u = random_field(&b, &mut rng);
        let c1 = LimitCoefficients::new(&c, &q1).unwrap();
        let cs = LimitCoefficients::new(&c, &qs).unwrap();
        let a1 = strat_corrector_apply(&c1, &u).unwrap();
        let a_s = strat_corrector_apply(&cs, &u).unwrap();
        let tol = 1e-10 * a1.max_abs().max(1.0) * s;
        prop_assert!(max_diff(&a_s, &a1.scale(s)) <= tol);
        prop_assert!(max_diff(&strat_corrector_apply(&c1, &u.scale(s)).unwrap(), &a1.scale(s)) <= tol);
        prop_assert!(max_diff(&a1, &c1.corrector_b(&u)) <= 1e-10 * a1.max_abs().max(1.0));
    }
}
