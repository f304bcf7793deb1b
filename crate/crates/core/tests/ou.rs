use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slowfast::operators::{sample_invariant, CovarianceSpec, DiagonalOperator};
use slowfast::ou::{ou_exact_step, stochastic_convolution_increment, OuParams, OuStepper};
use slowfast::spectral::{ModeBasis, SpectralField};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn params(b: &Arc<ModeBasis>, eps: f64, q: CovarianceSpec) -> OuParams {
    let c = DiagonalOperator::friction(1.3, b).unwrap();
    let a = DiagonalOperator::laplacian(0.05, b).unwrap();
    OuParams::new(eps, c, a, q).unwrap()
}

fn diag_q(b: &Arc<ModeBasis>) -> CovarianceSpec {
    CovarianceSpec::diagonal(b, (0..b.dim()).map(|m| 0.2 + 0.1 * (m % 3) as f64).collect()).unwrap()
}

#[test]
fn zero_noise_dense_and_diagonal_decay() {
    let b = ModeBasis::new(2).unwrap();
    let y = SpectralField::new(b.clone(), (0..b.dim()).map(|i| (i as f64).sin()).collect()).unwrap();
    let dense_zero = CovarianceSpec::dense(&b, vec![0, 1], DMatrix::zeros(2, 2)).unwrap();
    for q in [CovarianceSpec::zero(&b), dense_zero] {
        let p = params(&b, 0.1, q);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y1 = ou_exact_step(&y, 0.03, &p, &mut rng).unwrap();
        for m in 0..b.dim() {
            let lam = 1.3 + 0.1 * 0.05 * 4.0 * std::f64::consts::PI.powi(2) * b.wavevector(m).norm_sq() as f64;
            let want = (-lam / 0.1 * 0.03).exp() * y.coeffs()[m];
            assert!((y1.coeffs()[m] - want).abs() <= 1e-14);
        }
    }
}

#[test]
fn one_step_variance_against_quadrature() {
    let b = ModeBasis::new(2).unwrap();
    let q = diag_q(&b);
    let eps = 0.2;
    let p = params(&b, eps, q.clone());
    for dt in [1e-4, 0.01, 0.3] {
        let st = OuStepper::new(&p, dt).unwrap();
        for m in [0, 5, b.dim() - 1] {
            let mu = st.rates()[m];
            let qm = q.entry(m, m);
            let quad = simpson(|s| qm / eps * (2.0 * mu * s).exp(), 0.0, dt, 20_000);
            let v = st.step_variance(qm, m);
            assert!((v - quad).abs() <= 1e-12 * quad, "dt {dt} mode {m}: {v} vs {quad}");
        }
    }
}

#[test]
fn large_dt_reaches_stationary_variance() {
    let b = ModeBasis::new(2).unwrap();
    let q = diag_q(&b);
    let eps = 0.5;
    let p = params(&b, eps, q.clone());
    let st = OuStepper::new(&p, 1e4).unwrap();
    let a = DiagonalOperator::laplacian(0.05, &b).unwrap();
    for m in 0..b.dim() {
        let want = q.entry(m, m) / (2.0 * (1.3 + eps * a.rates()[m]));
        assert!((st.step_variance(q.entry(m, m), m) - want).abs() <= 1e-14 * want);
    }
}

#[test]
fn stationary_start_keeps_variance() {
    let b = ModeBasis::new(1).unwrap();
    let q = diag_q(&b);
    let p = params(&b, 0.1, q);
    let mu = p.stationary().unwrap();
    let st = OuStepper::new(&p, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut sq: Vec<Vec<f64>> = vec![Vec::with_capacity(100_000); b.dim()];
    for _ in 0..100_000 {
        let mut y = sample_invariant(&mu, &mut rng).into_coeffs();
        for _ in 0..3 {
            let (eta, _) = st.sample_pair(&mut rng);
            y = st.propagate(&y, &eta);
        }
        for (m, v) in y.iter().enumerate() {
            sq[m].push(v * v);
        }
    }
    for m in 0..b.dim() {
        let (v, se) = mean_se(&sq[m]);
        let want = mu.covariance().entry(m, m);
        assert!((v - want).abs() < 4.0 * se, "mode {m}: {v} vs {want} (se {se})");
    }
}

#[test]
fn increment_pair_law() {
    let b = ModeBasis::new(1).unwrap();
    let q = diag_q(&b);
    let eps = 0.1;
    let dt = 0.05;
    let p = params(&b, eps, q.clone());
    let rates = p.rates();
    let m = 3;
    let qm = q.entry(m, m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let (mut ww, mut we, mut ee) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let (eta, w) = stochastic_convolution_increment(dt, &p, &mut rng).unwrap();
        let (eta, w) = (eta.coeffs()[m], w.coeffs()[m]);
        ww.push(w * w);
        ee.push(eta * eta);
        we.push(eta * w);
    }
    let (v, se) = mean_se(&ww);
    assert!((v - qm * dt).abs() < 4.0 * se);

    let cross_oracle = simpson(|s| qm / eps.sqrt() * (rates[m] * (dt - s)).exp(), 0.0, dt, 2000);
    let (c, se) = mean_se(&we);
    assert!((c - cross_oracle).abs() < 4.0 * se, "{c} vs {cross_oracle} (se {se})");

    let var_oracle = simpson(|s| qm / eps * (2.0 * rates[m] * (dt - s)).exp(), 0.0, dt, 2000);
    let (v, se) = mean_se(&ee);
    assert!((v - var_oracle).abs() < 4.0 * se);
}

#[test]
fn dense_increment_covariance() {
    let b = ModeBasis::new(1).unwrap();
    let modes = vec![0, 2, 5];
    let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.2, 0.8, 0.1, -0.4, 0.0, 0.6]);
    let qb = &g * g.transpose();
    let q = CovarianceSpec::dense(&b, modes.clone(), qb.clone()).unwrap();
    let eps = 0.25;
    let dt = 0.1;
    let p = params(&b, eps, q);
    let rates = p.rates();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<_> = (0..100_000)
        .map(|_| stochastic_convolution_increment(dt, &p, &mut rng).unwrap())
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            let (mi, mj) = (modes[i], modes[j]);
            let ee: Vec<f64> = draws.iter().map(|(e, _)| e.coeffs()[mi] * e.coeffs()[mj]).collect();
            let ew: Vec<f64> = draws.iter().map(|(e, w)| e.coeffs()[mi] * w.coeffs()[mj]).collect();
            let ee_oracle =
                simpson(|s| qb[(i, j)] / eps * ((rates[mi] + rates[mj]) * (dt - s)).exp(), 0.0, dt, 2000);
            let ew_oracle = simpson(|s| qb[(i, j)] / eps.sqrt() * (rates[mi] * (dt - s)).exp(), 0.0, dt, 2000);
            let (c, se) = mean_se(&ee);
            assert!((c - ee_oracle).abs() < 4.0 * se, "ηη ({i},{j}) {c} vs {ee_oracle}");
            let (c, se) = mean_se(&ew);
            assert!((c - ew_oracle).abs() < 4.0 * se, "ηw ({i},{j}) {c} vs {ew_oracle}");
        }
    }
}

#[test]
fn slow_rate_limit_recovers_plain_increment() {
    let b = ModeBasis::new(1).unwrap();
    let c = DiagonalOperator::friction(1e-10, &b).unwrap();
    let a = DiagonalOperator::laplacian(1e-12, &b).unwrap();
    let eps = 0.5;
    let p = OuParams::new(eps, c, a, diag_q(&b)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (eta, w) = stochastic_convolution_increment(1e-3, &p, &mut rng).unwrap();
        for m in 0..b.dim() {
            let scaled = eta.coeffs()[m] * eps.sqrt();
            assert!((scaled - w.coeffs()[m]).abs() <= 1e-5 * w.coeffs()[m].abs().max(1e-3));
        }
    }
}

#[test]
fn steps_are_seed_deterministic() {
    let b = ModeBasis::new(2).unwrap();
    let p = params(&b, 0.1, diag_q(&b));
    let y = SpectralField::basis_element(&b, 4);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        ou_exact_step(&y, 0.02, &p, &mut rng).unwrap()
    };
    assert_eq!(run().coeffs(), run().coeffs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_is_contractive_and_variance_bounded(dt in 1e-6f64..1e3, eps in 0.01f64..1.0) {
        let b = ModeBasis::new(2).unwrap();
        let q = diag_q(&b);
        let p = params(&b, eps, q.clone());
        let st = OuStepper::new(&p, dt).unwrap();
        let stat = p.stationary().unwrap();
        for m in 0..b.dim() {
            let d = st.decay()[m];
            prop_assert!((0.0..1.0).contains(&d));
            let v = st.step_variance(q.entry(m, m), m);
            let s = stat.covariance().entry(m, m);
            prop_assert!(v.is_finite() && v >= 0.0 && v <= s * (1.0 + 1e-12));
            // one-step variance plus decayed stationary variance is stationary
            prop_assert!((v + d * d * s - s).abs() <= 1e-12 * s);
        }
    }
}
