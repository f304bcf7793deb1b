//! Ensemble execution and the estimators used to compare laws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{run_trajectory, Integrator, Observable, Trajectory};

/// Fewest samples a distributional comparison accepts.
pub const MIN_SAMPLES: usize = 30;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `i`, a pure function of `(master, i)`.
pub fn replica_seed(master: u64, i: usize) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(i as u64 ^ 0xA076_1D64_78BD_642F))
}

pub fn replica_rng(master: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replica_seed(master, i))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub fingerprint: String,
    pub kind: String,
    pub observables: Vec<String>,
    pub times: Vec<f64>,
    /// `samples[observable][replica][record]`.
    pub samples: Vec<Vec<Vec<f64>>>,
    pub seeds: Vec<u64>,
}

impl EnsembleResult {
    pub fn replicas(&self) -> usize {
        self.seeds.len()
    }

    pub fn observable_index(&self, name: &str) -> Option<usize> {
        self.observables.iter().position(|o| o == name)
    }

    /// Samples across replicas of observable `obs` at record `t`.
    pub fn at(&self, obs: usize, t: usize) -> Vec<f64> {
        self.samples[obs].iter().map(|r| r[t]).collect()
    }

    pub fn last(&self, obs: usize) -> Vec<f64> {
        self.at(obs, self.times.len() - 1)
    }

    /// Ensemble mean and its standard error per record.
    pub fn mean_path(&self, obs: usize) -> Vec<(f64, f64)> {
        (0..self.times.len()).map(|t| mean_se(&self.at(obs, t))).collect()
    }
}

/// Runs `m` replicas with seeds `replica_seed(master_seed, i)`. Replicas run
/// in parallel; results are keyed by replica index.
pub fn run_ensemble(
    integ: &Integrator,
    observables: &[Observable],
    horizon: f64,
    stride: usize,
    m: usize,
    master_seed: u64,
    fingerprint: &str,
) -> Result<EnsembleResult> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("ensemble needs at least 2 replicas, got {m}")));
    }
    let seeds: Vec<u64> = (0..m).map(|i| replica_seed(master_seed, i)).collect();
    let runs: Vec<Result<Trajectory>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            run_trajectory(integ, observables, horizon, stride, &mut rng)
        })
        .collect();
    collect_runs(integ.kind(), observables, runs, seeds, fingerprint)
}

pub(crate) fn collect_runs(
    kind: &str,
    observables: &[Observable],
    runs: Vec<Result<Trajectory>>,
    seeds: Vec<u64>,
    fingerprint: &str,
) -> Result<EnsembleResult> {
    let failed: Vec<usize> = runs.iter().enumerate().filter(|(_, r)| r.is_err()).map(|(i, _)| i).collect();
    if !failed.is_empty() {
        // a configuration error is the same for every replica; surface it directly
        if failed.len() == runs.len() {
            if let Some(Err(e)) = runs.first() {
                if e.exit_code() == 2 {
                    return Err(runs.into_iter().next().expect("nonempty").expect_err("failed"));
                }
            }
        }
        let first = runs[failed[0]].as_ref().err().map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::PartialResult { failed, total: seeds.len(), first });
    }
    let runs: Vec<Trajectory> = runs.into_iter().map(|r| r.expect("checked")).collect();
    let times = runs[0].times.clone();
    let samples = (0..observables.len())
        .map(|o| runs.iter().map(|r| r.values[o].clone()).collect())
        .collect();
    Ok(EnsembleResult {
        fingerprint: fingerprint.to_string(),
        kind: kind.to_string(),
        observables: observables.iter().enumerate().map(|(i, o)| o.name(i)).collect(),
        times,
        samples,
        seeds,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance and a standard error from the fourth moment.
pub fn variance_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 99% critical value of the two-sample KS statistic.
pub fn ks_critical_99(n: usize, m: usize) -> f64 {
    1.628 * (((n + m) as f64) / ((n * m) as f64)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LawComparison {
    /// `mean(a) − mean(b)`.
    pub mean_diff: f64,
    pub var_diff: f64,
    pub ks: f64,
    /// Pooled standard error of `mean_diff`.
    pub se_mean: f64,
    /// Pooled standard error of `var_diff`.
    pub se_var: f64,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn compare_samples(a: &[f64], b: &[f64]) -> Result<LawComparison> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "need at least {MIN_SAMPLES} samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, sa) = mean_se(a);
    let (mb, sb) = mean_se(b);
    let (va, sva) = variance_se(a);
    let (vb, svb) = variance_se(b);
    Ok(LawComparison {
        mean_diff: ma - mb,
        var_diff: va - vb,
        ks: ks_distance(a, b),
        se_mean: (sa * sa + sb * sb).sqrt(),
        se_var: (sva * sva + svb * svb).sqrt(),
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Compares observable `obs` at record `t` between two ensembles.
pub fn compare_laws(a: &EnsembleResult, b: &EnsembleResult, obs: &str, t: usize) -> Result<LawComparison> {
    let ia = a
        .observable_index(obs)
        .ok_or_else(|| Error::InvalidArgument(format!("observable {obs} missing from first ensemble")))?;
    let ib = b
        .observable_index(obs)
        .ok_or_else(|| Error::InvalidArgument(format!("observable {obs} missing from second ensemble")))?;
    if t >= a.times.len() || t >= b.times.len() {
        return Err(Error::InvalidArgument(format!("record {t} out of range")));
    }
    compare_samples(&a.at(ia, t), &b.at(ib, t))
}

/// Ensemble residual of the fast energy balance
/// `‖y_T‖² + ∫ 2⟨−ε^{-1}C_ε y, y⟩ − ‖y_0‖² − ε^{-1} Tr(Q) T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBalance {
    pub residual: f64,
    pub se: f64,
    pub final_energy: f64,
    pub dissipation: f64,
    pub initial_energy: f64,
    pub injection: f64,
    pub per_replica: Vec<f64>,
}

pub fn energy_balance_report(res: &EnsembleResult, trace_q: f64, epsilon: f64) -> Result<EnergyBalance> {
    let fe = res
        .observable_index("fast_energy")
        .ok_or_else(|| Error::InvalidArgument("fast_energy not recorded".into()))?;
    let di = res
        .observable_index("dissipation")
        .ok_or_else(|| Error::InvalidArgument("dissipation not recorded".into()))?;
    let last = res.times.len() - 1;
    let horizon = res.times[last];
    let injection = trace_q * horizon / epsilon;
    let initial = res.samples[fe][0][0];
    let per_replica: Vec<f64> = (0..res.replicas())
        .map(|r| res.samples[fe][r][last] + res.samples[di][r][last] - res.samples[fe][r][0] - injection)
        .collect();
    let (residual, se) = mean_se(&per_replica);
    Ok(EnergyBalance {
        residual,
        se,
        final_energy: mean_se(&res.last(fe)).0,
        dissipation: mean_se(&res.last(di)).0,
        initial_energy: initial,
        injection,
        per_replica,
    })
}

/// Outcome of comparing an energy balance at `dt` with one at `dt/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasCheck {
    pub residual: f64,
    pub combined_se: f64,
    /// `|res(dt) − res(dt/2)|`, doubled for first-order bias.
    pub bias_budget: f64,
    /// `2 res(dt/2) − res(dt)`.
    pub extrapolated: f64,
    pub pass: bool,
}

/// `|res(dt)| ≤ 3·sqrt(se(dt)² + se(dt/2)²) + 2|res(dt) − res(dt/2)|`.
pub fn energy_bias_check(coarse: &EnergyBalance, fine: &EnergyBalance) -> BiasCheck {
    let combined_se = (coarse.se.powi(2) + fine.se.powi(2)).sqrt();
    let bias_budget = 2.0 * (coarse.residual - fine.residual).abs();
    BiasCheck {
        residual: coarse.residual,
        combined_se,
        bias_budget,
        extrapolated: 2.0 * fine.residual - coarse.residual,
        pass: coarse.residual.abs() <= 3.0 * combined_se + bias_budget,
    }
}

/// Least-squares slope of `−log|v|` against `t`, i.e. the decay rate of
/// `|v(t)| ≈ c e^{−λ t}`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientSamples("need two nonzero points to fit a rate".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_is_zero() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert_eq!(ks_distance(&a, &a), 0.0);
    }

    #[test]
    fn ks_disjoint_is_one() {
        let a: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
        assert_eq!(ks_distance(&a, &b), 1.0);
    }

    #[test]
    fn ks_with_ties() {
        let a = [1.0, 1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 2.0, 2.0];
        // F_a(1) = 0.5, F_b(1) = 0.25
        assert!((ks_distance(&a, &b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn small_samples_rejected() {
        let a = vec![0.0; 10];
        assert!(matches!(compare_samples(&a, &a), Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn replica_seeds_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| replica_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(replica_seed(1, 0), replica_seed(2, 0));
    }

    #[test]
    fn decay_rate_of_exact_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &v).unwrap() - 1.7).abs() < 1e-12);
    }
}
